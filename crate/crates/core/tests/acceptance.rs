//! Acceptance suite. Every criterion prints one PASS/FAIL line to stderr,
//! which the test harness does not capture.
//!
//! Run with `cargo test --release -p bmapest-core --test acceptance`.

use std::f64::consts::{LN_2, TAU};
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bmapest::epg::{isochromat_oracle, required_capacity, run_events};
use bmapest::grad::{phantom_gradcheck, GateConfig};
use bmapest::metrics::{aggregate, dice, evaluate, psnr, ssim, MetricRow, Summary};
use bmapest::optimize::{estimate, Domain, Estimate, LossSpec, OptimConfig, Parameterization};
use bmapest::phantom::{mix, synth_phantom, ProbabilityMaps, Quantity, Tissue, TissueTable};
use bmapest::sequence::{
    build_flash, preset_with, Axis, Event, FlashParams, PrepModule, PresetKind, Sequence, Timing,
};
use bmapest::simulator::{
    echo_amplitudes, fft2, reconstruct_complex, simulate, simulate_stack, SimOptions,
};

fn report(id: &str, pass: bool, detail: impl std::fmt::Display) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

fn uniform(p: [f64; 3], size: usize) -> ProbabilityMaps {
    let n = size * size;
    ProbabilityMaps::new(size, size, vec![p[0]; n], vec![p[1]; n], vec![p[2]; n]).unwrap()
}

// ---------------------------------------------------------------- A1

fn random_program(rng: &mut ChaCha8Rng) -> Vec<Event> {
    let len = rng.gen_range(10..=30);
    let mut events = vec![Event::Pulse { alpha: rng.gen_range(0.3..2.8), phi: rng.gen_range(0.0..TAU) }];
    while events.len() < len {
        events.push(match rng.gen_range(0..9) {
            0 | 1 => Event::Pulse { alpha: rng.gen_range(0.0..3.1), phi: rng.gen_range(0.0..TAU) },
            2 | 3 => Event::Wait { t: rng.gen_range(0.0..50.0) },
            4..=6 => Event::Grad { delta_n: rng.gen_range(-3..=3), axis: Axis::Readout },
            _ => Event::Adc { line: 0, sample: 0, echo: 0, t_since_excitation: 0.0, phase: 0.0 },
        });
    }
    events
}

#[test]
fn a1_epg_matches_isochromat_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut samples = 0;
    for _ in 0..20 {
        let events = random_program(&mut rng);
        let t1: f64 = rng.gen_range(300.0..3000.0);
        let t2 = rng.gen_range(30.0..t1.min(300.0));
        let m0 = rng.gen_range(0.5..1.0);
        let oracle = isochromat_oracle(&events, 4096, t1, t2, m0).unwrap();
        let epg = run_events(&events, t1, t2, m0, 0.0, required_capacity(&events), 0.0).unwrap();
        assert_eq!(oracle.len(), epg.len());
        samples += epg.len();
        for (a, b) in oracle.iter().zip(&epg) {
            worst = worst.max((a - b).norm() / m0);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-3 && within(elapsed, 5);
    report("A1", pass, format!("max |EPG-oracle|/m0 = {worst:.2e} over {samples} samples, {elapsed:.2?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- A2

/// Complex echo at the centre voxel of a uniform pure-GM phantom after an
/// inversion at `ti`.
fn ir_echo(table: &TissueTable, ti: f64) -> Complex64 {
    let fp = FlashParams::new((8, 8), 15f64.to_radians(), 20.0, vec![4.0], PrepModule::Inversion { ti });
    let seq = build_flash(&fp).unwrap();
    let q = mix(&uniform([0.0, 1.0, 0.0], 8), table).unwrap();
    echo_amplitudes(&q, &seq, &SimOptions::default()).unwrap()[0][36]
}

#[test]
fn a2_analytic_physics() {
    let start = Instant::now();
    let table = TissueTable::default();
    let mut pass = true;

    // spoiled FLASH steady state against the Ernst formula
    let (flip, tr, te) = (15f64.to_radians(), 20.0, 4.0);
    let mut fp = FlashParams::new((8, 8), flip, tr, vec![te], PrepModule::None);
    fp.dummies = (5.0 * table.max_t1() / tr).ceil() as usize;
    let seq = build_flash(&fp).unwrap();
    let mut ernst_err = 0.0f64;
    for (i, t) in Tissue::ALL.iter().enumerate() {
        let mut p = [0.0; 3];
        p[i] = 1.0;
        let q = mix(&uniform(p, 8), &table).unwrap();
        let k = simulate(&q, &seq, &SimOptions::default()).unwrap();
        let dc = k.data[0][4 * 8 + 4].norm() / 8.0;
        let tp = table.get(*t);
        let e1 = (-tr / tp.t1).exp();
        let ernst = tp.pd * flip.sin() * (1.0 - e1) / (1.0 - e1 * flip.cos()) * (-te / tp.t2_star()).exp();
        ernst_err = ernst_err.max((dc - ernst).abs() / ernst);
    }
    pass &= ernst_err <= 1e-6;

    // inversion-recovery null by bisection on the signed echo
    let reference = ir_echo(&table, 10.0 * table.gm.t1);
    let signed = |ti: f64| (ir_echo(&table, ti) * reference.conj()).re;
    let (mut lo, mut hi) = (1.0, 3.0 * table.gm.t1);
    assert!(signed(lo) < 0.0 && signed(hi) > 0.0);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if signed(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let null = 0.5 * (lo + hi);
    let null_err = (null - table.gm.t1 * LN_2).abs();
    pass &= null_err <= 1.0;

    // FLAIR suppresses CSF
    let flair = preset_with(PresetKind::Flair, (16, 16), &table, &Timing::default()).unwrap();
    let peak = |p: [f64; 3]| -> Vec<f64> {
        let stack = simulate_stack(&uniform(p, 16), &table, std::slice::from_ref(&flair), &SimOptions::default())
            .unwrap();
        stack.contrasts.iter().map(|c| c.image.iter().cloned().fold(0.0, f64::max)).collect()
    };
    let (csf, gm) = (peak([1.0, 0.0, 0.0]), peak([0.0, 1.0, 0.0]));
    let ratio = csf.iter().zip(&gm).map(|(c, g)| c / g).fold(0.0, f64::max);
    pass &= ratio <= 0.02;

    let elapsed = start.elapsed();
    pass &= within(elapsed, 10);
    report(
        "A2",
        pass,
        format!(
            "Ernst rel err {ernst_err:.2e}; IR null {null:.4} ms vs T1·ln2 {:.4} ms; FLAIR CSF/GM peak {ratio:.2e}; {elapsed:.2?}",
            table.gm.t1 * LN_2
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- A3

#[test]
fn a3_gradient_gate() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for domain in [Domain::Image, Domain::KSpace] {
        let cfg = GateConfig { size: 8, echoes: 2, domain, ..GateConfig::default() };
        let r = phantom_gradcheck(&cfg).unwrap();
        worst = worst.max(r.max_rel_err);
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-5 && within(elapsed, 60);
    report("A3", pass, format!("max rel err {worst:.2e} (t1ir, 2 echoes, image+kspace), {elapsed:.2?}"));
    assert!(pass);
}

// ---------------------------------------------------------------- A4

#[test]
fn a4_transform_identities() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut parseval = 0.0f64;
    for (nx, ny) in [(16, 16), (8, 32), (64, 4)] {
        let x: Vec<Complex64> =
            (0..nx * ny).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let k = fft2(&x, nx, ny).unwrap();
        let ex: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let ek: f64 = k.iter().map(|z| z.norm_sqr()).sum();
        parseval = parseval.max((ex - ek).abs() / ex);
    }

    let table = TissueTable::default();
    let q = mix(&synth_phantom(3, 16).unwrap(), &table).unwrap();
    let mut round_trip = 0.0f64;
    for kind in PresetKind::ALL {
        let seq = preset_with(kind, (16, 16), &table, &Timing::default()).unwrap();
        let k = simulate(&q, &seq, &SimOptions::default()).unwrap();
        let amp = echo_amplitudes(&q, &seq, &SimOptions::default()).unwrap();
        for (kc, ac) in k.data.iter().zip(&amp) {
            let img = reconstruct_complex(kc, 16, 16).unwrap();
            let scale = ac.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
            for (a, b) in img.iter().zip(ac) {
                round_trip = round_trip.max((a - b).norm() / scale);
            }
        }
    }

    let mut linearity = 0.0f64;
    for _ in 0..20 {
        let mut half = || -> Vec<f64> { (0..64).map(|_| rng.gen_range(0.0..0.5)).collect() };
        let p1 = ProbabilityMaps::new(8, 8, half(), half(), half()).unwrap();
        let p2 = ProbabilityMaps::new(8, 8, half(), half(), half()).unwrap();
        let (a, b) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect::<Vec<_>>();
        let pc = ProbabilityMaps::new(8, 8, comb(&p1.csf, &p2.csf), comb(&p1.gm, &p2.gm), comb(&p1.wm, &p2.wm))
            .unwrap();
        let (q1, q2, qc) = (mix(&p1, &table).unwrap(), mix(&p2, &table).unwrap(), mix(&pc, &table).unwrap());
        for quantity in Quantity::ALL {
            let expect = comb(q1.quantity(quantity), q2.quantity(quantity));
            for (e, g) in expect.iter().zip(qc.quantity(quantity)) {
                linearity = linearity.max((e - g).abs() / e.abs().max(1.0));
            }
        }
    }

    let elapsed = start.elapsed();
    let pass = parseval <= 1e-12 && round_trip <= 1e-10 && linearity <= 1e-12 && within(elapsed, 5);
    report(
        "A4",
        pass,
        format!("Parseval {parseval:.1e}; simulate→reconstruct {round_trip:.1e}; mix linearity {linearity:.1e}; {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- A5-A8

struct Run {
    estimate: Estimate,
    rows: Vec<MetricRow>,
    elapsed: Duration,
}

fn truth() -> ProbabilityMaps {
    synth_phantom(1, 16).unwrap()
}

fn sequences(kinds: &[PresetKind], timing: &Timing) -> Vec<Sequence> {
    kinds.iter().map(|k| preset_with(*k, (16, 16), &TissueTable::default(), timing).unwrap()).collect()
}

fn recover(seqs: &[Sequence], config: &OptimConfig, threads: usize) -> Run {
    let table = TissueTable::default();
    let gt = truth();
    let sim = SimOptions::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let observed = simulate_stack(&gt, &table, seqs, &sim).unwrap();
        let estimate = estimate(
            &observed,
            seqs,
            &table,
            &Parameterization::DirectPixel,
            &LossSpec::new(Domain::Image),
            config,
            &sim,
        )
        .unwrap();
        let rows = evaluate(&estimate.maps, &gt).unwrap();
        Run { estimate, rows, elapsed: start.elapsed() }
    })
}

fn all_contrasts() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| recover(&sequences(&PresetKind::ALL, &Timing::default()), &OptimConfig::default(), 1))
}

fn describe(rows: &[MetricRow]) -> String {
    rows.iter()
        .map(|r| format!("{} psnr {:.2} dice {:.3}", r.tissue, r.psnr, r.dice))
        .collect::<Vec<_>>()
        .join("; ")
}

#[test]
fn a5_inverse_crime_recovery() {
    let run = all_contrasts();
    let h = &run.estimate.history;
    let (first, last) = (h[0], *h.last().unwrap());
    let maps_ok = run.rows.iter().all(|r| r.psnr >= 35.0 && r.dice >= 0.9);
    let trend_ok = last <= 1e-3 * first;
    let pass = maps_ok && trend_ok && h.len() == 501 && within(run.elapsed, 15 * 60);
    report(
        "A5",
        pass,
        format!(
            "{}; loss {first:.3e} -> {last:.3e}; 501 epochs in {:.1?}",
            describe(&run.rows),
            run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn a6_ill_posedness_trend() {
    let all = all_contrasts();
    let single_timing = Timing { echo_times: vec![Timing::default().echo_times[0]], ..Timing::default() };
    let single = recover(&sequences(&[PresetKind::T1Ir], &single_timing), &OptimConfig::default(), 1);
    let four = recover(&sequences(&[PresetKind::T1Ir], &Timing::default()), &OptimConfig::default(), 1);
    let p = |r: &Run| r.rows.iter().map(|m| m.psnr).collect::<Vec<_>>();
    let (p1, p4, p24) = (p(&single), p(&four), p(all));
    let below = (0..3).all(|i| p1[i] < p24[i]);
    let between = (0..3).filter(|&i| p1[i] <= p4[i] && p4[i] <= p24[i]).count();
    let pass = below && between >= 2;
    report(
        "A6",
        pass,
        format!("PSNR csf/gm/wm: 1 contrast {p1:.2?}, 4 contrasts {p4:.2?}, 24 contrasts {p24:.2?}; between for {between}/3"),
    );
    assert!(pass);
}

#[test]
fn a7_single_map_superiority() {
    let all = all_contrasts();
    let config = OptimConfig { free_maps: [true, false, false], fixed: Some(truth()), ..OptimConfig::default() };
    let single = recover(&sequences(&PresetKind::ALL, &Timing::default()), &config, 1);
    let gt = truth();
    let frozen_exact = single.estimate.maps.gm == gt.gm && single.estimate.maps.wm == gt.wm;
    let (csf_only, csf_all) = (single.rows[0].psnr, all.rows[0].psnr);
    let pass = csf_only >= csf_all && frozen_exact;
    report(
        "A7",
        pass,
        format!("CSF PSNR csf-only {csf_only:.2} dB vs all-three {csf_all:.2} dB; frozen maps untouched: {frozen_exact}"),
    );
    assert!(pass);
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn identical(a: &Estimate, b: &Estimate) -> bool {
    bits(&a.history) == bits(&b.history)
        && Tissue::ALL.iter().all(|t| bits(a.maps.channel(*t)) == bits(b.maps.channel(*t)))
}

#[test]
fn a8_determinism() {
    let base = all_contrasts();
    let seqs = sequences(&PresetKind::ALL, &Timing::default());
    let again = recover(&seqs, &OptimConfig::default(), 1);
    let threaded = recover(&seqs, &OptimConfig::default(), 4);
    let rerun = identical(&base.estimate, &again.estimate);
    let threads = identical(&base.estimate, &threaded.estimate);
    let pass = rerun && threads;
    report("A8", pass, format!("rerun bit-identical: {rerun}; 4 threads vs 1 bit-identical: {threads}"));
    assert!(pass);
}

// ---------------------------------------------------------------- A9

#[test]
fn a9_metrics_examples() {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let bin = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
    check("dice identical", dice(&bin, &bin, 0.5).unwrap() == 1.0);
    let inv: Vec<f64> = bin.iter().map(|v| 1.0 - v).collect();
    check("dice disjoint", dice(&bin, &inv, 0.5).unwrap() == 0.0);
    let a: Vec<f64> = (0..10).map(|i| if i < 6 { 1.0 } else { 0.0 }).collect();
    let b: Vec<f64> = (0..10).map(|i| if (3..7).contains(&i) { 1.0 } else { 0.0 }).collect();
    check("dice 6/4/3", dice(&a, &b, 0.5).unwrap() == 2.0 * 3.0 / 10.0);
    check("dice symmetric", dice(&a, &b, 0.5).unwrap() == dice(&b, &a, 0.5).unwrap());
    check("dice empty", dice(&[0.0; 4], &[0.1; 4], 0.5).unwrap() == 1.0);

    check("psnr identical", psnr(&bin, &bin, 1.0).unwrap() == f64::INFINITY);
    let p = psnr(&[0.1; 16], &[0.0; 16], 1.0).unwrap();
    check("psnr mse 0.01", (p - 20.0).abs() <= 1e-12);
    check("psnr mse 1", psnr(&[1.0; 16], &[0.0; 16], 1.0).unwrap() == 0.0);
    check("psnr symmetric", psnr(&a, &b, 1.0).unwrap() == psnr(&b, &a, 1.0).unwrap());

    let checker: Vec<f64> = (0..256).map(|i| ((i % 16 + i / 16) % 2) as f64).collect();
    let anti: Vec<f64> = checker.iter().map(|v| 1.0 - v).collect();
    check("ssim identical", (ssim(&checker, &checker, 16, 16).unwrap() - 1.0).abs() <= 1e-12);
    check("ssim anti-correlated", ssim(&anti, &checker, 16, 16).unwrap() < 0.0);
    let (m1, m2, c1) = (0.25, 0.75, 1e-4);
    let closed = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    check("ssim luminance", (ssim(&[m1; 256], &[m2; 256], 16, 16).unwrap() - closed).abs() <= 1e-12);

    let row = |v: f64| {
        Tissue::ALL.iter().map(|&tissue| MetricRow { tissue, dice: v, psnr: v, ssim: v }).collect::<Vec<_>>()
    };
    let one = aggregate(&[row(0.7)]).unwrap();
    check("aggregate single", one.iter().all(|t| t.dice.std == 0.0 && t.dice.mean == 0.7));
    let two = aggregate(&[row(0.0), row(1.0)]).unwrap();
    check("aggregate {0,1}", two[0].psnr == Summary { mean: 0.5, std: 0.5 });
    check("format", Summary { mean: 0.554, std: 0.041 }.to_string() == "0.55±0.04");

    let pass = failures.is_empty();
    report("A9", pass, if pass { "all metric examples hold".to_string() } else { format!("failed: {failures:?}") });
    assert!(pass);
}
