use crate::error::{Error, Result};
use crate::phantom::ProbabilityMaps;

/// How optimization variables become probability maps. Realized maps are
/// always clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Parameterization {
    /// One free value per pixel and map.
    DirectPixel,
    /// Per pixel and map, a weighted sum over the basis subjects with its own
    /// coefficient for every subject.
    LinearAtlas { basis: Vec<ProbabilityMaps> },
    /// One scale per map applied to a reference map.
    ScalarPerMap { reference: ProbabilityMaps },
}

impl Parameterization {
    pub fn name(&self) -> &'static str {
        match self {
            Parameterization::DirectPixel => "direct",
            Parameterization::LinearAtlas { .. } => "atlas",
            Parameterization::ScalarPerMap { .. } => "scalar",
        }
    }

    /// Mean of `maps`, the usual scalar-model reference.
    pub fn mean_map(maps: &[ProbabilityMaps]) -> Result<ProbabilityMaps> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidArgument("no maps to average".into()))?;
        let mut out = ProbabilityMaps::constant(first.width, first.height, 0.0);
        for m in maps {
            if (m.width, m.height) != (first.width, first.height) {
                return Err(Error::Dimension("maps differ in size".into()));
            }
            for (dst, src) in [(&mut out.csf, &m.csf), (&mut out.gm, &m.gm), (&mut out.wm, &m.wm)] {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s / maps.len() as f64;
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let check = |m: &ProbabilityMaps| {
            m.check_dims()?;
            if (m.width, m.height) != (width, height) {
                return Err(Error::Dimension(format!(
                    "parameterization map is {}x{}, expected {width}x{height}",
                    m.width, m.height
                )));
            }
            Ok(())
        };
        match self {
            Parameterization::DirectPixel => Ok(()),
            Parameterization::LinearAtlas { basis } => {
                if basis.is_empty() {
                    return Err(Error::InvalidArgument("atlas basis is empty".into()));
                }
                basis.iter().try_for_each(check)
            }
            Parameterization::ScalarPerMap { reference } => check(reference),
        }
    }

    /// Starting point. Direct pixels start at `value`; atlas coefficients
    /// at `1/S` (the basis mean); scalar coefficients at 1 (the reference).
    pub fn init(&self, n_pixels: usize, value: f64) -> Vec<f64> {
        match self {
            Parameterization::DirectPixel => vec![value; 3 * n_pixels],
            Parameterization::LinearAtlas { basis } => vec![1.0 / basis.len() as f64; basis.len() * 3 * n_pixels],
            Parameterization::ScalarPerMap { .. } => vec![1.0; 3],
        }
    }

    /// Unclamped maps as one `[csf…, gm…, wm…]` vector.
    fn raw(&self, params: &[f64], n: usize) -> Vec<f64> {
        match self {
            Parameterization::DirectPixel => params.to_vec(),
            Parameterization::LinearAtlas { basis } => {
                let mut out = vec![0.0; 3 * n];
                for (s, b) in basis.iter().enumerate() {
                    let coeff = &params[s * 3 * n..(s + 1) * 3 * n];
                    for (m, ch) in [&b.csf, &b.gm, &b.wm].into_iter().enumerate() {
                        for p in 0..n {
                            out[m * n + p] += coeff[m * n + p] * ch[p];
                        }
                    }
                }
                out
            }
            Parameterization::ScalarPerMap { reference } => [&reference.csf, &reference.gm, &reference.wm]
                .into_iter()
                .enumerate()
                .flat_map(|(m, ch)| ch.iter().map(move |v| params[m] * v))
                .collect(),
        }
    }

    pub fn realize(&self, params: &[f64], width: usize, height: usize) -> Result<ProbabilityMaps> {
        let n = width * height;
        let v: Vec<f64> = self.raw(params, n).into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
        ProbabilityMaps::new(width, height, v[..n].to_vec(), v[n..2 * n].to_vec(), v[2 * n..].to_vec())
    }

    /// Chains a gradient on the realized maps back to the parameters. The
    /// clamp passes gradient only where the raw value lies inside the box.
    pub fn pullback(&self, params: &[f64], grad: &[f64], n: usize) -> Vec<f64> {
        let raw = self.raw(params, n);
        let g: Vec<f64> = grad
            .iter()
            .zip(&raw)
            .map(|(g, r)| if (0.0..=1.0).contains(r) { *g } else { 0.0 })
            .collect();
        match self {
            Parameterization::DirectPixel => grad.to_vec(),
            Parameterization::LinearAtlas { basis } => {
                let mut out = vec![0.0; params.len()];
                for (s, b) in basis.iter().enumerate() {
                    for (m, ch) in [&b.csf, &b.gm, &b.wm].into_iter().enumerate() {
                        for p in 0..n {
                            out[s * 3 * n + m * n + p] = g[m * n + p] * ch[p];
                        }
                    }
                }
                out
            }
            Parameterization::ScalarPerMap { reference } => [&reference.csf, &reference.gm, &reference.wm]
                .into_iter()
                .enumerate()
                .map(|(m, ch)| ch.iter().zip(&g[m * n..(m + 1) * n]).map(|(r, g)| r * g).sum())
                .collect(),
        }
    }

    /// Keeps directly optimized pixels inside the box.
    pub fn project(&self, params: &mut [f64]) {
        if let Parameterization::DirectPixel = self {
            for v in params {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    /// Map and pixel a parameter index refers to, for diagnostics.
    pub fn describe(&self, index: usize, n: usize) -> String {
        const MAPS: [&str; 3] = ["csf", "gm", "wm"];
        match self {
            Parameterization::DirectPixel => format!("{} pixel {}", MAPS[index / n], index % n),
            Parameterization::LinearAtlas { .. } => {
                let within = index % (3 * n);
                format!(
                    "basis {} {} pixel {}",
                    index / (3 * n),
                    MAPS[within / n],
                    within % n
                )
            }
            Parameterization::ScalarPerMap { .. } => format!("{} scale", MAPS[index]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::synth_phantom;

    fn fd_check(p: &Parameterization, params: &[f64], n: usize) {
        let mut rng_w: Vec<f64> = (0..3 * n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        rng_w[0] = 0.3;
        let f = |x: &[f64]| -> f64 {
            let raw = p.raw(x, n);
            raw.iter().zip(&rng_w).map(|(r, w)| r.clamp(0.0, 1.0) * w).sum()
        };
        let g = p.pullback(params, &rng_w, n);
        for i in 0..params.len().min(40) {
            let mut x = params.to_vec();
            x[i] += 1e-6;
            let up = f(&x);
            x[i] -= 2e-6;
            let down = f(&x);
            let num = (up - down) / 2e-6;
            assert!((num - g[i]).abs() < 1e-6, "{} {i}: {num} vs {}", p.name(), g[i]);
        }
    }

    #[test]
    fn pullbacks_match_finite_differences() {
        let a = synth_phantom(1, 8).unwrap();
        let b = synth_phantom(2, 8).unwrap();
        let n = 64;
        let atlas = Parameterization::LinearAtlas { basis: vec![a.clone(), b.clone()] };
        fd_check(&atlas, &atlas.init(n, 0.0), n);
        let scalar = Parameterization::ScalarPerMap { reference: a };
        fd_check(&scalar, &[0.7, 0.9, 0.5], n);
        fd_check(&Parameterization::DirectPixel, &vec![0.4; 3 * n], n);
    }

    #[test]
    fn realized_maps_are_clamped() {
        let p = Parameterization::ScalarPerMap { reference: ProbabilityMaps::constant(2, 2, 0.8) };
        let m = p.realize(&[2.0, -1.0, 1.0], 2, 2).unwrap();
        assert!(m.csf.iter().all(|v| *v == 1.0));
        assert!(m.gm.iter().all(|v| *v == 0.0));
        assert!(m.wm.iter().all(|v| (*v - 0.8).abs() < 1e-15));
    }

    #[test]
    fn atlas_init_is_basis_mean() {
        let a = synth_phantom(1, 8).unwrap();
        let b = synth_phantom(2, 8).unwrap();
        let p = Parameterization::LinearAtlas { basis: vec![a.clone(), b.clone()] };
        let m = p.realize(&p.init(64, 0.0), 8, 8).unwrap();
        let mean = Parameterization::mean_map(&[a, b]).unwrap();
        for (x, y) in m.gm.iter().zip(&mean.gm) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(Parameterization::LinearAtlas { basis: vec![] }.validate(8, 8).is_err());
        assert_eq!(p.describe(64 * 3 + 70, 64), "basis 1 gm pixel 6");
    }
}
