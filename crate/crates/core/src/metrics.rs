//! Overlap and image-quality scores between estimated and reference maps.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::phantom::{ProbabilityMaps, Tissue};

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} pixels", a.len(), b.len())));
    }
    Ok(())
}

/// Dice overlap of `> threshold` masks; two empty masks score 1.
pub fn dice(pred: &[f64], gt: &[f64], threshold: f64) -> Result<f64> {
    same_len(pred, gt)?;
    let (mut both, mut a, mut b) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        let (x, y) = (*p > threshold, *g > threshold);
        a += x as usize;
        b += y as usize;
        both += (x && y) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Peak signal-to-noise ratio in dB; infinite for identical inputs.
pub fn psnr(pred: &[f64], gt: &[f64], peak: f64) -> Result<f64> {
    same_len(pred, gt)?;
    if pred.is_empty() {
        return Err(Error::Dimension("empty images".into()));
    }
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const WIN: usize = 7;
const SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; WIN * WIN] {
    let c = (WIN / 2) as f64;
    let mut w = [0.0; WIN * WIN];
    for y in 0..WIN {
        for x in 0..WIN {
            let r2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            w[y * WIN + x] = (-r2 / (2.0 * SIGMA * SIGMA)).exp();
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean structural similarity over every fully contained 7×7 Gaussian
/// window (σ 1.5, dynamic range 1).
pub fn ssim(pred: &[f64], gt: &[f64], width: usize, height: usize) -> Result<f64> {
    same_len(pred, gt)?;
    if pred.len() != width * height {
        return Err(Error::Dimension(format!("{} pixels for {width}x{height}", pred.len())));
    }
    if width < WIN || height < WIN {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {WIN}x{WIN} pixels, got {width}x{height}"
        )));
    }
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let w = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - WIN {
        for x0 in 0..=width - WIN {
            let at = |img: &[f64], i: usize| img[(y0 + i / WIN) * width + x0 + i % WIN];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..WIN * WIN {
                mx += w[i] * at(pred, i);
                my += w[i] * at(gt, i);
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..WIN * WIN {
                let dx = at(pred, i) - mx;
                let dy = at(gt, i) - my;
                vx += w[i] * dx * dx;
                vy += w[i] * dy * dy;
                cxy += w[i] * dx * dy;
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub tissue: Tissue,
    pub dice: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// One row per tissue, comparing realized estimates against ground truth.
pub fn evaluate(pred: &ProbabilityMaps, gt: &ProbabilityMaps) -> Result<Vec<MetricRow>> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Dimension(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    Tissue::ALL
        .iter()
        .map(|&t| {
            let (p, g) = (pred.channel(t), gt.channel(t));
            Ok(MetricRow {
                tissue: t,
                dice: dice(p, g, 0.5)?,
                psnr: psnr(p, g, 1.0)?,
                ssim: ssim(p, g, pred.width, pred.height)?,
            })
        })
        .collect()
}

pub fn write_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tissue", "dice", "psnr", "ssim"])?;
    for r in rows {
        w.write_record([r.tissue.name().to_string(), r.dice.to_string(), r.psnr.to_string(), r.ssim.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("cannot summarize zero values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        // identical values (including an infinite PSNR) have no spread
        let std = if values.iter().all(|v| *v == values[0]) {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        };
        Ok(Summary { mean, std })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TissueSummary {
    pub tissue: Tissue,
    pub dice: Summary,
    pub psnr: Summary,
    pub ssim: Summary,
}

/// Per-tissue summaries over subjects; each inner slice holds one
/// subject's rows.
pub fn aggregate(subjects: &[Vec<MetricRow>]) -> Result<Vec<TissueSummary>> {
    if subjects.is_empty() {
        return Err(Error::InvalidArgument("no subjects to aggregate".into()));
    }
    Tissue::ALL
        .iter()
        .map(|&t| {
            let rows: Vec<&MetricRow> = subjects
                .iter()
                .map(|s| {
                    s.iter()
                        .find(|r| r.tissue == t)
                        .ok_or_else(|| Error::InvalidArgument(format!("subject without a {t} row")))
                })
                .collect::<Result<_>>()?;
            let pick = |f: fn(&MetricRow) -> f64| Summary::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            Ok(TissueSummary {
                tissue: t,
                dice: pick(|r| r.dice)?,
                psnr: pick(|r| r.psnr)?,
                ssim: pick(|r| r.ssim)?,
            })
        })
        .collect()
}
