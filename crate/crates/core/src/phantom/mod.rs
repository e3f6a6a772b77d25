//! Tissue probability maps, the tissue parameter table and the linear
//! mixing transform that turns the former into quantitative maps.

mod io;
mod synth;

pub use io::{
    export_csv, import_csv, import_raw, load_maps, read_bmap, save_maps, write_bmap, Bmap,
    RawSidecar, BMAP_MAGIC,
};
pub use synth::synth_phantom;

use crate::error::{Error, Result};

/// Mixed proton density below which a pixel is treated as empty.
pub const DEFAULT_PD_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tissue {
    Csf,
    Gm,
    Wm,
}

impl Tissue {
    pub const ALL: [Tissue; 3] = [Tissue::Csf, Tissue::Gm, Tissue::Wm];

    pub fn index(self) -> usize {
        match self {
            Tissue::Csf => 0,
            Tissue::Gm => 1,
            Tissue::Wm => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tissue::Csf => "csf",
            Tissue::Gm => "gm",
            Tissue::Wm => "wm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csf" => Ok(Tissue::Csf),
            "gm" => Ok(Tissue::Gm),
            "wm" => Ok(Tissue::Wm),
            other => Err(Error::InvalidArgument(format!(
                "unknown tissue '{other}' (valid: csf, gm, wm)"
            ))),
        }
    }
}

impl std::fmt::Display for Tissue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-pixel CSF/GM/WM fractions on a 2D grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMaps {
    pub width: usize,
    pub height: usize,
    pub csf: Vec<f64>,
    pub gm: Vec<f64>,
    pub wm: Vec<f64>,
}

impl ProbabilityMaps {
    pub fn new(width: usize, height: usize, csf: Vec<f64>, gm: Vec<f64>, wm: Vec<f64>) -> Result<Self> {
        let maps = ProbabilityMaps {
            width,
            height,
            csf,
            gm,
            wm,
        };
        maps.check_dims()?;
        Ok(maps)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        let n = width * height;
        ProbabilityMaps {
            width,
            height,
            csf: vec![value; n],
            gm: vec![value; n],
            wm: vec![value; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, tissue: Tissue) -> &[f64] {
        match tissue {
            Tissue::Csf => &self.csf,
            Tissue::Gm => &self.gm,
            Tissue::Wm => &self.wm,
        }
    }

    pub fn channel_mut(&mut self, tissue: Tissue) -> &mut Vec<f64> {
        match tissue {
            Tissue::Csf => &mut self.csf,
            Tissue::Gm => &mut self.gm,
            Tissue::Wm => &mut self.wm,
        }
    }

    pub fn check_dims(&self) -> Result<()> {
        let n = self.width * self.height;
        for t in Tissue::ALL {
            let len = self.channel(t).len();
            if len != n {
                return Err(Error::Dimension(format!(
                    "channel {t} has {len} values, expected {}x{} = {n}",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }

    /// Checks every value is finite and inside [0,1].
    pub fn validate(&self) -> Result<()> {
        self.check_dims()?;
        for t in Tissue::ALL {
            for (pixel, &value) in self.channel(t).iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::OutOfRange {
                        channel: t.index(),
                        pixel,
                        value,
                    });
                }
            }
        }
        Ok(())
    }

    /// Largest per-pixel channel sum; the simplex is reported, never enforced.
    pub fn max_sum(&self) -> f64 {
        (0..self.len())
            .map(|i| self.csf[i] + self.gm[i] + self.wm[i])
            .fold(0.0, f64::max)
    }

    pub fn clamp_unit(&mut self) {
        for t in Tissue::ALL {
            for v in self.channel_mut(t).iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Relaxation and density constants of one tissue class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TissueParams {
    /// ms
    pub t1: f64,
    /// ms
    pub t2: f64,
    /// Reversible dephasing time, ms.
    pub t2_prime: f64,
    /// Relative proton density.
    pub pd: f64,
    /// Apparent diffusion coefficient, mm²/s.
    pub d: f64,
}

impl TissueParams {
    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = self.t1 > 0.0
            && self.t2 > 0.0
            && self.t2 <= self.t1
            && self.t2_prime > 0.0
            && (0.0..=1.0).contains(&self.pd)
            && self.d >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "tissue {name}: need t1>0, 0<t2<=t1, t2'>0, pd in [0,1], d>=0; got {self:?}"
            )))
        }
    }

    /// Effective transverse decay time of a gradient echo.
    pub fn t2_star(&self) -> f64 {
        1.0 / (1.0 / self.t2 + 1.0 / self.t2_prime)
    }

    fn values(&self) -> [f64; 5] {
        [self.t1, self.t2, self.t2_prime, self.pd, self.d]
    }
}

/// Tissue constants used by the mixing transform. The defaults are
/// 1.5 T literature-style values and can be overridden from a config file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TissueTable {
    pub csf: TissueParams,
    pub gm: TissueParams,
    pub wm: TissueParams,
}

impl Default for TissueTable {
    fn default() -> Self {
        TissueTable {
            csf: TissueParams {
                t1: 4000.0,
                t2: 2000.0,
                t2_prime: 3000.0,
                pd: 1.0,
                d: 3.0e-3,
            },
            gm: TissueParams {
                t1: 1100.0,
                t2: 95.0,
                t2_prime: 70.0,
                pd: 0.85,
                d: 0.8e-3,
            },
            wm: TissueParams {
                t1: 650.0,
                t2: 75.0,
                t2_prime: 60.0,
                pd: 0.7,
                d: 0.7e-3,
            },
        }
    }
}

impl TissueTable {
    pub fn get(&self, tissue: Tissue) -> &TissueParams {
        match tissue {
            Tissue::Csf => &self.csf,
            Tissue::Gm => &self.gm,
            Tissue::Wm => &self.wm,
        }
    }

    pub fn get_mut(&mut self, tissue: Tissue) -> &mut TissueParams {
        match tissue {
            Tissue::Csf => &mut self.csf,
            Tissue::Gm => &mut self.gm,
            Tissue::Wm => &mut self.wm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in Tissue::ALL {
            self.get(t).validate(t.name())?;
        }
        Ok(())
    }

    pub fn max_t1(&self) -> f64 {
        self.csf.t1.max(self.gm.t1).max(self.wm.t1)
    }
}

/// Quantity produced by the mixing transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quantity {
    T1,
    T2,
    T2Prime,
    Pd,
    D,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::T1,
        Quantity::T2,
        Quantity::T2Prime,
        Quantity::Pd,
        Quantity::D,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// Constant of `tissue` for this quantity; also the adjoint of `mix`.
    pub fn of(self, params: &TissueParams) -> f64 {
        params.values()[self.index()]
    }
}

/// Per-pixel relaxation/density maps derived from probability maps.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantitativeMaps {
    pub width: usize,
    pub height: usize,
    pub qt1: Vec<f64>,
    pub qt2: Vec<f64>,
    pub qt2_prime: Vec<f64>,
    pub pd: Vec<f64>,
    pub d: Vec<f64>,
    pub background_mask: Vec<bool>,
}

impl QuantitativeMaps {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn quantity(&self, q: Quantity) -> &[f64] {
        match q {
            Quantity::T1 => &self.qt1,
            Quantity::T2 => &self.qt2,
            Quantity::T2Prime => &self.qt2_prime,
            Quantity::Pd => &self.pd,
            Quantity::D => &self.d,
        }
    }

    /// Tissue parameters of one pixel.
    pub fn voxel(&self, i: usize) -> TissueParams {
        TissueParams {
            t1: self.qt1[i],
            t2: self.qt2[i],
            t2_prime: self.qt2_prime[i],
            pd: self.pd[i],
            d: self.d[i],
        }
    }

    /// A map that holds `params` at every pixel (no background).
    pub fn uniform(width: usize, height: usize, params: TissueParams) -> Self {
        let n = width * height;
        QuantitativeMaps {
            width,
            height,
            qt1: vec![params.t1; n],
            qt2: vec![params.t2; n],
            qt2_prime: vec![params.t2_prime; n],
            pd: vec![params.pd; n],
            d: vec![params.d; n],
            background_mask: vec![params.pd < DEFAULT_PD_FLOOR; n],
        }
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.qt1.len(),
            self.qt2.len(),
            self.qt2_prime.len(),
            self.pd.len(),
            self.d.len(),
            self.background_mask.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Dimension(format!(
                "quantitative map channels {lens:?} do not match {}x{}",
                self.width, self.height
            )));
        }
        for q in Quantity::ALL {
            if let Some(i) = self.quantity(q).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{q:?} map at pixel {i}")));
            }
        }
        Ok(())
    }
}

/// Linear mixing with the default background floor.
pub fn mix(maps: &ProbabilityMaps, table: &TissueTable) -> Result<QuantitativeMaps> {
    mix_with_floor(maps, table, DEFAULT_PD_FLOOR)
}

/// Mixes relaxation times, density and diffusivity linearly:
/// `q = csf·q_csf + gm·q_gm + wm·q_wm` per pixel. Pixels whose mixed
/// density falls below `pd_floor` are flagged as background.
pub fn mix_with_floor(
    maps: &ProbabilityMaps,
    table: &TissueTable,
    pd_floor: f64,
) -> Result<QuantitativeMaps> {
    maps.check_dims()?;
    let n = maps.len();
    let mut out = QuantitativeMaps {
        width: maps.width,
        height: maps.height,
        qt1: vec![0.0; n],
        qt2: vec![0.0; n],
        qt2_prime: vec![0.0; n],
        pd: vec![0.0; n],
        d: vec![0.0; n],
        background_mask: vec![false; n],
    };
    for i in 0..n {
        let (c, g, w) = (maps.csf[i], maps.gm[i], maps.wm[i]);
        let lerp = |q: Quantity| c * q.of(&table.csf) + g * q.of(&table.gm) + w * q.of(&table.wm);
        out.qt1[i] = lerp(Quantity::T1);
        out.qt2[i] = lerp(Quantity::T2);
        out.qt2_prime[i] = lerp(Quantity::T2Prime);
        out.pd[i] = lerp(Quantity::Pd);
        out.d[i] = lerp(Quantity::D);
        out.background_mask[i] = !(out.pd[i] >= pd_floor);
    }
    Ok(out)
}

/// Gradient of a scalar with respect to every quantitative channel.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantitativeGradient {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub t2_prime: Vec<f64>,
    pub pd: Vec<f64>,
    pub d: Vec<f64>,
}

impl QuantitativeGradient {
    pub fn zeros(n: usize) -> Self {
        QuantitativeGradient {
            t1: vec![0.0; n],
            t2: vec![0.0; n],
            t2_prime: vec![0.0; n],
            pd: vec![0.0; n],
            d: vec![0.0; n],
        }
    }

    fn quantity(&self, q: Quantity) -> &[f64] {
        match q {
            Quantity::T1 => &self.t1,
            Quantity::T2 => &self.t2,
            Quantity::T2Prime => &self.t2_prime,
            Quantity::Pd => &self.pd,
            Quantity::D => &self.d,
        }
    }
}

/// Adjoint of [`mix`]: pulls quantitative-map gradients back onto the three
/// probability channels (`[csf, gm, wm]`). Background pixels receive zero.
pub fn mix_adjoint(
    table: &TissueTable,
    qmaps: &QuantitativeMaps,
    grad: &QuantitativeGradient,
) -> [Vec<f64>; 3] {
    let n = qmaps.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for t in Tissue::ALL {
        let params = table.get(t);
        let dst = &mut out[t.index()];
        for q in Quantity::ALL {
            let k = q.of(params);
            for (i, g) in grad.quantity(q).iter().enumerate() {
                if !qmaps.background_mask[i] {
                    dst[i] += k * g;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel(c: f64, g: f64, w: f64) -> ProbabilityMaps {
        ProbabilityMaps::new(1, 1, vec![c], vec![g], vec![w]).unwrap()
    }

    #[test]
    fn pure_csf_pixel_returns_table_entry() {
        let q = mix(&pixel(1.0, 0.0, 0.0), &TissueTable::default()).unwrap();
        assert_eq!(q.qt1[0], 4000.0);
        assert_eq!(q.qt2[0], 2000.0);
        assert!(!q.background_mask[0]);
    }

    #[test]
    fn empty_pixel_is_background() {
        let q = mix(&pixel(0.0, 0.0, 0.0), &TissueTable::default()).unwrap();
        assert_eq!(q.pd[0], 0.0);
        assert!(q.background_mask[0]);
    }

    #[test]
    fn half_csf_half_gm() {
        let q = mix(&pixel(0.5, 0.5, 0.0), &TissueTable::default()).unwrap();
        assert_eq!(q.qt1[0], 2550.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let maps = ProbabilityMaps {
            width: 2,
            height: 2,
            csf: vec![0.0; 4],
            gm: vec![0.0; 3],
            wm: vec![0.0; 4],
        };
        assert!(matches!(mix(&maps, &TissueTable::default()), Err(Error::Dimension(_))));
    }

    #[test]
    fn mixed_times_stay_within_tissue_range() {
        let table = TissueTable::default();
        let maps = synth_phantom(3, 16).unwrap();
        let q = mix(&maps, &table).unwrap();
        for i in 0..q.len() {
            if q.background_mask[i] {
                continue;
            }
            let s = maps.csf[i] + maps.gm[i] + maps.wm[i];
            // convexity holds for the normalised mixture
            let t1 = q.qt1[i] / s;
            assert!(t1 >= table.wm.t1 - 1e-9 && t1 <= table.csf.t1 + 1e-9);
        }
    }

    #[test]
    fn table_validation_rejects_t2_above_t1() {
        let mut table = TissueTable::default();
        table.gm.t2 = 2000.0;
        assert!(table.validate().is_err());
        assert!(TissueTable::default().validate().is_ok());
    }
}
