use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ProbabilityMaps, Tissue};
use crate::error::{Error, Result};

pub const BMAP_MAGIC: &[u8; 6] = b"BMAP1\n";
const HEADER_LEN: usize = 6 + 12;

/// Raw contents of a BMAP file: `channels` planes of `width × height` f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Bmap {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Vec<f64>>,
}

impl Bmap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * self.channels.len());
        out.extend_from_slice(BMAP_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels.len() as u32).to_le_bytes());
        for ch in &self.channels {
            debug_assert_eq!(ch.len(), n);
            for v in ch {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a BMAP byte stream. NaN values are rejected with their offset.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < BMAP_MAGIC.len() || &bytes[..BMAP_MAGIC.len()] != BMAP_MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: "bad magic, expected \"BMAP1\\n\"".into(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                reason: "truncated header".into(),
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (width, height, nch) = (word(6), word(10), word(14));
        let n = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(nch))
            .ok_or_else(|| Error::Format {
                offset: 6,
                reason: "dimensions overflow".into(),
            })?;
        let expected = HEADER_LEN + 8 * n;
        if bytes.len() < expected {
            return Err(Error::Format {
                offset: bytes.len() as u64,
                reason: format!("truncated payload, expected {expected} bytes"),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format {
                offset: expected as u64,
                reason: "trailing bytes after payload".into(),
            });
        }
        let plane = width * height;
        let mut channels = Vec::with_capacity(nch);
        for c in 0..nch {
            let mut ch = Vec::with_capacity(plane);
            for i in 0..plane {
                let at = HEADER_LEN + 8 * (c * plane + i);
                let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                if v.is_nan() {
                    return Err(Error::Format {
                        offset: at as u64,
                        reason: format!("NaN in channel {c} at pixel {i}"),
                    });
                }
                ch.push(v);
            }
            channels.push(ch);
        }
        Ok(Bmap {
            width,
            height,
            channels,
        })
    }
}

pub fn read_bmap(path: impl AsRef<Path>) -> Result<Bmap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Bmap::from_bytes(&bytes)
}

pub fn write_bmap(bmap: &Bmap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bmap.to_bytes()).map_err(|e| Error::io(path, e))
}

impl TryFrom<Bmap> for ProbabilityMaps {
    type Error = Error;

    fn try_from(b: Bmap) -> Result<Self> {
        if b.channels.len() != 3 {
            return Err(Error::Format {
                offset: 14,
                reason: format!("expected 3 channels (csf, gm, wm), found {}", b.channels.len()),
            });
        }
        let mut it = b.channels.into_iter();
        let maps = ProbabilityMaps {
            width: b.width,
            height: b.height,
            csf: it.next().unwrap(),
            gm: it.next().unwrap(),
            wm: it.next().unwrap(),
        };
        maps.validate()?;
        Ok(maps)
    }
}

impl From<&ProbabilityMaps> for Bmap {
    fn from(m: &ProbabilityMaps) -> Self {
        Bmap {
            width: m.width,
            height: m.height,
            channels: vec![m.csf.clone(), m.gm.clone(), m.wm.clone()],
        }
    }
}

pub fn load_maps(path: impl AsRef<Path>) -> Result<ProbabilityMaps> {
    read_bmap(path)?.try_into()
}

pub fn save_maps(maps: &ProbabilityMaps, path: impl AsRef<Path>) -> Result<()> {
    maps.check_dims()?;
    write_bmap(&Bmap::from(maps), path)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    x: usize,
    y: usize,
    csf: f64,
    gm: f64,
    wm: f64,
}

/// Writes one row per pixel: `x,y,csf,gm,wm`.
pub fn export_csv(maps: &ProbabilityMaps, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for y in 0..maps.height {
        for x in 0..maps.width {
            let i = y * maps.width + x;
            w.serialize(CsvRow {
                x,
                y,
                csf: maps.csf[i],
                gm: maps.gm[i],
                wm: maps.wm[i],
            })?;
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

/// Reads the CSV layout of [`export_csv`]. Grid size is inferred from the
/// largest coordinates; every pixel must appear exactly once.
pub fn import_csv(path: impl AsRef<Path>) -> Result<ProbabilityMaps> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let rows: Vec<CsvRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    let width = rows.iter().map(|r| r.x + 1).max().unwrap_or(0);
    let height = rows.iter().map(|r| r.y + 1).max().unwrap_or(0);
    if rows.len() != width * height {
        return Err(Error::Dimension(format!(
            "{} csv rows cannot fill a {width}x{height} grid",
            rows.len()
        )));
    }
    let mut maps = ProbabilityMaps::constant(width, height, f64::NAN);
    for (line, row) in rows.iter().enumerate() {
        let i = row.y * width + row.x;
        if !maps.csf[i].is_nan() {
            return Err(Error::Parse {
                line: line + 2,
                reason: format!("duplicate pixel ({}, {})", row.x, row.y),
            });
        }
        maps.csf[i] = row.csf;
        maps.gm[i] = row.gm;
        maps.wm[i] = row.wm;
    }
    maps.validate()?;
    Ok(maps)
}

/// Sidecar describing 8-bit rasters, one file per tissue channel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    /// Multiplier mapping a stored byte to a probability, usually 1/255.
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub csf: PathBuf,
    pub gm: PathBuf,
    pub wm: PathBuf,
}

fn default_scale() -> f64 {
    1.0 / 255.0
}

/// Imports 8-bit slices (e.g. exported from BrainWeb) described by a JSON
/// sidecar. Channel paths are resolved relative to the sidecar.
pub fn import_raw(sidecar: impl AsRef<Path>) -> Result<ProbabilityMaps> {
    let sidecar = sidecar.as_ref();
    let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let meta: RawSidecar = serde_json::from_str(&text)?;
    let base = sidecar.parent().unwrap_or(Path::new("."));
    let n = meta.width * meta.height;
    let mut maps = ProbabilityMaps::constant(meta.width, meta.height, 0.0);
    for (tissue, rel) in [(Tissue::Csf, &meta.csf), (Tissue::Gm, &meta.gm), (Tissue::Wm, &meta.wm)] {
        let path = base.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != n {
            return Err(Error::Format {
                offset: bytes.len().min(n) as u64,
                reason: format!("{} holds {} bytes, expected {n}", path.display(), bytes.len()),
            });
        }
        let ch = maps.channel_mut(tissue);
        for (dst, b) in ch.iter_mut().zip(bytes) {
            *dst = b as f64 * meta.scale;
        }
    }
    maps.validate()?;
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_for(width: u32, height: u32, values: &[f64]) -> Vec<u8> {
        let mut b = BMAP_MAGIC.to_vec();
        b.extend_from_slice(&width.to_le_bytes());
        b.extend_from_slice(&height.to_le_bytes());
        b.extend_from_slice(&3u32.to_le_bytes());
        for v in values {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn constant_quarter_field() {
        let bytes = bytes_for(2, 2, &[0.25; 12]);
        let maps: ProbabilityMaps = Bmap::from_bytes(&bytes).unwrap().try_into().unwrap();
        assert!(maps.csf.iter().chain(&maps.gm).chain(&maps.wm).all(|&v| v == 0.25));
        assert_eq!(Bmap::from(&maps).to_bytes(), bytes);
    }

    #[test]
    fn out_of_range_reports_pixel() {
        let mut vals = [0.25; 12];
        vals[4 + 3] = 1.5;
        let err = ProbabilityMaps::try_from(Bmap::from_bytes(&bytes_for(2, 2, &vals)).unwrap()).unwrap_err();
        match err {
            Error::OutOfRange { channel, pixel, value } => {
                assert_eq!((channel, pixel, value), (1, 3, 1.5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = bytes_for(2, 2, &[0.25; 12]);
        assert!(matches!(
            Bmap::from_bytes(b"BMAP2\n...."),
            Err(Error::Format { offset: 0, .. })
        ));
        bytes.truncate(bytes.len() - 3);
        match Bmap::from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_names_its_offset() {
        let mut vals = [0.25; 12];
        vals[5] = f64::NAN;
        match Bmap::from_bytes(&bytes_for(2, 2, &vals)) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 18 + 8 * 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_channel_count() {
        let b = Bmap {
            width: 1,
            height: 1,
            channels: vec![vec![0.0], vec![0.0]],
        };
        let err = ProbabilityMaps::try_from(Bmap::from_bytes(&b.to_bytes()).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 14, .. }));
    }

    #[test]
    fn csv_and_raw_import() {
        let dir = tempfile::tempdir().unwrap();
        let maps = crate::phantom::synth_phantom(4, 8).unwrap();
        let csv_path = dir.path().join("m.csv");
        export_csv(&maps, &csv_path).unwrap();
        assert_eq!(import_csv(&csv_path).unwrap(), maps);

        for (name, byte) in [("c.raw", 255u8), ("g.raw", 0), ("w.raw", 51)] {
            fs::write(dir.path().join(name), vec![byte; 6]).unwrap();
        }
        let side = dir.path().join("slice.json");
        fs::write(
            &side,
            r#"{"width": 3, "height": 2, "csf": "c.raw", "gm": "g.raw", "wm": "w.raw"}"#,
        )
        .unwrap();
        let raw = import_raw(&side).unwrap();
        assert_eq!((raw.width, raw.height), (3, 2));
        assert_eq!(raw.csf[0], 1.0);
        assert_eq!(raw.gm[5], 0.0);
        assert!((raw.wm[2] - 0.2).abs() < 1e-15);
    }
}
