//! On-disk layout of a simulated protocol:
//!
//! ```text
//! dir/contrasts.txt   one "sequence echo" line per contrast
//! dir/kspace.bmap     2·C channels, real then imaginary part per contrast
//! dir/images.bmap     C magnitude channels
//! dir/NN_<seq>_eE.pgm 16-bit previews
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use super::{Contrast, ContrastStack};
use crate::error::{Error, Result};
use crate::phantom::{read_bmap, write_bmap, Bmap};

/// Binary 16-bit PGM, scaled so the maximum maps to 65535.
pub fn write_pgm(path: impl AsRef<Path>, nx: usize, ny: usize, data: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if data.len() != nx * ny {
        return Err(Error::Dimension(format!(
            "PGM of {nx}x{ny} given {} values",
            data.len()
        )));
    }
    let max = data.iter().cloned().fold(0.0, f64::max);
    let mut bytes = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    for &v in data {
        let q = if max > 0.0 { (v.max(0.0) / max * 65535.0).round() as u16 } else { 0 };
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn save_stack(stack: &ContrastStack, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = String::new();
    let mut kchan = Vec::new();
    let mut ichan = Vec::new();
    for (i, c) in stack.contrasts.iter().enumerate() {
        labels.push_str(&format!("{} {}\n", c.sequence, c.echo));
        kchan.push(c.kspace.iter().map(|z| z.re).collect());
        kchan.push(c.kspace.iter().map(|z| z.im).collect());
        ichan.push(c.image.clone());
        let name = format!("{i:02}_{}_e{}.pgm", c.sequence, c.echo);
        write_pgm(dir.join(name), stack.nx, stack.ny, &c.image)?;
    }
    let p = dir.join("contrasts.txt");
    fs::write(&p, labels).map_err(|e| Error::io(&p, e))?;
    let bm = |channels| Bmap { width: stack.nx, height: stack.ny, channels };
    write_bmap(&bm(kchan), dir.join("kspace.bmap"))?;
    write_bmap(&bm(ichan), dir.join("images.bmap"))
}

pub fn load_stack(dir: impl AsRef<Path>) -> Result<ContrastStack> {
    let dir = dir.as_ref();
    let p = dir.join("contrasts.txt");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(seq), Some(echo), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse { line: i + 1, reason: "expected 'sequence echo'".into() });
        };
        let echo = echo.parse().map_err(|_| Error::Parse {
            line: i + 1,
            reason: format!("bad echo index '{echo}'"),
        })?;
        labels.push((seq.to_string(), echo));
    }
    let k = read_bmap(dir.join("kspace.bmap"))?;
    let img = read_bmap(dir.join("images.bmap"))?;
    if k.channels.len() != 2 * labels.len() || img.channels.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} labels but {} k-space and {} image channels",
            labels.len(),
            k.channels.len(),
            img.channels.len()
        )));
    }
    if (k.width, k.height) != (img.width, img.height) {
        return Err(Error::Dimension("k-space and image dims differ".into()));
    }
    let contrasts = labels
        .into_iter()
        .enumerate()
        .map(|(i, (sequence, echo))| Contrast {
            sequence,
            echo,
            kspace: k.channels[2 * i]
                .iter()
                .zip(&k.channels[2 * i + 1])
                .map(|(&re, &im)| Complex64::new(re, im))
                .collect(),
            image: img.channels[i].clone(),
        })
        .collect();
    Ok(ContrastStack { nx: k.width, ny: k.height, contrasts })
}
