//! Artifact writers: PGM/PPM image grids, point CSVs, JSON manifests.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[-1, 1] → 0..=255`: clamp, then `(x+1)·127.5` rounded half away.
pub fn to_byte(x: f32) -> u8 {
    ((x.clamp(-1.0, 1.0) as f64 + 1.0) * 127.5).round() as u8
}

/// Tiles `images[N, C, H, W]` (C = 1 or 3) into a square-ish grid. One
/// channel gives binary PGM (P5), three give binary PPM (P6).
pub fn write_image_grid<W: Write>(mut w: W, images: &Tensor) -> Result<()> {
    let [n, c, h, wd] = images.shape() else {
        return Err(Error::shape(format!("image grid needs [N,C,H,W], got {:?}", images.shape())));
    };
    let (n, c, h, wd) = (*n, *c, *h, *wd);
    if c != 1 && c != 3 {
        return Err(Error::shape(format!("{c}-channel images cannot be written as PGM/PPM")));
    }
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * wd, rows * h);
    let mut pix = vec![0u8; gw * gh * c];
    let d = images.data();
    for i in 0..n {
        let (gy, gx) = (i / cols * h, i % cols * wd);
        for y in 0..h {
            for x in 0..wd {
                for ch in 0..c {
                    let v = d[((i * c + ch) * h + y) * wd + x];
                    pix[((gy + y) * gw + gx + x) * c + ch] = to_byte(v);
                }
            }
        }
    }
    let magic = if c == 1 { "P5" } else { "P6" };
    write!(w, "{magic}\n{gw} {gh}\n255\n")?;
    w.write_all(&pix)?;
    Ok(())
}

/// Rows of `points[N, D]` with header `x0,x1,…`.
pub fn write_points_csv<W: Write>(mut w: W, points: &Tensor) -> Result<()> {
    let [n, d] = points.shape() else {
        return Err(Error::shape(format!("points need [N,D], got {:?}", points.shape())));
    };
    let header: Vec<String> = (0..*d).map(|i| format!("x{i}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in points.data().chunks(*d).take(*n) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
