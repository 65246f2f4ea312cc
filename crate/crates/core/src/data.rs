//! Datasets: MNIST in IDX format, a 2-D Gaussian mixture, and raw CSV rows.
//! Every sample is scaled to `[-1, 1]`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
/// Radius of the circle the mixture centres sit on.
pub const GMM_RADIUS: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, ...]`, values in `[-1, 1]`.
    pub samples: Tensor,
    pub labels: Option<Vec<u8>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }
}

/// Raw IDX image file contents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let want = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < want {
        return Err(Error::Format(format!(
            "truncated IDX images: header declares {want} pixels, found {}",
            body.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body[..want].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format(format!(
            "truncated IDX labels: header declares {n}, found {}",
            body.len()
        )));
    }
    Ok(body[..n].to_vec())
}

pub fn write_idx_images<W: Write>(mut w: W, images: &IdxImages) -> Result<()> {
    w.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    for v in [images.count(), images.rows, images.cols] {
        w.write_all(&(v as u32).to_be_bytes())?;
    }
    w.write_all(&images.pixels)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(mut w: W, labels: &[u8]) -> Result<()> {
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// `x/127.5 − 1`, optionally centred in a 32×32 canvas filled with −1.
pub fn idx_to_tensor(images: &IdxImages, pad32: bool) -> Result<Tensor> {
    let (r, c) = (images.rows, images.cols);
    let (h, w) = if pad32 { (32, 32) } else { (r, c) };
    if r > h || c > w {
        return Err(Error::invalid(format!("{r}x{c} images do not fit in 32x32")));
    }
    let (top, left) = ((h - r) / 2, (w - c) / 2);
    let n = images.count();
    let mut out = vec![-1.0f32; n * h * w];
    for (i, img) in images.pixels.chunks(r * c).enumerate() {
        for y in 0..r {
            for x in 0..c {
                out[i * h * w + (y + top) * w + x + left] = img[y * c + x] as f32 / 127.5 - 1.0;
            }
        }
    }
    Tensor::new(vec![n, 1, h, w], out)
}

pub fn load_mnist_idx(images: &Path, labels: Option<&Path>, pad32: bool) -> Result<Dataset> {
    let imgs = parse_idx_images(&fs::read(images)?)?;
    let labels = match labels {
        Some(p) => {
            let l = parse_idx_labels(&fs::read(p)?)?;
            if l.len() != imgs.count() {
                return Err(Error::Format(format!(
                    "{} labels for {} images",
                    l.len(),
                    imgs.count()
                )));
            }
            Some(l)
        }
        None => None,
    };
    Ok(Dataset {
        samples: idx_to_tensor(&imgs, pad32)?,
        labels,
    })
}

/// Mode centres, evenly spaced on the circle, the first at `(r, 0)`.
pub fn gmm_centers(modes: usize) -> Vec<[f64; 2]> {
    (0..modes)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / modes as f64;
            [GMM_RADIUS * a.cos(), GMM_RADIUS * a.sin()]
        })
        .collect()
}

/// `n` points from an equal-weight mixture of isotropic Gaussians.
pub fn gen_gmm2d(modes: usize, spread: f64, n: usize, seed: u64) -> Result<Dataset> {
    if modes == 0 {
        return Err(Error::invalid("modes must be >= 1"));
    }
    if !(spread >= 0.0) {
        return Err(Error::invalid(format!("spread must be >= 0, got {spread}")));
    }
    let centers = gmm_centers(modes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = Uniform::new(0, modes);
    let noise = Normal::new(0.0, spread).map_err(|e| Error::invalid(e.to_string()))?;
    let mut v = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = pick.sample(&mut rng);
        v.push((centers[k][0] + noise.sample(&mut rng)) as f32);
        v.push((centers[k][1] + noise.sample(&mut rng)) as f32);
        labels.push(k as u8);
    }
    Ok(Dataset {
        samples: Tensor::new(vec![n, 2], v)?,
        labels: Some(labels),
    })
}

/// Comma- or whitespace-separated rows, one sample per line.
pub fn load_raw_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f32> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f32>()
                    .map_err(|_| Error::Format(format!("line {}: bad number {s:?}", i + 1)))
            })
            .collect::<Result<_>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::Format(format!("line {}: ragged row", i + 1)));
        }
        if row.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Format(format!("line {}: values must lie in [-1, 1]", i + 1)));
        }
        data.extend(row);
        n += 1;
    }
    let width = width.ok_or_else(|| Error::Format("no rows".into()))?;
    Ok(Dataset {
        samples: Tensor::new(vec![n, width], data)?,
        labels: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (IdxImages, Vec<u8>) {
        let pixels = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        (
            IdxImages {
                rows: 28,
                cols: 28,
                pixels,
            },
            vec![3, 7],
        )
    }

    #[test]
    fn idx_round_trip() {
        let (imgs, labels) = fixture();
        let mut a = Vec::new();
        write_idx_images(&mut a, &imgs).unwrap();
        let mut b = Vec::new();
        write_idx_labels(&mut b, &labels).unwrap();
        assert_eq!(&a[..4], &[0, 0, 8, 3]);
        let back = parse_idx_images(&a).unwrap();
        assert_eq!(back, imgs);
        assert_eq!(back.count(), 2);
        let mut again = Vec::new();
        write_idx_images(&mut again, &back).unwrap();
        assert_eq!(again, a);
        assert_eq!(parse_idx_labels(&b).unwrap(), labels);
    }

    #[test]
    fn idx_errors() {
        let (imgs, _) = fixture();
        let mut a = Vec::new();
        write_idx_images(&mut a, &imgs).unwrap();
        assert!(matches!(parse_idx_images(&a[..100]), Err(Error::Format(_))));
        a[3] = 1;
        assert!(matches!(parse_idx_images(&a), Err(Error::Format(_))));
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 5, 1]).is_err());
        assert!(parse_idx_images(&[0, 0]).is_err());
    }

    #[test]
    fn normalization_and_padding() {
        let imgs = IdxImages {
            rows: 2,
            cols: 2,
            pixels: vec![0, 255, 128, 0],
        };
        let t = idx_to_tensor(&imgs, false).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2, 2]);
        assert_eq!(t.data()[0], -1.0);
        assert!((t.data()[1] - 1.0).abs() <= 1.0 / 255.0);
        let p = idx_to_tensor(&imgs, true).unwrap();
        assert_eq!(p.shape(), &[1, 1, 32, 32]);
        assert_eq!(p.data()[15 * 32 + 16], 1.0);
        assert_eq!(p.data()[0], -1.0);
    }

    #[test]
    fn gmm_properties() {
        let d = gen_gmm2d(1, 0.0, 100, 1).unwrap();
        assert!(d.samples.data().chunks(2).all(|p| p == [0.8, 0.0]));
        let d = gen_gmm2d(2, 0.1, 100_000, 2).unwrap();
        let mean_x = d.samples.data().iter().step_by(2).map(|&v| v as f64).sum::<f64>() / 1e5;
        let mean_y = d.samples.data().iter().skip(1).step_by(2).map(|&v| v as f64).sum::<f64>() / 1e5;
        assert!(mean_x.abs() < 0.02 && mean_y.abs() < 0.02);
        assert_eq!(gen_gmm2d(3, 0.1, 50, 9).unwrap(), gen_gmm2d(3, 0.1, 50, 9).unwrap());
        assert!(gen_gmm2d(0, 0.1, 5, 0).is_err());
    }

    #[test]
    fn raw_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "# points\n0.5, -0.5\n0.1 0.2\n").unwrap();
        let d = load_raw_csv(&p).unwrap();
        assert_eq!(d.samples.shape(), &[2, 2]);
        fs::write(&p, "0.5,2.0\n").unwrap();
        assert!(load_raw_csv(&p).is_err());
        fs::write(&p, "0.5,0.1\n0.2\n").unwrap();
        assert!(load_raw_csv(&p).is_err());
    }
}
