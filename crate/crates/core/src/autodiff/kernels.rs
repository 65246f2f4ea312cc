//! Raw loops behind the differentiable ops. Everything here works on flat
//! row-major slices; shape validation happens in the callers.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[k,m]ᵀ · b[k,n]`
pub(crate) fn matmul_at_b_acc<T: Real>(a: &[T], b: &[T], k: usize, m: usize, n: usize, out: &mut [T]) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn matmul_a_bt_acc<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects [N,C,H,W] input and [Co,C,k,k] weight, got {input:?} and {weight:?}"
            )));
        }
        let (batch, in_ch, height, width) = (input[0], input[1], input[2], input[3]);
        let (out_ch, w_in, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if w_in != in_ch {
            return Err(Error::shape(format!(
                "conv2d weight expects {w_in} input channels, input has {in_ch}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!("conv2d kernel must be square, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        if kh > height + 2 * padding || kh > width + 2 * padding {
            return Err(Error::shape(format!(
                "conv2d kernel {kh} larger than padded input {height}x{width} (+2*{padding})"
            )));
        }
        Ok(Self {
            batch,
            in_ch,
            height,
            width,
            out_ch,
            kernel: kh,
            stride,
            padding,
            out_h: (height + 2 * padding - kh) / stride + 1,
            out_w: (width + 2 * padding - kh) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_h, self.out_w]
    }
}

/// Unfold one `[C,H,W]` image into `[C·k·k, H'·W']` columns.
fn im2col<T: Real>(image: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.out_pixels();
    let k = g.kernel;
    for c in 0..g.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        dst[oy * g.out_w + ox] = if iy < 0
                            || ix < 0
                            || iy >= g.height as isize
                            || ix >= g.width as isize
                        {
                            T::zero()
                        } else {
                            image[(c * g.height + iy as usize) * g.width + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold columns back into an image, accumulating overlaps.
fn col2im_acc<T: Real>(cols: &[T], g: &ConvGeom, image: &mut [T]) {
    let p = g.out_pixels();
    let k = g.kernel;
    for c in 0..g.in_ch {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= g.width as isize {
                            continue;
                        }
                        image[(c * g.height + iy as usize) * g.width + ix as usize] +=
                            src[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(input: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_pixels();
    let plen = g.patch_len();
    let img = g.in_ch * g.height * g.width;
    let mut out = vec![T::zero(); g.batch * g.out_ch * p];
    let mut cols = vec![T::zero(); plen * p];
    for n in 0..g.batch {
        im2col(&input[n * img..(n + 1) * img], g, &mut cols);
        matmul_acc(
            weight,
            &cols,
            g.out_ch,
            plen,
            p,
            &mut out[n * g.out_ch * p..(n + 1) * g.out_ch * p],
        );
    }
    out
}

/// Returns `(d_input, d_weight)`; either may be skipped.
pub(crate) fn conv2d_backward<T: Real>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    want_input: bool,
    want_weight: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let p = g.out_pixels();
    let plen = g.patch_len();
    let img = g.in_ch * g.height * g.width;
    let mut d_in = want_input.then(|| vec![T::zero(); g.batch * img]);
    let mut d_w = want_weight.then(|| vec![T::zero(); weight.len()]);
    let mut cols = vec![T::zero(); plen * p];
    let mut dcols = vec![T::zero(); plen * p];
    for n in 0..g.batch {
        let dy = &grad_out[n * g.out_ch * p..(n + 1) * g.out_ch * p];
        if let Some(dw) = d_w.as_mut() {
            im2col(&input[n * img..(n + 1) * img], g, &mut cols);
            matmul_a_bt_acc(dy, &cols, g.out_ch, p, plen, dw);
        }
        if let Some(di) = d_in.as_mut() {
            dcols.iter_mut().for_each(|v| *v = T::zero());
            matmul_at_b_acc(weight, dy, g.out_ch, plen, p, &mut dcols);
            col2im_acc(&dcols, g, &mut di[n * img..(n + 1) * img]);
        }
    }
    (d_in, d_w)
}

/// Plain (non-differentiable) 2-D cross-correlation on tensors.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), weight.shape(), stride, padding)?;
    Tensor::new(g.out_shape(), conv2d_forward(input.data(), weight.data(), &g))
}

/// Plain `input[N,D] · weight[D,E] + bias[E]`.
pub fn linear<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, d, e) = linear_dims(input.shape(), weight.shape(), bias.map(|b| b.shape()))?;
    let mut out = vec![T::zero(); n * e];
    if let Some(b) = bias {
        for row in out.chunks_mut(e) {
            row.copy_from_slice(b.data());
        }
    }
    matmul_acc(input.data(), weight.data(), n, d, e, &mut out);
    Tensor::new(vec![n, e], out)
}

pub(crate) fn linear_dims(
    input: &[usize],
    weight: &[usize],
    bias: Option<&[usize]>,
) -> Result<(usize, usize, usize)> {
    if input.len() != 2 || weight.len() != 2 {
        return Err(Error::shape(format!(
            "linear expects [N,D] input and [D,E] weight, got {input:?} and {weight:?}"
        )));
    }
    if input[1] != weight[0] {
        return Err(Error::shape(format!(
            "linear inner dimensions disagree: {input:?} · {weight:?}"
        )));
    }
    if let Some(b) = bias {
        if b != [weight[1]] {
            return Err(Error::shape(format!(
                "linear bias {b:?} does not match output width {}",
                weight[1]
            )));
        }
    }
    Ok((input[0], input[1], weight[1]))
}
