//! Raw slice kernels behind the convolution and pooling tape ops.

use super::Scalar;
use crate::error::{dim_err, Result};

/// Geometry of a batched 2D cross-correlation with square kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// `x` is `[N, C, H, W]` or `[C, H, W]`; `w` is `[O, C, k, k]`.
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (n, c_in, h, wd) = match *x {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(dim_err!("conv2d input must be rank 3 or 4, got {x:?}")),
        };
        let [c_out, wc, kh, kw] = *w else {
            return Err(dim_err!("conv2d weight must be [O, C, k, k], got {w:?}"));
        };
        if kh != kw {
            return Err(dim_err!("conv2d kernel must be square, got {kh}x{kw}"));
        }
        if wc != c_in {
            return Err(dim_err!(
                "conv2d channel mismatch: input {x:?} vs weight {w:?}"
            ));
        }
        if stride == 0 {
            return Err(dim_err!("conv2d stride must be positive"));
        }
        let k = kh;
        if k > h + 2 * pad || k > wd + 2 * pad {
            return Err(dim_err!(
                "conv2d kernel {k} larger than padded input {h}x{wd} (pad {pad})"
            ));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        Ok(ConvGeom {
            n,
            c_in,
            h,
            w: wd,
            c_out,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_image(&self) -> usize {
        self.c_in * self.h * self.w
    }

    /// Visits `(col_row, out_pos, in_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        for c in 0..self.c_in {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    for oy in 0..self.oh {
                        let iy = (oy * s + ki) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (c * self.h + iy as usize) * self.w;
                        for ox in 0..self.ow {
                            let ix = (ox * s + kj) as isize - p as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            f(row, oy * self.ow + ox, base + ix as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        let plane = self.out_plane();
        self.for_each_tap(|row, pos, idx| cols[row * plane + pos] = img[idx]);
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let plane = self.out_plane();
        self.for_each_tap(|row, pos, idx| img[idx] = img[idx] + cols[row * plane + pos]);
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let mut out = vec![T::zero(); g.n * g.c_out * plane];
    let mut cols = vec![T::zero(); patch * plane];
    for (img, out_img) in x
        .chunks_exact(g.in_image())
        .zip(out.chunks_exact_mut(g.c_out * plane))
    {
        g.im2col(img, &mut cols);
        T::gemm(g.c_out, patch, plane, w, false, &cols, false, out_img, false);
        if let Some(b) = bias {
            for (o, chan) in out_img.chunks_exact_mut(plane).enumerate() {
                chan.iter_mut().for_each(|v| *v = *v + b[o]);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    grad_out: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); w.len()]);
    let mut db = need.2.then(|| vec![T::zero(); g.c_out]);
    let mut cols = vec![T::zero(); patch * plane];

    for (n, gout) in grad_out.chunks_exact(g.c_out * plane).enumerate() {
        if let Some(db) = db.as_mut() {
            for (o, chan) in gout.chunks_exact(plane).enumerate() {
                db[o] = db[o] + chan.iter().copied().sum();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let img = &x[n * g.in_image()..(n + 1) * g.in_image()];
            g.im2col(img, &mut cols);
            // dW += dOut (O x HW) . cols^T (HW x CKK)
            T::gemm(g.c_out, plane, patch, gout, false, &cols, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            // dcols = W^T (CKK x O) . dOut (O x HW)
            T::gemm(patch, g.c_out, plane, w, true, gout, false, &mut cols, false);
            let dimg = &mut dx[n * g.in_image()..(n + 1) * g.in_image()];
            g.col2im_add(&cols, dimg);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Geometry of a non-padded 2D max-pool over the trailing two axes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeom {
    pub fn new(shape: &[usize], k: usize, stride: usize) -> Result<Self> {
        if shape.len() < 2 {
            return Err(dim_err!("maxpool2d needs rank >= 2, got {shape:?}"));
        }
        if k == 0 || stride == 0 {
            return Err(dim_err!("maxpool2d window and stride must be positive"));
        }
        let h = shape[shape.len() - 2];
        let w = shape[shape.len() - 1];
        if k > h || k > w {
            return Err(dim_err!("maxpool2d window {k} exceeds input {h}x{w}"));
        }
        Ok(PoolGeom {
            planes: shape[..shape.len() - 2].iter().product(),
            h,
            w,
            k,
            stride,
            oh: (h - k) / stride + 1,
            ow: (w - k) / stride + 1,
        })
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Vec<usize> {
        let mut s = in_shape[..in_shape.len() - 2].to_vec();
        s.push(self.oh);
        s.push(self.ow);
        s
    }
}

/// Returns pooled values and, per output cell, the input index of the max.
/// Windows are scanned in row-major order with a strict comparison, so ties
/// resolve to the lowest linear index.
pub(crate) fn maxpool_forward<T: Scalar>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let out_len = g.planes * g.oh * g.ow;
    let mut out = Vec::with_capacity(out_len);
    let mut argmax = Vec::with_capacity(out_len);
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut best = base + (oy * g.stride) * g.w + ox * g.stride;
                for dy in 0..g.k {
                    for dx in 0..g.k {
                        let idx = base + (oy * g.stride + dy) * g.w + ox * g.stride + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}
