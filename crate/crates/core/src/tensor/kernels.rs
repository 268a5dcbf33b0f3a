//! Raw loops behind the convolution, upsampling and batch-norm ops.

use super::Float;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[batch, cin, h, w], &[cout, kcin, k, k2]) = (input, kernel) else {
            return Err(Error::dim(format!(
                "conv2d expects B×C×H×W input and O×C×k×k kernel, got {input:?} and {kernel:?}"
            )));
        };
        if kcin != cin || k != k2 {
            return Err(Error::dim(format!("conv2d kernel {kernel:?} incompatible with input {input:?}")));
        }
        if stride == 0 {
            return Err(Error::param("conv2d stride must be ≥ 1"));
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        if k > hp || k > wp {
            return Err(Error::dim(format!("kernel size {k} exceeds padded input {hp}×{wp}")));
        }
        if (hp - k) % stride != 0 || (wp - k) % stride != 0 {
            return Err(Error::dim(format!(
                "conv2d output extent is not an integer: ({hp}−{k})/{stride}, ({wp}−{k})/{stride}"
            )));
        }
        Ok(Self { batch, cin, h, w, cout, k, stride, pad, ho: (hp - k) / stride + 1, wo: (wp - k) / stride + 1 })
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Float>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.plane();
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * plane..][..plane];
                for oy in 0..g.ho {
                    let iy = (oy * s + ki) as isize - p;
                    let out = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let xr = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p;
                        *o = if ix < 0 || ix >= g.w as isize { T::zero() } else { xr[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let plane = g.plane();
    for c in 0..g.cin {
        let dc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * plane..][..plane];
                for oy in 0..g.ho {
                    let iy = (oy * s + ki) as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dr = &mut dc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * s + kj) as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dr[ix as usize] = dr[ix as usize] + row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Float>(g: &ConvGeom, x: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (patch, plane) = (g.patch(), g.plane());
    let mut out = vec![T::zero(); g.batch * g.cout * plane];
    let mut cols = vec![T::zero(); patch * plane];
    for b in 0..g.batch {
        im2col(g, &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w], &mut cols);
        let ob = &mut out[b * g.cout * plane..(b + 1) * g.cout * plane];
        if let Some(bias) = bias {
            for (o, &bv) in ob.chunks_mut(plane).zip(bias) {
                o.fill(bv);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(false, false, g.cout, plane, patch, T::one(), kernel, &cols, beta, ob);
    }
    out
}

/// Returns (d_input, d_kernel, d_bias) for the requested outputs.
pub(crate) fn conv2d_backward<T: Float>(
    g: &ConvGeom,
    x: &[T],
    kernel: &[T],
    dy: &[T],
    want: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (patch, plane) = (g.patch(), g.plane());
    let in_size = g.cin * g.h * g.w;
    let mut dx = want.0.then(|| vec![T::zero(); g.batch * in_size]);
    let mut dk = want.1.then(|| vec![T::zero(); g.cout * patch]);
    let db = want.2.then(|| {
        let mut db = vec![T::zero(); g.cout];
        for b in 0..g.batch {
            for (o, d) in db.iter_mut().enumerate() {
                let s: T = dy[(b * g.cout + o) * plane..(b * g.cout + o + 1) * plane].iter().copied().sum();
                *d = *d + s;
            }
        }
        db
    });
    let mut cols = vec![T::zero(); patch * plane];
    for b in 0..g.batch {
        let dyb = &dy[b * g.cout * plane..(b + 1) * g.cout * plane];
        if let Some(dk) = dk.as_mut() {
            im2col(g, &x[b * in_size..(b + 1) * in_size], &mut cols);
            T::gemm(false, true, g.cout, patch, plane, T::one(), dyb, &cols, T::one(), dk);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(true, false, patch, plane, g.cout, T::one(), kernel, dyb, T::zero(), &mut cols);
            col2im(g, &cols, &mut dx[b * in_size..(b + 1) * in_size]);
        }
    }
    (dx, dk, db)
}

pub(crate) fn upsample_forward<T: Float>(shape: &[usize], x: &[T], f: usize) -> Vec<T> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (fh, fw) = (h * f, w * f);
    let mut out = Vec::with_capacity(planes * fh * fw);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..fh {
            let row = &src[(y / f) * w..(y / f + 1) * w];
            out.extend((0..fw).map(|xo| row[xo / f]));
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Float>(shape: &[usize], dy: &[T], f: usize) -> Vec<T> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (fh, fw) = (h * f, w * f);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        let src = &dy[p * fh * fw..(p + 1) * fh * fw];
        for y in 0..fh {
            for xo in 0..fw {
                let i = (y / f) * w + xo / f;
                dst[i] = dst[i] + src[y * fw + xo];
            }
        }
    }
    dx
}

/// Layout of a batch-norm input: `outer × channels × inner`, with statistics
/// per channel over `outer·inner` elements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BnLayout {
    pub outer: usize,
    pub channels: usize,
    pub inner: usize,
}

impl BnLayout {
    pub fn of(shape: &[usize]) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::dim(format!("batch_norm expects B×F or B×C×… input, got {shape:?}")));
        }
        Ok(Self { outer: shape[0], channels: shape[1], inner: shape[2..].iter().product() })
    }

    pub fn count(&self) -> usize {
        self.outer * self.inner
    }

    /// Calls `f(channel, flat_index)` for every element.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for o in 0..self.outer {
            for c in 0..self.channels {
                let base = (o * self.channels + c) * self.inner;
                for i in base..base + self.inner {
                    f(c, i);
                }
            }
        }
    }

    pub fn channel_sums<T: Float>(&self, values: impl Fn(usize) -> T) -> Vec<T> {
        let mut sums = vec![T::zero(); self.channels];
        self.for_each(|c, i| sums[c] = sums[c] + values(i));
        sums
    }
}
