//! im2col-based 2-D cross-correlation kernels.

use super::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(x: [usize; 4], wshape: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [n, cin, h, w] = x;
        let [cout, wcin, kh, kw] = wshape;
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("channel axis: input has {cin} channels, weight expects {wcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel axes must be odd, got {kh}x{kw}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let span_h = h + 2 * pad;
        let span_w = w + 2 * pad;
        if span_h < kh || span_w < kw {
            return Err(Error::shape(
                "conv2d",
                format!("height/width axes: padded input {span_h}x{span_w} smaller than kernel {kh}x{kw}"),
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (span_h - kh) / stride + 1,
            wo: (span_w - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Few output channels make im2col + GEMM memory bound; accumulate
    /// shifted rows directly instead.
    fn is_direct(&self) -> bool {
        self.stride == 1 && self.cout <= 4 && !self.is_pointwise()
    }

    /// Output columns whose input column `ox + kj - pad` is in range.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kj);
        let hi = (self.w + self.pad).saturating_sub(kj).min(self.wo);
        (lo, hi.max(lo))
    }

    fn row_of(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = (oy + ki).checked_sub(self.pad)?;
        (iy < self.h).then_some(iy)
    }
}

fn axpy<T: Element>(a: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = acc.iter().copied().sum::<T>();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

fn direct_forward<T: Element>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
    for s in 0..g.n {
        for co in 0..g.cout {
            let op = &mut out[(s * g.cout + co) * hw_out..(s * g.cout + co + 1) * hw_out];
            for ci in 0..g.cin {
                let xp = &x[(s * g.cin + ci) * hw_in..(s * g.cin + ci + 1) * hw_in];
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                        let (lo, hi) = g.col_range(kj);
                        for oy in 0..g.ho {
                            let Some(iy) = g.row_of(oy, ki) else { continue };
                            let src = &xp[iy * g.w + lo + kj - g.pad..iy * g.w + hi + kj - g.pad];
                            axpy(wv, src, &mut op[oy * g.wo + lo..oy * g.wo + hi]);
                        }
                    }
                }
            }
        }
    }
}

fn direct_backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (hw_in, hw_out) = (g.h * g.w, g.ho * g.wo);
    for s in 0..g.n {
        for co in 0..g.cout {
            let dp = &dy[(s * g.cout + co) * hw_out..(s * g.cout + co + 1) * hw_out];
            for ci in 0..g.cin {
                let base = (s * g.cin + ci) * hw_in;
                for ki in 0..g.kh {
                    for kj in 0..g.kw {
                        let wi = ((co * g.cin + ci) * g.kh + ki) * g.kw + kj;
                        let (lo, hi) = g.col_range(kj);
                        let mut acc = T::zero();
                        for oy in 0..g.ho {
                            let Some(iy) = g.row_of(oy, ki) else { continue };
                            let xr = base + iy * g.w + lo + kj - g.pad..base + iy * g.w + hi + kj - g.pad;
                            let dr = &dp[oy * g.wo + lo..oy * g.wo + hi];
                            if dw.is_some() {
                                acc += dot(dr, &x[xr.clone()]);
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                axpy(w[wi], dr, &mut dx[xr]);
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[wi] += acc;
                        }
                    }
                }
            }
        }
    }
}

fn im2col<T: Element>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let hw = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let hw = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Element>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let hw = g.ho * g.wo;
    let k = g.k();
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    if g.is_direct() {
        if let Some(b) = b {
            for (i, row) in out.chunks_mut(hw).enumerate() {
                row.fill(b[i % g.cout]);
            }
        }
        direct_forward(g, x, w, &mut out);
        return out;
    }
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * hw]
    };
    for s in 0..g.n {
        let xs = &x[s * g.cin * g.h * g.w..(s + 1) * g.cin * g.h * g.w];
        let os = &mut out[s * g.cout * hw..(s + 1) * g.cout * hw];
        if let Some(b) = b {
            for (co, row) in os.chunks_mut(hw).enumerate() {
                row.fill(b[co]);
            }
        }
        let src: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(g, xs, &mut cols);
            &cols
        };
        T::gemm(g.cout, k, hw, T::one(), w, false, src, false, T::one(), os);
    }
    out
}

/// Gradients of a convolution. Each requested buffer is accumulated into.
pub(crate) fn backward<T: Element>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let hw = g.ho * g.wo;
    let k = g.k();
    if g.is_direct() {
        if let Some(db) = db.as_deref_mut() {
            for (i, row) in dy.chunks(hw).enumerate() {
                db[i % g.cout] += row.iter().copied().sum::<T>();
            }
        }
        direct_backward(g, x, w, dy, dx, dw);
        return;
    }
    let pointwise = g.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { k * hw }];
    let mut dcols = vec![T::zero(); if pointwise { 0 } else { k * hw }];
    for s in 0..g.n {
        let xs = &x[s * g.cin * g.h * g.w..(s + 1) * g.cin * g.h * g.w];
        let dys = &dy[s * g.cout * hw..(s + 1) * g.cout * hw];
        if let Some(db) = db.as_deref_mut() {
            for (co, row) in dys.chunks(hw).enumerate() {
                db[co] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let src: &[T] = if pointwise {
                xs
            } else {
                im2col(g, xs, &mut cols);
                &cols
            };
            // dW[cout, k] += dY[cout, hw] . cols[k, hw]^T
            T::gemm(g.cout, hw, k, T::one(), dys, false, src, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[s * g.cin * g.h * g.w..(s + 1) * g.cin * g.h * g.w];
            if pointwise {
                T::gemm(k, g.cout, hw, T::one(), w, true, dys, false, T::one(), dxs);
            } else {
                T::gemm(k, g.cout, hw, T::one(), w, true, dys, false, T::zero(), &mut dcols);
                col2im(g, &dcols, dxs);
            }
        }
    }
}
