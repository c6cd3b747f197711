//! Raw loops behind the tape ops. Row-major throughout.

use super::tensor::Real;

const LANES: usize = 8;

/// Dot product with independent lane accumulators so the loop vectorizes
/// while staying deterministic.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    let s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    let s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
    s01 + s23 + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Row-major matrix view, optionally transposed.
#[derive(Clone, Copy)]
pub struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Logical shape after any transpose.
    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c <- a b + beta c` with `c` row-major `[m, n]`.
pub fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index touched by the strided views.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.strides(),
            b.data.as_ptr(),
            b.strides(),
            beta,
            c.as_mut_ptr(),
            (n as isize, 1),
        );
    }
}

/// `out[n, o] = b[o] + x[n, :] . w[o, :]`
pub fn dense_forward<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        out.extend_from_slice(b);
    }
    gemm(
        Mat::new(x, batch, inputs),
        Mat::new(w, outputs, inputs).t(),
        T::one(),
        &mut out,
    );
    out
}

pub struct DenseGrads<'a, T> {
    pub dx: Option<&'a mut [T]>,
    pub dw: Option<&'a mut [T]>,
    pub db: Option<&'a mut [T]>,
}

/// Accumulates into the provided gradient buffers.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    inputs: usize,
    outputs: usize,
    grads: DenseGrads<'_, T>,
) {
    let DenseGrads { dx, dw, db } = grads;
    let dym = Mat::new(dy, batch, outputs);
    if let Some(dw) = dw {
        gemm(dym.t(), Mat::new(x, batch, inputs), T::one(), dw);
    }
    if let Some(db) = db {
        for n in 0..batch {
            for o in 0..outputs {
                db[o] += dy[n * outputs + o];
            }
        }
    }
    if let Some(dx) = dx {
        gemm(dym, Mat::new(w, outputs, inputs), T::one(), dx);
    }
}

/// Static geometry of a 2-D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn in_size(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Output columns `ox` whose input column `ox * stride + kj - padding` is in range.
    fn valid_ox(&self, kj: usize) -> (usize, usize) {
        let ow = self.out_width();
        let lo = self.padding.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.width + self.padding > kj {
            ((self.width + self.padding - kj - 1) / self.stride + 1).min(ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Unrolls one sample into `[patch, positions]`.
    pub fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (oh, ow, k, s) = (
            self.out_height(),
            self.out_width(),
            self.kernel,
            self.stride,
        );
        let pos = oh * ow;
        for c in 0..self.channels {
            let plane = &x[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let r = (c * k + ki) * k + kj;
                    let row = &mut cols[r * pos..(r + 1) * pos];
                    let (lo, hi) = self.valid_ox(kj);
                    for oy in 0..oh {
                        let out = &mut row[oy * ow..(oy + 1) * ow];
                        let iy = (oy * s + ki) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= self.height {
                            out.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let line = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        out[..lo].iter_mut().for_each(|v| *v = T::zero());
                        out[hi..].iter_mut().for_each(|v| *v = T::zero());
                        let base = lo * s + kj - self.padding;
                        if s == 1 {
                            out[lo..hi].copy_from_slice(&line[base..base + (hi - lo)]);
                        } else {
                            for (o, v) in out[lo..hi].iter_mut().enumerate() {
                                *v = line[base + o * s];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeom::im2col`]: scatters `cols` back onto `dx`.
    pub fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (oh, ow, k, s) = (
            self.out_height(),
            self.out_width(),
            self.kernel,
            self.stride,
        );
        let pos = oh * ow;
        for c in 0..self.channels {
            let plane = &mut dx[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let r = (c * k + ki) * k + kj;
                    let row = &cols[r * pos..(r + 1) * pos];
                    let (lo, hi) = self.valid_ox(kj);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - self.padding as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        let line =
                            &mut plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        let src = &row[oy * ow + lo..oy * ow + hi];
                        let base = lo * s + kj - self.padding;
                        for (o, &v) in src.iter().enumerate() {
                            line[base + o * s] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_forward<T: Real>(
    geom: &ConvGeom,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    batch: usize,
    out_channels: usize,
) -> Vec<T> {
    let (patch, pos) = (geom.patch(), geom.positions());
    let mut cs = vec![T::zero(); patch * pos];
    let mut out = vec![T::zero(); batch * out_channels * pos];
    let wm = Mat::new(w, out_channels, patch);
    for n in 0..batch {
        let xs = &x[n * geom.in_size()..(n + 1) * geom.in_size()];
        geom.im2col(xs, &mut cs);
        let os = &mut out[n * out_channels * pos..(n + 1) * out_channels * pos];
        if let Some(b) = b {
            for oc in 0..out_channels {
                os[oc * pos..(oc + 1) * pos]
                    .iter_mut()
                    .for_each(|v| *v = b[oc]);
            }
        }
        gemm(wm, Mat::new(&cs, patch, pos), T::one(), os);
    }
    out
}

pub struct ConvGrads<'a, T> {
    pub dx: Option<&'a mut [T]>,
    pub dw: Option<&'a mut [T]>,
    pub db: Option<&'a mut [T]>,
}

/// Accumulates into the provided gradient buffers. The unrolled input is
/// rebuilt per sample rather than kept from the forward pass.
pub fn conv_backward<T: Real>(
    geom: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    out_channels: usize,
    grads: ConvGrads<'_, T>,
) {
    let ConvGrads {
        mut dx,
        mut dw,
        mut db,
    } = grads;
    let (patch, pos) = (geom.patch(), geom.positions());
    let mut dcols = vec![T::zero(); if dx.is_some() { patch * pos } else { 0 }];
    let mut cs = vec![T::zero(); if dw.is_some() { patch * pos } else { 0 }];
    let wm = Mat::new(w, out_channels, patch);
    for n in 0..batch {
        let ds = &dy[n * out_channels * pos..(n + 1) * out_channels * pos];
        let dm = Mat::new(ds, out_channels, pos);
        if let Some(dw) = dw.as_deref_mut() {
            geom.im2col(&x[n * geom.in_size()..(n + 1) * geom.in_size()], &mut cs);
            gemm(dm, Mat::new(&cs, patch, pos).t(), T::one(), dw);
        }
        if let Some(db) = db.as_deref_mut() {
            for oc in 0..out_channels {
                db[oc] += ds[oc * pos..(oc + 1) * pos].iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(wm.t(), dm, T::zero(), &mut dcols);
            geom.col2im(
                &dcols,
                &mut dx[n * geom.in_size()..(n + 1) * geom.in_size()],
            );
        }
    }
}

/// Nearest-neighbour 2x upsampling of `[planes, h, w]`.
pub fn upsample2x<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Real>(dy: &[T], dx: &mut [T], planes: usize, h: usize, w: usize) {
    let (oh, ow) = (2 * h, 2 * w);
    for p in 0..planes {
        let src = &dy[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
            }
        }
    }
}
