//! Raw forward/backward kernels over row-major slices.
//!
//! Shape validation happens in the graph layer; these functions assume
//! consistent extents.

use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = extent + 2 * pad;
        if padded < k || stride == 0 {
            None
        } else {
            Some((padded - k) / stride + 1)
        }
    }

    pub fn ho(&self) -> usize {
        Self::out_extent(self.h, self.k, self.stride, self.pad).unwrap()
    }

    pub fn wo(&self) -> usize {
        Self::out_extent(self.w, self.k, self.stride, self.pad).unwrap()
    }

    /// Output positions `o` in `[lo, hi)` whose input tap `o*s + tap - pad`
    /// lands inside `[0, extent)`.
    #[inline]
    fn valid(&self, tap: usize, extent: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
        if extent + p < tap + 1 {
            return (0, 0);
        }
        let hi = ((extent - 1 + p - tap) / s + 1).min(out);
        (lo.min(hi), hi)
    }
}

pub fn conv2d_forward<T: Real>(x: &[T], weight: &[T], bias: Option<&[T]>, g: ConvGeom) -> Vec<T> {
    let (ho, wo) = (g.ho(), g.wo());
    let plane_in = g.h * g.w;
    let plane_out = ho * wo;
    let mut out = vec![T::zero(); g.cout * plane_out];
    for co in 0..g.cout {
        let dst_plane = &mut out[co * plane_out..(co + 1) * plane_out];
        if let Some(b) = bias {
            dst_plane.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.cin {
            let src_plane = &x[ci * plane_in..(ci + 1) * plane_in];
            for ky in 0..g.k {
                let (oy0, oy1) = g.valid(ky, g.h, ho);
                for kx in 0..g.k {
                    let wv = weight[((co * g.cin + ci) * g.k + ky) * g.k + kx];
                    let (ox0, ox1) = g.valid(kx, g.w, wo);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let src_row = &src_plane[iy * g.w..(iy + 1) * g.w];
                        let dst_row = &mut dst_plane[oy * wo + ox0..oy * wo + ox1];
                        if g.stride == 1 {
                            let start = ox0 + kx - g.pad;
                            let src = &src_row[start..start + (ox1 - ox0)];
                            for (d, &s) in dst_row.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        } else {
                            for (j, d) in dst_row.iter_mut().enumerate() {
                                let ix = (ox0 + j) * g.stride + kx - g.pad;
                                *d += wv * src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` only when requested.
pub fn conv2d_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (ho, wo) = (g.ho(), g.wo());
    let plane_in = g.h * g.w;
    let plane_out = ho * wo;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = vec![T::zero(); weight.len()];
    let db = (0..g.cout)
        .map(|co| dout[co * plane_out..(co + 1) * plane_out].iter().copied().sum())
        .collect();
    for co in 0..g.cout {
        let dplane = &dout[co * plane_out..(co + 1) * plane_out];
        for ci in 0..g.cin {
            let xplane = &x[ci * plane_in..(ci + 1) * plane_in];
            for ky in 0..g.k {
                let (oy0, oy1) = g.valid(ky, g.h, ho);
                for kx in 0..g.k {
                    let widx = ((co * g.cin + ci) * g.k + ky) * g.k + kx;
                    let wv = weight[widx];
                    let (ox0, ox1) = g.valid(kx, g.w, wo);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let drow = &dplane[oy * wo + ox0..oy * wo + ox1];
                        if g.stride == 1 {
                            let start = iy * g.w + ox0 + kx - g.pad;
                            let xs = &xplane[start..start + (ox1 - ox0)];
                            for (&d, &xv) in drow.iter().zip(xs) {
                                acc += d * xv;
                            }
                            if let Some(dx) = dx.as_mut() {
                                let dxs = &mut dx[ci * plane_in + start..ci * plane_in + start + (ox1 - ox0)];
                                for (t, &d) in dxs.iter_mut().zip(drow) {
                                    *t += wv * d;
                                }
                            }
                        } else {
                            for (j, &d) in drow.iter().enumerate() {
                                let ix = (ox0 + j) * g.stride + kx - g.pad;
                                acc += d * xplane[iy * g.w + ix];
                                if let Some(dx) = dx.as_mut() {
                                    dx[ci * plane_in + iy * g.w + ix] += wv * d;
                                }
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Fully-connected mixing along axis 0 or 1 of an `(A, B, C)` tensor.
/// `out[.., i, ..] = sum_k W[i,k] x[.., k, ..] + b[i]`.
pub fn fc_axis_forward<T: Real>(
    x: &[T],
    dims: [usize; 3],
    axis: usize,
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let [a, b, c] = dims;
    let (outer, n, inner) = if axis == 0 { (1, a, b * c) } else { (a, b, c) };
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let dst = &mut out[base + i * inner..base + (i + 1) * inner];
            if let Some(bias) = bias {
                dst.iter_mut().for_each(|v| *v = bias[i]);
            }
            for k in 0..n {
                let wv = weight[i * n + k];
                if wv == T::zero() {
                    continue;
                }
                let src = &x[base + k * inner..base + (k + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
            }
        }
    }
    out
}

pub fn fc_axis_backward<T: Real>(
    x: &[T],
    dims: [usize; 3],
    axis: usize,
    weight: &[T],
    dout: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let [a, b, c] = dims;
    let (outer, n, inner) = if axis == 0 { (1, a, b * c) } else { (a, b, c) };
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = vec![T::zero(); n * n];
    let mut db = vec![T::zero(); n];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let drow = &dout[base + i * inner..base + (i + 1) * inner];
            db[i] += drow.iter().copied().sum();
            for k in 0..n {
                let xrow = &x[base + k * inner..base + (k + 1) * inner];
                dw[i * n + k] += drow.iter().zip(xrow).map(|(&d, &v)| d * v).sum();
                if let Some(dx) = dx.as_mut() {
                    let wv = weight[i * n + k];
                    let dst = &mut dx[base + k * inner..base + (k + 1) * inner];
                    for (t, &d) in dst.iter_mut().zip(drow) {
                        *t += wv * d;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// `(B, M, K) x (B, K, N) -> (B, M, N)`.
pub fn bmm_forward<T: Real>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        let a0 = bi * m * k;
        let b0 = bi * k * n;
        let o0 = bi * m * n;
        for i in 0..m {
            let dst = &mut out[o0 + i * n..o0 + (i + 1) * n];
            for p in 0..k {
                let av = a[a0 + i * k + p];
                let src = &b[b0 + p * n..b0 + (p + 1) * n];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += av * s;
                }
            }
        }
    }
    out
}

pub fn bmm_backward<T: Real>(
    a: &[T],
    b: &[T],
    dout: &[T],
    dims: [usize; 4],
    need: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let [batch, m, k, n] = dims;
    let mut da = need.0.then(|| vec![T::zero(); a.len()]);
    let mut db = need.1.then(|| vec![T::zero(); b.len()]);
    for bi in 0..batch {
        let a0 = bi * m * k;
        let b0 = bi * k * n;
        let o0 = bi * m * n;
        for i in 0..m {
            let drow = &dout[o0 + i * n..o0 + (i + 1) * n];
            for p in 0..k {
                let brow = &b[b0 + p * n..b0 + (p + 1) * n];
                if let Some(da) = da.as_mut() {
                    da[a0 + i * k + p] = drow.iter().zip(brow).map(|(&d, &v)| d * v).sum();
                }
                if let Some(db) = db.as_mut() {
                    let av = a[a0 + i * k + p];
                    let dst = &mut db[b0 + p * n..b0 + (p + 1) * n];
                    for (t, &d) in dst.iter_mut().zip(drow) {
                        *t += av * d;
                    }
                }
            }
        }
    }
    (da, db)
}

pub fn softmax_forward<T: Real>(x: &[T], row: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks_exact(row).zip(out.chunks_exact_mut(row)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    out
}

pub fn softmax_backward<T: Real>(y: &[T], dout: &[T], row: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((ys, ds), dxs) in y
        .chunks_exact(row)
        .zip(dout.chunks_exact(row))
        .zip(dx.chunks_exact_mut(row))
    {
        let dot: T = ys.iter().zip(ds).map(|(&a, &b)| a * b).sum();
        for ((t, &yv), &dv) in dxs.iter_mut().zip(ys).zip(ds) {
            *t = yv * (dv - dot);
        }
    }
    dx
}

/// Per-output-index source taps for half-pixel bilinear resampling.
#[derive(Debug, Clone, Copy)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
}

pub fn resize_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            Tap { i0, i1, frac }
        })
        .collect()
}

pub fn resize_forward<T: Real>(x: &[T], c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
    let ty = resize_taps(h, ho);
    let tx = resize_taps(w, wo);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for y in &ty {
            let fy = T::lit(y.frac);
            let r0 = &plane[y.i0 * w..(y.i0 + 1) * w];
            let r1 = &plane[y.i1 * w..(y.i1 + 1) * w];
            for t in &tx {
                let fx = T::lit(t.frac);
                // lerp form keeps constant maps exactly constant
                let top = r0[t.i0] + fx * (r0[t.i1] - r0[t.i0]);
                let bot = r1[t.i0] + fx * (r1[t.i1] - r1[t.i0]);
                out.push(top + fy * (bot - top));
            }
        }
    }
    out
}

pub fn resize_backward<T: Real>(dout: &[T], c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
    let ty = resize_taps(h, ho);
    let tx = resize_taps(w, wo);
    let mut dx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let dplane = &dout[ch * ho * wo..(ch + 1) * ho * wo];
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, y) in ty.iter().enumerate() {
            let fy = T::lit(y.frac);
            for (ox, t) in tx.iter().enumerate() {
                let fx = T::lit(t.frac);
                let d = dplane[oy * wo + ox];
                let top = d * (T::one() - fy);
                let bot = d * fy;
                plane[y.i0 * w + t.i0] += top * (T::one() - fx);
                plane[y.i0 * w + t.i1] += top * fx;
                plane[y.i1 * w + t.i0] += bot * (T::one() - fx);
                plane[y.i1 * w + t.i1] += bot * fx;
            }
        }
    }
    dx
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `BCE(sigmoid(x), t)`.
#[inline]
pub fn bce_with_logits<T: Real>(x: T, t: T) -> T {
    x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_ranges_cover_padding() {
        let g = ConvGeom { cin: 1, h: 5, w: 5, cout: 1, k: 3, stride: 1, pad: 1 };
        assert_eq!(g.valid(0, 5, 5), (1, 5));
        assert_eq!(g.valid(1, 5, 5), (0, 5));
        assert_eq!(g.valid(2, 5, 5), (0, 4));
        let s2 = ConvGeom { stride: 2, ..g };
        assert_eq!(s2.ho(), 3);
        // taps: o*2 + ky - 1 in [0,5)
        assert_eq!(s2.valid(0, 5, 3), (1, 3));
        assert_eq!(s2.valid(2, 5, 3), (0, 2));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 * 0.37).collect();
        assert_eq!(resize_forward(&x, 1, 3, 4, 3, 4), x);
    }

    #[test]
    fn bce_matches_naive_form() {
        for &(x, t) in &[(0.3f64, 1.0), (-2.0, 0.0), (4.0, 0.0), (-1.5, 1.0)] {
            let p = 1.0 / (1.0 + (-x).exp());
            let naive = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            assert!((bce_with_logits(x, t) - naive).abs() < 1e-12);
        }
    }
}
