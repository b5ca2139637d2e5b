// Inner loops shared by the tape ops. All loops run in a fixed order so
// results are bitwise reproducible.

use crate::scalar::Scalar;

#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let pa = &a[c * 8..c * 8 + 8];
        let pb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] += pa[l] * pb[l];
        }
    }
    let mut tail = S::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn sum<S: Scalar>(a: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l];
        }
    }
    let mut tail = S::zero();
    for &v in &a[chunks * 8..] {
        tail += v;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub t_in: usize,
    pub dilation: usize,
    pub left: usize,
    pub right: usize,
}

impl ConvGeom {
    pub fn t_padded(&self) -> usize {
        self.t_in + self.left + self.right
    }

    pub fn t_out(&self) -> usize {
        self.t_padded() - (self.k - 1) * self.dilation
    }
}

fn pad_input<S: Scalar>(g: &ConvGeom, x: &[S]) -> alloc::vec::Vec<S> {
    let tp = g.t_padded();
    let mut xp = alloc::vec![S::zero(); g.c_in * tp];
    for ci in 0..g.c_in {
        xp[ci * tp + g.left..ci * tp + g.left + g.t_in]
            .copy_from_slice(&x[ci * g.t_in..(ci + 1) * g.t_in]);
    }
    xp
}

pub fn conv1d_forward<S: Scalar>(g: &ConvGeom, x: &[S], w: &[S], b: Option<&[S]>, out: &mut [S]) {
    let tp = g.t_padded();
    let to = g.t_out();
    let xp = pad_input(g, x);
    for co in 0..g.c_out {
        let row = &mut out[co * to..(co + 1) * to];
        let bias = b.map_or(S::zero(), |b| b[co]);
        row.iter_mut().for_each(|v| *v = bias);
        for ci in 0..g.c_in {
            let xrow = &xp[ci * tp..(ci + 1) * tp];
            let taps = &w[(co * g.c_in + ci) * g.k..(co * g.c_in + ci + 1) * g.k];
            for (j, &wj) in taps.iter().enumerate() {
                let off = j * g.dilation;
                axpy(wj, &xrow[off..off + to], row);
            }
        }
    }
}

/// Accumulates input, weight and bias gradients of a 1-D convolution.
pub fn conv1d_backward<S: Scalar>(
    g: &ConvGeom,
    x: &[S],
    w: &[S],
    dy: &[S],
    dx: Option<&mut [S]>,
    dw: Option<&mut [S]>,
    db: Option<&mut [S]>,
) {
    let tp = g.t_padded();
    let to = g.t_out();
    if let Some(db) = db {
        for co in 0..g.c_out {
            db[co] += sum(&dy[co * to..(co + 1) * to]);
        }
    }
    if let Some(dw) = dw {
        let xp = pad_input(g, x);
        for co in 0..g.c_out {
            let dyrow = &dy[co * to..(co + 1) * to];
            for ci in 0..g.c_in {
                let xrow = &xp[ci * tp..(ci + 1) * tp];
                let base = (co * g.c_in + ci) * g.k;
                for j in 0..g.k {
                    let off = j * g.dilation;
                    dw[base + j] += dot(dyrow, &xrow[off..off + to]);
                }
            }
        }
    }
    if let Some(dx) = dx {
        let mut dxp = alloc::vec![S::zero(); g.c_in * tp];
        for co in 0..g.c_out {
            let dyrow = &dy[co * to..(co + 1) * to];
            for ci in 0..g.c_in {
                let drow = &mut dxp[ci * tp..(ci + 1) * tp];
                let taps = &w[(co * g.c_in + ci) * g.k..(co * g.c_in + ci + 1) * g.k];
                for (j, &wj) in taps.iter().enumerate() {
                    let off = j * g.dilation;
                    axpy(wj, dyrow, &mut drow[off..off + to]);
                }
            }
        }
        for ci in 0..g.c_in {
            let src = &dxp[ci * tp + g.left..ci * tp + g.left + g.t_in];
            for (d, &s) in dx[ci * g.t_in..(ci + 1) * g.t_in].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// `out[m, n] += a[m, k] * b[k, n]`
pub fn matmul_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != S::zero() {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// `out[m, n] += a[m, k] * b[n, k]^T`
pub fn matmul_nt_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k, n] += a[m, k]^T * b[m, n]`
pub fn matmul_tn_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != S::zero() {
                axpy(av, brow, &mut out[p * n..(p + 1) * n]);
            }
        }
    }
}
