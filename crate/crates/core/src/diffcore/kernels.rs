//! Scalar and dense kernels shared by graph evaluation and the numeric
//! reverse pass. Keeping a single implementation guarantees that value-only
//! and differentiable code paths produce bit-identical results.

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`]; the value at zero is the right-hand limit, 1.
#[inline]
pub fn elu_deriv(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// `exp(x)` on the negative half-line, zero elsewhere. This is the
/// derivative of [`elu_deriv`].
#[inline]
pub fn exp_neg(x: f64) -> f64 {
    if x >= 0.0 {
        0.0
    } else {
        x.exp()
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Heaviside step used as the relu derivative; zero at the origin.
#[inline]
pub fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Derivative mask of [`clamp`]: one on the closed interval.
#[inline]
pub fn clamp_mask(x: f64, lo: f64, hi: f64) -> f64 {
    if x >= lo && x <= hi {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub fn powi(x: f64, k: i32) -> f64 {
    x.powi(k)
}

/// `out = W x` for a row-major `rows x cols` matrix.
pub fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
}

/// `out = W^T v` for a row-major `rows x cols` matrix.
pub fn matvec_t(w: &[f64], v: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(v.len(), rows);
    out[..cols].iter_mut().for_each(|o| *o = 0.0);
    for (i, &vi) in v.iter().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// `out = u v^T`.
pub fn outer(u: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (i, &ui) in u.iter().enumerate() {
        let row = &mut out[i * cols..(i + 1) * cols];
        for (o, &vj) in row.iter_mut().zip(v) {
            *o = ui * vj;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn sum(a: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in a {
        acc += x;
    }
    acc
}
