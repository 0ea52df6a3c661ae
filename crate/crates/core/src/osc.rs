//! Harmonic-oscillator basis utilities: weighted Hermite functions and
//! oscillator matrix elements of `x` and `e^{ikx}`.
//!
//! The weighted functions `h_n(x) = H_n(x) e^{-x^2/2} / sqrt(2^n n! sqrt(pi))`
//! are evaluated by the standard two-term recurrence, which keeps every
//! intermediate bounded (no factorial overflow at large `n`).

use crate::{r, CMatrix, Matrix, Real, C};

/// Values of the weighted oscillator functions `h_0..h_{n_max-1}` at `x`.
pub fn hermite_fn_row<T: Real>(n_max: usize, x: T) -> Vec<T> {
    let mut out = Vec::with_capacity(n_max);
    if n_max == 0 {
        return out;
    }
    // h_0 = pi^{-1/4} e^{-x^2/2}
    let h0 = r::<T>(std::f64::consts::PI).powf(r(-0.25)) * (-x * x / r(2.0)).exp();
    out.push(h0);
    if n_max == 1 {
        return out;
    }
    out.push(r::<T>(2.0).sqrt() * x * h0);
    for n in 2..n_max {
        let nf = r::<T>(n as f64);
        let h = x * (r::<T>(2.0) / nf).sqrt() * out[n - 1]
            - ((nf - r(1.0)) / nf).sqrt() * out[n - 2];
        out.push(h);
    }
    out
}

/// Matrix `M[q, j] = h_j(xs[q])` for `j < n_max`.
pub fn hermite_fn_matrix<T: Real>(n_max: usize, xs: &[T]) -> Matrix<T> {
    let mut m = Matrix::zeros(xs.len(), n_max);
    for (q, &x) in xs.iter().enumerate() {
        for (j, v) in hermite_fn_row(n_max, x).into_iter().enumerate() {
            m[(q, j)] = v;
        }
    }
    m
}

/// Position operator in the oscillator basis: tridiagonal with
/// `<n|x|n+1> = sqrt((n+1)/2)`.
pub fn position_matrix<T: Real>(n: usize) -> Matrix<T> {
    let mut x = Matrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        let v = (r::<T>((i + 1) as f64) / r(2.0)).sqrt();
        x[(i, i + 1)] = v;
        x[(i + 1, i)] = v;
    }
    x
}

/// Matrix elements `<m|e^{ikx}|n>` in the oscillator basis.
///
/// `e^{ikx}` is the displacement operator with `alpha = ik/sqrt(2)`, so for
/// `m >= n`
///
/// `<m|e^{ikx}|n> = sqrt(n!/m!) (ik/sqrt2)^{m-n} e^{-k^2/4} L_n^{(m-n)}(k^2/2)`
///
/// and the result is symmetric in `(m, n)`.
pub fn kick_matrix<T: Real>(n: usize, k: T) -> CMatrix<T> {
    let z = k * k / r(2.0);
    let gauss = (-z / r(2.0)).exp(); // e^{-k^2/4}
    let alpha = C::new(T::zero(), k / r::<T>(2.0).sqrt()); // ik/sqrt(2)
    let mut out = CMatrix::zeros(n, n);
    for dn in 0..n {
        // ratio = sqrt(n!/m!) with m = n + dn, built incrementally
        let mut alpha_pow = C::new(T::one(), T::zero());
        for _ in 0..dn {
            alpha_pow *= alpha;
        }
        for lo in 0..n - dn {
            let hi = lo + dn;
            let mut ratio = T::one();
            for j in (lo + 1)..=hi {
                ratio = ratio / r::<T>(j as f64).sqrt();
            }
            let lag = laguerre(lo, dn, z);
            let val = alpha_pow * C::new(ratio * gauss * lag, T::zero());
            out[(hi, lo)] = val;
            out[(lo, hi)] = val;
        }
    }
    out
}

/// Associated Laguerre polynomial `L_q^{(a)}(z)` by upward recurrence in `q`.
fn laguerre<T: Real>(q: usize, a: usize, z: T) -> T {
    let af = r::<T>(a as f64);
    let mut l0 = T::one();
    if q == 0 {
        return l0;
    }
    let mut l1 = T::one() + af - z;
    for j in 1..q {
        let jf = r::<T>(j as f64);
        let l2 = ((r::<T>(2.0) * jf + T::one() + af - z) * l1 - (jf + af) * l0)
            / (jf + T::one());
        l0 = l1;
        l1 = l2;
    }
    l1
}
