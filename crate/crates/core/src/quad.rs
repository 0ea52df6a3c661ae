//! Gauss-Hermite quadrature with overflow-safe "total" weights.
//!
//! For integrands of the form `G(x) = P(x) e^{-(sigma x)^2}` with `P`
//! polynomial, substituting `u = sigma x` gives
//!
//! `int G dx = (1/sigma) sum_q wt_q G(x_q / sigma)`
//!
//! where `wt_q = w_q e^{x_q^2}` are the total weights. `wt` stays O(1) at
//! every node, so the product `wt_q G(..)` never hits the underflow that
//! plain weights suffer at high order. Total weights follow from the
//! normalized Hermite functions: `wt_q = 1 / (n h_{n-1}(x_q)^2)`.

use crate::error::{CoreError, Result};
use crate::osc::hermite_fn_row;
use crate::{r, Matrix, Real};

/// Nodes and total weights of an `order`-point Gauss-Hermite rule.
#[derive(Debug, Clone)]
pub struct GaussHermite<T> {
    pub order: usize,
    pub nodes: Vec<T>,
    pub total_weights: Vec<T>,
}

impl<T: Real> GaussHermite<T> {
    /// Build the rule via Golub-Welsch (eigenvalues of the Jacobi matrix).
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let mut jac = Matrix::<T>::zeros(order, order);
        for i in 1..order {
            let beta = (r::<T>(i as f64) / r(2.0)).sqrt();
            jac[(i - 1, i)] = beta;
            jac[(i, i - 1)] = beta;
        }
        let eig = jac.symmetric_eigen();
        let mut nodes: Vec<T> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // enforce exact +/- symmetry so odd integrands cancel identically
        let n = nodes.len();
        for i in 0..n / 2 {
            let m = (nodes[n - 1 - i] - nodes[i]) / r(2.0);
            nodes[i] = -m;
            nodes[n - 1 - i] = m;
        }
        if n % 2 == 1 {
            nodes[n / 2] = T::zero();
        }
        let total_weights = nodes
            .iter()
            .map(|&x| {
                let h = hermite_fn_row(order, x);
                T::one() / (r::<T>(order as f64) * h[order - 1] * h[order - 1])
            })
            .collect();
        GaussHermite {
            order,
            nodes,
            total_weights,
        }
    }

    /// Integrate `G` over the real line assuming `G(x) = P(x) e^{-(sigma x)^2}`.
    ///
    /// Exact when `deg P <= 2*order - 1`.
    pub fn integrate_scaled<F: Fn(T) -> T>(&self, sigma: T, g: F) -> T {
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.total_weights) {
            acc = acc + w * g(x / sigma);
        }
        acc / sigma
    }
}

/// Integrate with order doubling until the result changes by less than
/// `tol * max(1, |I|)` between successive orders.
pub fn adaptive_scaled<T: Real, F: Fn(T) -> T>(
    sigma: T,
    g: F,
    start_order: usize,
    tol: T,
) -> Result<T> {
    const MAX_ORDER: usize = 1024;
    let mut order = start_order.max(4);
    let mut prev = GaussHermite::new(order).integrate_scaled(sigma, &g);
    while order < MAX_ORDER {
        order *= 2;
        let next = GaussHermite::new(order).integrate_scaled(sigma, &g);
        let change = (next - prev).abs();
        if change <= tol * T::max(T::one(), next.abs()) {
            return Ok(next);
        }
        prev = next;
    }
    Err(CoreError::QuadratureNotConverged {
        order,
        last_change: prev.to_f64().unwrap_or(f64::NAN),
    })
}
