//! Single-particle double well: a 1D harmonic trap with a Gaussian barrier,
//!
//! `H/hw = -1/2 d^2/dx^2 + x^2/2 + b/(sqrt(2 pi) d) e^{-x^2/2d^2}`
//!
//! diagonalized in a truncated oscillator basis. The barrier preserves
//! parity, so the even and odd blocks are assembled and solved separately;
//! cross-parity matrix elements vanish identically and quasi-degenerate
//! doublets never mix numerically.

use crate::error::{CoreError, Result};
use crate::osc::{hermite_fn_matrix, kick_matrix, position_matrix};
use crate::quad::{adaptive_scaled, GaussHermite};
use crate::{r, CMatrix, CVector, Matrix, Real, Vector, C};

/// Stability target for barrier-element quadrature under order doubling.
const QUAD_STABILITY_TOL: f64 = 1e-12;
/// Allowed drift of the four lowest energies under `n_basis -> n_basis + 16`.
const TRUNCATION_TOL: f64 = 1e-8;
/// Extra oscillator states added for the truncation rerun.
const TRUNCATION_EXTRA: usize = 16;

/// Trap geometry in oscillator units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapConfig<T> {
    /// Angular trap frequency in rad/s; only used for unit conversion at the
    /// caller's boundary, never inside the solver.
    pub omega: T,
    /// Barrier height `b` (dimensionless).
    pub b: T,
    /// Barrier width `d` in units of `a_ho`.
    pub d: T,
    /// Oscillator-basis truncation.
    pub n_basis: usize,
    /// Transverse-to-axial frequency ratio; the 1D model needs roughly >= 5.
    pub omega_perp_ratio: T,
}

impl<T: Real> TrapConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > T::zero()) || !self.omega.is_finite() {
            return Err(CoreError::InvalidConfig("omega must be positive and finite".into()));
        }
        if !(self.b >= T::zero()) || !self.b.is_finite() {
            return Err(CoreError::InvalidConfig("barrier height b must be >= 0 and finite".into()));
        }
        if !(self.d > T::zero()) || !self.d.is_finite() {
            return Err(CoreError::InvalidConfig("barrier width d must be > 0 and finite".into()));
        }
        if self.n_basis < 4 {
            return Err(CoreError::InvalidConfig("n_basis must be at least 4".into()));
        }
        Ok(())
    }
}



/// Eigenstates of the double well in the truncated oscillator basis.
#[derive(Debug, Clone)]
pub struct SingleParticleBasis<T> {
    /// Eigenenergies in hw, ascending.
    pub energies: Vector<T>,
    /// Column `i` holds the oscillator coefficients of eigenstate `i`.
    pub coeffs: Matrix<T>,
    /// Parity of each eigenstate, +1 even / -1 odd.
    pub parity: Vec<i8>,
    /// Observed drift of the four lowest energies in the truncation rerun.
    pub truncation_drift: T,
}

impl<T: Real> SingleParticleBasis<T> {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.len() == 0
    }

    /// `<psi_i|x|psi_j>` in units of `a_ho`.
    pub fn x_element(&self, i: usize, j: usize) -> T {
        let x = position_matrix::<T>(self.coeffs.nrows());
        (self.coeffs.column(i).transpose() * &x * self.coeffs.column(j))[(0, 0)]
    }
}

/// Localized left/right combinations of the ground doublet.
#[derive(Debug, Clone)]
pub struct LocalizedPair<T> {
    pub left: Vector<T>,
    pub right: Vector<T>,
    /// Doublet splitting `eps_1 - eps_0` in hw.
    pub splitting: T,
}

/// `<m| b/(sqrt(2 pi) d) e^{-x^2/2d^2} |n>` in oscillator units.
///
/// Odd `m + n` vanishes by parity. Even elements are integrated by
/// Gauss-Hermite quadrature with order doubling until the value is stable
/// to 1e-12; the scaled substitution makes the rule exact once the order
/// exceeds `(m + n)/2`, so doubling terminates immediately.
pub fn barrier_matrix_element<T: Real>(m: usize, n: usize, b: T, d: T) -> Result<T> {
    if !b.is_finite() || !d.is_finite() {
        return Err(CoreError::InvalidConfig("barrier parameters must be finite".into()));
    }
    if !(d > T::zero()) {
        return Err(CoreError::InvalidConfig("barrier width d must be > 0".into()));
    }
    if (m + n) % 2 == 1 {
        return Ok(T::zero());
    }
    let g = b / ((r::<T>(2.0) * T::pi()).sqrt() * d);
    let sigma = (T::one() + T::one() / (r::<T>(2.0) * d * d)).sqrt();
    let n_max = m.max(n) + 1;
    let start = (m + n) / 2 + 2;
    adaptive_scaled(
        sigma,
        |x| {
            let h = crate::osc::hermite_fn_row(n_max, x);
            h[m] * h[n] * g * (-x * x / (r::<T>(2.0) * d * d)).exp()
        },
        start.max(8),
        crate::stability_tol::<T>().max(r(QUAD_STABILITY_TOL)),
    )
}

/// Barrier matrix restricted to one parity block (columns `offset, offset+2, ..`).
fn barrier_block<T: Real>(n_basis: usize, offset: usize, b: T, d: T, order: usize) -> Matrix<T> {
    let g = b / ((r::<T>(2.0) * T::pi()).sqrt() * d);
    let sigma = (T::one() + T::one() / (r::<T>(2.0) * d * d)).sqrt();
    let gh = GaussHermite::<T>::new(order);
    let xs: Vec<T> = gh.nodes.iter().map(|&x| x / sigma).collect();
    let hm = hermite_fn_matrix(n_basis, &xs);
    let idx: Vec<usize> = (offset..n_basis).step_by(2).collect();
    let nb = idx.len();
    let mut hblk = Matrix::zeros(xs.len(), nb);
    for (c, &j) in idx.iter().enumerate() {
        hblk.set_column(c, &hm.column(j));
    }
    let mut weighted = hblk.clone();
    for (q, &x) in xs.iter().enumerate() {
        let u = gh.total_weights[q] * g * (-x * x / (r::<T>(2.0) * d * d)).exp() / sigma;
        for c in 0..nb {
            weighted[(q, c)] *= u;
        }
    }
    hblk.transpose() * weighted
}

fn barrier_block_adaptive<T: Real>(
    n_basis: usize,
    offset: usize,
    b: T,
    d: T,
) -> Result<Matrix<T>> {
    let tol = crate::stability_tol::<T>().max(r(QUAD_STABILITY_TOL));
    let mut order = (n_basis + 2).max(16);
    let mut prev = barrier_block(n_basis, offset, b, d, order);
    loop {
        order *= 2;
        let next = barrier_block(n_basis, offset, b, d, order);
        let change = (&next - &prev).abs().max();
        if change <= tol {
            return Ok(next);
        }
        if order > 1024 {
            return Err(CoreError::QuadratureNotConverged {
                order,
                last_change: change.to_f64().unwrap_or(f64::NAN),
            });
        }
        prev = next;
    }
}

struct EigenState<T> {
    energy: T,
    coeffs: Vector<T>,
    parity: i8,
}

fn solve_blocks<T: Real>(n_basis: usize, b: T, d: T) -> Result<Vec<EigenState<T>>> {
    let mut states = Vec::with_capacity(n_basis);
    for (offset, parity) in [(0_usize, 1_i8), (1, -1)] {
        let barrier = barrier_block_adaptive(n_basis, offset, b, d)?;
        let idx: Vec<usize> = (offset..n_basis).step_by(2).collect();
        let nb = idx.len();
        let mut h = barrier;
        for (c, &j) in idx.iter().enumerate() {
            h[(c, c)] += r::<T>(j as f64) + r(0.5);
        }
        let eig = h.symmetric_eigen();
        for c in 0..nb {
            let mut full = Vector::zeros(n_basis);
            let col = eig.eigenvectors.column(c);
            // sign convention: largest-magnitude oscillator coefficient positive
            let mut imax = 0;
            for q in 1..nb {
                if col[q].abs() > col[imax].abs() {
                    imax = q;
                }
            }
            let sign = if col[imax] < T::zero() { -T::one() } else { T::one() };
            for (q, &j) in idx.iter().enumerate() {
                full[j] = sign * col[q];
            }
            states.push(EigenState {
                energy: eig.eigenvalues[c],
                coeffs: full,
                parity,
            });
        }
    }
    states.sort_by(|a, b| {
        a.energy
            .partial_cmp(&b.energy)
            .unwrap()
            .then(b.parity.cmp(&a.parity))
    });
    Ok(states)
}

/// Diagonalize the double well in the oscillator basis.
///
/// The solve is repeated with `n_basis + 16` states; if the four lowest
/// energies drift by more than 1e-8 hw the truncation is rejected.
pub fn solve_single_particle<T: Real>(cfg: &TrapConfig<T>) -> Result<SingleParticleBasis<T>> {
    cfg.validate()?;
    let states = solve_blocks(cfg.n_basis, cfg.b, cfg.d)?;
    let check = solve_blocks(cfg.n_basis + TRUNCATION_EXTRA, cfg.b, cfg.d)?;
    let mut drift = T::zero();
    for i in 0..4.min(states.len()) {
        drift = T::max(drift, (states[i].energy - check[i].energy).abs());
    }
    // 1e-8 is the f64 contract; lower-precision scalars get a floor tied to
    // their epsilon so the check stays meaningful
    let tol = T::max(r(TRUNCATION_TOL), T::default_epsilon() * r(100.0));
    if drift > tol {
        return Err(CoreError::TruncationNotConverged {
            n_basis: cfg.n_basis,
            n_retry: cfg.n_basis + TRUNCATION_EXTRA,
            drift: drift.to_f64().unwrap_or(f64::NAN),
        });
    }
    let n = cfg.n_basis;
    let mut energies = Vector::zeros(n);
    let mut coeffs = Matrix::zeros(n, n);
    let mut parity = Vec::with_capacity(n);
    for (i, s) in states.into_iter().enumerate() {
        energies[i] = s.energy;
        coeffs.set_column(i, &s.coeffs);
        parity.push(s.parity);
    }
    Ok(SingleParticleBasis {
        energies,
        coeffs,
        parity,
        truncation_drift: drift,
    })
}

/// Build `|L> = (|psi_e> - |psi_o>)/sqrt2` and `|R> = (|psi_e> + |psi_o>)/sqrt2`
/// with the sign convention `<L|x|L> < 0`.
pub fn localized_states<T: Real>(basis: &SingleParticleBasis<T>) -> Result<LocalizedPair<T>> {
    if basis.len() < 2 {
        return Err(CoreError::InvalidConfig("basis needs at least two states".into()));
    }
    if basis.parity[0] != 1 || basis.parity[1] != -1 {
        return Err(CoreError::ParityOrder {
            lower: basis.parity[0],
            upper: basis.parity[1],
        });
    }
    let inv_sqrt2 = T::one() / r::<T>(2.0).sqrt();
    let even = basis.coeffs.column(0).clone_owned();
    let odd = basis.coeffs.column(1).clone_owned();
    let mut left = (&even - &odd) * inv_sqrt2;
    let mut right = (&even + &odd) * inv_sqrt2;
    let x = position_matrix::<T>(basis.coeffs.nrows());
    let xl = (left.transpose() * &x * &left)[(0, 0)];
    if xl > T::zero() {
        std::mem::swap(&mut left, &mut right);
    }
    Ok(LocalizedPair {
        left,
        right,
        splitting: basis.energies[1] - basis.energies[0],
    })
}

/// Franck-Condon factor `<psi_i|e^{ikx}|psi_j>` with `k` in units of `1/a_ho`.
pub fn franck_condon<T: Real>(
    basis: &SingleParticleBasis<T>,
    k: T,
    i: usize,
    j: usize,
) -> Result<C<T>> {
    let n = basis.len();
    for idx in [i, j] {
        if idx >= n {
            return Err(CoreError::IndexOutOfBounds { index: idx, size: n });
        }
    }
    let t = kick_matrix(basis.coeffs.nrows(), k);
    let cj: CVector<T> = basis.coeffs.column(j).map(|v| C::new(v, T::zero()));
    let tv = &t * cj;
    let mut acc = C::new(T::zero(), T::zero());
    for q in 0..basis.coeffs.nrows() {
        acc += C::new(basis.coeffs[(q, i)], T::zero()) * tv[q];
    }
    Ok(acc)
}

/// All Franck-Condon factors at once: `F = C^T T(k) C`.
pub fn franck_condon_matrix<T: Real>(basis: &SingleParticleBasis<T>, k: T) -> CMatrix<T> {
    let t = kick_matrix(basis.coeffs.nrows(), k);
    let c: CMatrix<T> = basis.coeffs.map(|v| C::new(v, T::zero()));
    c.transpose() * t * c
}

/// Kick a localized-state coefficient vector: `<psi_i| e^{ikx} |vec>`.
pub fn franck_condon_vector<T: Real>(
    basis: &SingleParticleBasis<T>,
    k: T,
    vec: &Vector<T>,
) -> CVector<T> {
    let t = kick_matrix(basis.coeffs.nrows(), k);
    let vc: CVector<T> = vec.map(|v| C::new(v, T::zero()));
    let tv = t * vc;
    let c: CMatrix<T> = basis.coeffs.map(|v| C::new(v, T::zero()));
    c.transpose() * tv
}

/// Pick the drive target state: the state above the ground doublet with the
/// largest Franck-Condon magnitude `|<E|e^{ikx}|L>|`, at least 0.5 hw above
/// the doublet.
pub fn select_target_state<T: Real>(
    basis: &SingleParticleBasis<T>,
    pair: &LocalizedPair<T>,
    k: T,
) -> Result<usize> {
    let eta = franck_condon_vector(basis, k, &pair.left);
    let mut best: Option<(usize, T)> = None;
    for i in 2..basis.len() {
        if basis.energies[i] - basis.energies[1] <= r(0.5) {
            continue;
        }
        let mag = eta[i].norm_sqr();
        if best.map_or(true, |(_, m)| mag > m) {
            best = Some((i, mag));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| {
        CoreError::InvalidConfig("no drive target state above the ground doublet".into())
    })
}
