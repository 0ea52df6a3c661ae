//! Two-channel configuration-interaction model of a magnetic Feshbach
//! resonance in the double well.
//!
//! The closed channel is a pointlike molecule of mass `2m` moving in the
//! doubled trap potential; rescaling `R = lambda u` with
//! `lambda = (4 gamma)^{-1/4}` maps its Hamiltonian onto the standard
//! double-well form with `b_eff = 2^{3/2} gamma^{3/4} b`,
//! `d_eff = d / lambda` and an overall energy factor `sqrt(gamma)`
//! (`gamma` the molecular/atomic polarizability ratio). The open channel is
//! the pair basis of double-well eigenstates; both channels talk through
//!
//! `V^k_ij = alpha * int dR phi_i(R) phi_j(R) Phi_k(R)`.
//!
//! Interacting levels at field `B` are the zeros of `det M(E)` with
//!
//! `M_kl(E) = (E - E_k - nu) delta_kl - sum_ij V^l_ij V^k_ij / (E - eps_i - eps_j)`
//!
//! and `nu = s (B - B0)`. Parity splits `M` into independent even/odd
//! blocks, which keeps quasi-degenerate doublets in separate determinants.

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::osc::hermite_fn_matrix;
use crate::quad::GaussHermite;
use crate::spbasis::{solve_single_particle, SingleParticleBasis, TrapConfig};
use crate::{r, Matrix, Real, Vector};

/// Quadrature stability target for the coupling tensor.
const QUAD_STABILITY_TOL: f64 = 1e-12;
/// Bisection width for interacting levels, in hw.
const ROOT_TOL: f64 = 1e-10;
/// Relative offset that keeps the scan away from pole singularities.
const POLE_OFFSET: f64 = 1e-12;

/// Resonance and truncation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeshbachConfig<T> {
    /// Interchannel coupling constant, hw * a_ho^{1/2}.
    pub alpha: T,
    /// Magnetic-moment difference, hw per Gauss.
    pub s: T,
    /// Resonance position, Gauss.
    pub b0: T,
    /// Molecular-to-atomic polarizability ratio.
    pub polarizability_ratio: T,
    /// Number of molecular states retained.
    pub n_mol: usize,
    /// Number of single-particle states forming the open-channel pair basis.
    pub n_pair: usize,
}

impl<T: Real> FeshbachConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(CoreError::InvalidConfig("alpha must be finite".into()));
        }
        if !self.s.is_finite() || !self.b0.is_finite() {
            return Err(CoreError::InvalidConfig("resonance parameters must be finite".into()));
        }
        if !(self.polarizability_ratio > T::zero()) {
            return Err(CoreError::InvalidConfig("polarizability_ratio must be > 0".into()));
        }
        if self.n_mol < 2 || self.n_pair < 2 {
            return Err(CoreError::InvalidConfig("n_mol and n_pair must be at least 2".into()));
        }
        Ok(())
    }

    /// Closed-channel detuning `nu = s (B - B0)` in hw.
    pub fn detuning(&self, b_field: T) -> T {
        self.s * (b_field - self.b0)
    }
}

/// Molecular states of the doubled potential (field-independent part).
#[derive(Debug, Clone)]
pub struct MolecularSpectrum<T> {
    /// Energies `E_k` in hw, ascending.
    pub energies: Vector<T>,
    /// Column `k`: coefficients of `Phi_k` in the scaled oscillator basis
    /// `h_m(R/lambda)/sqrt(lambda)`.
    pub coeffs: Matrix<T>,
    pub parity: Vec<i8>,
    /// Length scale of the molecular oscillator basis, in a_ho.
    pub lambda: T,
}

/// Solve `(-1/4 d^2/dR^2 + 2 gamma V_DW(R)) Phi = E Phi` by mapping onto the
/// standard double-well solver.
pub fn molecular_spectrum<T: Real>(
    trap: &TrapConfig<T>,
    cfg: &FeshbachConfig<T>,
) -> Result<MolecularSpectrum<T>> {
    trap.validate()?;
    cfg.validate()?;
    if cfg.n_mol > trap.n_basis {
        return Err(CoreError::InconsistentTruncation(format!(
            "n_mol = {} exceeds n_basis = {}",
            cfg.n_mol, trap.n_basis
        )));
    }
    let gamma = cfg.polarizability_ratio;
    let lambda = (r::<T>(4.0) * gamma).powf(r(-0.25));
    let scale = gamma.sqrt();
    let eff = TrapConfig {
        omega: trap.omega,
        b: r::<T>(2.0) * scale * trap.b / lambda,
        d: trap.d / lambda,
        n_basis: trap.n_basis,
        omega_perp_ratio: trap.omega_perp_ratio,
    };
    let solved = solve_single_particle(&eff)?;
    let n = cfg.n_mol;
    let mut energies = Vector::zeros(n);
    let mut coeffs = Matrix::zeros(trap.n_basis, n);
    for k in 0..n {
        energies[k] = scale * solved.energies[k];
        coeffs.set_column(k, &solved.coeffs.column(k));
    }
    Ok(MolecularSpectrum {
        energies,
        coeffs,
        parity: solved.parity[..n].to_vec(),
        lambda,
    })
}

/// Interchannel overlaps `V^k_ij`, real because every basis function is real.
#[derive(Debug, Clone)]
pub struct CouplingTensor<T> {
    /// One symmetric `n_pair x n_pair` matrix per molecular state.
    pub v: Vec<Matrix<T>>,
}

impl<T: Real> CouplingTensor<T> {
    pub fn n_mol(&self) -> usize {
        self.v.len()
    }

    pub fn n_pair(&self) -> usize {
        self.v.first().map_or(0, |m| m.nrows())
    }
}

fn coupling_at_order<T: Real>(
    basis: &SingleParticleBasis<T>,
    mol: &MolecularSpectrum<T>,
    alpha: T,
    n_pair: usize,
    order: usize,
) -> Vec<Matrix<T>> {
    let n_basis = basis.coeffs.nrows();
    let lambda = mol.lambda;
    let sigma = (T::one() + T::one() / (r::<T>(2.0) * lambda * lambda)).sqrt();
    let gh = GaussHermite::<T>::new(order);
    let nodes: Vec<T> = gh.nodes.iter().map(|&x| x / sigma).collect();
    let scaled: Vec<T> = nodes.iter().map(|&x| x / lambda).collect();
    // open-channel eigenstates at the nodes
    let f = hermite_fn_matrix(n_basis, &nodes) * basis.coeffs.columns(0, n_pair).clone_owned();
    // molecular states at the nodes, carrying the 1/sqrt(lambda) normalization
    let g = hermite_fn_matrix(n_basis, &scaled) * &mol.coeffs / lambda.sqrt();
    let nq = nodes.len();
    let mut out = Vec::with_capacity(mol.energies.len());
    for k in 0..mol.energies.len() {
        let mut weighted = f.clone();
        for q in 0..nq {
            let u = gh.total_weights[q] * g[(q, k)] * alpha / sigma;
            for c in 0..n_pair {
                weighted[(q, c)] *= u;
            }
        }
        let mut vk = f.transpose() * weighted;
        // exact i<->j symmetry and exact parity selection rule
        for i in 0..n_pair {
            for j in 0..i {
                let avg = (vk[(i, j)] + vk[(j, i)]) / r(2.0);
                vk[(i, j)] = avg;
                vk[(j, i)] = avg;
            }
        }
        for i in 0..n_pair {
            for j in 0..n_pair {
                if basis.parity[i] * basis.parity[j] * mol.parity[k] == -1 {
                    vk[(i, j)] = T::zero();
                }
            }
        }
        out.push(vk);
    }
    out
}

/// Compute all `V^k_ij` for `i, j < n_pair`, `k < n_mol`, by Gauss-Hermite
/// quadrature with order doubling until stable to 1e-12.
pub fn coupling_tensor<T: Real>(
    basis: &SingleParticleBasis<T>,
    mol: &MolecularSpectrum<T>,
    alpha: T,
    n_pair: usize,
) -> Result<CouplingTensor<T>> {
    if n_pair > basis.len() {
        return Err(CoreError::InconsistentTruncation(format!(
            "n_pair = {} exceeds the single-particle basis size {}",
            n_pair,
            basis.len()
        )));
    }
    if mol.coeffs.nrows() != basis.coeffs.nrows() {
        return Err(CoreError::InconsistentTruncation(
            "molecular and atomic bases use different n_basis".into(),
        ));
    }
    let n_basis = basis.coeffs.nrows();
    // triple product of polynomials of degree <= n_basis - 1 each
    let mut order = (3 * n_basis) / 2 + 2;
    let tol = crate::stability_tol::<T>().max(r(QUAD_STABILITY_TOL));
    let mut prev = coupling_at_order(basis, mol, alpha, n_pair, order);
    loop {
        order *= 2;
        let next = coupling_at_order(basis, mol, alpha, n_pair, order);
        let mut change = T::zero();
        for (a, b) in prev.iter().zip(&next) {
            change = T::max(change, (a - b).abs().max());
        }
        if change <= tol * T::max(T::one(), alpha.abs()) {
            return Ok(CouplingTensor { v: next });
        }
        if order > 2048 {
            return Err(CoreError::QuadratureNotConverged {
                order,
                last_change: change.to_f64().unwrap_or(f64::NAN),
            });
        }
        prev = next;
    }
}

/// One interacting level: energy and closed-channel weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level<T> {
    pub energy: T,
    pub closed_weight: T,
}

/// Interacting spectrum at one magnetic field value.
#[derive(Debug, Clone)]
pub struct SpectrumPoint<T> {
    pub b_field: T,
    pub levels: Vec<Level<T>>,
    /// Branch id per level after nearest-energy continuation across the scan.
    pub branch: Vec<usize>,
}

/// Energy window for root searches, in hw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWindow<T> {
    pub min: T,
    pub max: T,
}

/// One parity block of the determinant problem.
struct DetBlock<T> {
    /// Molecular indices of this block.
    mol_idx: Vec<usize>,
    /// Molecular energies of this block.
    mol_energies: Vec<T>,
    /// Distinct pole positions `eps_i + eps_j`, ascending.
    poles: Vec<T>,
    /// Per pole: weight matrix `sum_(ij)->pole mult * V^ka_ij V^kb_ij`.
    weights: Vec<Matrix<T>>,
    /// Per pole: the contributing unordered pairs and their multiplicity.
    members: Vec<Vec<(usize, usize, T)>>,
}

impl<T: Real> DetBlock<T> {
    fn build(
        block_parity: i8,
        basis: &SingleParticleBasis<T>,
        mol: &MolecularSpectrum<T>,
        tensor: &CouplingTensor<T>,
        n_pair: usize,
    ) -> Self {
        let mol_idx: Vec<usize> = (0..mol.energies.len())
            .filter(|&k| mol.parity[k] == block_parity)
            .collect();
        let nk = mol_idx.len();
        // collect unordered pairs of this block, sorted by pole position
        let mut pairs: Vec<(T, usize, usize)> = Vec::new();
        for i in 0..n_pair {
            for j in i..n_pair {
                if basis.parity[i] * basis.parity[j] == block_parity {
                    pairs.push((basis.energies[i] + basis.energies[j], i, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut poles: Vec<T> = Vec::new();
        let mut weights: Vec<Matrix<T>> = Vec::new();
        let mut members: Vec<Vec<(usize, usize, T)>> = Vec::new();
        for (p, i, j) in pairs {
            let merge = poles
                .last()
                .map_or(false, |&q| (p - q).abs() <= r::<T>(1e-12) * (T::one() + p.abs()));
            if !merge {
                poles.push(p);
                weights.push(Matrix::zeros(nk, nk));
                members.push(Vec::new());
            }
            let w = weights.last_mut().unwrap();
            let mult = if i == j { T::one() } else { r(2.0) };
            for (a, &ka) in mol_idx.iter().enumerate() {
                for (b, &kb) in mol_idx.iter().enumerate() {
                    w[(a, b)] += mult * tensor.v[ka][(i, j)] * tensor.v[kb][(i, j)];
                }
            }
            members.last_mut().unwrap().push((i, j, mult));
        }
        let mol_energies = mol_idx.iter().map(|&k| mol.energies[k]).collect();
        DetBlock {
            mol_idx,
            mol_energies,
            poles,
            weights,
            members,
        }
    }

    fn matrix(&self, e: T, nu: T) -> Matrix<T> {
        let nk = self.mol_idx.len();
        let mut sum = Matrix::<T>::zeros(nk, nk);
        for (p, w) in self.poles.iter().zip(&self.weights) {
            let inv = T::one() / (e - *p);
            for a in 0..nk {
                for b in 0..nk {
                    sum[(a, b)] -= w[(a, b)] * inv;
                }
            }
        }
        for a in 0..nk {
            sum[(a, a)] += e - self.mol_energies[a] - nu;
        }
        sum
    }

    fn det(&self, e: T, nu: T) -> T {
        self.matrix(e, nu).lu().determinant()
    }

    /// Closed-channel weight of the level at energy `e`.
    fn closed_weight(&self, e: T, nu: T, tensor: &CouplingTensor<T>) -> T {
        let m = self.matrix(e, nu);
        let svd = m.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        // right-singular vector of the smallest singular value spans the null space
        let mut idx = 0;
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s < svd.singular_values[idx] {
                idx = i;
            }
        }
        let a_blk: Vec<T> = (0..v_t.ncols()).map(|c| v_t[(idx, c)]).collect();
        let norm_a: T = a_blk.iter().map(|&x| x * x).fold(T::zero(), |s, x| s + x);
        let mut norm_c = T::zero();
        for (p, mem) in self.poles.iter().zip(&self.members) {
            let denom = e - *p;
            for &(i, j, mult) in mem {
                let mut c = T::zero();
                for (a, &ka) in self.mol_idx.iter().enumerate() {
                    c += tensor.v[ka][(i, j)] * a_blk[a];
                }
                c = c / denom;
                norm_c += mult * c * c;
            }
        }
        norm_a / (norm_a + norm_c)
    }

    /// All roots of `det M(E)` inside `window`, bisected to 1e-10 hw.
    fn roots(&self, nu: T, window: EnergyWindow<T>) -> Result<Vec<T>> {
        if self.mol_idx.is_empty() {
            return Ok(Vec::new());
        }
        let mut cuts: Vec<T> = vec![window.min];
        for &p in &self.poles {
            if p > window.min && p < window.max {
                cuts.push(p);
            }
        }
        cuts.push(window.max);
        // diagonal zeros attract roots; cluster samples near them
        let diag_zeros: Vec<T> = self.mol_energies.iter().map(|&e| e + nu).collect();
        let mut roots = Vec::new();
        for seg in cuts.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            let width = hi - lo;
            if !(width > T::zero()) {
                continue;
            }
            let off = r::<T>(POLE_OFFSET) * (T::one() + lo.abs().max(hi.abs()));
            let a = lo + off;
            let b = hi - off;
            if !(b > a) {
                continue;
            }
            roots.extend(self.roots_in_segment(nu, a, b, &diag_zeros)?);
        }
        roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
        Ok(roots)
    }

    fn roots_in_segment(&self, nu: T, a: T, b: T, diag_zeros: &[T]) -> Result<Vec<T>> {
        let width = b - a;
        // geometric clustering toward both endpoints (det diverges at poles)
        let mut base: Vec<T> = vec![a, b];
        for exp in [-10, -8, -6, -5, -4, -3, -2] {
            let frac = r::<T>(10f64.powi(exp));
            base.push(a + width * frac);
            base.push(b - width * frac);
        }
        for &z in diag_zeros {
            if z > a && z < b {
                base.push(z);
                for exp in [-9, -6, -3] {
                    let d = width * r::<T>(10f64.powi(exp));
                    if z - d > a {
                        base.push(z - d);
                    }
                    if z + d < b {
                        base.push(z + d);
                    }
                }
            }
        }
        let mut n_uniform = 24;
        let mut prev_count: Option<usize> = None;
        loop {
            let mut xs = base.clone();
            for i in 0..=n_uniform {
                xs.push(a + width * r::<T>(i as f64 / n_uniform as f64));
            }
            xs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            xs.dedup_by(|x, y| (*x - *y).abs() <= r::<T>(1e-15) * (T::one() + x.abs()));
            let vals: Vec<T> = xs.iter().map(|&x| self.det(x, nu)).collect();
            let mut brackets = Vec::new();
            for w in 0..xs.len() - 1 {
                if vals[w] == T::zero() {
                    brackets.push((xs[w], xs[w]));
                } else if vals[w] * vals[w + 1] < T::zero() {
                    brackets.push((xs[w], xs[w + 1]));
                }
            }
            let count = brackets.len();
            // accept once the count is unchanged under grid doubling
            if prev_count == Some(count) {
                return Ok(brackets
                    .into_iter()
                    .map(|(lo, hi)| self.bisect(nu, lo, hi))
                    .collect());
            }
            if n_uniform > 3000 {
                return Err(CoreError::BracketingUnstable {
                    roots_coarse: prev_count.unwrap_or(0),
                    roots_fine: count,
                });
            }
            prev_count = Some(count);
            n_uniform *= 2;
        }
    }

    fn bisect(&self, nu: T, mut lo: T, mut hi: T) -> T {
        if lo == hi {
            return lo;
        }
        let mut flo = self.det(lo, nu);
        // halve down to the floating-point fixed point; 1e-10 hw is the
        // contract, going all the way keeps the determinant residual
        // slope-limited instead of width-limited
        let _ = ROOT_TOL;
        loop {
            let mid = (lo + hi) / r(2.0);
            if mid <= lo || mid >= hi {
                return mid.max(lo).min(hi);
            }
            let fmid = self.det(mid, nu);
            if fmid == T::zero() {
                return mid;
            }
            if flo * fmid < T::zero() {
                hi = mid;
            } else {
                lo = mid;
                flo = fmid;
            }
        }
    }
}

/// All interacting levels in `window` at field `B`.
pub fn bound_levels<T: Real>(
    b_field: T,
    tensor: &CouplingTensor<T>,
    basis: &SingleParticleBasis<T>,
    mol: &MolecularSpectrum<T>,
    cfg: &FeshbachConfig<T>,
    window: EnergyWindow<T>,
) -> Result<Vec<Level<T>>> {
    cfg.validate()?;
    let n_pair = tensor.n_pair();
    if n_pair > basis.len() {
        return Err(CoreError::InconsistentTruncation(
            "coupling tensor larger than basis".into(),
        ));
    }
    let nu = cfg.detuning(b_field);
    let mut levels = Vec::new();
    for parity in [1i8, -1] {
        let block = DetBlock::build(parity, basis, mol, tensor, n_pair);
        for e in block.roots(nu, window)? {
            let w = block.closed_weight(e, nu, tensor);
            levels.push(Level {
                energy: e,
                closed_weight: w,
            });
        }
    }
    levels.sort_by(|x, y| x.energy.partial_cmp(&y.energy).unwrap());
    Ok(levels)
}

/// Energies of the antisymmetric (odd relative symmetry) pair states inside
/// the window. These never couple to the s-wave molecular channel and stay
/// field-independent.
pub fn antisymmetric_pair_levels<T: Real>(
    basis: &SingleParticleBasis<T>,
    n_pair: usize,
    window: EnergyWindow<T>,
) -> Vec<T> {
    let mut out = Vec::new();
    for i in 0..n_pair {
        for j in (i + 1)..n_pair {
            let e = basis.energies[i] + basis.energies[j];
            if e >= window.min && e <= window.max {
                out.push(e);
            }
        }
    }
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

/// Options for a field scan.
#[derive(Debug, Clone)]
pub struct ScanOptions<T> {
    pub window: EnergyWindow<T>,
    /// Also emit the field-independent odd-symmetry pair levels.
    pub include_antisymmetric: bool,
}

/// Interacting levels over a monotone `B` grid, with branch continuation.
///
/// Points are solved in parallel and merged in grid order, so the output is
/// deterministic.
pub fn spectrum_scan<T: Real>(
    b_grid: &[T],
    tensor: &CouplingTensor<T>,
    basis: &SingleParticleBasis<T>,
    mol: &MolecularSpectrum<T>,
    cfg: &FeshbachConfig<T>,
    opts: &ScanOptions<T>,
) -> Result<Vec<SpectrumPoint<T>>> {
    if b_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CoreError::InvalidConfig("B grid must be strictly increasing".into()));
    }
    let per_point: Vec<Result<Vec<Level<T>>>> = b_grid
        .par_iter()
        .map(|&b| {
            let mut levels = bound_levels(b, tensor, basis, mol, cfg, opts.window)?;
            if opts.include_antisymmetric {
                for e in antisymmetric_pair_levels(basis, tensor.n_pair(), opts.window) {
                    levels.push(Level {
                        energy: e,
                        closed_weight: T::zero(),
                    });
                }
                levels.sort_by(|x, y| x.energy.partial_cmp(&y.energy).unwrap());
            }
            Ok(levels)
        })
        .collect();
    let mut points = Vec::with_capacity(b_grid.len());
    for (idx, res) in per_point.into_iter().enumerate() {
        let levels = res?;
        points.push(SpectrumPoint {
            b_field: b_grid[idx],
            levels,
            branch: Vec::new(),
        });
    }
    connect_branches(&mut points);
    Ok(points)
}

/// Nearest-energy continuation with a closed-channel-weight tie-break.
fn connect_branches<T: Real>(points: &mut [SpectrumPoint<T>]) {
    let mut next_branch = 0usize;
    for idx in 0..points.len() {
        if idx == 0 {
            points[0].branch = (0..points[0].levels.len())
                .map(|_| {
                    let b = next_branch;
                    next_branch += 1;
                    b
                })
                .collect();
            continue;
        }
        let (prev_slice, cur_slice) = points.split_at_mut(idx);
        let prev = &prev_slice[idx - 1];
        let cur = &mut cur_slice[0];
        // all candidate matches sorted by energy distance + character penalty
        let mut cands: Vec<(T, usize, usize)> = Vec::new();
        for (a, la) in prev.levels.iter().enumerate() {
            for (b, lb) in cur.levels.iter().enumerate() {
                let cost = (la.energy - lb.energy).abs()
                    + r::<T>(0.1) * (la.closed_weight - lb.closed_weight).abs();
                cands.push((cost, a, b));
            }
        }
        cands.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let mut prev_used = vec![false; prev.levels.len()];
        let mut assigned = vec![usize::MAX; cur.levels.len()];
        for (_, a, b) in cands {
            if !prev_used[a] && assigned[b] == usize::MAX {
                prev_used[a] = true;
                assigned[b] = prev.branch[a];
            }
        }
        for slot in assigned.iter_mut() {
            if *slot == usize::MAX {
                *slot = next_branch;
                next_branch += 1;
            }
        }
        cur.branch = assigned;
    }
}
