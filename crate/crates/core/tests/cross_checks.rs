//! Cross-route consistency: the interacting levels found by pole-bracketed
//! determinant roots must coincide with the eigenvalues of the dense
//! symmetric-sector Hamiltonian built from the same ingredients, and the
//! closed-channel weights from both routes must agree.

use approx::assert_abs_diff_eq;
use feshgate_core::dynamics::{assemble_sector, Symmetry};
use feshgate_core::feshbach::{
    bound_levels, coupling_tensor, molecular_spectrum, EnergyWindow, FeshbachConfig,
};
use feshgate_core::spbasis::{solve_single_particle, TrapConfig};

fn setup() -> (
    feshgate_core::SingleParticleBasis64,
    feshgate_core::MolecularSpectrum64,
    feshgate_core::CouplingTensor64,
    FeshbachConfig<f64>,
) {
    let trap = TrapConfig {
        omega: 2.0 * std::f64::consts::PI * 1.0e4,
        b: 15.0,
        d: 1.0,
        n_basis: 40,
        omega_perp_ratio: 10.0,
    };
    let cfg = FeshbachConfig {
        alpha: 1.4,
        s: 235.0,
        b0: 202.1,
        polarizability_ratio: 1.0,
        n_mol: 4,
        n_pair: 6,
    };
    let basis = solve_single_particle(&trap).unwrap();
    let mol = molecular_spectrum(&trap, &cfg).unwrap();
    let tensor = coupling_tensor(&basis, &mol, cfg.alpha, cfg.n_pair).unwrap();
    (basis, mol, tensor, cfg)
}

#[test]
fn determinant_roots_match_dense_sector_eigenvalues() {
    let (basis, mol, tensor, cfg) = setup();
    let b_field = cfg.b0 - 0.022;
    let sector = assemble_sector(
        Symmetry::Symmetric,
        &basis,
        &mol,
        &tensor,
        &cfg,
        b_field,
        0.2,
    )
    .unwrap();
    let eig = sector.h0.clone().symmetric_eigen();
    let mut dense: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    dense.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let window = EnergyWindow {
        min: dense[0] - 1.0,
        max: dense[0] + 9.0,
    };
    let levels = bound_levels(b_field, &tensor, &basis, &mol, &cfg, window).unwrap();
    assert!(levels.len() >= 6, "expected several roots, got {}", levels.len());

    // every determinant root is a dense eigenvalue
    for lv in &levels {
        let nearest = dense
            .iter()
            .map(|e| (e - lv.energy).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(
            nearest < 1e-9,
            "root {} is not a dense eigenvalue (distance {nearest:e})",
            lv.energy
        );
    }
    // every dense eigenvalue strictly inside the window appears as a root
    for &e in dense.iter().filter(|&&e| e > window.min + 0.05 && e < window.max - 0.05) {
        let nearest = levels
            .iter()
            .map(|lv| (lv.energy - e).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(
            nearest < 1e-9,
            "dense eigenvalue {e} missing from the determinant roots ({nearest:e})"
        );
    }
}

#[test]
fn closed_channel_weights_match_dense_eigenvectors() {
    let (basis, mol, tensor, cfg) = setup();
    let b_field = cfg.b0 - 0.022;
    let sector = assemble_sector(
        Symmetry::Symmetric,
        &basis,
        &mol,
        &tensor,
        &cfg,
        b_field,
        0.2,
    )
    .unwrap();
    let eig = sector.h0.clone().symmetric_eigen();
    let window = EnergyWindow { min: -4.0, max: 6.0 };
    let levels = bound_levels(b_field, &tensor, &basis, &mol, &cfg, window).unwrap();
    assert!(!levels.is_empty());
    for lv in &levels {
        // locate the matching dense eigenpair
        let mut best = 0;
        for i in 0..eig.eigenvalues.len() {
            if (eig.eigenvalues[i] - lv.energy).abs()
                < (eig.eigenvalues[best] - lv.energy).abs()
            {
                best = i;
            }
        }
        let col = eig.eigenvectors.column(best);
        let weight: f64 = (sector.dim_open..sector.dim())
            .map(|i| col[i] * col[i])
            .sum();
        assert_abs_diff_eq!(lv.closed_weight, weight, epsilon = 1e-6);
    }
}

#[test]
fn f32_pipeline_smoke() {
    let trap = TrapConfig::<f32> {
        omega: 1.0,
        b: 0.0,
        d: 1.0,
        n_basis: 16,
        omega_perp_ratio: 10.0,
    };
    let cfg = FeshbachConfig::<f32> {
        alpha: 1.0,
        s: 1.0,
        b0: 200.0,
        polarizability_ratio: 1.0,
        n_mol: 3,
        n_pair: 3,
    };
    let basis = solve_single_particle(&trap).unwrap();
    let mol = molecular_spectrum(&trap, &cfg).unwrap();
    for k in 0..3 {
        assert!((mol.energies[k] - (k as f32 + 0.5)).abs() < 1e-3);
    }
    let tensor = coupling_tensor(&basis, &mol, cfg.alpha, cfg.n_pair).unwrap();
    let lam = 1.0 / 2.0_f32.sqrt();
    let expect = std::f32::consts::PI.powf(-0.75) / lam.sqrt()
        * (std::f32::consts::PI / (1.0 + 1.0 / (2.0 * lam * lam))).sqrt();
    assert!((tensor.v[0][(0, 0)] - expect).abs() < 1e-4);
}
