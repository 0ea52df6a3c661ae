//! Config parsing and validation.
//!
//! The schema is TOML; all SI quantities carry explicit unit tags in their
//! key names or values and are converted to oscillator units here, before
//! any physics runs. Validation collects every violation instead of
//! stopping at the first.

use std::collections::BTreeSet;

use anyhow::{anyhow, Result};
use serde::Deserialize;

use feshgate_core::dynamics::Stepper;
use feshgate_core::feshbach::FeshbachConfig;
use feshgate_core::spbasis::TrapConfig;

use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Job {
    Spectrum,
    Gate,
    Optimize,
}

impl Job {
    pub fn as_str(&self) -> &'static str {
        match self {
            Job::Spectrum => "spectrum",
            Job::Gate => "gate",
            Job::Optimize => "optimize",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawConfig {
    job: String,
    seed: Option<u64>,
    trap: RawTrap,
    atom: Option<RawAtom>,
    feshbach: RawFeshbach,
    drive: Option<RawDrive>,
    pulse: Option<RawPulse>,
    spectrum: Option<RawSpectrum>,
    gate: Option<RawGate>,
    optimize: Option<RawOptimize>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawTrap {
    freq_mhz: f64,
    b: f64,
    d: f64,
    n_basis: Option<usize>,
    omega_perp_ratio: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawAtom {
    species: Option<String>,
    mass_amu: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawFeshbach {
    alpha: f64,
    s_mhz_per_gauss: Option<f64>,
    b0_gauss: Option<f64>,
    polarizability_ratio: Option<f64>,
    n_mol: Option<usize>,
    n_pair: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawDrive {
    /// "0.03 per_nm" or "0.2134 per_aho"
    k: String,
    /// "auto" or a number in hw
    delta: toml::Value,
}

#[derive(Debug, Clone, Deserialize)]
struct RawPulse {
    omega0: f64,
    tau: f64,
    n_modes: Option<usize>,
    omega_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawSpectrum {
    b_start_gauss: f64,
    b_stop_gauss: f64,
    b_points: usize,
    window: [f64; 2],
    include_antisymmetric: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawGate {
    b_gauss: f64,
    n_steps: Option<usize>,
    sample_stride: Option<usize>,
    depth_cutoff: Option<f64>,
    stepper: Option<String>,
    target_phase_rad: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawOptimize {
    max_evals: Option<usize>,
    restarts: Option<usize>,
    lambda_leak: Option<f64>,
    eval_stepper: Option<String>,
    eval_steps: Option<usize>,
}

/// Two-photon detuning policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaPolicy {
    /// Resonant with the doublet-to-target gap, chosen at run time.
    Auto,
    /// Explicit value in hw.
    Explicit(f64),
}

#[derive(Debug, Clone)]
pub struct DriveConfig {
    /// Wavenumber in 1/a_ho after unit resolution.
    pub k_aho: f64,
    pub delta: DeltaPolicy,
}

#[derive(Debug, Clone)]
pub struct PulseConfig {
    pub omega0: f64,
    pub tau: f64,
    pub n_modes: usize,
    pub omega_max: f64,
}

#[derive(Debug, Clone)]
pub struct SpectrumJob {
    pub b_grid: Vec<f64>,
    pub window: (f64, f64),
    pub include_antisymmetric: bool,
}

#[derive(Debug, Clone)]
pub struct GateJob {
    pub b_gauss: f64,
    /// 0 means: derive from the step-size contract.
    pub n_steps: usize,
    pub sample_stride: usize,
    pub depth_cutoff: f64,
    pub stepper: Stepper,
    pub target_phase_rad: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeJob {
    pub max_evals: usize,
    pub restarts: usize,
    pub lambda_leak: f64,
    pub eval_stepper: Stepper,
    pub eval_steps: usize,
}

/// Fully resolved run configuration, oscillator units throughout.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub job: Job,
    pub seed: u64,
    pub trap: TrapConfig<f64>,
    pub feshbach: FeshbachConfig<f64>,
    pub drive: Option<DriveConfig>,
    pub pulse: Option<PulseConfig>,
    pub spectrum: Option<SpectrumJob>,
    pub gate: Option<GateJob>,
    pub optimize: Option<OptimizeJob>,
    /// Resolved unit anchors, echoed into every output.
    pub provenance: Provenance,
    /// Non-fatal validity notes (e.g. transverse-confinement warning).
    pub warnings: Vec<String>,
}

/// Unit anchors recorded alongside results.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub omega_rad_s: f64,
    pub mass_amu: f64,
    pub a_ho_nm: f64,
    pub s_hw_per_gauss: f64,
    pub k_aho: Option<f64>,
}

fn parse_k(raw: &str, a_ho_nm: f64, errors: &mut Vec<String>) -> Option<f64> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    if parts.len() != 2 {
        errors.push(format!(
            "drive.k: expected \"<value> per_nm|per_aho\", got {raw:?}"
        ));
        return None;
    }
    let value: f64 = match parts[0].parse() {
        Ok(v) => v,
        Err(_) => {
            errors.push(format!("drive.k: cannot parse number in {raw:?}"));
            return None;
        }
    };
    match parts[1] {
        "per_nm" => Some(value * a_ho_nm),
        "per_aho" => Some(value),
        other => {
            errors.push(format!(
                "drive.k: unknown unit tag {other:?} (use per_nm or per_aho)"
            ));
            None
        }
    }
}

fn parse_stepper(raw: Option<&str>, field: &str, errors: &mut Vec<String>) -> Stepper {
    match raw {
        None | Some("cf4") => Stepper::Cf4,
        Some("strang") => Stepper::Strang,
        Some(other) => {
            errors.push(format!("{field}: unknown stepper {other:?} (use cf4 or strang)"));
            Stepper::Cf4
        }
    }
}

/// Recursively collect keys not present in the schema. `deny_unknown_fields`
/// would stop at the first; this reports all of them.
fn unknown_keys(value: &toml::Value, allowed: &[(&str, &[&str])], errors: &mut Vec<String>) {
    let table = match value.as_table() {
        Some(t) => t,
        None => return,
    };
    let top: BTreeSet<&str> = allowed.iter().map(|(k, _)| *k).collect();
    for (key, sub) in table {
        if !top.contains(key.as_str()) {
            errors.push(format!("unknown key: {key}"));
            continue;
        }
        if let Some(subtable) = sub.as_table() {
            let fields = allowed
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, f)| *f)
                .unwrap_or(&[]);
            let set: BTreeSet<&str> = fields.iter().copied().collect();
            for child in subtable.keys() {
                if !set.contains(child.as_str()) {
                    errors.push(format!("unknown key: {key}.{child}"));
                }
            }
        }
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("job", &[]),
    ("seed", &[]),
    ("trap", &["freq_mhz", "b", "d", "n_basis", "omega_perp_ratio"]),
    ("atom", &["species", "mass_amu"]),
    (
        "feshbach",
        &[
            "alpha",
            "s_mhz_per_gauss",
            "b0_gauss",
            "polarizability_ratio",
            "n_mol",
            "n_pair",
        ],
    ),
    ("drive", &["k", "delta"]),
    ("pulse", &["omega0", "tau", "n_modes", "omega_max"]),
    (
        "spectrum",
        &[
            "b_start_gauss",
            "b_stop_gauss",
            "b_points",
            "window",
            "include_antisymmetric",
        ],
    ),
    (
        "gate",
        &[
            "b_gauss",
            "n_steps",
            "sample_stride",
            "depth_cutoff",
            "stepper",
            "target_phase_rad",
        ],
    ),
    (
        "optimize",
        &["max_evals", "restarts", "lambda_leak", "eval_stepper", "eval_steps"],
    ),
];

/// Parse and validate a config file, reporting every violation at once.
/// `seed_override` comes from the command line and wins over the file.
pub fn parse_config(text: &str, seed_override: Option<u64>) -> Result<RunConfig> {
    let value: toml::Value = toml::from_str(text).map_err(|e| anyhow!("TOML syntax: {e}"))?;
    let mut errors: Vec<String> = Vec::new();
    unknown_keys(&value, SCHEMA, &mut errors);
    let raw: RawConfig = match value.clone().try_into() {
        Ok(r) => r,
        Err(e) => {
            errors.push(format!("schema: {e}"));
            if !errors.is_empty() {
                return Err(anyhow!("invalid config:\n  - {}", errors.join("\n  - ")));
            }
            unreachable!()
        }
    };

    let job = match raw.job.as_str() {
        "spectrum" => Job::Spectrum,
        "gate" => Job::Gate,
        "optimize" => Job::Optimize,
        other => {
            errors.push(format!(
                "job: expected spectrum|gate|optimize, got {other:?}"
            ));
            Job::Spectrum
        }
    };

    let seed = match seed_override.or(raw.seed) {
        Some(s) => s,
        None => {
            errors.push("seed: missing (set in the config or pass --seed)".into());
            0
        }
    };

    let mass_amu = match &raw.atom {
        None => units::K40_AMU,
        Some(atom) => match (&atom.species, atom.mass_amu) {
            (Some(sp), None) => match sp.as_str() {
                "K40" => units::K40_AMU,
                other => {
                    errors.push(format!(
                        "atom.species: unknown species {other:?}; supply atom.mass_amu instead"
                    ));
                    units::K40_AMU
                }
            },
            (None, Some(m)) => m,
            (Some(_), Some(_)) => {
                errors.push("atom: species and mass_amu are mutually exclusive".into());
                units::K40_AMU
            }
            (None, None) => {
                errors.push("atom: set species or mass_amu".into());
                units::K40_AMU
            }
        },
    };

    if raw.trap.freq_mhz <= 0.0 {
        errors.push("trap.freq_mhz must be positive".into());
    }
    let omega = 2.0 * std::f64::consts::PI * raw.trap.freq_mhz * 1e6;
    let a_ho_nm = units::a_ho_m(mass_amu * units::AMU, omega) * 1e9;
    let omega_perp_ratio = raw.trap.omega_perp_ratio.unwrap_or(10.0);
    let mut warnings = Vec::new();
    if omega_perp_ratio < 5.0 {
        warnings.push(format!(
            "omega_perp_ratio = {omega_perp_ratio} < 5: the one-dimensional model needs \
             transversally frozen motion; results may not be meaningful"
        ));
    }
    let trap = TrapConfig {
        omega,
        b: raw.trap.b,
        d: raw.trap.d,
        n_basis: raw.trap.n_basis.unwrap_or(60),
        omega_perp_ratio,
    };
    if let Err(e) = trap.validate() {
        errors.push(format!("trap: {e}"));
    }

    let s_mhz = raw.feshbach.s_mhz_per_gauss.unwrap_or(2.35);
    let s_hw = units::slope_hw_per_gauss(s_mhz, omega);
    let feshbach = FeshbachConfig {
        alpha: raw.feshbach.alpha,
        s: s_hw,
        b0: raw.feshbach.b0_gauss.unwrap_or(202.1),
        polarizability_ratio: raw.feshbach.polarizability_ratio.unwrap_or(1.0),
        n_mol: raw.feshbach.n_mol.unwrap_or(12),
        n_pair: raw.feshbach.n_pair.unwrap_or(60),
    };
    if let Err(e) = feshbach.validate() {
        errors.push(format!("feshbach: {e}"));
    }
    if feshbach.n_pair > trap.n_basis {
        errors.push("feshbach.n_pair cannot exceed trap.n_basis".into());
    }
    if feshbach.n_mol > trap.n_basis {
        errors.push("feshbach.n_mol cannot exceed trap.n_basis".into());
    }

    let drive = raw.drive.as_ref().map(|d| {
        let k_aho = parse_k(&d.k, a_ho_nm, &mut errors).unwrap_or(0.0);
        let delta = match &d.delta {
            toml::Value::String(s) if s == "auto" => DeltaPolicy::Auto,
            toml::Value::Float(v) => DeltaPolicy::Explicit(*v),
            toml::Value::Integer(v) => DeltaPolicy::Explicit(*v as f64),
            other => {
                errors.push(format!(
                    "drive.delta: expected \"auto\" or a number in hw, got {other:?}"
                ));
                DeltaPolicy::Auto
            }
        };
        DriveConfig { k_aho, delta }
    });

    let pulse = raw.pulse.as_ref().map(|p| {
        if p.tau <= 0.0 {
            errors.push("pulse.tau must be positive".into());
        }
        PulseConfig {
            omega0: p.omega0,
            tau: p.tau,
            n_modes: p.n_modes.unwrap_or(6),
            omega_max: p.omega_max.unwrap_or(1.8),
        }
    });

    let spectrum = raw.spectrum.as_ref().map(|s| {
        if s.b_points < 2 {
            errors.push("spectrum.b_points must be at least 2".into());
        }
        if !(s.b_stop_gauss > s.b_start_gauss) {
            errors.push("spectrum: b_stop_gauss must exceed b_start_gauss".into());
        }
        if !(s.window[1] > s.window[0]) {
            errors.push("spectrum.window must be an increasing pair".into());
        }
        let n = s.b_points.max(2);
        let b_grid = (0..n)
            .map(|i| {
                s.b_start_gauss
                    + (s.b_stop_gauss - s.b_start_gauss) * i as f64 / (n - 1) as f64
            })
            .collect();
        SpectrumJob {
            b_grid,
            window: (s.window[0], s.window[1]),
            include_antisymmetric: s.include_antisymmetric.unwrap_or(true),
        }
    });

    let gate = raw.gate.as_ref().map(|g| GateJob {
        b_gauss: g.b_gauss,
        n_steps: g.n_steps.unwrap_or(0),
        sample_stride: g.sample_stride.unwrap_or(200),
        depth_cutoff: g.depth_cutoff.unwrap_or(20.0),
        stepper: parse_stepper(g.stepper.as_deref(), "gate.stepper", &mut errors),
        target_phase_rad: g.target_phase_rad.unwrap_or(std::f64::consts::PI),
    });

    let optimize = raw.optimize.as_ref().map(|o| OptimizeJob {
        max_evals: o.max_evals.unwrap_or(4000),
        restarts: o.restarts.unwrap_or(8),
        lambda_leak: o.lambda_leak.unwrap_or(0.0),
        eval_stepper: parse_stepper(o.eval_stepper.as_deref(), "optimize.eval_stepper", &mut errors),
        eval_steps: o.eval_steps.unwrap_or(0),
    });

    // job-specific required/forbidden sections
    match job {
        Job::Spectrum => {
            if spectrum.is_none() {
                errors.push("spectrum job needs a [spectrum] section".into());
            }
            if gate.is_some() {
                errors.push(
                    "spectrum job must not set [gate] (B grid and B scalar are mutually exclusive)"
                        .into(),
                );
            }
        }
        Job::Gate | Job::Optimize => {
            if spectrum.is_some() {
                errors.push(format!(
                    "{} job must not set [spectrum] (B grid and B scalar are mutually exclusive)",
                    job.as_str()
                ));
            }
            if gate.is_none() {
                errors.push(format!("{} job needs a [gate] section", job.as_str()));
            }
            if drive.is_none() {
                errors.push(format!("{} job needs a [drive] section", job.as_str()));
            }
            if pulse.is_none() {
                errors.push(format!("{} job needs a [pulse] section", job.as_str()));
            }
            if job == Job::Optimize && optimize.is_none() {
                errors.push("optimize job needs an [optimize] section".into());
            }
        }
    }

    if !errors.is_empty() {
        return Err(anyhow!("invalid config:\n  - {}", errors.join("\n  - ")));
    }

    let provenance = Provenance {
        omega_rad_s: omega,
        mass_amu,
        a_ho_nm,
        s_hw_per_gauss: s_hw,
        k_aho: drive.as_ref().map(|d| d.k_aho),
    };

    Ok(RunConfig {
        job,
        seed,
        trap,
        feshbach,
        drive,
        pulse,
        spectrum,
        gate,
        optimize,
        provenance,
        warnings,
    })
}
