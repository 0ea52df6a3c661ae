//! Experiment orchestration: build the physics objects from a [`RunConfig`],
//! run the requested job, and emit result tables.
//!
//! Every payload file is deterministic for a given (config, seed): floats go
//! to CSV with 17 significant digits, JSON is serialized from structs with
//! fixed field order, and parallel sections merge results in input order.
//! Wall-clock information goes only to the `run_log.txt` sidecar.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use feshgate_core::crab::{
    optimize, Evaluation, Objective, OptimizationReport, OptimizeOpts, PulseSpec,
};
use feshgate_core::dynamics::{
    assemble_sector, gate_fidelity, gate_initial_state, leakage, propagate, resonant_delta,
    DriveCfg, GateResult, PropagateOpts, Propagation, SectorHamiltonian, Stepper, Symmetry,
    TwoParticleState,
};
use feshgate_core::feshbach::{molecular_spectrum, spectrum_scan, EnergyWindow, ScanOptions};
use feshgate_core::spbasis::{localized_states, solve_single_particle, LocalizedPair};
use feshgate_core::{CouplingTensor64, MolecularSpectrum64, SingleParticleBasis64};

use crate::config::{DeltaPolicy, GateJob, Job, PulseConfig, RunConfig};

/// 17 significant digits: enough to round-trip f64 exactly.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn stepper_name(s: Stepper) -> &'static str {
    match s {
        Stepper::Cf4 => "cf4",
        Stepper::Strang => "strang",
    }
}

/// Unit anchors and identity stamped into every output.
#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub job: String,
    pub seed: u64,
    pub config_hash: String,
    pub omega_rad_s: f64,
    pub mass_amu: f64,
    pub a_ho_nm: f64,
    pub s_hw_per_gauss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_aho: Option<f64>,
    pub warnings: Vec<String>,
}

fn write_meta(cfg: &RunConfig, config_hash: &str, out: &Path) -> Result<()> {
    let meta = RunMeta {
        job: cfg.job.as_str().to_string(),
        seed: cfg.seed,
        config_hash: config_hash.to_string(),
        omega_rad_s: cfg.provenance.omega_rad_s,
        mass_amu: cfg.provenance.mass_amu,
        a_ho_nm: cfg.provenance.a_ho_nm,
        s_hw_per_gauss: cfg.provenance.s_hw_per_gauss,
        k_aho: cfg.provenance.k_aho,
        warnings: cfg.warnings.clone(),
    };
    fs::write(
        out.join("run_meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(())
}

fn append_log(out: &Path, line: &str) {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    if let Ok(mut f) = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("run_log.txt"))
    {
        let _ = writeln!(f, "[{stamp:.3}] {line}");
    }
}

/// Resolved ingredients shared by the gate and optimize jobs.
pub struct GateProblem {
    pub basis: SingleParticleBasis64,
    pub pair: LocalizedPair<f64>,
    pub mol: MolecularSpectrum64,
    pub tensor: CouplingTensor64,
    pub sym: SectorHamiltonian<f64>,
    pub asym: SectorHamiltonian<f64>,
    pub init_s: TwoParticleState<f64>,
    pub init_a: TwoParticleState<f64>,
    pub k: f64,
    pub delta: f64,
    pub target_index: usize,
    pub pulse: PulseConfig,
    pub gate: GateJob,
    /// Per-sector step counts satisfying `dt ||H|| < 0.1` after recentering,
    /// at the worst-case amplitude `omega_max`.
    pub steps_s: usize,
    pub steps_a: usize,
    pub half_spread_s: f64,
    pub half_spread_a: f64,
}

impl GateProblem {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let drive = cfg
            .drive
            .as_ref()
            .ok_or_else(|| anyhow!("gate problem needs a [drive] section"))?;
        let pulse = cfg
            .pulse
            .clone()
            .ok_or_else(|| anyhow!("gate problem needs a [pulse] section"))?;
        let gate = cfg
            .gate
            .clone()
            .ok_or_else(|| anyhow!("gate problem needs a [gate] section"))?;
        let basis = solve_single_particle(&cfg.trap)?;
        let pair = localized_states(&basis)?;
        let mol = molecular_spectrum(&cfg.trap, &cfg.feshbach)?;
        let tensor = feshgate_core::feshbach::coupling_tensor(
            &basis,
            &mol,
            cfg.feshbach.alpha,
            cfg.feshbach.n_pair,
        )?;
        let k = drive.k_aho;
        let (target_index, auto_delta) = resonant_delta(&basis, &pair, k)?;
        let delta = match drive.delta {
            DeltaPolicy::Auto => auto_delta,
            DeltaPolicy::Explicit(v) => v,
        };
        let sym = assemble_sector(
            Symmetry::Symmetric,
            &basis,
            &mol,
            &tensor,
            &cfg.feshbach,
            gate.b_gauss,
            k,
        )?;
        let asym = assemble_sector(
            Symmetry::Antisymmetric,
            &basis,
            &mol,
            &tensor,
            &cfg.feshbach,
            gate.b_gauss,
            k,
        )?;
        let init_s = gate_initial_state(&sym)?;
        let init_a = gate_initial_state(&asym)?;
        // worst-case step counts at the amplitude cap; per-pulse counts are
        // refined from the actual peak amplitude in `steps_for`
        let half_spread_s = sym.half_spread();
        let half_spread_a = asym.half_spread();
        let auto = |spread: f64| -> usize {
            (pulse.tau * (spread + 2.0 * pulse.omega_max) / 0.1).ceil() as usize
        };
        let steps_s = if gate.n_steps > 0 { gate.n_steps } else { auto(half_spread_s) };
        let steps_a = if gate.n_steps > 0 { gate.n_steps } else { auto(half_spread_a) };
        Ok(GateProblem {
            half_spread_s,
            half_spread_a,
            basis,
            pair,
            mol,
            tensor,
            sym,
            asym,
            init_s,
            init_a,
            k,
            delta,
            target_index,
            pulse,
            gate,
            steps_s,
            steps_a,
        })
    }

    /// Step counts for one specific pulse: the step-size contract evaluated
    /// at the pulse's actual peak amplitude instead of the cap.
    pub fn steps_for(&self, pulse: &PulseSpec<f64>) -> (usize, usize) {
        let mut peak = 0.0_f64;
        let n = 4096;
        for i in 0..=n {
            let t = pulse.tau * i as f64 / n as f64;
            if let Ok(v) = pulse.value(t) {
                peak = peak.max(v.abs());
            }
        }
        let steps = |spread: f64| -> usize {
            (pulse.tau * (spread + 2.0 * peak) / 0.1).ceil() as usize
        };
        (
            steps(self.half_spread_s).min(self.steps_s).max(1),
            steps(self.half_spread_a).min(self.steps_a).max(1),
        )
    }

    pub fn pulse_template(&self, n_modes: usize) -> PulseSpec<f64> {
        PulseSpec {
            omega0: self.pulse.omega0,
            tau: self.pulse.tau,
            n_modes,
            a: vec![0.0; n_modes],
            b: vec![0.0; n_modes],
            freqs: vec![0.0; n_modes],
            omega_max: self.pulse.omega_max,
        }
    }

    /// Propagate both sectors under one pulse; sampling only if `stride > 0`.
    pub fn run_pulse(
        &self,
        pulse: &PulseSpec<f64>,
        stepper: Stepper,
        steps: (usize, usize),
        stride: usize,
    ) -> feshgate_core::error::Result<(Propagation<f64>, Propagation<f64>)> {
        let drive = DriveCfg {
            k: self.k,
            delta: self.delta,
        };
        let opts = PropagateOpts {
            stepper,
            sample_stride: stride,
        };
        let (rs, ra) = rayon::join(
            || propagate(&self.sym, pulse, drive, &self.init_s, steps.0, opts),
            || propagate(&self.asym, pulse, drive, &self.init_a, steps.1, opts),
        );
        Ok((rs?, ra?))
    }

    pub fn evaluate(
        &self,
        pulse: &PulseSpec<f64>,
        stepper: Stepper,
        steps: (usize, usize),
        with_leakage: bool,
    ) -> feshgate_core::error::Result<(GateResult<f64>, Propagation<f64>, Propagation<f64>)> {
        let stride = if with_leakage {
            (steps.0.max(steps.1) / 256).max(1)
        } else {
            0
        };
        let (ps, pa) = self.run_pulse(pulse, stepper, steps, stride)?;
        let mut result = gate_fidelity(
            &ps.final_state,
            &pa.final_state,
            &self.init_s,
            &self.init_a,
            self.gate.target_phase_rad,
        );
        if with_leakage {
            let leak_s = leakage(&ps.trajectory, &self.sym, self.gate.depth_cutoff);
            let leak_a = leakage(&pa.trajectory, &self.asym, self.gate.depth_cutoff);
            result.max_leakage = leak_s.max(leak_a);
        }
        Ok((result, ps, pa))
    }
}

// ---- spectrum job ----

pub fn run_spectrum(cfg: &RunConfig, config_hash: &str, out: &Path) -> Result<()> {
    let spec = cfg
        .spectrum
        .as_ref()
        .ok_or_else(|| anyhow!("missing [spectrum] section"))?;
    let t0 = Instant::now();
    let basis = solve_single_particle(&cfg.trap)?;
    let mol = molecular_spectrum(&cfg.trap, &cfg.feshbach)?;
    let tensor = feshgate_core::feshbach::coupling_tensor(
        &basis,
        &mol,
        cfg.feshbach.alpha,
        cfg.feshbach.n_pair,
    )?;
    let opts = ScanOptions {
        window: EnergyWindow {
            min: spec.window.0,
            max: spec.window.1,
        },
        include_antisymmetric: spec.include_antisymmetric,
    };
    let points = spectrum_scan(&spec.b_grid, &tensor, &basis, &mol, &cfg.feshbach, &opts)?;
    let mut csv = String::new();
    csv.push_str(&format!("# config_hash={config_hash} seed={}\n", cfg.seed));
    csv.push_str("B_gauss,level_index,energy_hbar_omega,closed_channel_weight\n");
    for p in &points {
        for (lv, &branch) in p.levels.iter().zip(&p.branch) {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                fmt(p.b_field),
                branch,
                fmt(lv.energy),
                fmt(lv.closed_weight)
            ));
        }
    }
    fs::write(out.join("spectrum.csv"), csv)?;
    write_meta(cfg, config_hash, out)?;
    append_log(
        out,
        &format!(
            "spectrum: {} B points in {:.1}s",
            points.len(),
            t0.elapsed().as_secs_f64()
        ),
    );
    Ok(())
}

// ---- gate job ----

#[derive(Debug, Serialize)]
struct GateResultOut {
    fidelity: f64,
    phi_s: f64,
    phi_a: f64,
    relative_phase: f64,
    return_population_s: f64,
    return_population_a: f64,
    max_leakage: f64,
    phases_defined: bool,
    delta: f64,
    target_state: usize,
    b_gauss: f64,
    n_steps_symmetric: usize,
    n_steps_antisymmetric: usize,
    stepper: String,
    target_phase_rad: f64,
    norm_drift_symmetric: f64,
    norm_drift_antisymmetric: f64,
    config_hash: String,
    seed: u64,
}

fn write_trajectory(
    problem: &GateProblem,
    ps: &Propagation<f64>,
    pa: &Propagation<f64>,
    config_hash: &str,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut csv = String::new();
    csv.push_str(&format!("# config_hash={config_hash} seed={seed}\n"));
    csv.push_str("t_over_omega_inv,sector,state_label,re_amp,im_amp\n");
    for (sector_name, prop, sector) in [
        ("symmetric", ps, &problem.sym),
        ("antisymmetric", pa, &problem.asym),
    ] {
        for sample in &prop.trajectory {
            for (p, &(i, j)) in sector.pairs.iter().enumerate() {
                let amp = sample.state.open[p];
                csv.push_str(&format!(
                    "{},{sector_name},pair_{i}_{j},{},{}\n",
                    fmt(sample.t),
                    fmt(amp.re),
                    fmt(amp.im)
                ));
            }
            for m in 0..sector.dim_closed {
                let amp = sample.state.closed[m];
                csv.push_str(&format!(
                    "{},{sector_name},mol_{m},{},{}\n",
                    fmt(sample.t),
                    fmt(amp.re),
                    fmt(amp.im)
                ));
            }
        }
    }
    fs::write(out.join("trajectory.csv"), csv)?;
    Ok(())
}

pub fn run_gate(cfg: &RunConfig, config_hash: &str, out: &Path) -> Result<()> {
    let t0 = Instant::now();
    let problem = GateProblem::build(cfg)?;
    let pulse = problem.pulse_template(0);
    let (result, ps, pa) = problem.evaluate(
        &pulse,
        problem.gate.stepper,
        (problem.steps_s, problem.steps_a),
        true,
    )?;
    // re-sample with the configured stride for the emitted trajectory
    let (ps_out, pa_out) = problem.run_pulse(
        &pulse,
        problem.gate.stepper,
        (problem.steps_s, problem.steps_a),
        problem.gate.sample_stride,
    )?;
    write_trajectory(&problem, &ps_out, &pa_out, config_hash, cfg.seed, out)?;
    let res = GateResultOut {
        fidelity: result.fidelity,
        phi_s: result.phi_s,
        phi_a: result.phi_a,
        relative_phase: result.phi_s - result.phi_a,
        return_population_s: result.return_population_s,
        return_population_a: result.return_population_a,
        max_leakage: result.max_leakage,
        phases_defined: result.phases_defined,
        delta: problem.delta,
        target_state: problem.target_index,
        b_gauss: problem.gate.b_gauss,
        n_steps_symmetric: problem.steps_s,
        n_steps_antisymmetric: problem.steps_a,
        stepper: stepper_name(problem.gate.stepper).to_string(),
        target_phase_rad: problem.gate.target_phase_rad,
        norm_drift_symmetric: ps.norm_drift,
        norm_drift_antisymmetric: pa.norm_drift,
        config_hash: config_hash.to_string(),
        seed: cfg.seed,
    };
    fs::write(
        out.join("gate_result.json"),
        serde_json::to_string_pretty(&res)? + "\n",
    )?;
    write_meta(cfg, config_hash, out)?;
    append_log(out, &format!("gate: done in {:.1}s", t0.elapsed().as_secs_f64()));
    Ok(())
}

// ---- optimize job ----

/// JSON record sufficient to replay the stored pulse exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseRecord {
    pub omega0: f64,
    pub tau: f64,
    pub n_modes: usize,
    pub omega_max: f64,
    pub freqs: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub seed: u64,
    pub fidelity: f64,
}

impl PulseRecord {
    pub fn to_pulse(&self) -> PulseSpec<f64> {
        PulseSpec {
            omega0: self.omega0,
            tau: self.tau,
            n_modes: self.n_modes,
            a: self.a.clone(),
            b: self.b.clone(),
            freqs: self.freqs.clone(),
            omega_max: self.omega_max,
        }
    }
}

#[derive(Debug, Serialize)]
struct RestartOut {
    freq_seed: u64,
    best_fidelity: f64,
    evaluations: usize,
    failed_evaluations: usize,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct VerificationOut {
    fidelity: f64,
    phi_s: f64,
    phi_a: f64,
    relative_phase: f64,
    return_population_s: f64,
    return_population_a: f64,
    max_leakage: f64,
    stepper: String,
    n_steps_symmetric: usize,
    n_steps_antisymmetric: usize,
}

#[derive(Debug, Serialize)]
struct ReportOut {
    pulse: PulseRecord,
    search_fidelity: f64,
    search_leakage: f64,
    evaluations: usize,
    converged: bool,
    eval_stepper: String,
    eval_steps_symmetric: usize,
    eval_steps_antisymmetric: usize,
    delta: f64,
    target_state: usize,
    b_gauss: f64,
    restarts: Vec<RestartOut>,
    fidelity_history: Vec<f64>,
    verification: VerificationOut,
    config_hash: String,
    seed: u64,
}

struct SearchObjective<'a> {
    problem: &'a GateProblem,
    stepper: Stepper,
    /// Fixed step counts; `None` re-derives them per pulse from the actual
    /// peak amplitude.
    steps: Option<(usize, usize)>,
    with_leakage: bool,
}

impl SearchObjective<'_> {
    fn steps_for(&self, pulse: &PulseSpec<f64>) -> (usize, usize) {
        self.steps.unwrap_or_else(|| self.problem.steps_for(pulse))
    }
}

impl Objective<f64> for SearchObjective<'_> {
    fn evaluate(&self, pulse: &PulseSpec<f64>) -> feshgate_core::error::Result<Evaluation<f64>> {
        let (result, _, _) =
            self.problem
                .evaluate(pulse, self.stepper, self.steps_for(pulse), self.with_leakage)?;
        Ok(Evaluation {
            fidelity: result.fidelity,
            leakage: result.max_leakage,
        })
    }
}

pub fn run_optimize(cfg: &RunConfig, config_hash: &str, out: &Path) -> Result<()> {
    let t0 = Instant::now();
    let opt = cfg
        .optimize
        .clone()
        .ok_or_else(|| anyhow!("missing [optimize] section"))?;
    let problem = GateProblem::build(cfg)?;
    let steps = if opt.eval_steps > 0 {
        Some((opt.eval_steps, opt.eval_steps))
    } else {
        None
    };
    let objective = SearchObjective {
        problem: &problem,
        stepper: opt.eval_stepper,
        steps,
        with_leakage: opt.lambda_leak != 0.0,
    };
    let template = problem.pulse_template(cfg.pulse.as_ref().map_or(6, |p| p.n_modes));
    let opts = OptimizeOpts {
        max_evals: opt.max_evals,
        restarts: opt.restarts,
        seed: cfg.seed,
        lambda_leak: opt.lambda_leak,
        ..OptimizeOpts::default()
    };
    append_log(
        out,
        &format!(
            "optimize: {} restarts x {} evals, eval steps {:?}",
            opt.restarts, opt.max_evals, steps
        ),
    );
    let t_search = Instant::now();
    let report: OptimizationReport<f64> = optimize(&objective, &template, &opts)?;
    let best_steps = objective.steps_for(&report.best);
    append_log(
        out,
        &format!("optimize: search finished in {:.1}s", t_search.elapsed().as_secs_f64()),
    );
    // verify the winner with the high-order stepper and full trajectory
    let (verify, ps, pa) = problem.evaluate(
        &report.best,
        problem.gate.stepper,
        (problem.steps_s, problem.steps_a),
        true,
    )?;
    let (ps_out, pa_out) = problem.run_pulse(
        &report.best,
        problem.gate.stepper,
        (problem.steps_s, problem.steps_a),
        problem.gate.sample_stride,
    )?;
    write_trajectory(&problem, &ps_out, &pa_out, config_hash, cfg.seed, out)?;
    drop((ps, pa));

    let record = PulseRecord {
        omega0: report.best.omega0,
        tau: report.best.tau,
        n_modes: report.best.n_modes,
        omega_max: report.best.omega_max,
        freqs: report.best.freqs.clone(),
        a: report.best.a.clone(),
        b: report.best.b.clone(),
        seed: cfg.seed,
        fidelity: report.best_fidelity,
    };
    let out_report = ReportOut {
        pulse: record,
        search_fidelity: report.best_fidelity,
        search_leakage: report.best_leakage,
        evaluations: report.evaluations,
        converged: report.converged,
        eval_stepper: stepper_name(opt.eval_stepper).to_string(),
        eval_steps_symmetric: best_steps.0,
        eval_steps_antisymmetric: best_steps.1,
        delta: problem.delta,
        target_state: problem.target_index,
        b_gauss: problem.gate.b_gauss,
        restarts: report
            .restarts
            .iter()
            .map(|r| RestartOut {
                freq_seed: r.freq_seed,
                best_fidelity: r.best_fidelity,
                evaluations: r.evaluations,
                failed_evaluations: r.failed_evaluations,
                converged: r.converged,
            })
            .collect(),
        fidelity_history: report.fidelity_history.clone(),
        verification: VerificationOut {
            fidelity: verify.fidelity,
            phi_s: verify.phi_s,
            phi_a: verify.phi_a,
            relative_phase: verify.phi_s - verify.phi_a,
            return_population_s: verify.return_population_s,
            return_population_a: verify.return_population_a,
            max_leakage: verify.max_leakage,
            stepper: stepper_name(problem.gate.stepper).to_string(),
            n_steps_symmetric: problem.steps_s,
            n_steps_antisymmetric: problem.steps_a,
        },
        config_hash: config_hash.to_string(),
        seed: cfg.seed,
    };
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&out_report)? + "\n",
    )?;

    // dense pulse table
    let mut csv = String::new();
    csv.push_str(&format!("# config_hash={config_hash} seed={}\n", cfg.seed));
    csv.push_str("t_over_omega_inv,omega\n");
    let n = 2000;
    for i in 0..=n {
        let t = report.best.tau * i as f64 / n as f64;
        let v = report.best.value(t).map_err(|e| anyhow!("{e}"))?;
        csv.push_str(&format!("{},{}\n", fmt(t), fmt(v)));
    }
    fs::write(out.join("pulse.csv"), csv)?;
    write_meta(cfg, config_hash, out)?;
    append_log(
        out,
        &format!(
            "optimize: search f = {:.6}, verified f = {:.6}, {} evals in {:.1}s",
            report.best_fidelity,
            verify.fidelity,
            report.evaluations,
            t0.elapsed().as_secs_f64()
        ),
    );
    Ok(())
}

/// Re-evaluate a stored pulse with the search propagator settings recorded in
/// its report (the replay path behind the determinism guarantees).
pub fn replay_fidelity(
    cfg: &RunConfig,
    record: &PulseRecord,
    eval_stepper: Stepper,
    steps: Option<(usize, usize)>,
) -> Result<f64> {
    let problem = GateProblem::build(cfg)?;
    let pulse = record.to_pulse();
    let steps = steps.unwrap_or_else(|| problem.steps_for(&pulse));
    let (result, _, _) = problem.evaluate(&pulse, eval_stepper, steps, false)?;
    Ok(result.fidelity)
}

/// Dispatch on the configured job.
pub fn run_job(cfg: &RunConfig, config_hash: &str, out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    for w in &cfg.warnings {
        append_log(out, &format!("warning: {w}"));
        eprintln!("warning: {w}");
    }
    match cfg.job {
        Job::Spectrum => run_spectrum(cfg, config_hash, out),
        Job::Gate => run_gate(cfg, config_hash, out),
        Job::Optimize => run_optimize(cfg, config_hash, out),
    }
}

/// Identity of a run: SHA-256 over the raw config text and the seed.
pub fn config_hash(config_text: &str, seed: u64) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    hasher.update(b"\0seed=");
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
