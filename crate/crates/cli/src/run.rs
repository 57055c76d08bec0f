//! Subcommands and their artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ospde_core::capacity::{capacity_estimate, halving_schedule, ConstraintMethod};
use ospde_core::coefficients::validate_assumptions;
use ospde_core::convergence::{strong_convergence, Reference};
use ospde_core::montecarlo::run_paths;
use ospde_core::noise::check_sup_condition;
use ospde_core::stepper::{check_oracle_class, Boundary, OracleSpectrum};
use ospde_core::verify::{
    comparison_check, energy_estimate_check, ito_balance_check, maximum_principle_check, skorohod_check, test_family,
    weak_residual_check, CheckEntry, GridMetadata,
};
use ospde_core::{solve, SpdeProblem, Status, VerificationReport};
use serde::Serialize;
use serde_json::json;

use crate::build::{region_indicator, shift_f, shift_obstacle, shift_xi, ProblemBuilder};
use crate::config::{CheckName, ExperimentConfig, Method, ReferenceKind, SpectrumKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Verify,
    Capacity,
    Convergence,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Verify => "verify",
            Subcommand::Capacity => "capacity",
            Subcommand::Convergence => "convergence",
        }
    }
}

/// Result of a completed run: whether every check passed, and a summary
/// for the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
}

/// Runs `cmd` and writes its artifacts and the manifest into `out`.
pub fn execute(cfg: &ExperimentConfig, cmd: Subcommand, out: &Path) -> Result<Outcome> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write(out, "manifest.toml", &cfg.to_manifest(cmd.name()))?;
    let builder = ProblemBuilder::new(cfg)?;
    match cmd {
        Subcommand::Simulate => simulate(&builder, out),
        Subcommand::Verify => verify(&builder, out),
        Subcommand::Capacity => capacity(&builder, out),
        Subcommand::Convergence => convergence(&builder, out),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, &text)
}

/// Optional values print as empty CSV cells. `Display` for `f64` is the
/// shortest representation that parses back to the same bits.
fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn simulate(b: &ProblemBuilder, out: &Path) -> Result<Outcome> {
    let cfg = b.config();
    let problem = b.base()?;
    let scheme = b.scheme();
    let grid = &problem.grid;
    let per_path = run_paths(cfg.run.paths, cfg.run.parallel, |p| {
        let (path, nu) = solve(&problem, scheme, p)?;
        let mut csv = String::from(if grid.dim() == 1 { "k,t,node,x,u,nu_mass\n" } else { "k,t,node,x,y,u,nu_mass\n" });
        for (k, (u, m)) in path.levels.iter().zip(&nu.masses).enumerate() {
            let t = problem.time.time(k);
            for node in 0..grid.node_count() {
                let x = grid.point(node);
                let _ = write!(csv, "{k},{t},{node}");
                for c in x {
                    let _ = write!(csv, ",{c}");
                }
                let _ = writeln!(csv, ",{},{}", u.values()[node], m.values()[node]);
            }
        }
        let summary = json!({
            "path": p,
            "total_mass": nu.total_mass(),
            "final_sup": path.final_level().sup_norm(),
        });
        Ok((csv, summary))
    })?;
    let mut summaries = Vec::with_capacity(per_path.len());
    for (p, (csv, s)) in per_path.into_iter().enumerate() {
        write(out, &format!("trajectory_path{p}.csv"), &csv)?;
        summaries.push(s);
    }
    let report = json!({
        "subcommand": "simulate",
        "scheme": scheme,
        "grid": GridMetadata::of(&problem),
        "assumptions": validate_assumptions(&problem),
        "noise": {
            "kernel": problem.noise.kernel_name(),
            "truncation": problem.noise.truncation(),
            "discarded_mass": problem.noise.discarded_mass(),
            "sup_condition": check_sup_condition(&problem.noise),
        },
        "paths": summaries,
    });
    write_json(out, "report.json", &report)?;
    Ok(Outcome { pass: true, summary: format!("simulated {} paths with {}", cfg.run.paths, scheme.label()) })
}

/// The second problem of the comparison check.
pub fn comparison_partner(p: &SpdeProblem, cfg: &ExperimentConfig) -> SpdeProblem {
    let v = &cfg.verify;
    shift_f(&shift_obstacle(&shift_xi(p, v.xi_shift), v.obstacle_shift), v.f_shift)
}

/// Every check listed in the configuration, in listed order.
pub fn verification_report(b: &ProblemBuilder) -> Result<VerificationReport> {
    let cfg = b.config();
    let v = &cfg.verify;
    let (paths, parallel) = (cfg.run.paths, cfg.run.parallel);
    let problem = b.base()?;
    let scheme = b.scheme();
    let mut report = VerificationReport::new(GridMetadata::of(&problem));
    for check in &v.checks {
        let entry = match check {
            CheckName::Weak => weak_entry(&problem, scheme, cfg)?,
            CheckName::Energy => energy_estimate_check(&problem, &b.refined()?, scheme, paths, parallel, v.energy_tolerance)?,
            CheckName::Ito => match problem.boundary {
                Boundary::Zero => ito_balance_check(&problem, scheme, paths, parallel, v.ito_tolerance)?,
                Boundary::Ito(_) => CheckEntry::disabled("ito_balance", "the balance is checked under the null boundary condition"),
            },
            CheckName::Comparison => {
                let partner = comparison_partner(&problem, cfg);
                comparison_check(&problem, &partner, scheme, paths, parallel)?.entry
            }
            CheckName::Skorohod => skorohod_check(&problem, scheme, paths, parallel, v.skorohod_tolerance)?,
            CheckName::MaximumPrinciple => {
                let enlarged = [shift_xi(&problem, v.mp_xi_enlarge), shift_f(&problem, v.mp_f_enlarge)];
                let refined = b.refined()?;
                maximum_principle_check(&problem, &enlarged, Some(&refined), scheme, v.mp_p, v.mp_theta, paths, parallel, v.mp_tolerance)?
            }
        };
        report.push(entry);
    }
    Ok(report)
}

fn weak_entry(problem: &SpdeProblem, scheme: ospde_core::Scheme, cfg: &ExperimentConfig) -> Result<CheckEntry> {
    let v = &cfg.verify;
    let tests = test_family(problem.grid.dim(), cfg.seed());
    let horizon = problem.time.horizon();
    let times: Vec<f64> = (1..=v.weak_times).map(|i| horizon * i as f64 / v.weak_times as f64).collect();
    let res = run_paths(cfg.run.paths, cfg.run.parallel, |p| {
        let (path, nu) = solve(problem, scheme, p)?;
        Ok(weak_residual_check(&path, &nu, problem, &tests, &times)?.max_relative)
    })?;
    let worst = res.iter().copied().fold(0.0, f64::max);
    let status = if worst <= v.weak_tolerance { Status::Pass } else { Status::Fail };
    Ok(CheckEntry::from_samples("weak_residual", status, res)
        .with("max_relative", worst)
        .with_note(format!("tolerance {}", v.weak_tolerance)))
}

fn verify(b: &ProblemBuilder, out: &Path) -> Result<Outcome> {
    let report = verification_report(b)?;
    let mut csv = String::from("check,path,residual\n");
    for c in &report.checks {
        for (p, r) in c.samples.iter().enumerate() {
            let _ = writeln!(csv, "{},{p},{r}", c.name);
        }
    }
    write(out, "residuals.csv", &csv)?;
    write_json(out, "report.json", &json!({ "subcommand": "verify", "scheme": b.scheme(), "report": report }))?;
    let mut summary = String::new();
    for c in &report.checks {
        let _ = writeln!(summary, "{:<20} {:?} {}", c.name, c.status, c.note);
    }
    let failed = report.failed();
    if !failed.is_empty() {
        let _ = writeln!(summary, "failed: {}", failed.join(", "));
    }
    Ok(Outcome { pass: report.all_pass(), summary })
}

fn capacity(b: &ProblemBuilder, out: &Path) -> Result<Outcome> {
    let cfg = b.config();
    let c = &cfg.capacity;
    if c.t2 >= cfg.grid.horizon {
        anyhow::bail!("capacity.t2 = {} must lie before grid.horizon = {}", c.t2, cfg.grid.horizon);
    }
    let method = match c.method {
        Method::Penalized => ConstraintMethod::Penalized { n: c.penalty },
        _ => ConstraintMethod::Projected,
    };
    let schedule = halving_schedule(c.levels, c.base_cells, c.base_steps, method);
    let region = region_indicator(&c.region)?;
    let est = capacity_estimate(c.t1, c.t2, &region, &cfg.grid.extents, cfg.grid.horizon, b.coefficient(), &schedule)?;
    let mut csv = String::from("level,nodes_per_axis,dt,penalty,mass,indicator\n");
    for l in &est.levels {
        let _ = writeln!(csv, "{},{},{},{},{},{}", l.level, l.nodes_per_axis, l.dt, l.penalty, l.mass, cell(l.indicator));
    }
    write(out, "capacity.csv", &csv)?;
    let pass = match c.expected {
        None => true,
        Some(e) => (est.value - e).abs() <= c.tolerance * e.abs() && est.monotone,
    };
    write_json(out, "report.json", &json!({
        "subcommand": "capacity",
        "estimate": est,
        "expected": c.expected,
        "tolerance": c.tolerance,
        "pass": pass,
    }))?;
    let summary = format!(
        "capacity {} at the finest level (extrapolated {}), indicators monotone: {}",
        est.value,
        cell(est.extrapolated),
        est.monotone
    );
    Ok(Outcome { pass, summary })
}

fn convergence(b: &ProblemBuilder, out: &Path) -> Result<Outcome> {
    let cfg = b.config();
    let c = &cfg.convergence;
    let base = b.base()?;
    let spectrum = match c.spectrum {
        SpectrumKind::Continuum => OracleSpectrum::Continuum,
        SpectrumKind::Discrete => OracleSpectrum::Discrete,
    };
    let oracle = Reference::Oracle { modes: c.oracle_modes, spectrum };
    let (reference, note) = match c.reference {
        ReferenceKind::Oracle => (oracle, String::new()),
        ReferenceKind::Fine => (Reference::Fine, String::new()),
        ReferenceKind::Auto => match check_oracle_class(&base, c.oracle_modes) {
            Ok(()) => (oracle, String::new()),
            Err(e) => (Reference::Fine, format!("self-convergence: {e}")),
        },
    };
    let build = |steps: usize, substeps: u32| b.problem(&cfg.grid.nodes, steps, substeps).map_err(core_error);
    let study = strong_convergence(
        &build,
        cfg.grid.horizon,
        &c.dts,
        c.refinement,
        reference,
        b.scheme(),
        cfg.run.paths,
        cfg.run.parallel,
    )?;
    let mut csv = String::from("dt,steps,substeps,rms_error\n");
    for l in &study.levels {
        let _ = writeln!(csv, "{},{},{},{}", l.dt, l.steps, l.substeps, l.rms_error);
    }
    write(out, "convergence.csv", &csv)?;
    let pass = study.order >= c.min_order;
    write_json(out, "report.json", &json!({
        "subcommand": "convergence",
        "study": study,
        "min_order": c.min_order,
        "note": note,
        "pass": pass,
    }))?;
    Ok(Outcome { pass, summary: format!("fitted strong order {} (minimum {})", study.order, c.min_order) })
}

fn core_error(e: anyhow::Error) -> ospde_core::Error {
    match e.downcast::<ospde_core::Error>() {
        Ok(e) => e,
        Err(e) => ospde_core::Error::InvalidProblem(format!("{e:#}")),
    }
}
