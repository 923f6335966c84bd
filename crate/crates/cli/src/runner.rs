//! Command execution and artifact writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use sdot_core::cost::CenterSet;
use sdot_core::error::{Error, Result};
use sdot_core::optimizer::{maximize_dual, maximize_hedonic, SolveReport};
use sdot_core::oracle::{asymptotic_sweep, gap, GapReport};
use sdot_core::partition::{
    assign, balance, make_plan, plan_cost_ground, plan_cost_semidiscrete, Partition, Side,
    TransportPlan,
};
use sdot_core::refine::{refine_loop, RefineTrajectory, StopReason};

use crate::config::{FigureSide, RunConfig};
use crate::render::{palette, render_cells};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Solve,
    Refine,
    Hedonic,
    Exact,
    Asymptotics,
    Render,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::Solve => "solve",
            CommandKind::Refine => "refine",
            CommandKind::Hedonic => "hedonic",
            CommandKind::Exact => "exact",
            CommandKind::Asymptotics => "asymptotics",
            CommandKind::Render => "render",
        }
    }
}

#[derive(Serialize)]
struct Report {
    command: &'static str,
    dual_value: f64,
    grad_sup_norm: f64,
    iterations: usize,
    converged: bool,
    balance_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_cost_semidiscrete: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_cost_ground: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stopped_reason: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<GapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    disagreement_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_mass_source: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_mass_target: Option<f64>,
    m: usize,
    n_source: usize,
    n_target: usize,
    seed: u64,
}

#[derive(Serialize)]
struct TrajectoryDoc {
    values: Vec<f64>,
    prices: Vec<Vec<f64>>,
    centers: Vec<Vec<Vec<f64>>>,
    stopped_reason: &'static str,
}

#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    config_sha256: String,
    seed: u64,
    versions: Versions,
}

#[derive(Serialize)]
struct Versions {
    sdot_core: &'static str,
    sdot_cli: &'static str,
}

fn stop_reason_name(reason: StopReason) -> &'static str {
    match reason {
        StopReason::Saturated => "saturated",
        StopReason::MaxRounds => "max_rounds",
        StopReason::CellDeath => "cell_death",
    }
}

/// Executes one command, writing all artifacts into `config.out`.
pub fn execute(kind: CommandKind, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(&config.out)
        .map_err(|e| Error::Validation(format!("cannot create {}: {}", config.out.display(), e)))?;
    write_manifest(kind, config)?;
    match kind {
        CommandKind::Solve | CommandKind::Render => run_transport(kind, config, false),
        CommandKind::Refine => run_transport(kind, config, true),
        CommandKind::Hedonic => run_hedonic(config),
        CommandKind::Exact => run_exact(config),
        CommandKind::Asymptotics => run_asymptotics(config),
    }
}

fn run_transport(kind: CommandKind, config: &RunConfig, refine: bool) -> Result<()> {
    let mu = config.load_source()?;
    let nu = config.load_target(&mu)?;
    let z0 = config.build_centers(&mu, &nu)?;
    let spec = config.cost.resolve()?;
    let solve_opts = config.solve.resolve(&mu, &nu, &z0, &spec)?;

    let (z, report, trajectory): (CenterSet, SolveReport, Option<RefineTrajectory>) = if refine {
        let traj = refine_loop(&mu, &nu, &z0, &spec, &config.refine.resolve(), &solve_opts)?;
        let z = traj.center_history.last().unwrap().clone();
        let mut warm = solve_opts.clone();
        warm.warm_start = Some(traj.p_history.last().unwrap().clone());
        let report = maximize_dual(&mu, &nu, &z, &spec, &warm)?;
        (z, report, Some(traj))
    } else {
        let report = maximize_dual(&mu, &nu, &z0, &spec, &solve_opts)?;
        (z0, report, None)
    };

    let pa = assign(&report.p_star, &mu, &z, &spec, Side::Source, config.assign_tie_tol)?;
    let pb = assign(&report.p_star, &nu, &z, &spec, Side::Target, config.assign_tie_tol)?;
    let (pa, pb, residual) = balance(pa, pb, &mu, &nu)?;
    // A converged solve certifies the leftover imbalance is at the atom
    // granularity floor, so couple proportionally and report it; an
    // unconverged one fails loudly through the imbalance check.
    let plan_tol = if report.converged {
        config.plan_tol.max(2.0 * residual)
    } else {
        config.plan_tol
    };
    let plan = make_plan(&pa, &pb, &mu, &nu, plan_tol)?;

    let gap_report = if config.oracle.enabled {
        Some(gap(&mu, &nu, &z, &spec, &solve_opts)?)
    } else {
        None
    };

    let figures_only = kind == CommandKind::Render;
    // Pushforward targets are index-paired with the source, so the target
    // partition pulls back through that pairing (the map's inverse); for
    // unrelated clouds the plan's heaviest entry does the matching.
    let index_paired = matches!(config.target, Some(crate::config::MeasureConfig::Pushforward { .. }));
    let pullback = if index_paired {
        pb.labels.iter().map(|&l| Some(l)).collect::<Vec<_>>()
    } else {
        pullback_labels(&plan, &pb, mu.len())
    };
    let disagreement = disagreement_fraction(&pa, &pullback);

    if !figures_only {
        write_partition_csv(&config.out.join("partition_source.csv"), &pa, mu.len())?;
        write_partition_csv(&config.out.join("partition_target.csv"), &pb, nu.len())?;
        write_plan_csv(&config.out.join("plan.csv"), &plan)?;
        if let Some(traj) = &trajectory {
            write_json(&config.out.join("trajectory.json"), &trajectory_doc(traj))?;
        }
        let report_doc = Report {
            command: kind.name(),
            dual_value: report.value,
            grad_sup_norm: report.grad_sup_norm,
            iterations: report.iterations,
            converged: report.converged,
            balance_residual: residual,
            plan_cost_semidiscrete: Some(plan_cost_semidiscrete(&plan, &mu, &nu, &z, &spec)),
            plan_cost_ground: Some(plan_cost_ground(&plan, &mu, &nu, &spec)),
            rounds: trajectory.as_ref().map(|t| t.value_history.len()),
            stopped_reason: trajectory.as_ref().map(|t| stop_reason_name(t.stopped_reason)),
            gap: gap_report,
            disagreement_fraction: Some(disagreement),
            null_mass_source: None,
            null_mass_target: None,
            m: z.m(),
            n_source: mu.len(),
            n_target: nu.len(),
            seed: config.seed,
        };
        write_json(&config.out.join("report.json"), &report_doc)?;
    }

    if !config.figure.sides.is_empty() || config.figure.pullback || figures_only {
        let colors = palette(z.m(), config.figure.palette_seed);
        let sides: &[FigureSide] = if figures_only && config.figure.sides.is_empty() {
            &[FigureSide::Source, FigureSide::Target]
        } else {
            &config.figure.sides
        };
        for side in sides {
            match side {
                FigureSide::Source => {
                    let svg = render_cells(mu.points(), &pa.labels, &z, &colors)?;
                    write_text(&config.out.join("figure_source.svg"), &svg)?;
                }
                FigureSide::Target => {
                    let svg = render_cells(nu.points(), &pb.labels, &z, &colors)?;
                    write_text(&config.out.join("figure_target.svg"), &svg)?;
                }
            }
        }
        if config.figure.pullback || figures_only {
            let labels: Vec<usize> = pullback
                .iter()
                .map(|lbl| lbl.unwrap_or(z.m())) // unmatched atoms draw gray
                .collect();
            let svg = render_cells(mu.points(), &labels, &z, &colors)?;
            write_text(&config.out.join("figure_pullback.svg"), &svg)?;
        }
    }
    Ok(())
}

fn run_hedonic(config: &RunConfig) -> Result<()> {
    let mu = config.load_source()?;
    let nu = config.load_target(&mu)?;
    let z = config.build_centers(&mu, &nu)?;
    let spec1 = config.cost.resolve()?;
    let spec2 = match &config.cost2 {
        Some(c) => c.resolve()?,
        None => spec1,
    };
    let solve_opts = config.solve.resolve(&mu, &nu, &z, &spec1)?;
    let report = maximize_hedonic(&mu, &nu, &z, &spec1, &spec2, &solve_opts)?;

    let pa = assign(&report.p_star, &mu, &z, &spec1, Side::HedonicSource, config.assign_tie_tol)?;
    let pb = assign(&report.p_star, &nu, &z, &spec2, Side::HedonicTarget, config.assign_tie_tol)?;
    let (pa, pb, residual) = balance(pa, pb, &mu, &nu)?;
    let plan_tol = if report.converged {
        config.plan_tol.max(2.0 * residual)
    } else {
        config.plan_tol
    };
    let plan = make_plan(&pa, &pb, &mu, &nu, plan_tol)?;

    write_partition_csv(&config.out.join("partition_source.csv"), &pa, mu.len())?;
    write_partition_csv(&config.out.join("partition_target.csv"), &pb, nu.len())?;
    write_plan_csv(&config.out.join("plan.csv"), &plan)?;
    let report_doc = Report {
        command: "hedonic",
        dual_value: report.value,
        grad_sup_norm: report.grad_sup_norm,
        iterations: report.iterations,
        converged: report.converged,
        balance_residual: residual,
        plan_cost_semidiscrete: None,
        plan_cost_ground: None,
        rounds: None,
        stopped_reason: None,
        gap: None,
        disagreement_fraction: None,
        null_mass_source: Some(pa.cell_masses[pa.m()]),
        null_mass_target: Some(pb.cell_masses[pb.m()]),
        m: z.m(),
        n_source: mu.len(),
        n_target: nu.len(),
        seed: config.seed,
    };
    write_json(&config.out.join("report.json"), &report_doc)?;

    if !config.figure.sides.is_empty() {
        let colors = palette(z.m(), config.figure.palette_seed);
        for side in &config.figure.sides {
            match side {
                FigureSide::Source => {
                    let svg = render_cells(mu.points(), &pa.labels, &z, &colors)?;
                    write_text(&config.out.join("figure_source.svg"), &svg)?;
                }
                FigureSide::Target => {
                    let svg = render_cells(nu.points(), &pb.labels, &z, &colors)?;
                    write_text(&config.out.join("figure_target.svg"), &svg)?;
                }
            }
        }
    }
    Ok(())
}

fn run_exact(config: &RunConfig) -> Result<()> {
    let mu = config.load_source()?;
    let nu = config.load_target(&mu)?;
    let z = config.build_centers(&mu, &nu)?;
    let spec = config.cost.resolve()?;
    let solve_opts = config.solve.resolve(&mu, &nu, &z, &spec)?;
    let report = gap(&mu, &nu, &z, &spec, &solve_opts)?;
    write_json(&config.out.join("gap.json"), &report)
}

fn run_asymptotics(config: &RunConfig) -> Result<()> {
    let mu = config.load_source()?;
    let nu = config.load_target(&mu)?;
    let spec = config.cost.resolve()?;
    let a = &config.asymptotics;
    let sweep = asymptotic_sweep(&mu, &nu, &spec, &a.m_list, a.rounds, &a.seeds)?;

    let mut csv = String::from("m,gap,slope_running\n");
    for (i, point) in sweep.points.iter().enumerate() {
        let running = if i >= 1 {
            format!("{}", sdot_core::oracle::log_log_slope(&sweep.points[..=i]))
        } else {
            String::new()
        };
        csv.push_str(&format!("{},{},{}\n", point.m, point.gap, running));
    }
    write_text(&config.out.join("sweep.csv"), &csv)?;
    write_json(&config.out.join("sweep.json"), &sweep)
}

/// For each source atom, the cell of the target atom receiving its largest
/// plan mass; `None` when the atom has no entry.
pub fn pullback_labels(
    plan: &TransportPlan,
    part_b: &Partition,
    n_source: usize,
) -> Vec<Option<usize>> {
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n_source];
    for e in &plan.entries {
        let replace = match best[e.source] {
            None => true,
            Some((mass, _)) => e.mass > mass,
        };
        if replace {
            best[e.source] = Some((e.mass, e.target));
        }
    }
    best.iter()
        .map(|slot| slot.map(|(_, target)| part_b.labels[target]))
        .collect()
}

/// Fraction of source atoms whose pulled-back cell differs from their own.
pub fn disagreement_fraction(part_a: &Partition, pullback: &[Option<usize>]) -> f64 {
    let disagree = part_a
        .labels
        .iter()
        .zip(pullback)
        .filter(|(own, pulled)| pulled.is_none_or(|p| p != **own))
        .count();
    disagree as f64 / part_a.labels.len() as f64
}

fn write_manifest(kind: CommandKind, config: &RunConfig) -> Result<()> {
    // The hash identifies the run inputs; where the artifacts land does
    // not belong in it, so reruns into different directories match.
    let mut keyed = config.clone();
    keyed.out = PathBuf::new();
    let canonical = serde_json::to_string(&keyed)
        .map_err(|e| Error::Parse(format!("config serialization failed: {}", e)))?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let manifest = Manifest {
        command: kind.name(),
        config_sha256: format!("{:x}", hasher.finalize()),
        seed: config.seed,
        versions: Versions {
            sdot_core: env!("CARGO_PKG_VERSION"),
            sdot_cli: env!("CARGO_PKG_VERSION"),
        },
    };
    write_json(&config.out.join("manifest.json"), &manifest)
}

fn write_partition_csv(path: &Path, part: &Partition, n_atoms: usize) -> Result<()> {
    let mut text = String::from("atom_index,cell_index,fraction\n");
    for atom in 0..n_atoms {
        for (cell, fraction) in part.atom_fractions(atom) {
            text.push_str(&format!("{},{},{}\n", atom, cell, fraction));
        }
    }
    write_text(path, &text)
}

fn write_plan_csv(path: &Path, plan: &TransportPlan) -> Result<()> {
    let mut text = String::from("source_index,target_index,mass,cell_index\n");
    for e in &plan.entries {
        text.push_str(&format!("{},{},{},{}\n", e.source, e.target, e.mass, e.cell));
    }
    write_text(path, &text)
}

fn trajectory_doc(traj: &RefineTrajectory) -> TrajectoryDoc {
    TrajectoryDoc {
        values: traj.value_history.clone(),
        prices: traj.p_history.iter().map(|p| p.values().to_vec()).collect(),
        centers: traj
            .center_history
            .iter()
            .map(|z| z.centers().iter().map(|c| c.coords().to_vec()).collect())
            .collect(),
        stopped_reason: stop_reason_name(traj.stopped_reason),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse(format!("serialization failed: {}", e)))?;
    write_text(path, &(text + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut file = fs::File::create(path)
        .map_err(|e| Error::Validation(format!("cannot create {}: {}", path.display(), e)))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::Validation(format!("cannot write {}: {}", path.display(), e)))?;
    Ok(())
}

/// Resolved output locations, useful for tests.
pub fn artifact_path(config: &RunConfig, name: &str) -> PathBuf {
    config.out.join(name)
}
