use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use llg_core::integrators::{integrate_controlled, sample_brownian, simulate_sde};
use llg_core::lie::{bracket_generating_report, quadratic_invariants};
use llg_core::pde::{compare_galerkin_pde, tail_growth_experiment, GridState, PdeConfig};
use llg_core::schedule::fmt17;
use llg_core::steering::{synthesize_steering, INVARIANT_CHECK_MAX_ORDER};
use llg_core::stochastic::{
    estimate_small_ball, perturbation_grid, support_theorem_sweep, write_paths_csv, SmallBallConfig,
};
use llg_core::{
    project_to_modes, ControlSchedule, GalerkinModel, LlgParams, ModeState, PhysicalField,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::Command;

pub enum Status {
    Done,
    NotConverged,
}

/// Where the JSON summary and its CSV companions go.
pub struct Output {
    json: Option<PathBuf>,
    stem: PathBuf,
}

impl Output {
    pub fn new(json: Option<PathBuf>, command: &str) -> Self {
        let stem = match &json {
            Some(p) => p.with_extension(""),
            None => PathBuf::from(command),
        };
        Self { json, stem }
    }

    fn csv_path(&self, kind: &str) -> PathBuf {
        let mut name = self.stem.as_os_str().to_owned();
        name.push(format!(".{kind}.csv"));
        PathBuf::from(name)
    }

    fn csv(&self, kind: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.csv_path(kind);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok((path, BufWriter::new(file)))
    }

    fn summary(&self, value: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        match &self.json {
            Some(p) => {
                std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))
            }
            None => {
                let mut out = std::io::stdout().lock();
                writeln!(out, "{text}")?;
                Ok(())
            }
        }
    }
}

fn summary(
    command: &str,
    config: &ExperimentConfig,
    result: impl Serialize,
    files: &[PathBuf],
) -> Result<Value> {
    Ok(json!({
        "command": command,
        "config": config,
        "seed": config.seed,
        "result": serde_json::to_value(result)?,
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }))
}

pub fn run(command: &Command, config: &ExperimentConfig, out: &Output) -> Result<Status> {
    match command {
        Command::Simulate { schedule, sigma } => simulate(config, schedule.as_deref(), *sigma, out),
        Command::Rank { .. } => rank(config, out),
        Command::Steer { .. } => steer(config, out),
        Command::Support { shift, .. } => support(config, shift.as_deref(), out),
        Command::PdeCompare { orders, .. } => pde_compare(config, orders, out),
        Command::Tail { .. } => tail(config, out),
    }
}

/// A bare schedule, or the `result.schedule` of a steer summary together
/// with its endpoints.
struct ScheduleFile {
    schedule: ControlSchedule,
    m0: Option<Vec<f64>>,
    m1: Option<Vec<f64>>,
}

fn read_schedule(path: &Path) -> Result<ScheduleFile> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let coeffs = |key: &str| -> Option<Vec<f64>> {
        serde_json::from_value(value.get(key)?.get("coeffs")?.clone()).ok()
    };
    let (schedule, m0, m1) = match value.get("result").and_then(|r| r.get("schedule")) {
        Some(s) => (
            serde_json::from_value(s.clone())?,
            coeffs("m0"),
            coeffs("m1"),
        ),
        None => (serde_json::from_value(value.clone())?, None, None),
    };
    Ok(ScheduleFile { schedule, m0, m1 })
}

fn simulate(
    config: &ExperimentConfig,
    schedule: Option<&Path>,
    sigma: Option<f64>,
    out: &Output,
) -> Result<Status> {
    let model = GalerkinModel::new(config.params()?)?;
    let m0 = config.initial()?;
    let traj = match sigma {
        Some(s) => {
            if !(s > 0.0) {
                bail!("--sigma {s} must be positive");
            }
            let path = sample_brownian(model.modes(), config.horizon, config.dt, config.seed)?;
            simulate_sde(&model, &m0, &path, s, config.support.scheme, true)?
        }
        None => {
            let sched = match schedule {
                Some(p) => read_schedule(p)?.schedule,
                None => ControlSchedule::zeros(model.modes(), config.horizon, 1)?,
            };
            if (sched.horizon - config.horizon).abs() > 1e-12 * config.horizon {
                bail!(
                    "schedule covers [0, {}] but T = {}",
                    sched.horizon,
                    config.horizon
                );
            }
            integrate_controlled(&model, &sched, &m0, config.dt, true)?
        }
    };
    let (path, w) = out.csv("trajectory")?;
    traj.write_csv(w)?;
    let result = json!({
        "norm_drift": traj.norm_drift,
        "steps": traj.times.len() - 1,
        "final_time": traj.final_time(),
        "initial_state": m0,
        "final_state": traj.final_state(),
        "noise_scale": sigma,
    });
    out.summary(&summary("simulate", config, result, &[path])?)?;
    Ok(Status::Done)
}

fn rank(config: &ExperimentConfig, out: &Output) -> Result<Status> {
    let params = config.params()?;
    let report = bracket_generating_report(
        params.order,
        &params.control_modes,
        config.rank.samples,
        config.seed,
    )?;
    let (path, w) = out.csv("ranks")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["sample", "rank", "orthogonal"])?;
    for (i, (r, o)) in report.ranks.iter().zip(&report.orthogonal).enumerate() {
        csv.write_record([i.to_string(), r.to_string(), o.to_string()])?;
    }
    csv.flush()?;
    out.summary(&summary("rank", config, &report, &[path])?)?;
    Ok(Status::Done)
}

fn steer(config: &ExperimentConfig, out: &Output) -> Result<Status> {
    let model = GalerkinModel::new(config.params()?)?;
    let (m0, m1) = (config.initial()?, config.target()?);
    let result = synthesize_steering(
        &model,
        &m0,
        &m1,
        config.horizon,
        config.dt,
        &config.steering,
        config.seed,
    )?;
    let (sched_path, w) = out.csv("schedule")?;
    result.schedule.write_csv(w)?;
    let (hist_path, w) = out.csv("history")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["iteration", "residual_sq"])?;
    for (i, r) in result.history.iter().enumerate() {
        csv.write_record([i.to_string(), fmt17(*r)])?;
    }
    csv.flush()?;
    let mut value = summary("steer", config, &result, &[sched_path, hist_path])?;
    value["m0"] = serde_json::to_value(&m0)?;
    value["m1"] = serde_json::to_value(&m1)?;
    out.summary(&value)?;
    Ok(if result.converged {
        Status::Done
    } else {
        Status::NotConverged
    })
}

fn support(config: &ExperimentConfig, shift: Option<&Path>, out: &Output) -> Result<Status> {
    let params = config.params()?;
    let model = GalerkinModel::new(params.clone())?;
    let s = &config.support;
    let cfg = SmallBallConfig {
        eps: s.eps,
        horizon: config.horizon,
        paths: s.paths,
        dt: config.dt,
        seed: config.seed,
        noise_scale: s.sigma,
        scheme: s.scheme,
    };
    if let Some(p) = shift {
        let file = read_schedule(p)?;
        let pick = |own: &Option<Vec<f64>>,
                    saved: Option<Vec<f64>>,
                    fallback: fn(&ExperimentConfig) -> Result<ModeState>| {
            match (own, saved) {
                (Some(_), _) | (None, None) => fallback(config),
                (None, Some(v)) => Ok(ModeState::from_coeffs(params.order, v)?),
            }
        };
        let m0 = pick(&config.m0, file.m0, ExperimentConfig::initial)?;
        let m1 = pick(&config.m1, file.m1, ExperimentConfig::target)?;
        let (estimate, records) =
            estimate_small_ball(&model, &m0, &m1, &cfg, Some(&file.schedule))?;
        let (path, w) = out.csv("paths")?;
        write_paths_csv(&records, w)?;
        let mut value = summary("support", config, &estimate, &[path])?;
        value["m0"] = serde_json::to_value(&m0)?;
        value["m1"] = serde_json::to_value(&m1)?;
        out.summary(&value)?;
        return Ok(Status::Done);
    }

    let (m0, m1) = (config.initial()?, config.target()?);
    let invariants = if params.order <= INVARIANT_CHECK_MAX_ORDER {
        quadratic_invariants(model.fields(), Some(&model), 0, config.seed)?
    } else {
        Vec::new()
    };
    let grid = perturbation_grid(&m0, s.radius, s.points, &invariants, config.seed)?;
    let steering = s.steer.then_some((&config.steering, s.steer_dt));
    let report = support_theorem_sweep(&model, &m0, &m1, &grid, s.radius, &cfg, steering)?;
    let (path, w) = out.csv("grid")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "point",
        "distance",
        "hits",
        "p_hat",
        "ci_low",
        "ci_high",
        "log_ci_low",
        "steering_residual",
    ])?;
    for (i, p) in report.points.iter().enumerate() {
        let e = &p.estimate;
        csv.write_record([
            i.to_string(),
            fmt17(p.distance),
            e.hits.to_string(),
            fmt17(e.p_hat),
            fmt17(e.ci_low),
            fmt17(e.ci_high),
            fmt17(e.log_ci_low),
            p.steering
                .as_ref()
                .map(|r| fmt17(r.residual))
                .unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    let mut value = summary("support", config, &report, &[path])?;
    value["m0"] = serde_json::to_value(&m0)?;
    value["m1"] = serde_json::to_value(&m1)?;
    out.summary(&value)?;
    Ok(Status::Done)
}

/// `m0` when given, otherwise the saturated field `(sin θ, 0, cos θ)` with
/// `θ = tilt·cos x` projected onto `order` modes.
fn smooth_initial(config: &ExperimentConfig, order: usize) -> Result<ModeState> {
    if let Some(v) = &config.m0 {
        let m = ModeState::from_coeffs(config.order()?, v.clone())?;
        return Ok(m.resized(order.max(m.order())));
    }
    let tilt = config.pde.tilt;
    let field = PhysicalField::from_fn(8 * order + 64, |x| {
        let th = tilt * x.cos();
        [th.sin(), 0.0, th.cos()]
    });
    Ok(project_to_modes(&field, order)?)
}

fn pde_config(config: &ExperimentConfig) -> PdeConfig {
    PdeConfig {
        nx: config.pde.nx,
        dt: config.pde.dt,
        renormalize: config.pde.renormalize,
        richardson: config.pde.richardson,
    }
}

fn pde_compare(config: &ExperimentConfig, orders: &[usize], out: &Output) -> Result<Status> {
    let params = config.params()?;
    let orders = if orders.is_empty() {
        vec![params.order]
    } else {
        orders.to_vec()
    };
    let top = orders
        .iter()
        .copied()
        .max()
        .unwrap_or(params.order)
        .max(config.pde.reference_order);
    let m0 = smooth_initial(config, top)?;
    let pde = pde_config(config);
    let reports = orders
        .iter()
        .map(|&k| {
            let p = LlgParams {
                order: k,
                ..params.clone()
            };
            p.validate()?;
            let sched = ControlSchedule::zeros(&p.control_modes, config.horizon, 1)?;
            Ok(compare_galerkin_pde(
                &p,
                &m0,
                Some(&sched),
                config.horizon,
                config.dt,
                &pde,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (path, w) = out.csv("comparison")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "K",
        "discrepancy",
        "initial_discrepancy",
        "pde_tail_energy",
        "galerkin_norm_drift",
    ])?;
    for r in &reports {
        csv.write_record([
            r.order.to_string(),
            fmt17(r.discrepancy),
            fmt17(r.initial_discrepancy),
            fmt17(r.pde_tail_energy),
            fmt17(r.galerkin_norm_drift),
        ])?;
    }
    csv.flush()?;
    let monotone = reports
        .windows(2)
        .all(|w| w[1].discrepancy < w[0].discrepancy);
    let result = json!({ "comparisons": reports, "monotone": monotone });
    out.summary(&summary("pde-compare", config, result, &[path])?)?;
    Ok(Status::Done)
}

fn tail(config: &ExperimentConfig, out: &Output) -> Result<Status> {
    let params = config.params()?;
    let initial = match &config.m0 {
        Some(v) => GridState::from_modes(
            &ModeState::from_coeffs(params.order, v.clone())?,
            config.pde.nx,
        )?,
        None => {
            let tilt = config.pde.tilt;
            GridState::from_fn(config.pde.nx, |x| {
                let th = tilt * x.cos();
                [th.sin(), 0.0, th.cos()]
            })?
        }
    };
    let report = tail_growth_experiment(
        &initial,
        &params,
        config.tail.horizon,
        config.tail.samples,
        config.pde.dt,
    )
    .map_err(|e| anyhow!(e))?;
    let (path, w) = out.csv("tail")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["T1", "growth"])?;
    for (t, g) in report.times.iter().zip(&report.growth) {
        csv.write_record([fmt17(*t), fmt17(*g)])?;
    }
    csv.flush()?;
    out.summary(&summary("tail", config, &report, &[path])?)?;
    Ok(Status::Done)
}
