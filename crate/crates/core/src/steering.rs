//! Single-shooting synthesis of piecewise-constant steering controls, and
//! the truncate-steer-bound experiment for the full field.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlgError, Result};
use crate::galerkin::{GalerkinModel, LlgParams};
use crate::integrators::{integrate_controlled, propagate_segments, BLOW_UP_FACTOR};
use crate::lie::quadratic_invariants;
use crate::schedule::ControlSchedule;
use crate::spectral::{mode_weight, ModeState, AXES};

pub const DEFAULT_NORM_TOLERANCE: f64 = 1e-9;

/// Relative tolerance for conserved quadratic forms, scaled by `|m₀|²`.
pub const INVARIANT_TOLERANCE: f64 = 1e-6;

/// Conserved forms are only searched up to this truncation order.
pub const INVARIANT_CHECK_MAX_ORDER: usize = 8;

/// Objective value assigned to runs that blow up or turn non-finite.
pub const BLOW_UP_PENALTY: f64 = 1e30;

/// A restart stops early once `STALL_WINDOW` accepted iterations have
/// lowered the residual by less than this relative amount.
const STALL_DECREASE: f64 = 1e-3;
const STALL_WINDOW: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormCheck {
    pub compatible: bool,
    pub gap: f64,
}

/// Whether `m0` and `m1` lie on the same weighted sphere.
pub fn norm_compatibility_check(
    m0: &ModeState,
    m1: &ModeState,
    tolerance: f64,
) -> Result<NormCheck> {
    if m0.order() != m1.order() {
        return Err(LlgError::DimensionMismatch {
            expected: m0.dim(),
            found: m1.dim(),
        });
    }
    let gap = (m0.weighted_norm() - m1.weighted_norm()).abs();
    Ok(NormCheck {
        compatible: gap <= tolerance,
        gap,
    })
}

/// Largest `|m₁ᵀSm₁ − m₀ᵀSm₀| / |m₀|²` over an orthonormal basis of the
/// quadratic forms conserved by the drift and every control field.
///
/// The weighted norm is always among them. Returns `None` above
/// [`INVARIANT_CHECK_MAX_ORDER`].
pub fn invariant_gap(model: &GalerkinModel, m0: &ModeState, m1: &ModeState) -> Result<Option<f64>> {
    if model.order() > INVARIANT_CHECK_MAX_ORDER {
        return Ok(None);
    }
    let forms = quadratic_invariants(model.fields(), Some(model), 0, 0)?;
    let (x0, x1) = (m0.to_vector(), m1.to_vector());
    let scale = x0.norm_squared().max(f64::MIN_POSITIVE);
    Ok(Some(forms.iter().fold(0.0, |g, s| {
        g.max((x1.dot(&(s * &x1)) - x0.dot(&(s * &x0))).abs() / scale)
    })))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootingValue {
    /// `‖m(T) − m₁‖_w²`, or [`BLOW_UP_PENALTY`] when flagged.
    pub value: f64,
    pub blew_up: bool,
}

/// Endpoints, horizon and time grid of one steering problem.
pub struct ShootingProblem<'a> {
    pub model: &'a GalerkinModel,
    pub m0: &'a ModeState,
    pub m1: &'a ModeState,
    pub horizon: f64,
    pub segments: usize,
    pub dt: f64,
}

impl ShootingProblem<'_> {
    pub fn params(&self) -> usize {
        self.segments * self.model.modes().len()
    }

    pub fn schedule(&self, flat: &[f64]) -> Result<ControlSchedule> {
        ControlSchedule::from_flat(self.model.modes(), self.horizon, self.segments, flat)
    }

    /// Terminal state, or `None` on blow-up.
    pub fn terminal(&self, flat: &[f64]) -> Result<Option<ModeState>> {
        let sched = self.schedule(flat)?;
        match integrate_controlled(self.model, &sched, self.m0, self.dt, false) {
            Ok(traj) => Ok(Some(traj.final_state().clone())),
            Err(LlgError::BlowUp { .. } | LlgError::NonFinite { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn residual(&self, flat: &[f64]) -> Result<ShootingValue> {
        Ok(match self.terminal(flat)? {
            Some(m) => ShootingValue {
                value: m.sub(self.m1)?.weighted_norm().powi(2),
                blew_up: false,
            },
            None => ShootingValue {
                value: BLOW_UP_PENALTY,
                blew_up: true,
            },
        })
    }

    /// Weighted miss vector `W^{1/2}(m(T) − m₁)`, so that its squared
    /// Euclidean norm is the residual.
    fn miss(&self, flat: &[f64]) -> Result<Option<DVector<f64>>> {
        Ok(self.terminal(flat)?.map(|m| weighted_miss(&m, self.m1)))
    }

    /// States at the segment boundaries, or `None` on blow-up.
    fn boundaries(&self, flat: &[f64]) -> Result<Option<Vec<Vec<f64>>>> {
        let sched = self.schedule(flat)?;
        let mut out = vec![self.m0.as_slice().to_vec()];
        let limit = BLOW_UP_FACTOR * self.m0.weighted_norm();
        match propagate_segments(
            self.model,
            &sched,
            self.m0.as_slice(),
            0,
            self.dt,
            limit,
            |_, x, last| {
                if last {
                    out.push(x.to_vec());
                }
            },
        ) {
            Ok(_) => Ok(Some(out)),
            Err(LlgError::BlowUp { .. } | LlgError::NonFinite { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Central-difference Jacobian of the weighted miss. A perturbation of
    /// segment `s` is integrated from the unperturbed state at its left end.
    fn jacobian(&self, flat: &[f64], step: f64) -> Result<Option<DMatrix<f64>>> {
        let Some(bounds) = self.boundaries(flat)? else {
            return Ok(None);
        };
        let per = self.model.modes().len();
        let limit = BLOW_UP_FACTOR * self.m0.weighted_norm();
        let tail = |x: &[f64], seg: usize| -> Result<Option<DVector<f64>>> {
            let sched = self.schedule(x)?;
            match propagate_segments(
                self.model,
                &sched,
                &bounds[seg],
                seg,
                self.dt,
                limit,
                |_, _, _| {},
            ) {
                Ok(end) => Ok(Some(weighted_miss_slice(&end, self.m1.as_slice()))),
                Err(LlgError::BlowUp { .. } | LlgError::NonFinite { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
        let cols: Vec<Result<Option<DVector<f64>>>> = (0..flat.len())
            .into_par_iter()
            .map(|c| {
                let seg = c / per;
                let mut x = flat.to_vec();
                x[c] = flat[c] + step;
                let plus = tail(&x, seg)?;
                x[c] = flat[c] - step;
                let minus = tail(&x, seg)?;
                Ok(match (plus, minus) {
                    (Some(p), Some(m)) => Some((p - m) / (2.0 * step)),
                    _ => None,
                })
            })
            .collect();
        let n = self.m0.dim();
        let mut jac = DMatrix::zeros(n, flat.len());
        for (c, col) in cols.into_iter().enumerate() {
            match col? {
                Some(v) => jac.set_column(c, &v),
                None => return Ok(None),
            }
        }
        Ok(Some(jac))
    }
}

fn weighted_miss(m: &ModeState, target: &ModeState) -> DVector<f64> {
    weighted_miss_slice(m.as_slice(), target.as_slice())
}

fn weighted_miss_slice(m: &[f64], target: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        m.len(),
        m.iter()
            .zip(target)
            .enumerate()
            .map(|(f, (a, b))| mode_weight(f / AXES).sqrt() * (a - b)),
    )
}

/// `‖m(T) − m₁‖_w²` for the flattened schedule `flat` (segment-major).
#[allow(clippy::too_many_arguments)]
pub fn shooting_residual(
    model: &GalerkinModel,
    flat: &[f64],
    m0: &ModeState,
    m1: &ModeState,
    horizon: f64,
    segments: usize,
    dt: f64,
) -> Result<ShootingValue> {
    ShootingProblem {
        model,
        m0,
        m1,
        horizon,
        segments,
        dt,
    }
    .residual(flat)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescentMethod {
    /// Steepest descent with Barzilai–Borwein step proposals.
    Gradient,
    /// Levenberg–Marquardt damped Gauss–Newton on the terminal miss.
    #[default]
    GaussNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteeringConfig {
    pub segments: usize,
    /// Maximum optimizer iterations per restart.
    pub budget: usize,
    pub restarts: usize,
    /// Target for `‖m(T) − m₁‖_w / ‖m₁‖_w`.
    pub eps_target: f64,
    pub fd_step: f64,
    pub amplitude_bound: Option<f64>,
    /// Standard deviation of the random initial schedules.
    pub init_scale: f64,
    pub method: DescentMethod,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            segments: 8,
            budget: 2000,
            restarts: 5,
            eps_target: 1e-2,
            fd_step: 1e-6,
            amplitude_bound: None,
            init_scale: 1.0,
            method: DescentMethod::default(),
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(invalid("segments", "need at least one segment"));
        }
        if self.restarts == 0 {
            return Err(invalid("restarts", "need at least one restart"));
        }
        if !(self.eps_target > 0.0) {
            return Err(invalid(
                "eps_target",
                format!("{} must be positive", self.eps_target),
            ));
        }
        if !(self.fd_step > 0.0) {
            return Err(invalid(
                "fd_step",
                format!("{} must be positive", self.fd_step),
            ));
        }
        if let Some(b) = self.amplitude_bound {
            if !(b > 0.0) {
                return Err(invalid("amplitude_bound", format!("{b} must be positive")));
            }
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(invalid("init_scale", "must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteeringResult {
    pub schedule: ControlSchedule,
    /// `‖m(T) − m₁‖_w`.
    pub residual: f64,
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the winning restart.
    pub restart: usize,
    /// Restarts up to and including the winner.
    pub restarts_run: usize,
    pub energy: f64,
    pub blew_up: bool,
    /// Squared residual after every accepted iteration of the winner.
    pub history: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

struct Outcome {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    history: Vec<f64>,
    blew_up: bool,
    converged: bool,
}

fn clamp(x: &mut [f64], bound: Option<f64>) {
    if let Some(b) = bound {
        x.iter_mut().for_each(|v| *v = v.clamp(-b, b));
    }
}

/// One optimizer run. `first_converged` holds the lowest restart index known
/// to have converged; runs with a higher index give up once it is set.
fn run_restart(
    problem: &ShootingProblem,
    cfg: &SteeringConfig,
    index: usize,
    mut x: Vec<f64>,
    target_sq: f64,
    first_converged: &AtomicUsize,
) -> Result<Outcome> {
    clamp(&mut x, cfg.amplitude_bound);
    let first = problem.residual(&x)?;
    let mut out = Outcome {
        value: first.value,
        blew_up: first.blew_up,
        x,
        iterations: 0,
        history: vec![first.value],
        converged: false,
    };
    if first.blew_up {
        return Ok(out);
    }
    let mut lambda = 1e-3;
    let mut alpha: Option<f64> = None;
    let mut prev: Option<(Vec<f64>, DVector<f64>)> = None;
    while out.iterations < cfg.budget && out.value > target_sq {
        if first_converged.load(Ordering::Relaxed) < index {
            break;
        }
        out.iterations += 1;
        let Some(r) = problem.miss(&out.x)? else {
            break;
        };
        let Some(jac) = problem.jacobian(&out.x, cfg.fd_step)? else {
            break;
        };
        let grad = 2.0 * jac.tr_mul(&r);
        let gnorm = grad.norm();
        if !(gnorm > 0.0) {
            break;
        }
        let accepted = match cfg.method {
            DescentMethod::GaussNewton => lm_step(problem, cfg, &mut out, &jac, &r, &mut lambda)?,
            DescentMethod::Gradient => {
                let a0 = match (&prev, alpha) {
                    (Some((px, pg)), _) => bb_step(&out.x, px, &grad, pg),
                    (None, Some(a)) => Some(a),
                    (None, None) => None,
                }
                .unwrap_or(out.value.max(1e-12).sqrt() / gnorm);
                let old = out.x.clone();
                let acc = armijo_step(problem, cfg, &mut out, &grad, a0)?;
                if let Some(a) = acc {
                    alpha = Some(a);
                    prev = Some((old, grad));
                }
                acc.is_some()
            }
        };
        if !accepted {
            break;
        }
        out.history.push(out.value);
        let h = &out.history;
        if h.len() > STALL_WINDOW
            && h[h.len() - 1 - STALL_WINDOW] - out.value <= STALL_DECREASE * out.value
        {
            break;
        }
    }
    out.converged = out.value <= target_sq;
    if out.converged {
        first_converged.fetch_min(index, Ordering::Relaxed);
    }
    Ok(out)
}

fn bb_step(x: &[f64], px: &[f64], g: &DVector<f64>, pg: &DVector<f64>) -> Option<f64> {
    let s = DVector::from_iterator(x.len(), x.iter().zip(px).map(|(a, b)| a - b));
    let y = g - pg;
    let sy = s.dot(&y);
    (sy > 0.0).then(|| s.norm_squared() / sy)
}

/// Backtracking along `−grad` from step `a0`; returns the accepted step.
fn armijo_step(
    problem: &ShootingProblem,
    cfg: &SteeringConfig,
    out: &mut Outcome,
    grad: &DVector<f64>,
    a0: f64,
) -> Result<Option<f64>> {
    let g2 = grad.norm_squared();
    let mut a = a0;
    for _ in 0..40 {
        let mut trial: Vec<f64> = out
            .x
            .iter()
            .zip(grad.iter())
            .map(|(x, g)| x - a * g)
            .collect();
        clamp(&mut trial, cfg.amplitude_bound);
        let v = problem.residual(&trial)?;
        if !v.blew_up && v.value <= out.value - 1e-4 * a * g2 && v.value <= out.value {
            out.x = trial;
            out.value = v.value;
            return Ok(Some(a));
        }
        a *= 0.5;
    }
    Ok(None)
}

/// Damped Gauss–Newton step; only strict decreases are accepted.
fn lm_step(
    problem: &ShootingProblem,
    cfg: &SteeringConfig,
    out: &mut Outcome,
    jac: &DMatrix<f64>,
    r: &DVector<f64>,
    lambda: &mut f64,
) -> Result<bool> {
    let jtj = jac.tr_mul(jac);
    let jtr = jac.tr_mul(r);
    let scale = jtj.diagonal().max().max(1e-12);
    for _ in 0..30 {
        let mut lhs = jtj.clone();
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += *lambda * scale;
        }
        let Some(delta) = lhs.cholesky().map(|c| c.solve(&(-&jtr))) else {
            *lambda *= 4.0;
            continue;
        };
        let mut trial: Vec<f64> = out.x.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
        clamp(&mut trial, cfg.amplitude_bound);
        let v = problem.residual(&trial)?;
        if !v.blew_up && v.value < out.value {
            out.x = trial;
            out.value = v.value;
            *lambda = (*lambda / 3.0).max(1e-12);
            return Ok(true);
        }
        *lambda *= 4.0;
        if *lambda > 1e12 {
            break;
        }
    }
    Ok(false)
}

/// Seed of restart `index`.
fn restart_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn initial_guess(params: usize, index: usize, cfg: &SteeringConfig, seed: u64) -> Vec<f64> {
    if index == 0 {
        return vec![0.0; params];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, index));
    (0..params)
        .map(|_| cfg.init_scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Minimizes the shooting residual over `cfg.segments`-piece schedules.
///
/// Endpoints on different weighted spheres, or on different level sets of
/// another conserved quadratic form, are refused.
///
/// Restart 0 starts from the zero schedule and the others from seeded random
/// schedules; all restarts run concurrently. The winner is the converged
/// restart with the lowest index; restarts with a higher index are abandoned
/// once one converges. Without convergence the winner has the lowest
/// residual, then the lowest energy, then the lowest index.
pub fn synthesize_steering(
    model: &GalerkinModel,
    m0: &ModeState,
    m1: &ModeState,
    horizon: f64,
    dt: f64,
    cfg: &SteeringConfig,
    seed: u64,
) -> Result<SteeringResult> {
    cfg.validate()?;
    let check = norm_compatibility_check(m0, m1, DEFAULT_NORM_TOLERANCE)?;
    if !check.compatible {
        return Err(LlgError::NormIncompatible { gap: check.gap });
    }
    if m0.order() != model.order() {
        return Err(LlgError::DimensionMismatch {
            expected: model.dim(),
            found: m0.dim(),
        });
    }
    if m0 != m1 {
        if let Some(gap) = invariant_gap(model, m0, m1)? {
            if gap > INVARIANT_TOLERANCE {
                return Err(LlgError::InvariantIncompatible { gap });
            }
        }
    }
    let problem = ShootingProblem {
        model,
        m0,
        m1,
        horizon,
        segments: cfg.segments,
        dt,
    };
    let params = problem.params();
    let target = cfg.eps_target * m1.weighted_norm();
    let target_sq = target * target;

    let start = problem.residual(&vec![0.0; params])?;
    let outcomes: Vec<Outcome> = if !start.blew_up && start.value <= target_sq {
        vec![Outcome {
            x: vec![0.0; params],
            value: start.value,
            iterations: 0,
            history: vec![start.value],
            blew_up: false,
            converged: true,
        }]
    } else {
        let first_converged = AtomicUsize::new(usize::MAX);
        (0..cfg.restarts)
            .into_par_iter()
            .map(|i| {
                run_restart(
                    &problem,
                    cfg,
                    i,
                    initial_guess(params, i, cfg, seed),
                    target_sq,
                    &first_converged,
                )
            })
            .collect::<Result<_>>()?
    };

    let energy = |x: &[f64]| problem.schedule(x).map(|s| s.energy());
    let best = match outcomes.iter().position(|o| o.converged) {
        Some(i) => i,
        None => {
            let mut best = 0;
            for i in 1..outcomes.len() {
                let (a, b) = (&outcomes[i], &outcomes[best]);
                if a.value < b.value || (a.value == b.value && energy(&a.x)? < energy(&b.x)?) {
                    best = i;
                }
            }
            best
        }
    };
    let restarts_run = match outcomes.iter().position(|o| o.converged) {
        Some(i) if outcomes.len() > 1 => i + 1,
        _ => outcomes.len(),
    };
    let win = &outcomes[best];
    let schedule = problem.schedule(&win.x)?.with_bound(cfg.amplitude_bound);
    let residual = win.value.sqrt();
    let norm1 = m1.weighted_norm();
    Ok(SteeringResult {
        energy: schedule.energy(),
        schedule,
        residual,
        relative_residual: if norm1 > 0.0 {
            residual / norm1
        } else {
            residual
        },
        iterations: win.iterations,
        converged: win.converged,
        restart: best,
        restarts_run,
        blew_up: win.blew_up,
        history: win.history.clone(),
        horizon,
        dt,
        seed,
    })
}

/// Inputs of the truncate-steer-bound experiment.
#[derive(Clone, Debug)]
pub struct ApproxControlSetup {
    pub params: LlgParams,
    /// High-resolution initial and target fields.
    pub m0: ModeState,
    pub m1: ModeState,
    /// Steering truncation `K < K′`.
    pub order: usize,
    pub horizon: f64,
    pub dt: f64,
    pub steering: SteeringConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApproxControlReport {
    pub order: usize,
    pub reference_order: usize,
    pub horizon: f64,
    /// `‖(I − Π_K)M₀‖`.
    pub projection_error_m0: f64,
    /// `‖(I − Π_K)M₁‖`.
    pub projection_error_m1: f64,
    /// `‖m⊥(0)‖²`.
    pub tail_initial_sq: f64,
    /// `‖m⊥(T₁)‖²`.
    pub tail_final_sq: f64,
    /// `‖m⊥(T₁)‖² − ‖m⊥(0)‖²`.
    pub tail_growth: f64,
    /// Steering residual of the truncated model.
    pub steering_residual: f64,
    pub steering_converged: bool,
    /// `‖Π_K M(T₁) − Π_K M₁‖` for the reference run.
    pub low_mode_miss: f64,
    /// `‖Π_K M(T₁) − m_K(T₁)‖`: reference versus truncated model.
    pub truncation_discrepancy: f64,
    /// Budget terms: low-mode miss, tail bound `(‖m⊥(0)‖² + growth⁺)^{1/2}`,
    /// target projection error.
    pub budget_terms: [f64; 3],
    pub budget: f64,
    /// `‖M(T₁) − M₁‖`.
    pub final_error: f64,
    pub within_budget: bool,
    pub schedule: ControlSchedule,
}

/// Steers the `K`-truncation from `Π_K M₀` toward `Π_K M₁` (rescaled onto
/// the sphere of `Π_K M₀`), replays the schedule on the `K′` model and
/// reports the error budget of the reference run.
pub fn approx_control_experiment(setup: &ApproxControlSetup) -> Result<ApproxControlReport> {
    let big = setup.m0.order();
    if setup.m1.order() != big {
        return Err(LlgError::DimensionMismatch {
            expected: setup.m0.dim(),
            found: setup.m1.dim(),
        });
    }
    if setup.order >= big {
        return Err(invalid(
            "K",
            format!(
                "steering order {} must be below the reference order {big}",
                setup.order
            ),
        ));
    }
    let k = setup.order;
    let low = LlgParams {
        order: k,
        ..setup.params.clone()
    };
    let high = LlgParams {
        order: big,
        ..setup.params.clone()
    };
    let model_k = GalerkinModel::new(low)?;
    let model_big = GalerkinModel::new(high)?;

    let p0 = setup.m0.resized(k);
    let p1 = setup.m1.resized(k);
    let n0 = p0.weighted_norm();
    let n1 = p1.weighted_norm();
    let target = if n1 > 0.0 {
        p1.scaled(n0 / n1)
    } else {
        p1.clone()
    };
    let steer = synthesize_steering(
        &model_k,
        &p0,
        &target,
        setup.horizon,
        setup.dt,
        &setup.steering,
        setup.seed,
    )?;

    let run_k = integrate_controlled(&model_k, &steer.schedule, &p0, setup.dt, false)?;
    let run_big = integrate_controlled(&model_big, &steer.schedule, &setup.m0, setup.dt, false)?;
    let end = run_big.final_state();
    let tail0 = setup.m0.tail(k).weighted_norm().powi(2);
    let tail1 = end.tail(k).weighted_norm().powi(2);
    let growth = tail1 - tail0;
    let low_mode_miss = end.resized(k).sub(&p1)?.weighted_norm();
    let proj1 = setup.m1.tail(k).weighted_norm();
    let terms = [low_mode_miss, (tail0 + growth.max(0.0)).sqrt(), proj1];
    let budget: f64 = terms.iter().sum();
    let final_error = end.sub(&setup.m1)?.weighted_norm();
    Ok(ApproxControlReport {
        order: k,
        reference_order: big,
        horizon: setup.horizon,
        projection_error_m0: tail0.sqrt(),
        projection_error_m1: proj1,
        tail_initial_sq: tail0,
        tail_final_sq: tail1,
        tail_growth: growth,
        steering_residual: steer.residual,
        steering_converged: steer.converged,
        low_mode_miss,
        truncation_discrepancy: end.resized(k).sub(run_k.final_state())?.weighted_norm(),
        budget_terms: terms,
        budget,
        final_error,
        within_budget: final_error <= budget,
        schedule: steer.schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_check_examples() {
        let m0 = ModeState::from_entries(1, &[(0, 1, 1.0), (1, 2, 0.5)]).unwrap();
        let same = norm_compatibility_check(&m0, &m0, DEFAULT_NORM_TOLERANCE).unwrap();
        assert!(same.compatible);
        assert_eq!(same.gap, 0.0);
        let twice = norm_compatibility_check(&m0, &m0.scaled(2.0), DEFAULT_NORM_TOLERANCE).unwrap();
        assert!(!twice.compatible);
        assert!((twice.gap - m0.weighted_norm()).abs() < 1e-14);
    }

    #[test]
    fn identical_endpoints_need_no_iterations() {
        let model = GalerkinModel::new(LlgParams::new(1)).unwrap();
        let m0 = ModeState::from_entries(1, &[(0, 3, 1.0)]).unwrap();
        let r = synthesize_steering(&model, &m0, &m0, 1.0, 0.01, &SteeringConfig::default(), 3)
            .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.residual, 0.0);
        assert!(r.converged);
        assert_eq!(r.schedule.max_abs(), 0.0);
    }

    #[test]
    fn incompatible_norms_are_refused() {
        let model = GalerkinModel::new(LlgParams::new(1)).unwrap();
        let m0 = ModeState::from_entries(1, &[(0, 3, 1.0)]).unwrap();
        let r = synthesize_steering(
            &model,
            &m0,
            &m0.scaled(2.0),
            1.0,
            0.01,
            &SteeringConfig::default(),
            3,
        );
        assert!(matches!(r, Err(LlgError::NormIncompatible { .. })));
    }

    #[test]
    fn conserved_form_mismatch_is_refused() {
        // at K = 1 the drift and controls also conserve m_0 · m_1
        let model = GalerkinModel::new(LlgParams::new(1)).unwrap();
        let m0 = ModeState::from_entries(1, &[(0, 1, 1.0), (1, 1, 0.5)]).unwrap();
        let m1 = ModeState::from_entries(1, &[(0, 1, 1.0), (1, 2, 0.5)]).unwrap();
        assert!(
            norm_compatibility_check(&m0, &m1, DEFAULT_NORM_TOLERANCE)
                .unwrap()
                .compatible
        );
        let r = synthesize_steering(&model, &m0, &m1, 1.0, 0.01, &SteeringConfig::default(), 3);
        assert!(matches!(r, Err(LlgError::InvariantIncompatible { .. })));
    }

    #[test]
    fn blow_up_is_penalized() {
        let model = GalerkinModel::new(LlgParams::new(1)).unwrap();
        let m0 = ModeState::from_entries(1, &[(0, 3, 1.0), (1, 1, 0.3)]).unwrap();
        let flat = vec![1e6; 3];
        let v = shooting_residual(&model, &flat, &m0, &m0, 1.0, 1, 0.1).unwrap();
        assert!(v.value.is_finite() && v.value >= 0.0);
    }

    #[test]
    fn mode_zero_rotation_is_found() {
        let model = GalerkinModel::new(LlgParams::drift_free(1)).unwrap();
        let m0 = ModeState::from_entries(1, &[(0, 3, 1.0), (1, 2, 0.4)]).unwrap();
        let sched = ControlSchedule::constant(model.modes(), 1.0, &[0.7, -0.3, 0.0]).unwrap();
        let m1 = integrate_controlled(&model, &sched, &m0, 0.01, false)
            .unwrap()
            .final_state()
            .clone();
        let cfg = SteeringConfig {
            segments: 2,
            budget: 200,
            restarts: 2,
            ..SteeringConfig::default()
        };
        let r = synthesize_steering(&model, &m0, &m1, 1.0, 0.01, &cfg, 11).unwrap();
        assert!(r.converged, "relative residual {}", r.relative_residual);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
