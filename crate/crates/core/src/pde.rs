//! Explicit finite-difference solver for the full controlled LLG equation
//! on `[0, 2π]` with homogeneous Neumann boundary conditions.
//!
//! The grid includes both endpoints, `x_q = q·dx` with `dx = 2π/(N_x − 1)`.
//! `M_xx` uses the central second difference with mirrored ghost points, and
//! time stepping is classical RK4.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlgError, Result};
use crate::galerkin::{cross, GalerkinModel, LlgParams};
use crate::integrators::integrate_controlled;
use crate::schedule::{fmt17, ControlSchedule};
use crate::spectral::{mode_weight, ModeState, AXES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub m: Vec<[f64; 3]>,
    pub dx: f64,
    pub t: f64,
}

impl GridState {
    pub fn new(m: Vec<[f64; 3]>) -> Result<Self> {
        if m.len() < 3 {
            return Err(invalid(
                "N_x",
                format!("{} points; need at least 3", m.len()),
            ));
        }
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("M", "grid values must be finite"));
        }
        let dx = 2.0 * PI / (m.len() - 1) as f64;
        Ok(Self { m, dx, t: 0.0 })
    }

    pub fn from_fn(nx: usize, f: impl Fn(f64) -> [f64; 3]) -> Result<Self> {
        let dx = 2.0 * PI / nx.saturating_sub(1).max(1) as f64;
        Self::new((0..nx).map(|q| f(q as f64 * dx)).collect())
    }

    /// Samples `Σ m_i cos(i x)` on the grid.
    pub fn from_modes(m: &ModeState, nx: usize) -> Result<Self> {
        Self::from_fn(nx, |x| {
            let mut v = [0.0; 3];
            for i in 0..=m.order() {
                let c = (i as f64 * x).cos();
                for (j, vj) in v.iter_mut().enumerate() {
                    *vj += c * m.get(i, j + 1);
                }
            }
            v
        })
    }

    pub fn nx(&self) -> usize {
        self.m.len()
    }

    pub fn x(&self, q: usize) -> f64 {
        q as f64 * self.dx
    }

    fn trapezoid(&self, f: impl Fn(usize) -> f64) -> f64 {
        let n = self.nx();
        let inner: f64 = (1..n - 1).map(&f).sum();
        self.dx * (inner + 0.5 * (f(0) + f(n - 1)))
    }

    /// Trapezoid-rule `∫|M|² dx`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.trapezoid(|q| norm_sq(&self.m[q]))
    }

    /// Trapezoid-rule `‖M − N‖_{L²}` on a shared grid.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.nx() != other.nx() {
            return Err(LlgError::GridMismatch(format!(
                "{} versus {} points",
                self.nx(),
                other.nx()
            )));
        }
        Ok(self
            .trapezoid(|q| norm_sq(&sub(&self.m[q], &other.m[q])))
            .sqrt())
    }

    /// Trapezoid-rule cosine coefficients up to `order`.
    pub fn project(&self, order: usize) -> ModeState {
        let mut out = ModeState::zeros(order);
        for i in 0..=order {
            for j in 0..AXES {
                let c = self.trapezoid(|q| self.m[q][j] * (i as f64 * self.x(q)).cos())
                    / mode_weight(i);
                out.as_mut_slice()[i * AXES + j] = c;
            }
        }
        out
    }

    /// `‖(I − Π_K)M‖²`.
    pub fn tail_energy(&self, order: usize) -> f64 {
        (self.l2_norm_sq() - self.project(order).weighted_norm().powi(2)).max(0.0)
    }

    /// Discrete exchange energy `Σ |M_{q+1} − M_q|² / dx`.
    pub fn exchange_energy(&self) -> f64 {
        self.m
            .windows(2)
            .map(|w| norm_sq(&sub(&w[1], &w[0])))
            .sum::<f64>()
            / self.dx
    }

    /// `max_q ||M_q| − 1|`.
    pub fn saturation_deviation(&self) -> f64 {
        self.m
            .iter()
            .map(|v| (norm_sq(v).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Every `factor`-th point; the result is the same field on a coarser
    /// nested grid.
    pub fn restrict(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !(self.nx() - 1).is_multiple_of(factor) {
            return Err(LlgError::GridMismatch(format!(
                "{} intervals are not divisible by {factor}",
                self.nx() - 1
            )));
        }
        let mut g = Self::new(self.m.iter().step_by(factor).copied().collect())?;
        g.t = self.t;
        Ok(g)
    }

    /// CSV snapshot with columns `x, M1, M2, M3`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "M1", "M2", "M3"])?;
        for (q, v) in self.m.iter().enumerate() {
            wr.write_record([fmt17(self.x(q)), fmt17(v[0]), fmt17(v[1]), fmt17(v[2])])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn norm_sq(v: &[f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Largest stable step `dx² / (4(|μ₁| + μ₂))`.
pub fn cfl_limit(dx: f64, params: &LlgParams) -> f64 {
    dx * dx / (4.0 * (params.mu1.abs() + params.mu2))
}

/// Control field `v(x_q) = Σ v_k^l cos(k x_q) e_l` on the grid.
fn control_samples(g: &GridState, params: &LlgParams, controls: &[f64]) -> Vec<[f64; 3]> {
    let mut v = vec![[0.0; 3]; g.nx()];
    for (mode, &c) in params.control_modes.iter().zip(controls) {
        if c == 0.0 {
            continue;
        }
        for (q, vq) in v.iter_mut().enumerate() {
            vq[mode.axis - 1] += c * (mode.frequency as f64 * g.x(q)).cos();
        }
    }
    v
}

fn pde_rhs(m: &[[f64; 3]], dx: f64, params: &LlgParams, v: &[[f64; 3]], out: &mut [[f64; 3]]) {
    let n = m.len();
    let inv = 1.0 / (dx * dx);
    for q in 0..n {
        let left = if q == 0 { &m[1] } else { &m[q - 1] };
        let right = if q == n - 1 { &m[n - 2] } else { &m[q + 1] };
        let lap = [
            (left[0] - 2.0 * m[q][0] + right[0]) * inv,
            (left[1] - 2.0 * m[q][1] + right[1]) * inv,
            (left[2] - 2.0 * m[q][2] + right[2]) * inv,
        ];
        let prec = cross(&m[q], &lap);
        let damp = cross(&m[q], &prec);
        let ctrl = cross(&m[q], &v[q]);
        for j in 0..3 {
            out[q][j] = params.mu1 * prec[j] - params.mu2 * damp[j] + ctrl[j];
        }
    }
}

/// One RK4 step with the control values frozen; `controls` is aligned with
/// `params.control_modes`.
pub fn pde_step(
    g: &GridState,
    controls: &[f64],
    params: &LlgParams,
    dt: f64,
    renormalize: bool,
) -> Result<GridState> {
    if controls.len() != params.control_modes.len() {
        return Err(LlgError::DimensionMismatch {
            expected: params.control_modes.len(),
            found: controls.len(),
        });
    }
    let limit = cfl_limit(g.dx, params);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(LlgError::Cfl { dt, limit });
    }
    let v = control_samples(g, params, controls);
    let mut s = PdeScratch::new(g.nx());
    let mut out = g.clone();
    rk4_grid(&g.m, g.dx, params, &v, dt, &mut out.m, &mut s);
    if renormalize {
        for p in out.m.iter_mut() {
            let r = norm_sq(p).sqrt();
            if r > 0.0 {
                p.iter_mut().for_each(|c| *c /= r);
            }
        }
    }
    if out.m.iter().flatten().any(|c| !c.is_finite()) {
        return Err(LlgError::NonFinite { t: g.t + dt });
    }
    out.t = g.t + dt;
    Ok(out)
}

struct PdeScratch {
    k: [Vec<[f64; 3]>; 4],
    tmp: Vec<[f64; 3]>,
}

impl PdeScratch {
    fn new(n: usize) -> Self {
        let z = vec![[0.0; 3]; n];
        Self {
            k: [z.clone(), z.clone(), z.clone(), z.clone()],
            tmp: z,
        }
    }
}

fn rk4_grid(
    m: &[[f64; 3]],
    dx: f64,
    params: &LlgParams,
    v: &[[f64; 3]],
    dt: f64,
    out: &mut [[f64; 3]],
    s: &mut PdeScratch,
) {
    let n = m.len();
    let PdeScratch { k, tmp } = s;
    pde_rhs(m, dx, params, v, &mut k[0]);
    for stage in 1..4 {
        let c = if stage == 3 { dt } else { 0.5 * dt };
        for q in 0..n {
            for j in 0..3 {
                tmp[q][j] = m[q][j] + c * k[stage - 1][q][j];
            }
        }
        pde_rhs(tmp, dx, params, v, &mut k[stage]);
    }
    for q in 0..n {
        for j in 0..3 {
            out[q][j] = m[q][j]
                + dt / 6.0 * (k[0][q][j] + 2.0 * k[1][q][j] + 2.0 * k[2][q][j] + k[3][q][j]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeConfig {
    #[serde(rename = "N_x")]
    pub nx: usize,
    /// Largest time step; `None` uses 90% of the stability limit.
    pub dt: Option<f64>,
    pub renormalize: bool,
    /// Extrapolate from grids with `N_x` and `2N_x − 1` points.
    pub richardson: bool,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            nx: 257,
            dt: None,
            renormalize: false,
            richardson: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeRun {
    pub state: GridState,
    pub steps: usize,
    pub dt: f64,
    /// Largest `max_q ||M_q| − 1|` over all steps, including the start.
    pub max_saturation_deviation: f64,
}

/// Runs the PDE over `[0, T]`. Steps never straddle a schedule switch.
/// `observe(t, state)` sees the initial state and every step.
pub fn run_pde(
    initial: &GridState,
    sched: Option<&ControlSchedule>,
    params: &LlgParams,
    horizon: f64,
    dt: Option<f64>,
    renormalize: bool,
    mut observe: impl FnMut(f64, &GridState),
) -> Result<PdeRun> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("{horizon} must be positive")));
    }
    let limit = cfl_limit(initial.dx, params);
    let max_dt = dt.unwrap_or(0.9 * limit);
    if !(max_dt > 0.0) || max_dt > limit * (1.0 + 1e-12) {
        return Err(LlgError::Cfl { dt: max_dt, limit });
    }
    let (segments, seg_len) = match sched {
        Some(s) => {
            if (s.horizon - horizon).abs() > 1e-9 * horizon {
                return Err(LlgError::GridMismatch(format!(
                    "schedule covers [0, {}] but T = {horizon}",
                    s.horizon
                )));
            }
            (s.segments(), s.segment_len())
        }
        None => (1, horizon),
    };
    let per = (seg_len / max_dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = seg_len / per as f64;
    let model_modes = &params.control_modes;
    let mut g = initial.clone();
    g.t = 0.0;
    let mut sat = g.saturation_deviation();
    observe(0.0, &g);
    let mut s = PdeScratch::new(g.nx());
    let mut next = g.m.clone();
    for seg in 0..segments {
        let controls = match sched {
            Some(sc) => {
                let row = sc.value_at((seg as f64 + 0.5) * seg_len)?;
                let mut c = vec![0.0; model_modes.len()];
                for (mode, v) in sc.modes.iter().zip(row) {
                    let pos = model_modes.iter().position(|m| m == mode).ok_or_else(|| {
                        invalid(
                            "schedule",
                            format!(
                                "mode ({}, {}) is not a control mode",
                                mode.frequency, mode.axis
                            ),
                        )
                    })?;
                    c[pos] = *v;
                }
                c
            }
            None => vec![0.0; model_modes.len()],
        };
        let v = control_samples(&g, params, &controls);
        for j in 0..per {
            rk4_grid(&g.m, g.dx, params, &v, h, &mut next, &mut s);
            std::mem::swap(&mut g.m, &mut next);
            if renormalize {
                for p in g.m.iter_mut() {
                    let r = norm_sq(p).sqrt();
                    if r > 0.0 {
                        p.iter_mut().for_each(|c| *c /= r);
                    }
                }
            }
            g.t = seg as f64 * seg_len + (j + 1) as f64 * h;
            if g.m.iter().flatten().any(|c| !c.is_finite()) {
                return Err(LlgError::NonFinite { t: g.t });
            }
            sat = sat.max(g.saturation_deviation());
            observe(g.t, &g);
        }
    }
    Ok(PdeRun {
        state: g,
        steps: segments * per,
        dt: h,
        max_saturation_deviation: sat,
    })
}

/// Terminal PDE state on the `cfg.nx` grid, Richardson-extrapolated from the
/// nested grid with `2N_x − 1` points when requested.
pub fn pde_terminal(
    initial: impl Fn(usize) -> Result<GridState>,
    sched: Option<&ControlSchedule>,
    params: &LlgParams,
    horizon: f64,
    cfg: &PdeConfig,
) -> Result<GridState> {
    let coarse = run_pde(
        &initial(cfg.nx)?,
        sched,
        params,
        horizon,
        cfg.dt,
        cfg.renormalize,
        |_, _| {},
    )?;
    if !cfg.richardson {
        return Ok(coarse.state);
    }
    let fine_nx = 2 * cfg.nx - 1;
    let fine_dt = cfg.dt.map(|d| d / 4.0);
    let fine = run_pde(
        &initial(fine_nx)?,
        sched,
        params,
        horizon,
        fine_dt,
        cfg.renormalize,
        |_, _| {},
    )?;
    let f = fine.state.restrict(2)?;
    let m = coarse
        .state
        .m
        .iter()
        .zip(&f.m)
        .map(|(c, f)| {
            [
                (4.0 * f[0] - c[0]) / 3.0,
                (4.0 * f[1] - c[1]) / 3.0,
                (4.0 * f[2] - c[2]) / 3.0,
            ]
        })
        .collect();
    let mut out = GridState::new(m)?;
    out.t = horizon;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    #[serde(rename = "K")]
    pub order: usize,
    #[serde(rename = "N_x")]
    pub nx: usize,
    pub horizon: f64,
    /// `‖M_Galerkin(T) − M_PDE(T)‖_{L²}`.
    pub discrepancy: f64,
    /// Discrepancy at `t = 0`, the projection error of the initial data.
    pub initial_discrepancy: f64,
    /// `‖(I − Π_K)M_PDE(T)‖²`.
    pub pde_tail_energy: f64,
    pub galerkin_norm_drift: f64,
}

/// Runs the `K`-truncation from `Π_K m0` and the PDE from `m0` sampled on the
/// grid, and compares them at `T`.
pub fn compare_galerkin_pde(
    params: &LlgParams,
    m0: &ModeState,
    sched: Option<&ControlSchedule>,
    horizon: f64,
    dt: f64,
    pde: &PdeConfig,
) -> Result<ComparisonReport> {
    let k = params.order;
    let model = GalerkinModel::new(params.clone())?;
    let start = m0.resized(k);
    let zero;
    let sched_ref = match sched {
        Some(s) => s,
        None => {
            zero = ControlSchedule::zeros(&params.control_modes, horizon, 1)?;
            &zero
        }
    };
    let traj = integrate_controlled(&model, sched_ref, &start, dt, false)?;
    let end = pde_terminal(
        |nx| GridState::from_modes(m0, nx),
        sched,
        params,
        horizon,
        pde,
    )?;
    let galerkin = GridState::from_modes(traj.final_state(), pde.nx)?;
    let at_zero =
        GridState::from_modes(&start, pde.nx)?.distance(&GridState::from_modes(m0, pde.nx)?)?;
    Ok(ComparisonReport {
        order: k,
        nx: pde.nx,
        horizon,
        discrepancy: galerkin.distance(&end)?,
        initial_discrepancy: at_zero,
        pde_tail_energy: end.tail_energy(k),
        galerkin_norm_drift: traj.norm_drift,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailGrowthReport {
    #[serde(rename = "K")]
    pub order: usize,
    #[serde(rename = "N_x")]
    pub nx: usize,
    pub times: Vec<f64>,
    /// `‖m⊥(T₁)‖² − ‖m⊥(0)‖²` at each `T₁`.
    pub growth: Vec<f64>,
    pub initial_tail: f64,
    /// Least-squares fit `growth ≈ intercept + C·T₁`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `growth(T_max) / growth(T_max/2)`, when both are sampled.
    pub doubling_ratio: Option<f64>,
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let r2 = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (a, b, r2)
}

/// Tail growth beyond frequency `K` along one uncontrolled PDE run, sampled
/// at `samples` equally spaced times in `(0, T₁]`.
pub fn tail_growth_experiment(
    initial: &GridState,
    params: &LlgParams,
    horizon: f64,
    samples: usize,
    dt: Option<f64>,
) -> Result<TailGrowthReport> {
    if samples < 2 {
        return Err(invalid("samples", "need at least two sample times"));
    }
    let k = params.order;
    let targets: Vec<f64> = (1..=samples)
        .map(|i| horizon * i as f64 / samples as f64)
        .collect();
    let limit = cfl_limit(initial.dx, params);
    let mut h = dt.unwrap_or(0.9 * limit);
    // align the step with the sample times
    let per = (targets[0] / h * (1.0 - 1e-12)).ceil().max(1.0);
    h = targets[0] / per;
    let initial_tail = initial.tail_energy(k);
    let mut growth = Vec::with_capacity(samples);
    let mut next = 0;
    run_pde(initial, None, params, horizon, Some(h), false, |t, g| {
        if next < targets.len() && (t - targets[next]).abs() <= 1e-9 * horizon {
            growth.push(g.tail_energy(k) - initial_tail);
            next += 1;
        }
    })?;
    if growth.len() != samples {
        return Err(invalid(
            "samples",
            "sample times were not hit by the time grid",
        ));
    }
    let (intercept, slope, r_squared) = linear_fit(&targets, &growth);
    let doubling_ratio = samples
        .is_multiple_of(2)
        .then(|| growth[samples - 1] / growth[samples / 2 - 1]);
    Ok(TailGrowthReport {
        order: k,
        nx: initial.nx(),
        times: targets,
        growth,
        initial_tail,
        slope,
        intercept,
        r_squared,
        doubling_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_stationary() {
        let p = LlgParams::new(2);
        let g = GridState::from_fn(33, |_| [0.0, 0.6, 0.8]).unwrap();
        let run = run_pde(&g, None, &p, 0.1, None, false, |_, _| {}).unwrap();
        assert!(run.state.distance(&g).unwrap() < 1e-14);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let p = LlgParams::new(2);
        let g = GridState::from_fn(33, |_| [0.0, 0.0, 1.0]).unwrap();
        let too_big = 2.0 * cfl_limit(g.dx, &p);
        assert!(matches!(
            pde_step(&g, &[0.0; 3], &p, too_big, false),
            Err(LlgError::Cfl { .. })
        ));
    }

    #[test]
    fn rigid_rotation_matches_closed_form() {
        // M ≡ e3 with v = c e1 rotates about e1: M(t) = (0, sin ct, cos ct).
        let p = LlgParams::new(1);
        let c = 2.0;
        let g = GridState::from_fn(17, |_| [0.0, 0.0, 1.0]).unwrap();
        let sched = ControlSchedule::constant(&p.control_modes, 1.0, &[c, 0.0, 0.0]).unwrap();
        let run = run_pde(&g, Some(&sched), &p, 1.0, Some(0.01), false, |_, _| {}).unwrap();
        for v in &run.state.m {
            assert!(
                (v[1] - c.sin()).abs() < 1e-8 && (v[2] - c.cos()).abs() < 1e-8,
                "{v:?}"
            );
        }
    }

    #[test]
    fn projection_recovers_modes() {
        let m = ModeState::from_entries(3, &[(0, 1, 0.5), (2, 3, -0.25), (3, 2, 0.1)]).unwrap();
        let g = GridState::from_modes(&m, 65).unwrap();
        assert!(g.project(3).sub(&m).unwrap().weighted_norm() < 1e-13);
        assert!(g.tail_energy(3) < 1e-12);
    }

    #[test]
    fn renormalized_steps_stay_saturated() {
        let p = LlgParams::new(1);
        let g = GridState::from_fn(33, |x| {
            let th = 0.8 * x.cos();
            [th.sin(), 0.0, th.cos()]
        })
        .unwrap();
        let mut s = g.clone();
        let dt = 0.5 * cfl_limit(g.dx, &p);
        for _ in 0..20 {
            s = pde_step(&s, &[0.3, 0.0, 1.0], &p, dt, true).unwrap();
        }
        assert!(s.saturation_deviation() < 1e-15);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.1, 0.2, 0.3, 0.4];
        let y: Vec<f64> = x.iter().map(|t| 1.0 + 3.0 * t).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        assert!((a - 1.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
