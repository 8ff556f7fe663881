//! Time stepping for the Galerkin system: RK4 for controlled runs, Heun
//! for the Stratonovich noise, and seeded Brownian increments.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlgError, Result};
use crate::galerkin::GalerkinModel;
use crate::schedule::{fmt17, ControlSchedule};
use crate::spectral::{weighted_norm_slice, ModeIndex, ModeState, AXES};

/// Blow-up threshold relative to the initial weighted norm.
pub const BLOW_UP_FACTOR: f64 = 1e3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ModeState>,
    /// `max_t |‖m(t)‖_w − ‖m(0)‖_w|`.
    pub norm_drift: f64,
}

impl Trajectory {
    fn start(m0: &ModeState) -> Self {
        Self {
            times: vec![0.0],
            states: vec![m0.clone()],
            norm_drift: 0.0,
        }
    }

    fn push(&mut self, t: f64, m: ModeState) {
        let n0 = self.states[0].weighted_norm();
        self.norm_drift = self.norm_drift.max((m.weighted_norm() - n0).abs());
        self.times.push(t);
        self.states.push(m);
    }

    pub fn final_state(&self) -> &ModeState {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory holds the initial time")
    }

    /// CSV with columns `t, m_0^1 … m_K^3, norm`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let order = self.states[0].order();
        let mut header = vec!["t".to_string()];
        for i in 0..=order {
            for j in 1..=AXES {
                header.push(format!("m_{i}^{j}"));
            }
        }
        header.push("norm".into());
        wr.write_record(&header)?;
        for (t, m) in self.times.iter().zip(&self.states) {
            let mut rec = vec![fmt17(*t)];
            rec.extend(m.as_slice().iter().map(|v| fmt17(*v)));
            rec.push(fmt17(m.weighted_norm()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Classical RK4 on raw coefficient slices.
pub(crate) fn rk4_into<F>(
    f: &F,
    t: f64,
    dt: f64,
    m: &[f64],
    out: &mut [f64],
    scratch: &mut Rk4Scratch,
) where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = m.len();
    let Rk4Scratch {
        k1,
        k2,
        k3,
        k4,
        tmp,
    } = scratch;
    f(t, m, k1);
    for i in 0..n {
        tmp[i] = m[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, tmp, k2);
    for i in 0..n {
        tmp[i] = m[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, tmp, k3);
    for i in 0..n {
        tmp[i] = m[i] + dt * k3[i];
    }
    f(t + dt, tmp, k4);
    for i in 0..n {
        out[i] = m[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

pub(crate) struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

/// One RK4 step of `ṁ = rhs(t, m)`.
pub fn rk4_step<F>(rhs: F, m: &ModeState, t: f64, dt: f64) -> Result<ModeState>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("{dt} must be positive")));
    }
    let mut out = vec![0.0; m.dim()];
    rk4_into(
        &rhs,
        t,
        dt,
        m.as_slice(),
        &mut out,
        &mut Rk4Scratch::new(m.dim()),
    );
    if out.iter().any(|v| !v.is_finite()) {
        return Err(LlgError::NonFinite { t: t + dt });
    }
    ModeState::from_coeffs(m.order(), out)
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("{horizon} must be positive")));
    }
    if !(dt > 0.0 && dt <= horizon * (1.0 + 1e-12)) {
        return Err(invalid("dt", format!("{dt} must lie in (0, T]")));
    }
    Ok(((horizon / dt).round() as usize).max(1))
}

fn check_growth(t: f64, x: &[f64], limit: f64) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LlgError::NonFinite { t });
    }
    let norm = weighted_norm_slice(x).sqrt();
    if limit > 0.0 && norm > limit {
        return Err(LlgError::BlowUp { t, norm, limit });
    }
    Ok(())
}

/// RK4 on a uniform grid of `round(T/dt)` steps over `[0, T]`.
pub fn integrate<F>(rhs: F, m0: &ModeState, horizon: f64, dt: f64) -> Result<Trajectory>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let steps = step_count(horizon, dt)?;
    let h = horizon / steps as f64;
    let limit = BLOW_UP_FACTOR * m0.weighted_norm();
    let mut traj = Trajectory::start(m0);
    let mut scratch = Rk4Scratch::new(m0.dim());
    let mut cur = m0.as_slice().to_vec();
    let mut next = vec![0.0; m0.dim()];
    for s in 0..steps {
        let t = s as f64 * h;
        rk4_into(&rhs, t, h, &cur, &mut next, &mut scratch);
        check_growth(t + h, &next, limit)?;
        std::mem::swap(&mut cur, &mut next);
        traj.push(
            (s + 1) as f64 * h,
            ModeState::from_coeffs(m0.order(), cur.clone())?,
        );
    }
    Ok(traj)
}

/// Control amplitude `Σ|v|` up to which `dt` is used unchanged.
pub const AMPLITUDE_SCALE: f64 = 5.0;

/// Drift rate `‖drift(m)‖_w / ‖m‖_w` up to which `dt` is used unchanged.
pub const DRIFT_RATE_SCALE: f64 = 10.0;

/// RK4 steps for one segment of length `len` carrying control values
/// `values`, entered with drift rate `drift_rate`. The step is
/// `dt / max(1, Σ|v| / AMPLITUDE_SCALE, drift_rate / DRIFT_RATE_SCALE)`, so
/// large controls and stiff high-mode states are resolved and halving `dt`
/// halves the step. Steps never straddle a switch.
pub fn substeps(len: f64, values: &[f64], drift_rate: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("{dt} must be positive")));
    }
    let amplitude: f64 = values.iter().map(|v| v.abs()).sum();
    let factor = (amplitude / AMPLITUDE_SCALE)
        .max(drift_rate / DRIFT_RATE_SCALE)
        .max(1.0);
    let n = (len / dt) * factor * (1.0 - 1e-12);
    Ok(n.ceil().max(1.0) as usize)
}

/// RK4 run of the controlled system; the control is frozen on each segment
/// and `dt` is the largest step taken (see [`substeps`]).
///
/// Returns the full trajectory when `record` is set, otherwise only the
/// initial and final states.
pub fn integrate_controlled(
    model: &GalerkinModel,
    sched: &ControlSchedule,
    m0: &ModeState,
    dt: f64,
    record: bool,
) -> Result<Trajectory> {
    if m0.order() != model.order() {
        return Err(LlgError::DimensionMismatch {
            expected: model.dim(),
            found: m0.dim(),
        });
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", format!("{dt} must be positive")));
    }
    let limit = BLOW_UP_FACTOR * m0.weighted_norm();
    let n0 = m0.weighted_norm();
    let mut traj = Trajectory::start(m0);
    let mut states = Vec::new();
    let end = propagate_segments(model, sched, m0.as_slice(), 0, dt, limit, |t, x, _| {
        if record {
            states.push((t, x.to_vec()));
        } else {
            traj.norm_drift = traj
                .norm_drift
                .max((weighted_norm_slice(x).sqrt() - n0).abs());
        }
    })?;
    if record {
        for (t, x) in states {
            traj.push(t, ModeState::from_coeffs(m0.order(), x)?);
        }
    } else {
        traj.times.push(sched.horizon);
        traj.states.push(ModeState::from_coeffs(m0.order(), end)?);
    }
    Ok(traj)
}

/// Integrates segments `first..S` from `start`, the state at the left end
/// of segment `first`, and returns the final state.
///
/// `visit(t, x, boundary)` sees every step; `boundary` is set when `t` ends
/// a segment.
pub(crate) fn propagate_segments(
    model: &GalerkinModel,
    sched: &ControlSchedule,
    start: &[f64],
    first: usize,
    dt: f64,
    limit: f64,
    mut visit: impl FnMut(f64, &[f64], bool),
) -> Result<Vec<f64>> {
    let n = start.len();
    let mut scratch = Rk4Scratch::new(n);
    let mut cur = start.to_vec();
    let mut next = vec![0.0; n];
    let len = sched.segment_len();
    for s in first..sched.segments() {
        let controls = model.control_values(sched, (s as f64 + 0.5) * len)?;
        let f = |_t: f64, x: &[f64], out: &mut [f64]| model.field_into(x, &controls, out);
        model.drift_into(&cur, &mut next);
        let norm = weighted_norm_slice(&cur);
        let rate = if norm > 0.0 {
            (weighted_norm_slice(&next) / norm).sqrt()
        } else {
            0.0
        };
        let sub = substeps(len, &controls, rate, dt)?;
        let h = len / sub as f64;
        for j in 0..sub {
            let t = s as f64 * len + j as f64 * h;
            rk4_into(&f, t, h, &cur, &mut next, &mut scratch);
            check_growth(t + h, &next, limit)?;
            std::mem::swap(&mut cur, &mut next);
            let last = j + 1 == sub;
            visit(if last { (s + 1) as f64 * len } else { t + h }, &cur, last);
        }
    }
    Ok(cur)
}

/// Brownian increments for each control mode on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub modes: Vec<ModeIndex>,
    pub dt: f64,
    pub seed: u64,
    /// `increments[step][c]` for mode `modes[c]`.
    pub increments: Vec<Vec<f64>>,
}

impl SamplePath {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    /// Adds `shift(t_i) dt` to every increment; `shift` is evaluated at the
    /// left end of each step.
    pub fn shifted(&self, shift: &ControlSchedule) -> Result<Self> {
        check_alignment(self, shift)?;
        let mut out = self.clone();
        for (s, row) in out.increments.iter_mut().enumerate() {
            let v = shift.value_at(s as f64 * self.dt)?;
            for (c, mode) in self.modes.iter().enumerate() {
                if let Some(pos) = shift.modes.iter().position(|m| m == mode) {
                    row[c] += v[pos] * self.dt;
                }
            }
        }
        Ok(out)
    }

    /// Cumulative sums `β(t_i)` per mode, starting at zero.
    pub fn cumulative(&self) -> Vec<Vec<f64>> {
        let mut acc = vec![0.0; self.modes.len()];
        let mut out = vec![acc.clone()];
        for row in &self.increments {
            for (a, d) in acc.iter_mut().zip(row) {
                *a += d;
            }
            out.push(acc.clone());
        }
        out
    }
}

pub(crate) fn check_alignment(path: &SamplePath, sched: &ControlSchedule) -> Result<()> {
    let rel = (path.horizon() - sched.horizon).abs() / sched.horizon;
    if rel > 1e-9 {
        return Err(LlgError::GridMismatch(format!(
            "path covers [0, {}] but schedule covers [0, {}]",
            path.horizon(),
            sched.horizon
        )));
    }
    let per = sched.segment_len() / path.dt;
    if (per - per.round()).abs() > 1e-6 {
        return Err(LlgError::GridMismatch(format!(
            "schedule segments of length {} are not a multiple of dt = {}",
            sched.segment_len(),
            path.dt
        )));
    }
    Ok(())
}

/// Independent `N(0, dt)` increments per mode, deterministic in `seed`.
pub fn sample_brownian(
    modes: &[ModeIndex],
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<SamplePath> {
    let steps = step_count(horizon, dt)?;
    let rel = (steps as f64 * dt - horizon).abs() / horizon;
    if rel > 1e-9 {
        return Err(invalid("dt", format!("{dt} does not divide T = {horizon}")));
    }
    let h = horizon / steps as f64;
    let sd = h.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let increments = (0..steps)
        .map(|_| {
            modes
                .iter()
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    Ok(SamplePath {
        modes: modes.to_vec(),
        dt: h,
        seed,
        increments,
    })
}

/// Per-path seed derived from a base seed.
#[inline]
pub fn path_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeScheme {
    /// Stratonovich-consistent predictor-corrector.
    Heun,
    /// Itô Euler–Maruyama; used as the discrimination control.
    EulerMaruyama,
}

/// Reusable buffers for stochastic steps.
pub struct SdeScratch {
    f0: Vec<f64>,
    g0: Vec<f64>,
    pred: Vec<f64>,
    f1: Vec<f64>,
    g1: Vec<f64>,
}

impl SdeScratch {
    pub fn new(n: usize) -> Self {
        Self {
            f0: vec![0.0; n],
            g0: vec![0.0; n],
            pred: vec![0.0; n],
            f1: vec![0.0; n],
            g1: vec![0.0; n],
        }
    }
}

/// In-place stochastic step; `dw` is aligned with `model.modes()`.
pub fn sde_step_into(
    model: &GalerkinModel,
    scheme: SdeScheme,
    m: &mut [f64],
    dt: f64,
    dw: &[f64],
    noise_scale: f64,
    s: &mut SdeScratch,
) {
    let n = m.len();
    let scaled: Vec<f64> = dw.iter().map(|w| noise_scale * w).collect();
    model.drift_into(m, &mut s.f0);
    s.g0.iter_mut().for_each(|v| *v = 0.0);
    model.add_controls(m, &scaled, &mut s.g0);
    match scheme {
        SdeScheme::EulerMaruyama => {
            for i in 0..n {
                m[i] += s.f0[i] * dt + s.g0[i];
            }
        }
        SdeScheme::Heun => {
            for i in 0..n {
                s.pred[i] = m[i] + s.f0[i] * dt + s.g0[i];
            }
            model.drift_into(&s.pred, &mut s.f1);
            s.g1.iter_mut().for_each(|v| *v = 0.0);
            model.add_controls(&s.pred, &scaled, &mut s.g1);
            for i in 0..n {
                m[i] += 0.5 * (s.f0[i] + s.f1[i]) * dt + 0.5 * (s.g0[i] + s.g1[i]);
            }
        }
    }
}

/// One Heun step of `dm = drift dt + Σ A^{k,l} m ∘ dβ_k^l`.
pub fn heun_stratonovich_step(
    model: &GalerkinModel,
    m: &ModeState,
    dt: f64,
    dw: &[f64],
) -> Result<ModeState> {
    if dw.len() != model.modes().len() {
        return Err(LlgError::DimensionMismatch {
            expected: model.modes().len(),
            found: dw.len(),
        });
    }
    let mut x = m.as_slice().to_vec();
    sde_step_into(
        model,
        SdeScheme::Heun,
        &mut x,
        dt,
        dw,
        1.0,
        &mut SdeScratch::new(m.dim()),
    );
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LlgError::NonFinite { t: dt });
    }
    ModeState::from_coeffs(m.order(), x)
}

fn path_columns(model: &GalerkinModel, path: &SamplePath) -> Result<Vec<usize>> {
    path.modes.iter().map(|m| model.position(m)).collect()
}

/// Drives the Galerkin system with a sample path.
///
/// `noise_scale` multiplies every increment. Only the final state is kept
/// unless `record` is set.
pub fn simulate_sde(
    model: &GalerkinModel,
    m0: &ModeState,
    path: &SamplePath,
    noise_scale: f64,
    scheme: SdeScheme,
    record: bool,
) -> Result<Trajectory> {
    if m0.order() != model.order() {
        return Err(LlgError::DimensionMismatch {
            expected: model.dim(),
            found: m0.dim(),
        });
    }
    let cols = path_columns(model, path)?;
    let limit = BLOW_UP_FACTOR * m0.weighted_norm();
    let mut traj = Trajectory::start(m0);
    let mut scratch = SdeScratch::new(m0.dim());
    let mut x = m0.as_slice().to_vec();
    let mut dw = vec![0.0; model.modes().len()];
    let n0 = m0.weighted_norm();
    for (s, row) in path.increments.iter().enumerate() {
        dw.iter_mut().for_each(|v| *v = 0.0);
        for (c, &pos) in cols.iter().enumerate() {
            dw[pos] = row[c];
        }
        sde_step_into(
            model,
            scheme,
            &mut x,
            path.dt,
            &dw,
            noise_scale,
            &mut scratch,
        );
        let t = (s + 1) as f64 * path.dt;
        check_growth(t, &x, limit)?;
        if record {
            traj.push(t, ModeState::from_coeffs(m0.order(), x.clone())?);
        } else {
            traj.norm_drift = traj
                .norm_drift
                .max((weighted_norm_slice(&x).sqrt() - n0).abs());
        }
    }
    if !record {
        traj.times.push(path.horizon());
        traj.states.push(ModeState::from_coeffs(m0.order(), x)?);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::LlgParams;

    #[test]
    fn zero_rhs_keeps_state() {
        let m = ModeState::from_coeffs(1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = rk4_step(
            |_, _, o: &mut [f64]| o.iter_mut().for_each(|v| *v = 0.0),
            &m,
            0.0,
            0.1,
        )
        .unwrap();
        assert_eq!(out, m);
        assert!(rk4_step(|_, _, _: &mut [f64]| {}, &m, 0.0, 0.0).is_err());
    }

    #[test]
    fn nonfinite_rhs_is_reported() {
        let m = ModeState::from_coeffs(0, vec![1.0, 0.0, 0.0]).unwrap();
        let r = rk4_step(
            |_, _, o: &mut [f64]| o.iter_mut().for_each(|v| *v = f64::NAN),
            &m,
            0.0,
            0.1,
        );
        assert!(matches!(r, Err(LlgError::NonFinite { .. })));
    }

    #[test]
    fn blow_up_is_detected() {
        let m = ModeState::from_coeffs(0, vec![1.0, 0.0, 0.0]).unwrap();
        let grow = |_: f64, x: &[f64], o: &mut [f64]| {
            for (a, b) in o.iter_mut().zip(x) {
                *a = 20.0 * b;
            }
        };
        assert!(matches!(
            integrate(grow, &m, 1.0, 0.01),
            Err(LlgError::BlowUp { .. })
        ));
    }

    #[test]
    fn single_mode_is_stationary() {
        let model = GalerkinModel::new(LlgParams::new(2)).unwrap();
        let m0 = ModeState::from_entries(2, &[(1, 1, 1.0)]).unwrap();
        let traj = integrate(|_, x, o: &mut [f64]| model.drift_into(x, o), &m0, 1.0, 0.01).unwrap();
        assert!(traj.final_state().sub(&m0).unwrap().weighted_norm() < 1e-13);
        assert_eq!(traj.times.len(), 101);
    }

    #[test]
    fn brownian_paths_are_reproducible() {
        let modes = LlgParams::new(1).control_modes;
        let a = sample_brownian(&modes, 1.0, 0.01, 42).unwrap();
        let b = sample_brownian(&modes, 1.0, 0.01, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_brownian(&modes, 1.0, 0.01, 43).unwrap());
        assert_eq!(a.steps(), 100);
    }

    #[test]
    fn shift_adds_integrated_control() {
        let modes = LlgParams::new(1).control_modes;
        let path = sample_brownian(&modes, 1.0, 0.01, 1).unwrap();
        let sched =
            ControlSchedule::from_flat(&modes, 1.0, 2, &[1.0, 0.0, -2.0, 0.5, 0.5, 0.5]).unwrap();
        let shifted = path.shifted(&sched).unwrap();
        let a = path.cumulative();
        let b = shifted.cumulative();
        let end = path.steps();
        let expect = [0.5 * 1.0 + 0.5 * 0.5, 0.5 * 0.5, 0.5 * -2.0 + 0.5 * 0.5];
        for c in 0..3 {
            assert!((b[end][c] - a[end][c] - expect[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn misaligned_shift_is_rejected() {
        let modes = LlgParams::new(1).control_modes;
        let path = sample_brownian(&modes, 1.0, 0.01, 1).unwrap();
        let sched = ControlSchedule::zeros(&modes, 2.0, 2).unwrap();
        assert!(path.shifted(&sched).is_err());
        let sched = ControlSchedule::zeros(&modes, 1.0, 3).unwrap();
        assert!(path.shifted(&sched).is_err());
    }

    #[test]
    fn heun_without_noise_is_deterministic_heun() {
        let model = GalerkinModel::new(LlgParams::new(2)).unwrap();
        let m = ModeState::from_entries(2, &[(0, 1, 1.0), (1, 2, 0.5), (2, 3, 0.2)]).unwrap();
        let dt = 0.01;
        let out = heun_stratonovich_step(&model, &m, dt, &[0.0; 3]).unwrap();
        let f0 = model.drift(&m).unwrap();
        let pred = m.axpy(dt, &f0).unwrap();
        let f1 = model.drift(&pred).unwrap();
        let expect = m.axpy(0.5 * dt, &f0.axpy(1.0, &f1).unwrap()).unwrap();
        assert!(out.sub(&expect).unwrap().weighted_norm() < 1e-15);
    }
}
