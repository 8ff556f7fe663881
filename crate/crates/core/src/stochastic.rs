//! Girsanov weights and small-ball probability estimates for the noisy
//! Galerkin system `dm = drift dt + σ Σ A^{k,l} m ∘ dβ_k^l`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{invalid, LlgError, Result};
use crate::galerkin::GalerkinModel;
use crate::integrators::{
    check_alignment, path_seed, sample_brownian, simulate_sde, SamplePath, SdeScheme,
};
use crate::schedule::{fmt17, ControlSchedule};
use crate::spectral::{mode_weight, ModeState, AXES};
use crate::steering::{synthesize_steering, SteeringConfig, SteeringResult};

/// Two-sided confidence level of every reported interval.
pub const CONFIDENCE: f64 = 0.95;
const Z95: f64 = 1.959_963_984_540_054;

/// Radon–Nikodym weight `Q(T)` of one path for the shift `u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GirsanovWeight {
    pub value: f64,
    pub log_value: f64,
}

/// `log Q = −Σ u(t_i) ΔW_i − ½ Σ |u(t_i)|² dt` with left-point evaluation.
///
/// Every mode of `shift` must be driven by `path`; path modes without a
/// shift contribute nothing.
pub fn girsanov_weight(path: &SamplePath, shift: &ControlSchedule) -> Result<GirsanovWeight> {
    check_alignment(path, shift)?;
    let cols = shift
        .modes
        .iter()
        .map(|m| {
            path.modes.iter().position(|p| p == m).ok_or_else(|| {
                LlgError::GridMismatch(format!(
                    "shift mode ({}, {}) has no noise",
                    m.frequency, m.axis
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stoch = Neumaier::default();
    let mut quad = Neumaier::default();
    for (s, row) in path.increments.iter().enumerate() {
        let u = shift.value_at(s as f64 * path.dt)?;
        for (c, &col) in cols.iter().enumerate() {
            stoch.add(u[c] * row[col]);
            quad.add(u[c] * u[c] * path.dt);
        }
    }
    let log_value = -stoch.sum() - 0.5 * quad.sum();
    Ok(GirsanovWeight {
        value: log_value.exp(),
        log_value,
    })
}

/// Compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean and standard error from compensated sums.
fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut s = Neumaier::default();
    values.iter().for_each(|v| s.add(*v));
    let mean = s.sum() / n;
    let mut q = Neumaier::default();
    values.iter().for_each(|v| q.add((v - mean).powi(2)));
    let var = if values.len() > 1 {
        q.sum() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Exact value for a deterministic shift.
    pub closed_form: f64,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// `∫ Σ|u|² dt`.
    pub energy: f64,
}

impl MomentEstimate {
    /// `|mean − closed_form| ≤ k · stderr`.
    pub fn agrees(&self, k: f64) -> bool {
        (self.mean - self.closed_form).abs() <= k * self.stderr
    }
}

fn weight_samples(
    shift: &ControlSchedule,
    paths: usize,
    dt: f64,
    seed: u64,
    power: f64,
) -> Result<Vec<f64>> {
    if paths == 0 {
        return Err(invalid("N", "need at least one path"));
    }
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let path = sample_brownian(&shift.modes, shift.horizon, dt, path_seed(seed, i as u64))?;
            Ok((power * girsanov_weight(&path, shift)?.log_value).exp())
        })
        .collect()
}

/// Monte-Carlo `E[Q(T)]`; the closed form is 1.
pub fn weight_moment(
    shift: &ControlSchedule,
    paths: usize,
    dt: f64,
    seed: u64,
) -> Result<MomentEstimate> {
    let w = weight_samples(shift, paths, dt, seed, 1.0)?;
    let (mean, stderr) = mean_stderr(&w);
    Ok(MomentEstimate {
        mean,
        stderr,
        closed_form: 1.0,
        paths,
        dt,
        seed,
        energy: shift.energy(),
    })
}

/// Monte-Carlo `E[Q(T)⁻¹]`; the closed form is `exp(∫ Σ|u|² dt)`.
pub fn inverse_weight_moment(
    shift: &ControlSchedule,
    paths: usize,
    dt: f64,
    seed: u64,
) -> Result<MomentEstimate> {
    let w = weight_samples(shift, paths, dt, seed, -1.0)?;
    let (mean, stderr) = mean_stderr(&w);
    Ok(MomentEstimate {
        mean,
        stderr,
        closed_form: shift.energy().exp(),
        paths,
        dt,
        seed,
        energy: shift.energy(),
    })
}

/// Smallest `C ≥ 1` with `value ≤ C·exp(C·energy)`.
pub fn inverse_moment_constant(value: f64, energy: f64) -> f64 {
    let fits = |c: f64| value <= c * (c * energy).exp();
    if fits(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (1.0, 2.0);
    while !fits(hi) {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Clopper–Pearson interval for `hits` successes in `n` trials.
pub fn clopper_pearson(hits: usize, n: usize, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || hits > n {
        return Err(invalid("hits", format!("{hits} successes in {n} trials")));
    }
    let alpha = 1.0 - confidence;
    let (x, n) = (hits as f64, n as f64);
    let beta = |a: f64, b: f64| Beta::new(a, b).map_err(|e| invalid("beta", e.to_string()));
    let low = if hits == 0 {
        0.0
    } else {
        beta(x, n - x + 1.0)?.inverse_cdf(alpha / 2.0)
    };
    let high = if hits as f64 == n {
        1.0
    } else {
        beta(x + 1.0, n - x)?.inverse_cdf(1.0 - alpha / 2.0)
    };
    Ok((low, high))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMethod {
    Direct,
    GirsanovShifted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmallBallConfig {
    pub eps: f64,
    pub horizon: f64,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Noise amplitude `σ`.
    pub noise_scale: f64,
    pub scheme: SdeScheme,
}

impl Default for SmallBallConfig {
    fn default() -> Self {
        Self {
            eps: 0.05,
            horizon: 1.0,
            paths: 10_000,
            dt: 1e-3,
            seed: 0,
            noise_scale: 1.0,
            scheme: SdeScheme::Heun,
        }
    }
}

impl SmallBallConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(invalid("eps", format!("{} must be positive", self.eps)));
        }
        if self.paths == 0 {
            return Err(invalid("N", "need at least one path"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("T", format!("{} must be positive", self.horizon)));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(invalid("dt", format!("{} must lie in (0, T]", self.dt)));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(invalid(
                "noise_scale",
                format!("{} must be positive", self.noise_scale),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallBallEstimate {
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Natural logarithms of the three values above; they stay finite when
    /// a shifted estimate lies below the f64 range.
    pub log_p_hat: f64,
    pub log_ci_low: f64,
    pub log_ci_high: f64,
    /// Number of paths.
    #[serde(rename = "N")]
    pub paths: usize,
    pub eps: f64,
    pub method: EstimatorMethod,
    /// Paths ending in the ball, under the simulated (possibly shifted) law.
    pub hits: usize,
    pub stderr: f64,
    /// Clopper–Pearson interval of the raw hit fraction.
    pub hit_ci: (f64, f64),
    /// Normal-approximation interval of the weighted mean (shifted mode).
    pub delta_ci: Option<(f64, f64)>,
    /// `exp(∫Σ|u|² dt)` of the noise shift (shifted mode).
    pub inverse_weight_moment: Option<f64>,
    /// `∫Σ|u|² dt` of the noise shift (shifted mode).
    pub shift_energy: Option<f64>,
    pub mean_distance: f64,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub noise_scale: f64,
}

/// Per-path outcome, in path order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub index: usize,
    pub seed: u64,
    pub distance: f64,
    pub hit: bool,
    pub log_weight: f64,
}

/// Writes per-path diagnostics: `index, seed, distance, hit, log_weight`.
pub fn write_paths_csv<W: Write>(records: &[PathRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["index", "seed", "distance", "hit", "log_weight"])?;
    for r in records {
        wr.write_record([
            r.index.to_string(),
            r.seed.to_string(),
            fmt17(r.distance),
            u8::from(r.hit).to_string(),
            fmt17(r.log_weight),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Estimates `P(‖m(T) − m₁‖_w ≤ ε)` from `m0`.
///
/// Without `steering` the paths are plain Heun trajectories and the interval
/// is Clopper–Pearson. With a steering control `v`, the noise is shifted by
/// `u = v/σ` so that the noise-free shifted system follows the steered
/// trajectory; each path contributes `Q(T)·1{hit}` with `Q` computed from
/// the unshifted increments. The reported lower bound is then
/// `CP_low(hits)² / E[Q⁻¹]` (Cauchy–Schwarz), capped at `p_hat`, and the
/// upper bound is the normal-approximation bound of the weighted mean.
/// Both are also returned as logarithms.
pub fn estimate_small_ball(
    model: &GalerkinModel,
    m0: &ModeState,
    m1: &ModeState,
    cfg: &SmallBallConfig,
    steering: Option<&ControlSchedule>,
) -> Result<(SmallBallEstimate, Vec<PathRecord>)> {
    cfg.validate()?;
    if m0.order() != model.order() || m1.order() != model.order() {
        return Err(LlgError::DimensionMismatch {
            expected: model.dim(),
            found: if m0.order() != model.order() {
                m0.dim()
            } else {
                m1.dim()
            },
        });
    }
    let shift = steering.map(|v| v.scaled(1.0 / cfg.noise_scale));
    if let Some(u) = &shift {
        if (u.horizon - cfg.horizon).abs() > 1e-9 * cfg.horizon {
            return Err(LlgError::GridMismatch(format!(
                "shift covers [0, {}] but T = {}",
                u.horizon, cfg.horizon
            )));
        }
    }
    let modes = model.modes().to_vec();
    let records: Vec<PathRecord> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let seed = path_seed(cfg.seed, i as u64);
            let path = sample_brownian(&modes, cfg.horizon, cfg.dt, seed)?;
            let (driven, log_weight) = match &shift {
                Some(u) => (path.shifted(u)?, girsanov_weight(&path, u)?.log_value),
                None => (path, 0.0),
            };
            let distance =
                match simulate_sde(model, m0, &driven, cfg.noise_scale, cfg.scheme, false) {
                    Ok(traj) => traj.final_state().sub(m1)?.weighted_norm(),
                    Err(LlgError::BlowUp { .. } | LlgError::NonFinite { .. }) => f64::INFINITY,
                    Err(e) => return Err(e),
                };
            Ok(PathRecord {
                index: i,
                seed,
                distance,
                hit: distance <= cfg.eps,
                log_weight,
            })
        })
        .collect::<Result<_>>()?;

    let hits = records.iter().filter(|r| r.hit).count();
    let hit_ci = clopper_pearson(hits, cfg.paths, CONFIDENCE)?;
    let finite: Vec<f64> = records
        .iter()
        .map(|r| r.distance)
        .filter(|d| d.is_finite())
        .collect();
    let mean_distance = if finite.is_empty() {
        f64::INFINITY
    } else {
        mean_stderr(&finite).0
    };
    let n = cfg.paths as f64;
    let est = match &shift {
        None => SmallBallEstimate {
            p_hat: hits as f64 / n,
            ci_low: hit_ci.0,
            ci_high: hit_ci.1,
            log_p_hat: (hits as f64 / n).ln(),
            log_ci_low: hit_ci.0.ln(),
            log_ci_high: hit_ci.1.ln(),
            paths: cfg.paths,
            eps: cfg.eps,
            method: EstimatorMethod::Direct,
            hits,
            stderr: ((hits as f64 / n) * (1.0 - hits as f64 / n) / n).sqrt(),
            hit_ci,
            delta_ci: None,
            inverse_weight_moment: None,
            shift_energy: None,
            mean_distance,
            seed: cfg.seed,
            dt: cfg.dt,
            horizon: cfg.horizon,
            noise_scale: cfg.noise_scale,
        },
        Some(u) => {
            // weights are rescaled by the largest hit weight so that estimates
            // far below the f64 range keep their logarithms
            let top = records
                .iter()
                .filter(|r| r.hit)
                .map(|r| r.log_weight)
                .fold(f64::NEG_INFINITY, f64::max);
            let scaled: Vec<f64> = records
                .iter()
                .map(|r| {
                    if r.hit {
                        (r.log_weight - top).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let (mean, sd) = mean_stderr(&scaled);
            let log_p_hat = if hits == 0 {
                f64::NEG_INFINITY
            } else {
                (top + mean.ln()).min(0.0)
            };
            let log_upper = if hits == 0 {
                f64::NEG_INFINITY
            } else {
                (top + (mean + Z95 * sd).ln()).min(0.0)
            };
            let lower = if hits == 0 {
                0.0
            } else {
                (mean - Z95 * sd).max(0.0)
            };
            let delta = ((top + lower.ln()).exp().min(1.0), log_upper.exp());
            let energy = u.energy();
            let log_holder = 2.0 * hit_ci.0.ln() - energy;
            let log_ci_low = log_holder.min(log_p_hat);
            let log_ci_high = log_upper.max(log_p_hat);
            SmallBallEstimate {
                p_hat: log_p_hat.exp(),
                ci_low: log_ci_low.exp(),
                ci_high: log_ci_high.exp(),
                log_p_hat,
                log_ci_low,
                log_ci_high,
                paths: cfg.paths,
                eps: cfg.eps,
                method: EstimatorMethod::GirsanovShifted,
                hits,
                stderr: if hits == 0 {
                    0.0
                } else {
                    (top + sd.ln()).exp()
                },
                hit_ci,
                delta_ci: Some(delta),
                inverse_weight_moment: Some(energy.exp()),
                shift_energy: Some(energy),
                mean_distance,
                seed: cfg.seed,
                dt: cfg.dt,
                horizon: cfg.horizon,
                noise_scale: cfg.noise_scale,
            }
        }
    };
    Ok((est, records))
}

/// Initial points around `center`: the center itself and `count − 1`
/// points at distance at most (and typically close to) `radius`, all on the level set of the given
/// quadratic forms (`mᵀ S m` in flat coordinates) through `center`.
///
/// With no forms the points are kept on the weighted sphere of `center`.
pub fn perturbation_grid(
    center: &ModeState,
    radius: f64,
    count: usize,
    invariants: &[DMatrix<f64>],
    seed: u64,
) -> Result<Vec<ModeState>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if !(radius >= 0.0) {
        return Err(invalid("R", format!("{radius} must be non-negative")));
    }
    let n = center.dim();
    let forms: Vec<DMatrix<f64>> = if invariants.is_empty() {
        let w = DVector::from_iterator(n, (0..n).map(|f| mode_weight(f / AXES)));
        vec![DMatrix::from_diagonal(&w)]
    } else {
        invariants.to_vec()
    };
    if forms.iter().any(|s| s.nrows() != n || s.ncols() != n) {
        return Err(LlgError::DimensionMismatch {
            expected: n,
            found: forms[0].nrows(),
        });
    }
    let c = center.to_vector();
    let levels: Vec<f64> = forms.iter().map(|s| c.dot(&(s * &c))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![center.clone()];
    if radius == 0.0 {
        return Ok(out);
    }
    while out.len() < count {
        let dir = DVector::from_iterator(
            n,
            (0..n).map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)),
        );
        let grads = DMatrix::from_columns(&forms.iter().map(|s| 2.0 * s * &c).collect::<Vec<_>>());
        let tangent = &dir
            - &grads
                * grads
                    .clone()
                    .svd(true, true)
                    .solve(&dir, 1e-12)
                    .map_err(|e| invalid("grid", e))?;
        let weighted = (0..n)
            .map(|f| mode_weight(f / AXES) * tangent[f] * tangent[f])
            .sum::<f64>()
            .sqrt();
        if weighted < 1e-12 {
            continue;
        }
        let project = |mut x: DVector<f64>| -> Result<DVector<f64>> {
            for _ in 0..50 {
                let g =
                    DMatrix::from_columns(&forms.iter().map(|s| 2.0 * s * &x).collect::<Vec<_>>());
                let r = DVector::from_iterator(
                    forms.len(),
                    forms.iter().zip(&levels).map(|(s, l)| x.dot(&(s * &x)) - l),
                );
                if r.amax() < 1e-13 {
                    break;
                }
                let step = g
                    .transpose()
                    .svd(true, true)
                    .solve(&r, 1e-14)
                    .map_err(|e| invalid("grid", e))?;
                x -= step;
            }
            Ok(x)
        };
        // Curvature of the level set pushes the projected point outward;
        // shrink the tangent step until it lands inside the ball.
        let mut scale = radius / weighted;
        let mut x = project(&c + &tangent * scale)?;
        for _ in 0..20 {
            let d = weighted_distance(&x, &c);
            if d <= radius {
                break;
            }
            scale *= radius / d * (1.0 - 1e-12);
            x = project(&c + &tangent * scale)?;
        }
        out.push(ModeState::from_vector(center.order(), &x)?);
    }
    Ok(out)
}

fn weighted_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (0..a.len())
        .map(|f| mode_weight(f / AXES) * (a[f] - b[f]).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub initial: ModeState,
    /// `‖m̃₀ − m₀‖_w`.
    pub distance: f64,
    pub steering: Option<SteeringResult>,
    pub estimate: SmallBallEstimate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub radius: f64,
    pub eps: f64,
    pub points: Vec<SweepPoint>,
    /// Minimum `ci_low` over the grid.
    pub empirical_delta: f64,
    /// Minimum `log_ci_low` over the grid.
    pub log_empirical_delta: f64,
}

/// Runs [`estimate_small_ball`] from every grid point.
///
/// With a steering configuration each point is first steered to `m1` and
/// the estimate is Girsanov-shifted by its schedule; otherwise it is direct.
/// Grid point `i` uses seed `cfg.seed ⊕ (i << 32)`.
pub fn support_theorem_sweep(
    model: &GalerkinModel,
    center: &ModeState,
    m1: &ModeState,
    grid: &[ModeState],
    radius: f64,
    cfg: &SmallBallConfig,
    steering: Option<(&SteeringConfig, f64)>,
) -> Result<SweepReport> {
    let mut points = Vec::with_capacity(grid.len());
    for (i, m0) in grid.iter().enumerate() {
        let distance = m0.sub(center)?.weighted_norm();
        if distance > radius * (1.0 + 1e-9) + 1e-12 {
            return Err(invalid(
                "grid",
                format!("point {i} lies {distance} from the center, beyond R = {radius}"),
            ));
        }
        let local = SmallBallConfig {
            seed: cfg.seed ^ ((i as u64) << 32),
            ..cfg.clone()
        };
        let steer = match steering {
            Some((sc, dt)) => Some(synthesize_steering(
                model,
                m0,
                m1,
                cfg.horizon,
                dt,
                sc,
                local.seed,
            )?),
            None => None,
        };
        let (estimate, _) =
            estimate_small_ball(model, m0, m1, &local, steer.as_ref().map(|s| &s.schedule))?;
        points.push(SweepPoint {
            initial: m0.clone(),
            distance,
            steering: steer,
            estimate,
        });
    }
    let empirical_delta = points
        .iter()
        .map(|p| p.estimate.ci_low)
        .fold(f64::INFINITY, f64::min);
    let log_empirical_delta = points
        .iter()
        .map(|p| p.estimate.log_ci_low)
        .fold(f64::INFINITY, f64::min);
    Ok(SweepReport {
        radius,
        eps: cfg.eps,
        points,
        empirical_delta: if empirical_delta.is_finite() {
            empirical_delta
        } else {
            0.0
        },
        log_empirical_delta: if log_empirical_delta == f64::INFINITY {
            f64::NEG_INFINITY
        } else {
            log_empirical_delta
        },
    })
}
