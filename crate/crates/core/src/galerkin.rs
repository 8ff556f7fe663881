//! Galerkin-truncated LLG vector fields.
//!
//! The drift `μ₁ M×M_xx − μ₂ M×(M×M_xx)` and the control fields
//! `M ↦ M × cos(kx) e_l` are defined as exact L² projections onto
//! `S_K = span{cos(ix) e_j : i ≤ K}`. The drift is evaluated
//! pseudo-spectrally on `4K+4` points, which integrates the quartic
//! projection integrand exactly, so no aliasing enters.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlgError, Result};
use crate::schedule::ControlSchedule;
use crate::spectral::{
    dealiased_grid_size, dim, eigenvalue, mode_weight, triple_product_coeff, CosineBasis,
    ModeIndex, ModeState, AXES,
};

/// `⟨e_p × e_l, e_j⟩` for 1-based axes (the Levi-Civita symbol).
#[inline]
pub fn levi_civita(p: usize, l: usize, j: usize) -> f64 {
    match (p, l, j) {
        (1, 2, 3) | (2, 3, 1) | (3, 1, 2) => 1.0,
        (3, 2, 1) | (1, 3, 2) | (2, 1, 3) => -1.0,
        _ => 0.0,
    }
}

/// The control-mode set `{(0,1), (0,2), (1,1)}`.
pub fn default_control_modes() -> Vec<ModeIndex> {
    vec![
        ModeIndex {
            frequency: 0,
            axis: 1,
        },
        ModeIndex {
            frequency: 0,
            axis: 2,
        },
        ModeIndex {
            frequency: 1,
            axis: 1,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlgParams {
    /// Precession constant.
    pub mu1: f64,
    /// Gilbert damping constant.
    pub mu2: f64,
    /// Truncation order `K`.
    pub order: usize,
    pub control_modes: Vec<ModeIndex>,
}

impl LlgParams {
    /// `μ₁ = μ₂ = 1` with the default control modes.
    pub fn new(order: usize) -> Self {
        Self {
            mu1: 1.0,
            mu2: 1.0,
            order,
            control_modes: default_control_modes(),
        }
    }

    pub fn with_modes(mut self, modes: Vec<ModeIndex>) -> Self {
        self.control_modes = modes;
        self
    }

    pub fn with_constants(mut self, mu1: f64, mu2: f64) -> Self {
        self.mu1 = mu1;
        self.mu2 = mu2;
        self
    }

    /// Drift switched off; only the control fields act.
    pub fn drift_free(order: usize) -> Self {
        Self::new(order).with_constants(0.0, 0.0)
    }

    /// Checks the physical constraints `μ₁ ≠ 0`, `μ₂ > 0` and the mode set.
    pub fn validate(&self) -> Result<()> {
        if !self.mu1.is_finite() || self.mu1 == 0.0 {
            return Err(invalid(
                "mu1",
                format!("{} must be finite and nonzero", self.mu1),
            ));
        }
        if !(self.mu2.is_finite() && self.mu2 > 0.0) {
            return Err(invalid("mu2", format!("{} must be positive", self.mu2)));
        }
        self.validate_modes()
    }

    pub(crate) fn validate_modes(&self) -> Result<()> {
        for m in &self.control_modes {
            if m.frequency > self.order || !(1..=AXES).contains(&m.axis) {
                return Err(invalid(
                    "control_modes",
                    format!("({}, {}) is outside G_{}", m.frequency, m.axis, self.order),
                ));
            }
        }
        let mut sorted = self.control_modes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.control_modes.len() {
            return Err(invalid("control_modes", "duplicate control mode"));
        }
        Ok(())
    }
}

/// Normalization used when building control-field matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// Exact L² projection onto `S_K` (ground truth).
    #[default]
    Exact,
    /// Coefficients `f_{i,j}^{k,l} = Σ_p (m_{k+i}^p + m_{|k-i|}^p) ε_{plj}`. Twice the exact
    /// projection when `k = 0`, and on entries whose row and column frequencies
    /// are both nonzero when `k ≥ 1`.
    Doubled,
}

/// A linear vector field `m ↦ A m` on `S_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearField {
    order: usize,
    matrix: DMatrix<f64>,
}

impl LinearField {
    pub fn new(order: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let n = dim(order);
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(LlgError::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Self { order, matrix })
    }

    pub fn zeros(order: usize) -> Self {
        let n = dim(order);
        Self {
            order,
            matrix: DMatrix::zeros(n, n),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn apply(&self, m: &ModeState) -> Result<ModeState> {
        if m.order() != self.order {
            return Err(LlgError::DimensionMismatch {
                expected: dim(self.order),
                found: m.dim(),
            });
        }
        ModeState::from_vector(self.order, &(&self.matrix * m.to_vector()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            order: self.order,
            matrix: &self.matrix * s,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.order != other.order {
            return Err(LlgError::DimensionMismatch {
                expected: dim(self.order),
                found: dim(other.order),
            });
        }
        Ok(Self {
            order: self.order,
            matrix: &self.matrix + &other.matrix,
        })
    }

    /// Frobenius norm of the difference.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.order != other.order {
            return Err(LlgError::DimensionMismatch {
                expected: dim(self.order),
                found: dim(other.order),
            });
        }
        Ok((&self.matrix - &other.matrix).norm())
    }
}

/// `A^{k,l}`: the projection of `M × cos(kx) e_l` onto `S_K`.
pub fn control_field(k: usize, l: usize, order: usize) -> Result<LinearField> {
    control_field_with(k, l, order, Convention::Exact)
}

pub fn control_field_with(
    k: usize,
    l: usize,
    order: usize,
    convention: Convention,
) -> Result<LinearField> {
    if k > order {
        return Err(invalid(
            "k",
            format!("control frequency {k} exceeds truncation order {order}"),
        ));
    }
    ModeIndex::new(k, l)?;
    let n = dim(order);
    let mut a = DMatrix::zeros(n, n);
    for i in 0..=order {
        for src in 0..=order {
            let coupling = match convention {
                Convention::Exact => triple_product_coeff(src, k, i) / mode_weight(i),
                Convention::Doubled => {
                    f64::from(u8::from(src == k + i)) + f64::from(u8::from(src == k.abs_diff(i)))
                }
            };
            if coupling == 0.0 {
                continue;
            }
            for j in 1..=AXES {
                for p in 1..=AXES {
                    let e = levi_civita(p, l, j);
                    if e != 0.0 {
                        a[(i * AXES + j - 1, src * AXES + p - 1)] += coupling * e;
                    }
                }
            }
        }
    }
    Ok(LinearField { order, matrix: a })
}

/// Sparse copy of a control field for the time-stepping hot path.
#[derive(Clone, Debug)]
struct SparseField {
    entries: Vec<(usize, usize, f64)>,
}

impl SparseField {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
        }
        Self { entries }
    }

    #[inline]
    fn apply_add(&self, scale: f64, x: &[f64], out: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            out[r] += scale * v * x[c];
        }
    }
}

/// Reusable evaluator for the Galerkin system at one truncation order.
#[derive(Clone, Debug)]
pub struct GalerkinModel {
    params: LlgParams,
    basis: CosineBasis,
    lambdas: Vec<f64>,
    fields: Vec<LinearField>,
    sparse: Vec<SparseField>,
}

impl GalerkinModel {
    pub fn new(params: LlgParams) -> Result<Self> {
        if !(params.mu1.is_finite() && params.mu2.is_finite()) {
            return Err(invalid("mu", "constants must be finite"));
        }
        params.validate_modes()?;
        let order = params.order;
        let basis = CosineBasis::new(order, dealiased_grid_size(order));
        let lambdas = (0..=order).map(eigenvalue).collect();
        let fields = params
            .control_modes
            .iter()
            .map(|m| control_field(m.frequency, m.axis, order))
            .collect::<Result<Vec<_>>>()?;
        let sparse = fields
            .iter()
            .map(|f| SparseField::from_dense(f.matrix()))
            .collect();
        Ok(Self {
            params,
            basis,
            lambdas,
            fields,
            sparse,
        })
    }

    pub fn params(&self) -> &LlgParams {
        &self.params
    }

    pub fn order(&self) -> usize {
        self.params.order
    }

    pub fn dim(&self) -> usize {
        dim(self.params.order)
    }

    pub fn modes(&self) -> &[ModeIndex] {
        &self.params.control_modes
    }

    /// Control fields in the order of `params.control_modes`.
    pub fn fields(&self) -> &[LinearField] {
        &self.fields
    }

    fn check(&self, m: &ModeState) -> Result<()> {
        if m.order() != self.order() {
            return Err(LlgError::DimensionMismatch {
                expected: self.dim(),
                found: m.dim(),
            });
        }
        Ok(())
    }

    /// Writes the projected drift of `m` into `out`.
    ///
    /// Evaluation, pointwise products and projection are fused into one pass
    /// over the grid.
    pub fn drift_into(&self, m: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (mu1, mu2) = (self.params.mu1, self.params.mu2);
        if mu1 == 0.0 && mu2 == 0.0 {
            return;
        }
        for q in 0..self.basis.points() {
            let row = self.basis.row(q);
            let mut f = [0.0; 3];
            let mut l = [0.0; 3];
            for (i, (c, lam)) in row.iter().zip(&self.lambdas).enumerate() {
                let mi = &m[i * AXES..i * AXES + AXES];
                let cl = c * lam;
                for j in 0..AXES {
                    f[j] += c * mi[j];
                    l[j] += cl * mi[j];
                }
            }
            let prec = cross(&f, &l);
            let damp = cross(&f, &prec);
            let g = [
                mu1 * prec[0] - mu2 * damp[0],
                mu1 * prec[1] - mu2 * damp[1],
                mu1 * prec[2] - mu2 * damp[2],
            ];
            for (i, c) in row.iter().enumerate() {
                let o = &mut out[i * AXES..i * AXES + AXES];
                for j in 0..AXES {
                    o[j] += c * g[j];
                }
            }
        }
        let h = 2.0 * std::f64::consts::PI / self.basis.points() as f64;
        for (i, o) in out.chunks_exact_mut(AXES).enumerate() {
            let s = h / mode_weight(i);
            o.iter_mut().for_each(|c| *c *= s);
        }
    }

    /// Adds `Σ_c noise[c] · A_c m` to `out`.
    pub fn add_controls(&self, m: &[f64], controls: &[f64], out: &mut [f64]) {
        for (f, &v) in self.sparse.iter().zip(controls) {
            if v != 0.0 {
                f.apply_add(v, m, out);
            }
        }
    }

    /// Full right-hand side with control values aligned to `modes()`.
    pub fn field_into(&self, m: &[f64], controls: &[f64], out: &mut [f64]) {
        self.drift_into(m, out);
        self.add_controls(m, controls, out);
    }

    pub fn drift(&self, m: &ModeState) -> Result<ModeState> {
        self.check(m)?;
        let mut out = vec![0.0; self.dim()];
        self.drift_into(m.as_slice(), &mut out);
        ModeState::from_coeffs(self.order(), out)
    }

    /// Maps the schedule's values at `t` onto this model's control modes.
    pub fn control_values(&self, sched: &ControlSchedule, t: f64) -> Result<Vec<f64>> {
        let row = sched.value_at(t)?;
        let mut out = vec![0.0; self.fields.len()];
        for (mode, v) in sched.modes.iter().zip(row) {
            let pos = self.position(mode)?;
            out[pos] = *v;
        }
        Ok(out)
    }

    pub(crate) fn position(&self, mode: &ModeIndex) -> Result<usize> {
        self.params
            .control_modes
            .iter()
            .position(|m| m == mode)
            .ok_or_else(|| {
                invalid(
                    "schedule",
                    format!(
                        "mode ({}, {}) is not an admissible control mode",
                        mode.frequency, mode.axis
                    ),
                )
            })
    }

    /// `drift(m) + Σ v_k^l(t) A^{k,l} m`.
    pub fn rhs(&self, m: &ModeState, t: f64, sched: &ControlSchedule) -> Result<ModeState> {
        self.check(m)?;
        let v = self.control_values(sched, t)?;
        let mut out = vec![0.0; self.dim()];
        self.field_into(m.as_slice(), &v, &mut out);
        ModeState::from_coeffs(self.order(), out)
    }
}

#[inline]
pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Projected drift; see [`GalerkinModel::drift`].
pub fn drift(m: &ModeState, p: &LlgParams) -> Result<ModeState> {
    if m.order() != p.order {
        return Err(LlgError::DimensionMismatch {
            expected: dim(p.order),
            found: m.dim(),
        });
    }
    GalerkinModel::new(p.clone())?.drift(m)
}

/// Right-hand side of the controlled Galerkin system.
pub fn rhs(m: &ModeState, t: f64, sched: &ControlSchedule, p: &LlgParams) -> Result<ModeState> {
    GalerkinModel::new(p.clone())?.rhs(m, t, sched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::weighted_inner;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_state_has_no_drift() {
        let m = ModeState::from_entries(3, &[(0, 1, 0.3), (0, 2, -1.0), (0, 3, 2.0)]).unwrap();
        let d = drift(&m, &LlgParams::new(3)).unwrap();
        assert!(d.as_slice().iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn parallel_laplacian_has_no_drift() {
        let m = ModeState::from_entries(2, &[(1, 1, 1.0)]).unwrap();
        let d = drift(&m, &LlgParams::new(2)).unwrap();
        assert!(d.as_slice().iter().all(|c| c.abs() < 1e-14));
    }

    #[test]
    fn two_mode_drift_matches_hand_derivation() {
        let m = ModeState::from_entries(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let d = drift(&m, &LlgParams::new(3)).unwrap();
        let mut expect = ModeState::zeros(3);
        expect.set(1, 3, -1.0).unwrap();
        expect.set(1, 2, -1.0).unwrap();
        expect.set(0, 1, 0.5).unwrap();
        expect.set(2, 1, 0.5).unwrap();
        for (a, b) in d.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-13, "{d:?}");
        }
    }

    #[test]
    fn zero_frequency_field_is_blockwise_cross_product() {
        let a = control_field(0, 1, 2).unwrap();
        let m = ModeState::from_coeffs(2, (1..=9).map(f64::from).collect()).unwrap();
        let out = a.apply(&m).unwrap();
        for i in 0..=2 {
            assert_eq!(out.get(i, 1), 0.0);
            assert!((out.get(i, 2) - m.get(i, 3)).abs() < 1e-15);
            assert!((out.get(i, 3) + m.get(i, 2)).abs() < 1e-15);
        }
        let doubled = control_field_with(0, 1, 2, Convention::Doubled).unwrap();
        assert!((doubled.matrix() - a.matrix() * 2.0).norm() < 1e-15);

        let exact = control_field(1, 2, 3).unwrap();
        let doubled = control_field_with(1, 2, 3, Convention::Doubled).unwrap();
        let diff = doubled.matrix() - exact.matrix() * 2.0;
        assert!(diff.view((3, 3), (9, 9)).norm() < 1e-15);
        assert!(diff.rows(0, 3).norm() > 0.1);
    }

    #[test]
    fn control_field_rejects_high_frequency() {
        assert!(control_field(3, 1, 2).is_err());
        assert!(control_field(0, 4, 2).is_err());
    }

    #[test]
    fn sparsity_pattern() {
        let k = 2;
        let order = 5;
        let a = control_field(k, 3, order).unwrap();
        for i in 0..=order {
            for j in 1..=3 {
                for n in 0..=order {
                    for p in 1..=3 {
                        let v = a.matrix()[(i * 3 + j - 1, n * 3 + p - 1)];
                        let allowed =
                            (n == k + i || n == k.abs_diff(i)) && levi_civita(p, 3, j) != 0.0;
                        if !allowed {
                            assert_eq!(v, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rhs_examples() {
        let p = LlgParams::new(1);
        let model = GalerkinModel::new(p.clone()).unwrap();
        let zero = ControlSchedule::zeros(model.modes(), 1.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ModeState::random_on_sphere(1, 1.0, &mut rng);
        assert_eq!(model.rhs(&m, 0.3, &zero).unwrap(), model.drift(&m).unwrap());

        let sched = ControlSchedule::constant(model.modes(), 1.0, &[1.0, 0.0, 0.0]).unwrap();
        let r = model.rhs(&ModeState::zeros(1), 0.5, &sched).unwrap();
        assert!(r.as_slice().iter().all(|c| *c == 0.0));

        let m = ModeState::from_entries(1, &[(0, 3, 1.0)]).unwrap();
        let r = model.rhs(&m, 0.5, &sched).unwrap();
        // e_3 × e_1 = e_2
        assert!((r.get(0, 2) - 1.0).abs() < 1e-15);
        assert!(model.rhs(&m, 1.5, &sched).is_err());
    }

    #[test]
    fn rhs_is_tangent_to_weighted_sphere() {
        let model = GalerkinModel::new(LlgParams::new(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sched = ControlSchedule::constant(model.modes(), 1.0, &[0.7, -1.3, 2.1]).unwrap();
        for _ in 0..20 {
            let m = ModeState::random_on_sphere(4, 3.0, &mut rng);
            let r = model.rhs(&m, 0.0, &sched).unwrap();
            let rel = weighted_inner(&m, &r).unwrap() / (m.weighted_norm() * r.weighted_norm());
            assert!(rel.abs() < 1e-13);
        }
    }

    #[test]
    fn params_validation() {
        assert!(LlgParams::new(2).validate().is_ok());
        assert!(LlgParams::new(2)
            .with_constants(0.0, 1.0)
            .validate()
            .is_err());
        assert!(LlgParams::new(2)
            .with_constants(1.0, 0.0)
            .validate()
            .is_err());
        assert!(LlgParams::new(0).validate().is_err());
        let dup = LlgParams::new(2).with_modes(vec![
            ModeIndex {
                frequency: 0,
                axis: 1
            };
            2
        ]);
        assert!(dup.validate().is_err());
    }
}
