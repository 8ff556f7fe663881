//! Cosine basis of the Neumann Laplacian on (0, 2π).
//!
//! A [`ModeState`] holds the coefficients `m_i^j` of
//! `M(x) = Σ_i Σ_j m_i^j cos(i x) e_j` for frequencies `0..=K` and axes
//! `1..=3`. The basis is left unnormalized; the squared norms
//! `c_0 = 2π` and `c_i = π` (`i ≥ 1`) are carried explicitly by
//! [`weighted_inner`] and [`project_to_modes`].
//!
//! Physical samples live on the uniform periodic grid `x_q = 2πq/N`. The
//! trapezoid rule on that grid integrates trigonometric polynomials of
//! degree `< N` exactly, which is what makes the projections below exact.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlgError, Result};

/// Number of spatial axes of the magnetization.
pub const AXES: usize = 3;

/// A (frequency, axis) pair; `axis` is 1-based to match `e_1, e_2, e_3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub frequency: usize,
    pub axis: usize,
}

impl ModeIndex {
    pub fn new(frequency: usize, axis: usize) -> Result<Self> {
        if !(1..=AXES).contains(&axis) {
            return Err(invalid("axis", format!("{axis} is not in {{1,2,3}}")));
        }
        Ok(Self { frequency, axis })
    }

    /// Position in the flattened coefficient vector.
    pub fn flat(&self) -> usize {
        self.frequency * AXES + self.axis - 1
    }
}

/// Squared L² norm of `cos(i x)` over (0, 2π).
#[inline]
pub fn mode_weight(frequency: usize) -> f64 {
    if frequency == 0 {
        2.0 * PI
    } else {
        PI
    }
}

/// Neumann eigenvalue `-n²` belonging to `cos(n x)`.
#[inline]
pub fn eigenvalue(n: usize) -> f64 {
    let n = n as f64;
    -n * n
}

/// Galerkin state: cosine coefficients for frequencies `0..=order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    order: usize,
    coeffs: Vec<f64>,
}

impl ModeState {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            coeffs: vec![0.0; dim(order)],
        }
    }

    pub fn from_coeffs(order: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != dim(order) {
            return Err(LlgError::DimensionMismatch {
                expected: dim(order),
                found: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coeffs", "entries must be finite"));
        }
        Ok(Self { order, coeffs })
    }

    pub fn from_vector(order: usize, v: &DVector<f64>) -> Result<Self> {
        Self::from_coeffs(order, v.as_slice().to_vec())
    }

    /// Builds a state from `(frequency, axis, value)` triples.
    pub fn from_entries(order: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut m = Self::zeros(order);
        for &(i, j, v) in entries {
            m.set(i, j, v)?;
        }
        Ok(m)
    }

    /// Truncation order `K`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Ambient dimension `3(K+1)`.
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn get(&self, frequency: usize, axis: usize) -> f64 {
        if frequency > self.order || !(1..=AXES).contains(&axis) {
            return 0.0;
        }
        self.coeffs[frequency * AXES + axis - 1]
    }

    pub fn set(&mut self, frequency: usize, axis: usize, value: f64) -> Result<()> {
        if frequency > self.order {
            return Err(invalid(
                "frequency",
                format!("{frequency} exceeds truncation order {}", self.order),
            ));
        }
        let idx = ModeIndex::new(frequency, axis)?.flat();
        self.coeffs[idx] = value;
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Zero-pads or truncates to another order (the latter is `Π_K`).
    pub fn resized(&self, order: usize) -> Self {
        let mut out = Self::zeros(order);
        let n = out.coeffs.len().min(self.coeffs.len());
        out.coeffs[..n].copy_from_slice(&self.coeffs[..n]);
        out
    }

    /// Coefficients above frequency `order` (the complement `I - Π_K`).
    pub fn tail(&self, order: usize) -> Self {
        let mut out = self.clone();
        let start = dim(order).min(out.coeffs.len());
        for c in &mut out.coeffs[..start] {
            *c = 0.0;
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// `self + s * other`; orders must agree.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        check_same(self, other)?;
        Ok(Self {
            order: self.order,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// `‖m‖_w`, the L² norm of the reconstructed field.
    pub fn weighted_norm(&self) -> f64 {
        weighted_norm_slice(&self.coeffs).sqrt()
    }

    /// Draws a state uniformly on the weighted sphere of the given radius.
    pub fn random_on_sphere<R: Rng + ?Sized>(order: usize, radius: f64, rng: &mut R) -> Self {
        // Gaussian in the orthonormal coordinates sqrt(c_i) m_i^j, then rescale.
        let mut coeffs = vec![0.0; dim(order)];
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *c = z / mode_weight(idx / AXES).sqrt();
        }
        let norm = weighted_norm_slice(&coeffs).sqrt();
        for c in &mut coeffs {
            *c *= radius / norm;
        }
        Self { order, coeffs }
    }
}

/// Ambient dimension `3(K+1)`.
#[inline]
pub fn dim(order: usize) -> usize {
    AXES * (order + 1)
}

fn check_same(a: &ModeState, b: &ModeState) -> Result<()> {
    if a.order != b.order {
        return Err(LlgError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

pub(crate) fn weighted_inner_slice(a: &[f64], b: &[f64]) -> f64 {
    a.chunks_exact(AXES)
        .zip(b.chunks_exact(AXES))
        .enumerate()
        .map(|(i, (x, y))| mode_weight(i) * (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]))
        .sum()
}

pub(crate) fn weighted_norm_slice(a: &[f64]) -> f64 {
    weighted_inner_slice(a, a)
}

/// L²(0,2π;ℝ³) inner product of the reconstructed fields.
pub fn weighted_inner(a: &ModeState, b: &ModeState) -> Result<f64> {
    check_same(a, b)?;
    Ok(weighted_inner_slice(&a.coeffs, &b.coeffs))
}

/// Samples of `M(x)` on the periodic grid `x_q = 2πq/N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalField {
    pub values: Vec<[f64; 3]>,
}

impl PhysicalField {
    pub fn from_fn(n: usize, f: impl Fn(f64) -> [f64; 3]) -> Self {
        Self {
            values: (0..n).map(|q| f(grid_point(q, n))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x(&self, q: usize) -> f64 {
        grid_point(q, self.values.len())
    }

    /// Trapezoid approximation of `∫ |M|² dx`.
    pub fn l2_norm_sq(&self) -> f64 {
        let h = 2.0 * PI / self.values.len() as f64;
        h * self
            .values
            .iter()
            .map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
            .sum::<f64>()
    }
}

#[inline]
pub fn grid_point(q: usize, n: usize) -> f64 {
    2.0 * PI * q as f64 / n as f64
}

/// Grid size that integrates quartic products of order-`K` fields exactly.
#[inline]
pub fn dealiased_grid_size(order: usize) -> usize {
    4 * order + 4
}

/// Precomputed `cos(i x_q)` table used by the transforms.
#[derive(Clone, Debug)]
pub struct CosineBasis {
    order: usize,
    points: usize,
    // row-major: table[q * (order + 1) + i]
    table: Vec<f64>,
}

impl CosineBasis {
    pub fn new(order: usize, points: usize) -> Self {
        let stride = order + 1;
        let mut table = vec![0.0; points * stride];
        for q in 0..points {
            let x = grid_point(q, points);
            for i in 0..stride {
                table[q * stride + i] = (i as f64 * x).cos();
            }
        }
        Self {
            order,
            points,
            table,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn cos(&self, q: usize, i: usize) -> f64 {
        self.table[q * (self.order + 1) + i]
    }

    /// `cos(i x_q)` for `i = 0..=K`.
    #[inline]
    pub(crate) fn row(&self, q: usize) -> &[f64] {
        let stride = self.order + 1;
        &self.table[q * stride..(q + 1) * stride]
    }

    /// Evaluates `Σ_i scale_i m_i cos(i x_q)`; `scale` defaults to 1.
    pub(crate) fn evaluate_into(
        &self,
        coeffs: &[f64],
        scale: Option<&[f64]>,
        out: &mut [[f64; 3]],
    ) {
        let stride = self.order + 1;
        for (q, v) in out.iter_mut().enumerate() {
            let row = &self.table[q * stride..(q + 1) * stride];
            let mut acc = [0.0; 3];
            for (i, c) in row.iter().enumerate() {
                let s = scale.map_or(1.0, |s| s[i]) * c;
                let m = &coeffs[i * AXES..i * AXES + AXES];
                acc[0] += s * m[0];
                acc[1] += s * m[1];
                acc[2] += s * m[2];
            }
            *v = acc;
        }
    }

    /// Exact L² projection of grid samples onto the cosine modes.
    pub(crate) fn project_into(&self, values: &[[f64; 3]], out: &mut [f64]) {
        let stride = self.order + 1;
        let h = 2.0 * PI / self.points as f64;
        out.iter_mut().for_each(|c| *c = 0.0);
        for (q, v) in values.iter().enumerate() {
            let row = &self.table[q * stride..(q + 1) * stride];
            for (i, c) in row.iter().enumerate() {
                let o = &mut out[i * AXES..i * AXES + AXES];
                o[0] += c * v[0];
                o[1] += c * v[1];
                o[2] += c * v[2];
            }
        }
        for (i, o) in out.chunks_exact_mut(AXES).enumerate() {
            let s = h / mode_weight(i);
            o.iter_mut().for_each(|c| *c *= s);
        }
    }
}

/// `values[q][j] = Σ_i m_i^j cos(i x_q)` on `n` grid points.
pub fn evaluate_physical(m: &ModeState, n: usize) -> Result<PhysicalField> {
    if n == 0 {
        return Err(invalid("n", "grid must have at least one point"));
    }
    let basis = CosineBasis::new(m.order, n);
    let mut values = vec![[0.0; 3]; n];
    basis.evaluate_into(&m.coeffs, None, &mut values);
    Ok(PhysicalField { values })
}

/// Projects grid samples onto frequencies `0..=order`.
///
/// Requires `N ≥ 2K + 2`; coarser grids alias the top modes and are rejected.
pub fn project_to_modes(f: &PhysicalField, order: usize) -> Result<ModeState> {
    let required = 2 * order + 2;
    if f.len() < required {
        return Err(LlgError::GridTooCoarse {
            points: f.len(),
            order,
            required,
        });
    }
    let basis = CosineBasis::new(order, f.len());
    let mut coeffs = vec![0.0; dim(order)];
    basis.project_into(&f.values, &mut coeffs);
    Ok(ModeState { order, coeffs })
}

/// `∫₀^{2π} cos(nx) cos(kx) cos(rx) dx`.
///
/// Each of the four sign combinations `n ± k ± r` that vanishes contributes
/// `π/2`, so coincident resonances are counted with multiplicity.
pub fn triple_product_coeff(n: usize, k: usize, r: usize) -> f64 {
    let (n, k, r) = (n as i64, k as i64, r as i64);
    let hits = [n + k + r, n + k - r, n - k + r, n - k - r]
        .iter()
        .filter(|&&s| s == 0)
        .count();
    hits as f64 * PI / 2.0
}

/// `∫₀^{2π} cos(lx) cos(nx) cos(kx) cos(rx) dx`, resonances with multiplicity.
pub fn quad_product_coeff(l: usize, n: usize, k: usize, r: usize) -> f64 {
    let (l, n, k, r) = (l as i64, n as i64, k as i64, r as i64);
    let mut hits = 0;
    for sn in [1, -1] {
        for sk in [1, -1] {
            for sr in [1, -1] {
                if l + sn * n + sk * k + sr * r == 0 {
                    hits += 1;
                }
            }
        }
    }
    hits as f64 * PI / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigenvalues() {
        assert_eq!(eigenvalue(0), 0.0);
        assert_eq!(eigenvalue(1), -1.0);
        assert_eq!(eigenvalue(3), -9.0);
    }

    #[test]
    fn weighted_inner_examples() {
        let a = ModeState::from_entries(2, &[(0, 1, 1.0)]).unwrap();
        assert_relative_eq!(weighted_inner(&a, &a).unwrap(), 2.0 * PI);
        let b = ModeState::from_entries(2, &[(1, 1, 1.0)]).unwrap();
        assert_relative_eq!(weighted_inner(&b, &b).unwrap(), PI);
        let c = ModeState::from_entries(2, &[(2, 1, 1.0)]).unwrap();
        assert_eq!(weighted_inner(&b, &c).unwrap(), 0.0);
        assert!(weighted_inner(&a, &ModeState::zeros(3)).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let m = ModeState::from_entries(3, &[(0, 2, 1.0)]).unwrap();
        for v in evaluate_physical(&m, 7).unwrap().values {
            assert_eq!(v, [0.0, 1.0, 0.0]);
        }
        let m = ModeState::from_entries(1, &[(1, 1, 1.0)]).unwrap();
        let f = evaluate_physical(&m, 4).unwrap();
        let expect = [1.0, 0.0, -1.0, 0.0];
        for (v, e) in f.values.iter().zip(expect) {
            assert!((v[0] - e).abs() < 1e-15);
            assert_eq!(v[1], 0.0);
        }
    }

    #[test]
    fn project_examples() {
        let f = PhysicalField::from_fn(6, |_| [0.0, 0.0, 5.0]);
        let m = project_to_modes(&f, 2).unwrap();
        assert_relative_eq!(m.get(0, 3), 5.0, epsilon = 1e-14);
        assert!(m
            .as_slice()
            .iter()
            .enumerate()
            .all(|(i, c)| i == 2 || c.abs() < 1e-14));

        let f = PhysicalField::from_fn(10, |x| [(2.0 * x).cos(), 0.0, 0.0]);
        let m = project_to_modes(&f, 2).unwrap();
        assert_relative_eq!(m.get(2, 1), 1.0, epsilon = 1e-14);
        assert!(m.get(0, 1).abs() < 1e-14 && m.get(1, 1).abs() < 1e-14);

        let f = PhysicalField::from_fn(10, |x| [x.cos().powi(2), 0.0, 0.0]);
        let m = project_to_modes(&f, 2).unwrap();
        assert_relative_eq!(m.get(0, 1), 0.5, epsilon = 1e-14);
        assert_relative_eq!(m.get(2, 1), 0.5, epsilon = 1e-14);
        assert!(m.get(1, 1).abs() < 1e-14);
    }

    #[test]
    fn coarse_grid_rejected() {
        let f = PhysicalField::from_fn(5, |_| [1.0, 0.0, 0.0]);
        assert!(matches!(
            project_to_modes(&f, 2),
            Err(LlgError::GridTooCoarse { required: 6, .. })
        ));
    }

    #[test]
    fn table_examples() {
        assert_relative_eq!(triple_product_coeff(0, 0, 0), 2.0 * PI);
        assert_relative_eq!(triple_product_coeff(1, 1, 2), PI / 2.0);
        assert_eq!(triple_product_coeff(1, 2, 5), 0.0);
        assert_relative_eq!(quad_product_coeff(0, 0, 0, 0), 2.0 * PI);
        assert_relative_eq!(quad_product_coeff(1, 1, 1, 3), PI / 4.0);
        assert_relative_eq!(quad_product_coeff(1, 1, 2, 4), PI / 4.0);
    }

    #[test]
    fn sphere_sampling_has_requested_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ModeState::random_on_sphere(4, (2.0 * PI).sqrt(), &mut rng);
        assert_relative_eq!(m.weighted_norm(), (2.0 * PI).sqrt(), epsilon = 1e-13);
    }

    #[test]
    fn resize_and_tail_partition_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = ModeState::random_on_sphere(6, 1.0, &mut rng);
        let low = m.resized(2).resized(6);
        let high = m.tail(2);
        let sum = low.axpy(1.0, &high).unwrap();
        assert_eq!(sum, m);
        assert!(weighted_inner(&low, &high).unwrap().abs() < 1e-15);
    }
}
