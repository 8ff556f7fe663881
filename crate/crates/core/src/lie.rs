//! Lie brackets of the linear control fields and rank certification.
//!
//! Brackets follow `[f, g](x) = Dg(x) f(x) − Df(x) g(x)`, which for linear
//! fields `f = F x`, `g = G x` is the matrix `G F − F G`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LlgError, Result};
use crate::galerkin::{control_field, control_field_with, Convention, GalerkinModel, LinearField};
use crate::spectral::{dim, weighted_inner_slice, weighted_norm_slice, ModeIndex, ModeState};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// `[F, G] = G F − F G`.
pub fn bracket(f: &LinearField, g: &LinearField) -> Result<LinearField> {
    if f.order() != g.order() {
        return Err(LlgError::DimensionMismatch {
            expected: dim(f.order()),
            found: dim(g.order()),
        });
    }
    let (a, b) = (f.matrix(), g.matrix());
    LinearField::new(f.order(), b * a - a * b)
}

/// Formal bracket expression over control generators.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BracketExpr {
    Generator(ModeIndex),
    Bracket(Box<BracketExpr>, Box<BracketExpr>),
}

impl BracketExpr {
    pub fn generator(frequency: usize, axis: usize) -> Self {
        Self::Generator(ModeIndex { frequency, axis })
    }

    pub fn bracket(a: BracketExpr, b: BracketExpr) -> Self {
        Self::Bracket(Box::new(a), Box::new(b))
    }

    pub fn depth(&self) -> usize {
        match self {
            Self::Generator(_) => 0,
            Self::Bracket(a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Evaluates the expression to a matrix field at truncation `order`.
    pub fn evaluate(&self, order: usize) -> Result<LinearField> {
        match self {
            Self::Generator(m) => control_field(m.frequency, m.axis, order),
            Self::Bracket(a, b) => bracket(&a.evaluate(order)?, &b.evaluate(order)?),
        }
    }
}

/// The three cyclic identities `[f^{p,a}, f^{q,b}] ∝ f^{|p-q|,c} + f^{p+q,c}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BracketFamily {
    /// `[f^{p,1}, f^{q,2}] → axis 3`
    XY,
    /// `[f^{p,2}, f^{q,3}] → axis 1`
    YZ,
    /// `[f^{p,3}, f^{q,1}] → axis 2`
    ZX,
}

impl BracketFamily {
    pub const ALL: [BracketFamily; 3] = [Self::XY, Self::YZ, Self::ZX];

    /// `(a, b, c)`: the axes of the two operands and of the result.
    pub fn axes(self) -> (usize, usize, usize) {
        match self {
            Self::XY => (1, 2, 3),
            Self::YZ => (2, 3, 1),
            Self::ZX => (3, 1, 2),
        }
    }
}

/// Residuals of one bracket identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BracketIdentityResidual {
    pub p: usize,
    pub q: usize,
    pub family: BracketFamily,
    pub order: usize,
    /// Exact projection fields, identity with coefficient ½, evaluated on
    /// `S_K` inputs in a space wide enough that no truncation occurs.
    pub exact_residual: f64,
    /// Literal coefficient formula, identity with coefficient 1, same setting.
    pub doubled_residual: f64,
    /// Exact fields inside `S_K` itself, `f^{p+q}` dropped when `p+q > K`.
    /// Nonzero near the top frequency because truncation does not commute
    /// with multiplication; reported only.
    pub truncated_residual: f64,
}

/// Checks the bracket identity for `(p, q)` at truncation `order`.
pub fn verify_bracket_identity(
    p: usize,
    q: usize,
    family: BracketFamily,
    order: usize,
) -> Result<BracketIdentityResidual> {
    if p > order || q > order {
        return Err(invalid(
            "p, q",
            format!("frequencies must not exceed {order}"),
        ));
    }
    let (a, b, c) = family.axes();
    let wide = order + p + q;
    let lifted = |conv: Convention, coef: f64| -> Result<f64> {
        let fa = control_field_with(p, a, wide, conv)?;
        let fb = control_field_with(q, b, wide, conv)?;
        let lhs = bracket(&fa, &fb)?;
        let rhs = control_field_with(p.abs_diff(q), c, wide, conv)?
            .add(&control_field_with(p + q, c, wide, conv)?)?
            .scaled(coef);
        let cols = dim(order);
        let diff = lhs.matrix().columns(0, cols) - rhs.matrix().columns(0, cols);
        Ok(diff.norm())
    };
    let exact_residual = lifted(Convention::Exact, 0.5)?;
    let doubled_residual = lifted(Convention::Doubled, 1.0)?;

    let lhs = bracket(&control_field(p, a, order)?, &control_field(q, b, order)?)?;
    let mut rhs = control_field(p.abs_diff(q), c, order)?;
    if p + q <= order {
        rhs = rhs.add(&control_field(p + q, c, order)?)?;
    }
    let truncated_residual = lhs.distance(&rhs.scaled(0.5))?;
    Ok(BracketIdentityResidual {
        p,
        q,
        family,
        order,
        exact_residual,
        doubled_residual,
        truncated_residual,
    })
}

/// Orthonormal basis (Frobenius inner product) of a matrix Lie algebra.
#[derive(Clone, Debug)]
pub struct LieAlgebra {
    order: usize,
    basis: Vec<DMatrix<f64>>,
    depth_reached: usize,
    closed: bool,
}

impl LieAlgebra {
    /// Breadth-first closure of iterated brackets `[g, x]` up to `depth_cap`.
    ///
    /// Right-normed brackets of generators span the generated algebra, so
    /// each level only brackets the previous level's new elements with the
    /// generators.
    pub fn generate(generators: &[LinearField], depth_cap: usize) -> Result<Self> {
        let order = generators.first().map_or(0, LinearField::order);
        if generators.iter().any(|g| g.order() != order) {
            return Err(invalid(
                "generators",
                "all generators must share the truncation order",
            ));
        }
        let mut basis: Vec<DMatrix<f64>> = Vec::new();
        let mut frontier = Vec::new();
        for g in generators {
            if let Some(v) = reduce(&basis, g.matrix()) {
                basis.push(v);
                frontier.push(g.matrix().clone());
            }
        }
        let mut depth_reached = 0;
        let mut closed = false;
        for depth in 1..=depth_cap {
            let mut next = Vec::new();
            for x in &frontier {
                for g in generators {
                    let gm = g.matrix();
                    let br = x * gm - gm * x;
                    if let Some(v) = reduce(&basis, &br) {
                        basis.push(v);
                        next.push(br);
                    }
                }
            }
            if next.is_empty() {
                closed = true;
                break;
            }
            depth_reached = depth;
            frontier = next;
        }
        Ok(Self {
            order,
            basis,
            depth_reached,
            closed,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    pub fn depth_reached(&self) -> usize {
        self.depth_reached
    }

    /// True when the last level produced nothing new before the depth cap.
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Rank of `{B m}` over the basis and the tangency residual.
    pub fn evaluate(&self, m: &ModeState) -> Result<SpanEntry> {
        if m.order() != self.order {
            return Err(LlgError::DimensionMismatch {
                expected: dim(self.order),
                found: m.dim(),
            });
        }
        let x = m.to_vector();
        let n = x.len();
        if self.basis.is_empty() {
            return Ok(SpanEntry::empty());
        }
        let evals: Vec<DVector<f64>> = self.basis.iter().map(|b| b * &x).collect();
        let mat = DMatrix::from_columns(&evals);
        let sv = mat.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let rank = if smax == 0.0 {
            0
        } else {
            sv.iter().filter(|s| **s > RANK_TOLERANCE * smax).count()
        };
        let mnorm = weighted_norm_slice(x.as_slice()).sqrt();
        let mut residual: f64 = 0.0;
        for e in &evals {
            let en = weighted_norm_slice(e.as_slice()).sqrt();
            if mnorm > 0.0 && en > 0.0 {
                residual = residual
                    .max(weighted_inner_slice(x.as_slice(), e.as_slice()).abs() / (mnorm * en));
            }
        }
        let mut svals: Vec<f64> = sv.iter().copied().collect();
        svals.sort_by(|a, b| b.total_cmp(a));
        svals.truncate(n);
        Ok(SpanEntry {
            rank,
            algebra_dim: self.dim(),
            orthogonality_residual: residual,
            orthogonal: residual <= RANK_TOLERANCE,
            singular_values: svals,
        })
    }
}

fn reduce(basis: &[DMatrix<f64>], m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = m.norm();
    if scale == 0.0 {
        return None;
    }
    let mut v = m / scale;
    // two Gram-Schmidt passes
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&v);
            v -= b * c;
        }
    }
    let r = v.norm();
    (r > RANK_TOLERANCE).then(|| v / r)
}

/// Evaluation of a Lie algebra at one state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpanEntry {
    pub rank: usize,
    pub algebra_dim: usize,
    /// `max_B |⟨m, B m⟩_w| / (‖m‖_w ‖B m‖_w)`.
    pub orthogonality_residual: f64,
    pub orthogonal: bool,
    pub singular_values: Vec<f64>,
}

impl SpanEntry {
    fn empty() -> Self {
        Self {
            rank: 0,
            algebra_dim: 0,
            orthogonality_residual: 0.0,
            orthogonal: true,
            singular_values: Vec::new(),
        }
    }
}

/// Rank of the Lie span of `generators` evaluated at `m`.
pub fn lie_span(generators: &[LinearField], m: &ModeState, depth_cap: usize) -> Result<SpanEntry> {
    if depth_cap == 0 {
        return Err(invalid("depth_cap", "must be at least 1"));
    }
    LieAlgebra::generate(generators, depth_cap)?.evaluate(m)
}

/// Default bracket depth: enough to climb the frequency ladder from `K¹`.
pub fn default_depth_cap(order: usize) -> usize {
    2 * order + 2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankVerdict {
    /// Rank equals `3(K+1)`.
    FullAmbient,
    /// Rank equals `3(K+1) − 1`: full on the invariant weighted sphere.
    FullOnSphere,
    /// Below both.
    Deficient,
}

/// Sampled bracket-generating certification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankReport {
    #[serde(rename = "K")]
    pub order: usize,
    pub control_modes: Vec<ModeIndex>,
    pub seed: u64,
    pub samples: usize,
    pub depth_cap: usize,
    pub ambient_dim: usize,
    /// The count `3(K+1)` asserted for the full Lie span.
    pub claimed_rank: usize,
    /// `3(K+1) − 1`, the dimension of the weighted sphere through `m`.
    pub sphere_rank: usize,
    pub algebra_dim: usize,
    pub ranks: Vec<usize>,
    pub min_rank: usize,
    pub max_rank: usize,
    pub orthogonal: Vec<bool>,
    pub max_orthogonality_residual: f64,
    /// Independent quadratic forms `mᵀ S m` conserved by every control field.
    pub control_invariants: usize,
    pub verdict: RankVerdict,
    pub note: String,
}

/// Runs [`lie_span`] at `samples` random states on the sphere of radius `√(2π)`.
pub fn bracket_generating_report(
    order: usize,
    control_modes: &[ModeIndex],
    samples: usize,
    seed: u64,
) -> Result<RankReport> {
    let generators = control_modes
        .iter()
        .map(|m| control_field(m.frequency, m.axis, order))
        .collect::<Result<Vec<_>>>()?;
    let depth_cap = default_depth_cap(order);
    let algebra = LieAlgebra::generate(&generators, depth_cap)?;
    let radius = (2.0 * std::f64::consts::PI).sqrt();
    let entries = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
            let m = ModeState::random_on_sphere(order, radius, &mut rng);
            algebra.evaluate(&m)
        })
        .collect::<Result<Vec<_>>>()?;
    let ranks: Vec<usize> = entries.iter().map(|e| e.rank).collect();
    let min_rank = ranks.iter().copied().min().unwrap_or(0);
    let max_rank = ranks.iter().copied().max().unwrap_or(0);
    let ambient_dim = dim(order);
    let verdict = if samples > 0 && min_rank == ambient_dim {
        RankVerdict::FullAmbient
    } else if samples > 0 && min_rank + 1 == ambient_dim {
        RankVerdict::FullOnSphere
    } else {
        RankVerdict::Deficient
    };
    let control_invariants = quadratic_invariants(&generators, None, 0, seed)?.len();
    let note = format!(
        "measured rank {min_rank}..{max_rank} of ambient {ambient_dim}; the claimed full Lie rank is {ambient_dim}, \
         skewness caps it at {} on the weighted sphere; the generated algebra has dimension {} and the controls \
         conserve {control_invariants} independent quadratic forms",
        ambient_dim - 1,
        algebra.dim()
    );
    Ok(RankReport {
        order,
        control_modes: control_modes.to_vec(),
        seed,
        samples,
        depth_cap,
        ambient_dim,
        claimed_rank: ambient_dim,
        sphere_rank: ambient_dim - 1,
        algebra_dim: algebra.dim(),
        max_orthogonality_residual: entries
            .iter()
            .map(|e| e.orthogonality_residual)
            .fold(0.0, f64::max),
        orthogonal: entries.iter().map(|e| e.orthogonal).collect(),
        ranks,
        min_rank,
        max_rank,
        control_invariants,
        verdict,
        note,
    })
}

/// Symmetric matrices `S` with `mᵀ S m` conserved by every field.
///
/// Linear fields contribute `AᵀS + SA = 0`. When a model is given, its
/// drift contributes `mᵀ S drift(m) = 0` at `drift_samples` random states
/// (at least the number of unknowns plus a margin). Returned forms are an
/// orthonormal basis of the solution space.
pub fn quadratic_invariants(
    fields: &[LinearField],
    model: Option<&GalerkinModel>,
    drift_samples: usize,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    let n = match (fields.first(), model) {
        (Some(f), _) => dim(f.order()),
        (None, Some(m)) => m.dim(),
        (None, None) => return Ok(Vec::new()),
    };
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let unknowns = pairs.len();
    let sym = |x: &DVector<f64>| {
        let mut s = DMatrix::zeros(n, n);
        for (c, &(i, j)) in pairs.iter().enumerate() {
            s[(i, j)] = x[c];
            s[(j, i)] = x[c];
        }
        s
    };
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for f in fields {
        let a = f.matrix();
        // (AᵀS + SA)_{rc} is linear in the unknowns; one row per (r, c), r ≤ c.
        for r in 0..n {
            for c in r..n {
                let mut row = DVector::zeros(unknowns);
                for (u, &(i, j)) in pairs.iter().enumerate() {
                    // S = E_ij + E_ji (a single entry when i == j)
                    let mut v = 0.0;
                    if c == j {
                        v += a[(i, r)];
                    }
                    if r == i {
                        v += a[(j, c)];
                    }
                    if i != j {
                        if c == i {
                            v += a[(j, r)];
                        }
                        if r == j {
                            v += a[(i, c)];
                        }
                    }
                    row[u] = v;
                }
                if row.norm() > 0.0 {
                    rows.push(row);
                }
            }
        }
    }
    if let Some(model) = model {
        let count = drift_samples.max(unknowns + 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..count {
            let m = ModeState::random_on_sphere(model.order(), 1.0, &mut rng);
            let d = model.drift(&m)?;
            let (x, y) = (m.as_slice(), d.as_slice());
            let scale = x.iter().map(|v| v * v).sum::<f64>().sqrt()
                * y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if scale == 0.0 {
                continue;
            }
            let row = DVector::from_iterator(
                unknowns,
                pairs.iter().map(|&(i, j)| {
                    if i == j {
                        x[i] * y[i] / scale
                    } else {
                        (x[i] * y[j] + x[j] * y[i]) / scale
                    }
                }),
            );
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(invalid("fields", "no constraints supplied"));
    }
    let mut mat = DMatrix::zeros(rows.len().max(unknowns), unknowns);
    for (r, row) in rows.iter().enumerate() {
        mat.row_mut(r).copy_from(&row.transpose());
    }
    let svd = mat.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| invalid("svd", "decomposition failed"))?;
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s <= 1e-10 * smax {
            out.push(sym(&vt.row(k).transpose()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::LlgParams;

    #[test]
    fn self_bracket_vanishes() {
        let f = control_field(1, 2, 3).unwrap();
        assert_eq!(bracket(&f, &f).unwrap().matrix().norm(), 0.0);
    }

    #[test]
    fn zero_frequency_brackets_close_on_third_axis() {
        for order in 0..4 {
            let b = bracket(
                &control_field(0, 1, order).unwrap(),
                &control_field(0, 2, order).unwrap(),
            )
            .unwrap();
            assert!(b.distance(&control_field(0, 3, order).unwrap()).unwrap() < 1e-15);
        }
    }

    #[test]
    fn expr_depth_and_evaluation() {
        let e = BracketExpr::bracket(BracketExpr::generator(1, 1), BracketExpr::generator(0, 2));
        assert_eq!(e.depth(), 1);
        let f = e.evaluate(3).unwrap();
        assert!(f.distance(&control_field(1, 3, 3).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn identity_examples() {
        let r = verify_bracket_identity(1, 0, BracketFamily::XY, 1).unwrap();
        assert!(r.exact_residual < 1e-14 && r.truncated_residual < 1e-14);
        let r = verify_bracket_identity(0, 0, BracketFamily::XY, 0).unwrap();
        assert!(r.exact_residual < 1e-14 && r.truncated_residual < 1e-14);
        let r = verify_bracket_identity(2, 1, BracketFamily::XY, 4).unwrap();
        assert!(r.exact_residual < 1e-12 && r.doubled_residual < 1e-12);
        // the truncated commutator misses the top-mode interactions
        assert!(r.truncated_residual > 1e-3);
    }

    #[test]
    fn single_generator_spans_one_direction() {
        let m = ModeState::from_coeffs(2, (1..=9).map(f64::from).collect()).unwrap();
        let e = lie_span(&[control_field(0, 1, 2).unwrap()], &m, 4).unwrap();
        assert_eq!(e.rank, 1);
        assert_eq!(e.algebra_dim, 1);
        let z = lie_span(&[control_field(0, 1, 2).unwrap()], &ModeState::zeros(2), 4).unwrap();
        assert_eq!(z.rank, 0);
    }

    #[test]
    fn invariant_counts() {
        for order in 1..=3 {
            let p = LlgParams::new(order);
            let model = GalerkinModel::new(p).unwrap();
            let ctrl = quadratic_invariants(model.fields(), None, 0, 1).unwrap();
            assert_eq!(ctrl.len(), order + 1);
        }
        let model = GalerkinModel::new(LlgParams::new(1)).unwrap();
        assert_eq!(
            quadratic_invariants(model.fields(), Some(&model), 0, 1)
                .unwrap()
                .len(),
            2
        );
    }
}
