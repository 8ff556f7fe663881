#![allow(dead_code)]

use std::f64::consts::PI;

use llg_core::ModeState;
use rand::Rng;

/// Plain trapezoid pipeline on `n` points: evaluate, act pointwise, project.
pub fn quadrature_project(order: usize, n: usize, pointwise: impl Fn(f64) -> [f64; 3]) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    let mut out = vec![0.0; 3 * (order + 1)];
    for q in 0..n {
        let x = h * q as f64;
        let v = pointwise(x);
        for i in 0..=order {
            let w = if i == 0 { 2.0 * PI } else { PI };
            let c = (i as f64 * x).cos() * h / w;
            for j in 0..3 {
                out[3 * i + j] += c * v[j];
            }
        }
    }
    out
}

pub fn field_at(m: &[f64], x: f64) -> [f64; 3] {
    let mut f = [0.0; 3];
    for (i, c) in m.chunks_exact(3).enumerate() {
        let k = (i as f64 * x).cos();
        for j in 0..3 {
            f[j] += k * c[j];
        }
    }
    f
}

pub fn laplacian_at(m: &[f64], x: f64) -> [f64; 3] {
    let mut f = [0.0; 3];
    for (i, c) in m.chunks_exact(3).enumerate() {
        let k = -((i * i) as f64) * (i as f64 * x).cos();
        for j in 0..3 {
            f[j] += k * c[j];
        }
    }
    f
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `μ₁ M × M_xx − μ₂ M × (M × M_xx)` projected on a grid of `n` points.
pub fn drift_by_quadrature(m: &[f64], order: usize, mu1: f64, mu2: f64, n: usize) -> Vec<f64> {
    quadrature_project(order, n, |x| {
        let f = field_at(m, x);
        let l = laplacian_at(m, x);
        let p = cross(f, l);
        let d = cross(f, p);
        [
            mu1 * p[0] - mu2 * d[0],
            mu1 * p[1] - mu2 * d[1],
            mu1 * p[2] - mu2 * d[2],
        ]
    })
}

/// Projection of `M × cos(kx) e_l`.
pub fn control_by_quadrature(m: &[f64], order: usize, k: usize, l: usize, n: usize) -> Vec<f64> {
    quadrature_project(order, n, |x| {
        let mut e = [0.0; 3];
        e[l - 1] = (k as f64 * x).cos();
        cross(field_at(m, x), e)
    })
}

/// `(1/2π) ∫ Π cos(f_i x) dx` via expansion into `2^{n-1}` signed sums.
pub fn mean_of_cos_product(freqs: &[usize]) -> f64 {
    let (first, rest) = freqs.split_first().unwrap();
    let combos = 1usize << rest.len();
    let hits = (0..combos)
        .filter(|bits| {
            let s = rest.iter().enumerate().fold(*first as i64, |acc, (b, &f)| {
                if bits >> b & 1 == 1 {
                    acc - f as i64
                } else {
                    acc + f as i64
                }
            });
            s == 0
        })
        .count();
    hits as f64 / combos as f64
}

/// Drift from convolution sums over exact cosine product integrals.
pub fn drift_by_convolution(m: &[f64], order: usize, mu1: f64, mu2: f64) -> Vec<f64> {
    let modes = order + 1;
    let vec = |i: usize| [m[3 * i], m[3 * i + 1], m[3 * i + 2]];
    let mut out = vec![0.0; 3 * modes];
    for i in 0..modes {
        let w = if i == 0 { 2.0 * PI } else { PI };
        let mut acc = [0.0; 3];
        for n in 0..modes {
            for k in 0..modes {
                let lam = -((k * k) as f64);
                if lam == 0.0 {
                    continue;
                }
                let c3 = 2.0 * PI * mean_of_cos_product(&[i, n, k]);
                if c3 != 0.0 {
                    let p = cross(vec(n), vec(k));
                    for j in 0..3 {
                        acc[j] += mu1 * c3 * lam * p[j];
                    }
                }
                for r in 0..modes {
                    let c4 = 2.0 * PI * mean_of_cos_product(&[i, r, n, k]);
                    if c4 != 0.0 {
                        let d = cross(vec(r), cross(vec(n), vec(k)));
                        for j in 0..3 {
                            acc[j] -= mu2 * c4 * lam * d[j];
                        }
                    }
                }
            }
        }
        for j in 0..3 {
            out[3 * i + j] = acc[j] / w;
        }
    }
    out
}

pub fn random_state<R: Rng>(order: usize, rng: &mut R) -> ModeState {
    let coeffs = (0..3 * (order + 1))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    ModeState::from_coeffs(order, coeffs).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let s: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / s.max(f64::MIN_POSITIVE)
}

/// Dense `exp(A t) x` by scaling and squaring of a Taylor series.
pub fn expm_apply(
    a: &nalgebra::DMatrix<f64>,
    t: f64,
    x: &nalgebra::DVector<f64>,
) -> nalgebra::DVector<f64> {
    let norm = (a * t).norm();
    let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let s = a * (t / 2f64.powi(squarings));
    let n = a.nrows();
    let mut term = nalgebra::DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &s / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum * x
}
