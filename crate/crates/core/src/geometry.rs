//! Weighted products of projective lines with the diagonal SU(2) action:
//! moment map, eigenvalue function lambda, the loci M_nu / M_in / M_out and
//! the normal field Upsilon.
//!
//! Tangent vectors live in affine charts, one per factor, chosen by the
//! larger homogeneous coordinate. On a factor of weight p the metric is
//! p |dw|^2 / (1 + |w|^2)^2 (a round sphere of area p pi) and J is
//! multiplication by i.

use crate::liegroup::{adjoint, rotation_taking_beta_to, AlgebraElement, GroupElement};
use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

type C = Complex64;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("manifold needs at least one factor")]
    NoFactors,
    #[error("weights must be positive")]
    ZeroWeight,
    #[error("0 lies in the moment image of weights {0:?}")]
    ZeroInImage(Vec<u32>),
    #[error("moment value is degenerate (norm {0:e})")]
    Degenerate(f64),
    #[error("nu = {nu} outside the open range ({min}, {max})")]
    OutOfRange { nu: f64, min: f64, max: f64 },
    #[error("point has {got} factors, manifold has {want}")]
    FactorMismatch { got: usize, want: usize },
    #[error("homogeneous pair is zero")]
    ZeroPair,
}

/// (P^1)^n with the line bundle O(p_1) x ... x O(p_n).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct ModelManifold {
    weights: Vec<u32>,
}

impl TryFrom<Vec<u32>> for ModelManifold {
    type Error = GeometryError;
    fn try_from(w: Vec<u32>) -> Result<Self, Self::Error> {
        ModelManifold::new(w)
    }
}

impl From<ModelManifold> for Vec<u32> {
    fn from(m: ModelManifold) -> Self {
        m.weights
    }
}

impl ModelManifold {
    /// Rejects weights whose moment image contains the origin. For n >= 2
    /// the image of sum p_i u_i / 2 over unit vectors is a ball minus an
    /// open ball, and it reaches 0 exactly when 2 max p_i <= sum p_i.
    pub fn new(weights: Vec<u32>) -> Result<Self, GeometryError> {
        if weights.is_empty() {
            return Err(GeometryError::NoFactors);
        }
        if weights.contains(&0) {
            return Err(GeometryError::ZeroWeight);
        }
        let total: u32 = weights.iter().sum();
        let max = *weights.iter().max().unwrap();
        if weights.len() >= 2 && 2 * max <= total {
            return Err(GeometryError::ZeroInImage(weights));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    /// Complex dimension d = n.
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn total_weight(&self) -> u32 {
        self.weights.iter().sum()
    }

    /// [lambda_min, lambda_max]: anti-aligned and aligned configurations.
    pub fn lambda_range(&self) -> (f64, f64) {
        let total = self.total_weight() as f64;
        let max = *self.weights.iter().max().unwrap() as f64;
        let min = if self.weights.len() == 1 {
            total
        } else {
            2.0 * max - total
        };
        (min / 2.0, total / 2.0)
    }

    /// Critical values of lambda: |sum +-p_i| / 2 over sign patterns.
    pub fn critical_values(&self) -> Vec<f64> {
        let n = self.weights.len();
        let mut vals: Vec<u32> = (0..(1u32 << n))
            .map(|mask| {
                let s: i64 = self
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        if mask >> i & 1 == 1 {
                            p as i64
                        } else {
                            -(p as i64)
                        }
                    })
                    .sum();
                s.unsigned_abs() as u32
            })
            .collect();
        vals.sort_unstable();
        vals.dedup();
        vals.into_iter().map(|v| v as f64 / 2.0).collect()
    }

    /// Distance from nu to the nearest critical value.
    pub fn critical_distance(&self, nu: f64) -> f64 {
        self.critical_values()
            .iter()
            .map(|c| (c - nu).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Volume pi^d prod p_i.
    pub fn volume(&self) -> f64 {
        self.weights.iter().map(|&p| PI * p as f64).product()
    }

    pub fn check_point(&self, m: &ManifoldPoint) -> Result<(), GeometryError> {
        if m.factors.len() != self.weights.len() {
            return Err(GeometryError::FactorMismatch {
                got: m.factors.len(),
                want: self.weights.len(),
            });
        }
        Ok(())
    }
}

/// Point of M lifted to the circle bundle: one unit pair per factor, whose
/// phases carry the lift.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub factors: Vec<[C; 2]>,
}

impl ManifoldPoint {
    pub fn from_pairs(pairs: Vec<[C; 2]>) -> Result<Self, GeometryError> {
        let factors = pairs
            .into_iter()
            .map(|[a, b]| {
                let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
                if n == 0.0 {
                    Err(GeometryError::ZeroPair)
                } else {
                    Ok([a / n, b / n])
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { factors })
    }

    /// Pairs whose Bloch vectors (coefficient order beta, xi1, xi2) are the
    /// given unit vectors, with the first coordinate real and nonnegative.
    pub fn from_bloch(vectors: &[[f64; 3]]) -> Self {
        let factors = vectors.iter().map(bloch_to_pair).collect();
        Self { factors }
    }

    /// Multiplies factor i by e^{i theta_i}.
    pub fn with_phases(&self, phases: &[f64]) -> Self {
        let factors = self
            .factors
            .iter()
            .zip(phases)
            .map(|(z, &t)| {
                let e = C::from_polar(1.0, t);
                [z[0] * e, z[1] * e]
            })
            .collect();
        Self { factors }
    }

    /// Diagonal group action z -> g z on every factor.
    pub fn act(&self, g: &GroupElement) -> Self {
        Self {
            factors: self.factors.iter().map(|z| g.act(z)).collect(),
        }
    }

    /// Fiber rotation r_theta of the circle bundle: every factor is turned
    /// by theta / sum(p), so a level-k kernel picks up e^{i k theta}.
    pub fn rotate_fiber(&self, theta: f64, m: &ModelManifold) -> Self {
        let t = theta / m.total_weight() as f64;
        self.with_phases(&vec![t; self.factors.len()])
    }

    /// Bloch vectors 2 mu_FS per factor.
    pub fn bloch_vectors(&self) -> Vec<[f64; 3]> {
        self.factors.iter().map(pair_to_bloch).collect()
    }
}

fn pair_to_bloch(z: &[C; 2]) -> [f64; 3] {
    let n = z[0].norm_sqr() + z[1].norm_sqr();
    let c = z[0] * z[1].conj();
    [
        (z[0].norm_sqr() - z[1].norm_sqr()) / n,
        2.0 * c.re / n,
        2.0 * c.im / n,
    ]
}

fn bloch_to_pair(u: &[f64; 3]) -> [C; 2] {
    let n = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let theta = (u[0] / n).clamp(-1.0, 1.0).acos();
    let phi = -u[2].atan2(u[1]);
    [
        C::new((theta / 2.0).cos(), 0.0),
        C::from_polar((theta / 2.0).sin(), phi),
    ]
}

/// Element of su(2)* in the coordinates dual to (beta, xi1, xi2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentValue {
    pub coords: AlgebraElement,
}

impl MomentValue {
    pub fn lambda(&self) -> f64 {
        self.coords.norm()
    }

    pub fn diagonalize(&self) -> Result<(f64, GroupElement), GeometryError> {
        diagonalize_moment(self)
    }
}

/// Phi(m) = sum_i p_i mu_FS(m_i), with <mu_FS(z), xi> = -(i/2) z* xi z.
pub fn moment_map(m_: &ModelManifold, m: &ManifoldPoint) -> MomentValue {
    let mut acc = [0.0; 3];
    for (p, u) in m_.weights.iter().zip(m.bloch_vectors()) {
        for j in 0..3 {
            acc[j] += *p as f64 * u[j] / 2.0;
        }
    }
    MomentValue {
        coords: AlgebraElement { c: acc },
    }
}

/// lambda(m) = |Phi(m)|.
pub fn lambda(m_: &ModelManifold, m: &ManifoldPoint) -> f64 {
    moment_map(m_, m).lambda()
}

/// Returns (lambda, h) with Ad_h(lambda beta) = v, h the geodesic section.
pub fn diagonalize_moment(v: &MomentValue) -> Result<(f64, GroupElement), GeometryError> {
    let l = v.lambda();
    if l < 1e-12 {
        return Err(GeometryError::Degenerate(l));
    }
    Ok((l, rotation_taking_beta_to(&v.coords)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Locus {
    In,
    On,
    Out,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocusClassification {
    pub locus: Locus,
    /// lambda(m) - nu.
    pub signed: f64,
    /// nu lies within tol of a critical value of lambda.
    pub near_critical: bool,
}

pub fn classify_locus(
    m_: &ModelManifold,
    m: &ManifoldPoint,
    nu: f64,
    tol: f64,
) -> Result<LocusClassification, GeometryError> {
    let (min, max) = m_.lambda_range();
    if !(nu > min && nu < max) {
        return Err(GeometryError::OutOfRange { nu, min, max });
    }
    let near_critical = m_.critical_distance(nu) <= tol;
    if near_critical {
        log::warn!("nu = {nu} is within {tol} of a critical value of lambda");
    }
    let signed = lambda(m_, m) - nu;
    let locus = if signed < -tol {
        Locus::In
    } else if signed <= tol {
        Locus::On
    } else {
        Locus::Out
    };
    Ok(LocusClassification {
        locus,
        signed,
        near_critical,
    })
}

/// Affine charts at a base point, with the data needed to evaluate the
/// metric, J, omega and the differential of the moment map there.
#[derive(Debug, Clone)]
pub struct ChartFrame {
    weights: Vec<f64>,
    charts: Vec<u8>,
    w: Vec<C>,
    phi: AlgebraElement,
}

/// Tangent vector in chart coordinates: (Re dw_i, Im dw_i) per factor.
pub type TangentVector = DVector<f64>;

impl ChartFrame {
    pub fn at(m_: &ModelManifold, m: &ManifoldPoint) -> Self {
        let mut charts = Vec::new();
        let mut w = Vec::new();
        for z in &m.factors {
            if z[0].norm() >= z[1].norm() {
                charts.push(0);
                w.push(z[1] / z[0]);
            } else {
                charts.push(1);
                w.push(z[0] / z[1]);
            }
        }
        Self {
            weights: m_.weights.iter().map(|&p| p as f64).collect(),
            charts,
            w,
            phi: moment_map(m_, m).coords,
        }
    }

    pub fn real_dim(&self) -> usize {
        2 * self.w.len()
    }

    fn metric_factor(&self, i: usize) -> f64 {
        let s = 1.0 + self.w[i].norm_sqr();
        self.weights[i] / (s * s)
    }

    /// Velocity of a curve z(t) with z(0) = base and z'(0) = zdot per factor.
    pub fn velocity(&self, base: &ManifoldPoint, zdot: &[[C; 2]]) -> TangentVector {
        let mut v = DVector::zeros(self.real_dim());
        for (i, (z, d)) in base.factors.iter().zip(zdot).enumerate() {
            let dw = if self.charts[i] == 0 {
                (d[1] * z[0] - z[1] * d[0]) / (z[0] * z[0])
            } else {
                (d[0] * z[1] - z[0] * d[1]) / (z[1] * z[1])
            };
            v[2 * i] = dw.re;
            v[2 * i + 1] = dw.im;
        }
        v
    }

    pub fn inner(&self, a: &TangentVector, b: &TangentVector) -> f64 {
        (0..self.w.len())
            .map(|i| self.metric_factor(i) * (a[2 * i] * b[2 * i] + a[2 * i + 1] * b[2 * i + 1]))
            .sum()
    }

    pub fn norm(&self, a: &TangentVector) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Complex structure: dw -> i dw.
    pub fn j(&self, a: &TangentVector) -> TangentVector {
        let mut out = a.clone();
        for i in 0..self.w.len() {
            out[2 * i] = -a[2 * i + 1];
            out[2 * i + 1] = a[2 * i];
        }
        out
    }

    /// omega(a, b) = g(J a, b).
    pub fn omega(&self, a: &TangentVector, b: &TangentVector) -> f64 {
        self.inner(&self.j(a), b)
    }

    /// d Phi(a), from the exact Jacobian of mu_FS in each chart.
    pub fn d_moment(&self, a: &TangentVector) -> AlgebraElement {
        let mut acc = [0.0; 3];
        for i in 0..self.w.len() {
            let (x, y) = (self.w[i].re, self.w[i].im);
            let dn = 1.0 + x * x + y * y;
            // N = (N_beta, N_xi1, N_xi2) and its partials.
            let (n, nx, ny) = if self.charts[i] == 0 {
                (
                    [(1.0 - x * x - y * y) / 2.0, x, -y],
                    [-x, 1.0, 0.0],
                    [-y, 0.0, -1.0],
                )
            } else {
                (
                    [(x * x + y * y - 1.0) / 2.0, x, y],
                    [x, 1.0, 0.0],
                    [y, 0.0, 1.0],
                )
            };
            let (vx, vy) = (a[2 * i], a[2 * i + 1]);
            for j in 0..3 {
                let dx = (nx[j] * dn - n[j] * 2.0 * x) / (dn * dn);
                let dy = (ny[j] * dn - n[j] * 2.0 * y) / (dn * dn);
                acc[j] += self.weights[i] * (dx * vx + dy * vy);
            }
        }
        AlgebraElement { c: acc }
    }

    /// d lambda(a) = <Phi / |Phi|, d Phi(a)>.
    pub fn d_lambda(&self, a: &TangentVector) -> f64 {
        self.d_moment(a).dot(&self.phi) / self.phi.norm()
    }

    /// Metric gradient of lambda.
    pub fn grad_lambda(&self) -> TangentVector {
        let n = self.real_dim();
        let mut g = DVector::zeros(n);
        for k in 0..n {
            let mut e = DVector::zeros(n);
            e[k] = 1.0;
            g[k] = self.d_lambda(&e) / self.metric_factor(k / 2);
        }
        g
    }

    /// Orthonormal basis of ker d lambda (the tangent space of the level set).
    pub fn level_set_basis(&self) -> Vec<TangentVector> {
        let n = self.real_dim();
        let grad = self.grad_lambda();
        let gn = self.norm(&grad);
        let mut basis: Vec<TangentVector> = vec![&grad / gn];
        for k in 0..n {
            let mut v = DVector::zeros(n);
            v[k] = 1.0 / self.metric_factor(k / 2).sqrt();
            // Two passes of Gram-Schmidt for stability.
            for _ in 0..2 {
                for b in &basis {
                    let c = self.inner(&v, b);
                    v -= b * c;
                }
            }
            let nv = self.norm(&v);
            if nv > 1e-8 {
                basis.push(v / nv);
            }
            if basis.len() == n {
                break;
            }
        }
        basis.remove(0);
        basis
    }

    /// Point reached by moving the chart coordinates by t a (phases dropped).
    pub fn displaced(&self, a: &TangentVector, t: f64) -> ManifoldPoint {
        let factors = (0..self.w.len())
            .map(|i| {
                let w = self.w[i] + C::new(a[2 * i], a[2 * i + 1]) * t;
                let s = (1.0 + w.norm_sqr()).sqrt();
                if self.charts[i] == 0 {
                    [C::new(1.0 / s, 0.0), w / s]
                } else {
                    [w / s, C::new(1.0 / s, 0.0)]
                }
            })
            .collect();
        ManifoldPoint { factors }
    }
}

/// Hamiltonian vector field of <Phi, xi> (iota_X omega = dH), which is the
/// velocity of t -> exp(-t xi) m.
pub fn hamiltonian_field(
    m_: &ModelManifold,
    xi: &AlgebraElement,
    m: &ManifoldPoint,
) -> TangentVector {
    let frame = ChartFrame::at(m_, m);
    hamiltonian_field_in(&frame, xi, m)
}

pub fn hamiltonian_field_in(
    frame: &ChartFrame,
    xi: &AlgebraElement,
    m: &ManifoldPoint,
) -> TangentVector {
    let x = xi.matrix();
    let zdot: Vec<[C; 2]> = m
        .factors
        .iter()
        .map(|z| {
            [
                -(x[0][0] * z[0] + x[0][1] * z[1]),
                -(x[1][0] * z[0] + x[1][1] * z[1]),
            ]
        })
        .collect();
    frame.velocity(m, &zdot)
}

/// Upsilon(m) = J(Phi(m)_M(m)).
pub fn upsilon(m_: &ModelManifold, m: &ManifoldPoint) -> TangentVector {
    let frame = ChartFrame::at(m_, m);
    let phi = moment_map(m_, m).coords;
    frame.j(&hamiltonian_field_in(&frame, &phi, m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorm {
    pub value: f64,
    /// The generator vanishes at m, so the diagonal prediction is singular.
    pub singular: bool,
}

/// Norm of (Ad_{h_m} beta)_M(m) = (Phi / |Phi|)_M(m).
pub fn field_norm(m_: &ModelManifold, m: &ManifoldPoint) -> Result<FieldNorm, GeometryError> {
    let (_, h) = diagonalize_moment(&moment_map(m_, m))?;
    let xi = adjoint(&h, &AlgebraElement::BETA);
    let frame = ChartFrame::at(m_, m);
    let value = frame.norm(&hamiltonian_field_in(&frame, &xi, m));
    let singular = value < 1e-12;
    Ok(FieldNorm {
        value: if singular { 0.0 } else { value },
        singular,
    })
}

/// <Phi(m), xi>, the d/d theta component of the contact lift of xi.
pub fn vertical_weight(m_: &ModelManifold, xi: &AlgebraElement, m: &ManifoldPoint) -> f64 {
    moment_map(m_, m).coords.dot(xi)
}

/// Gram matrix g(e_a M, e_b M) of the fundamental fields of a basis.
pub fn fundamental_gram(
    m_: &ModelManifold,
    m: &ManifoldPoint,
    basis: &[AlgebraElement; 3],
) -> Matrix3<f64> {
    let frame = ChartFrame::at(m_, m);
    let fields: Vec<TangentVector> = basis
        .iter()
        .map(|e| hamiltonian_field_in(&frame, e, m))
        .collect();
    Matrix3::from_fn(|a, b| frame.inner(&fields[a], &fields[b]))
}

/// Frame (Ad_{h_m} beta, Ad_{h_m} xi1, Ad_{h_m} xi2) adapted to Phi(m).
pub fn adapted_frame(
    m_: &ModelManifold,
    m: &ManifoldPoint,
) -> Result<[AlgebraElement; 3], GeometryError> {
    let (_, h) = diagonalize_moment(&moment_map(m_, m))?;
    Ok(AlgebraElement::basis().map(|e| adjoint(&h, &e)))
}

fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Great-circle interpolation between unit vectors.
fn slerp(u: &[f64; 3], v: &[f64; 3], t: f64) -> [f64; 3] {
    let c = dot3(u, v).clamp(-1.0, 1.0);
    let mut w = [v[0] - c * u[0], v[1] - c * u[1], v[2] - c * u[2]];
    let s = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if s < 1e-12 {
        if c > 0.0 {
            return *u;
        }
        // Antipodal: any perpendicular direction.
        let e = if u[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        let ce = dot3(u, &e);
        w = normalize3([e[0] - ce * u[0], e[1] - ce * u[1], e[2] - ce * u[2]]);
    } else {
        w = w.map(|x| x / s);
    }
    let a = c.acos() * t;
    normalize3([
        u[0] * a.cos() + w[0] * a.sin(),
        u[1] * a.cos() + w[1] * a.sin(),
        u[2] * a.cos() + w[2] * a.sin(),
    ])
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| crate::liegroup::standard_normal(rng));
        let n = dot3(&v, &v).sqrt();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

fn lambda_of_bloch(weights: &[u32], u: &[[f64; 3]]) -> f64 {
    let mut acc = [0.0; 3];
    for (p, v) in weights.iter().zip(u) {
        for j in 0..3 {
            acc[j] += *p as f64 * v[j] / 2.0;
        }
    }
    dot3(&acc, &acc).sqrt()
}

/// Moves a configuration of Bloch vectors onto lambda = nu by bisection
/// along great-circle paths towards an aligned (lambda_max) or anti-aligned
/// (lambda_min) configuration.
pub fn project_to_level(
    m_: &ModelManifold,
    start: &[[f64; 3]],
    nu: f64,
) -> Result<ManifoldPoint, GeometryError> {
    let (min, max) = m_.lambda_range();
    if !(nu > min && nu < max) {
        return Err(GeometryError::OutOfRange { nu, min, max });
    }
    let w = m_.weights();
    let l0 = lambda_of_bloch(w, start);
    let mut axis = [0.0; 3];
    for (p, v) in w.iter().zip(start) {
        for j in 0..3 {
            axis[j] += *p as f64 * v[j];
        }
    }
    let axis = if dot3(&axis, &axis) < 1e-20 {
        [1.0, 0.0, 0.0]
    } else {
        normalize3(axis)
    };
    let imax = (0..w.len()).max_by_key(|&i| w[i]).unwrap();
    let target: Vec<[f64; 3]> = (0..w.len())
        .map(|i| {
            if l0 < nu || i == imax {
                axis
            } else {
                axis.map(|x| -x)
            }
        })
        .collect();
    let at = |t: f64| -> Vec<[f64; 3]> {
        start
            .iter()
            .zip(&target)
            .map(|(u, v)| slerp(u, v, t))
            .collect()
    };
    let f = |t: f64| lambda_of_bloch(w, &at(t)) - nu;
    let (mut lo, mut hi) = (0.0, 1.0);
    let f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    Ok(ManifoldPoint::from_bloch(&at(0.5 * (lo + hi))))
}

/// Random point of M_nu (from a uniform start configuration).
pub fn sample_level_set<R: Rng + ?Sized>(
    m_: &ModelManifold,
    nu: f64,
    rng: &mut R,
) -> Result<ManifoldPoint, GeometryError> {
    let start: Vec<[f64; 3]> = (0..m_.dim()).map(|_| random_unit(rng)).collect();
    project_to_level(m_, &start, nu)
}

/// Uniform random point of M with random fiber phases.
pub fn sample_point<R: Rng + ?Sized>(m_: &ModelManifold, rng: &mut R) -> ManifoldPoint {
    let u: Vec<[f64; 3]> = (0..m_.dim()).map(|_| random_unit(rng)).collect();
    let phases: Vec<f64> = (0..m_.dim())
        .map(|_| 2.0 * PI * rng.random::<f64>())
        .collect();
    ManifoldPoint::from_bloch(&u).with_phases(&phases)
}

/// Two-factor point with lambda = nu: u1 at the pole, u2 at the angle that
/// solves |p u1 + q u2| = 2 nu, turned by `azimuth` about the pole.
pub fn two_factor_point(p: u32, q: u32, nu: f64, azimuth: f64) -> ManifoldPoint {
    let (p, q) = (p as f64, q as f64);
    let c = ((4.0 * nu * nu - p * p - q * q) / (2.0 * p * q)).clamp(-1.0, 1.0);
    let s = (1.0 - c * c).sqrt();
    ManifoldPoint::from_bloch(&[[1.0, 0.0, 0.0], [c, s * azimuth.cos(), s * azimuth.sin()]])
}

/// Real matrix of the chart metric (diagonal).
pub fn metric_matrix(frame: &ChartFrame) -> DMatrix<f64> {
    let n = frame.real_dim();
    DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            frame.metric_factor(a / 2)
        } else {
            0.0
        }
    })
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CalibrationError {
    #[error("calibration needs at least two levels with nonempty isotypes, got {0}")]
    TooFewLevels(usize),
    #[error("isotype ({n}, {k}) is empty")]
    EmptyIsotype { k: u32, n: u32 },
    #[error("kernel of ({n}, {k}) does not concentrate on a single interior lambda-fiber")]
    NoSingleFiber { k: u32, n: u32 },
    #[error("measured scale {0} is not within 5% of 1/2 or 1")]
    Unmatched(f64),
    #[error(transparent)]
    Hardy(#[from] crate::hardy::HardyError),
}

/// Concentration locus of one isotype kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationSample {
    pub k: u32,
    pub n: u32,
    /// lambda at which the diagonal of Pi_(n,k) peaks.
    pub lambda_peak: f64,
    /// lambda_peak * k / n.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    /// Snapped scale s, so that nu = s n / k.
    pub scale: f64,
    /// Mean of the per-level measured scales.
    pub measured: f64,
    /// (max - min) / mean of the per-level scales.
    pub spread: f64,
    pub samples: Vec<CalibrationSample>,
}

const CALIBRATION_GRID: usize = 48;

/// Sample points of the fiber lambda = l, fixed by the fiber value alone.
fn fiber_points(m_: &ModelManifold, l: f64) -> Vec<ManifoldPoint> {
    let w = m_.weights();
    if w.len() == 2 {
        return vec![two_factor_point(w[0], w[1], l, 0.0)];
    }
    let starts: [[f64; 3]; 3] = [[0.3, 0.8, -0.52], [-0.6, 0.1, 0.79], [0.9, -0.4, 0.17]];
    (0..3)
        .filter_map(|j| {
            let cfg: Vec<[f64; 3]> = (0..w.len())
                .map(|i| normalize3(starts[(i + j) % 3]))
                .collect();
            project_to_level(m_, &cfg, l).ok()
        })
        .collect()
}

fn peak_lambda(m_: &ModelManifold, k: u32, n: u32) -> Result<f64, CalibrationError> {
    use crate::hardy::{build_section_space, isotype_basis, KernelEvaluator};
    let space = build_section_space(m_, k)?;
    let basis = isotype_basis(&space, n)?;
    if basis.is_empty() {
        return Err(CalibrationError::EmptyIsotype { k, n });
    }
    let (lo, hi) = m_.lambda_range();
    if hi - lo < 1e-12 {
        // Single factor: lambda is constant on M.
        return Ok(lo);
    }
    let eval = KernelEvaluator::new(&space, &basis);
    let value = |l: f64| {
        fiber_points(m_, l)
            .iter()
            .map(|x| eval.diagonal(x))
            .fold(0.0, f64::max)
    };
    let h = (hi - lo) / (CALIBRATION_GRID + 1) as f64;
    let grid: Vec<f64> = (1..=CALIBRATION_GRID).map(|i| lo + h * i as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&l| value(l)).collect();
    let best = (0..vals.len())
        .max_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap();
    let peak = vals[best];
    let rivals = (1..vals.len() - 1)
        .filter(|&i| {
            i.abs_diff(best) > 2
                && vals[i] > 0.5 * peak
                && vals[i] >= vals[i - 1]
                && vals[i] >= vals[i + 1]
        })
        .count();
    if best == 0 || best == vals.len() - 1 || rivals > 0 {
        return Err(CalibrationError::NoSingleFiber { k, n });
    }
    // Golden-section refinement inside the bracketing grid cells.
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (grid[best - 1], grid[best + 1]);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (value(c), value(d));
    while b - a > 1e-7 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = value(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = value(d);
        }
    }
    Ok(0.5 * (a + b))
}

/// Measures the scale s in nu = s n / k from the concentration locus of the
/// isotype kernels (n, k) in `levels`, and snaps it to 1/2 or 1.
pub fn calibrate_convention(
    m_: &ModelManifold,
    levels: &[(u32, u32)],
) -> Result<Calibration, CalibrationError> {
    if levels.len() < 2 {
        return Err(CalibrationError::TooFewLevels(levels.len()));
    }
    let mut samples = Vec::with_capacity(levels.len());
    for &(k, n) in levels {
        let lambda_peak = peak_lambda(m_, k, n)?;
        samples.push(CalibrationSample {
            k,
            n,
            lambda_peak,
            scale: lambda_peak * k as f64 / n as f64,
        });
    }
    let scales: Vec<f64> = samples.iter().map(|s| s.scale).collect();
    let measured = scales.iter().sum::<f64>() / scales.len() as f64;
    let max = scales.iter().cloned().fold(f64::MIN, f64::max);
    let min = scales.iter().cloned().fold(f64::MAX, f64::min);
    let scale = [0.5, 1.0]
        .into_iter()
        .find(|s| (measured - s).abs() <= 0.05 * s)
        .ok_or(CalibrationError::Unmatched(measured))?;
    Ok(Calibration {
        scale,
        measured,
        spread: (max - min) / measured,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m12() -> ModelManifold {
        ModelManifold::new(vec![1, 2]).unwrap()
    }

    #[test]
    fn construction_guards() {
        assert_eq!(ModelManifold::new(vec![]), Err(GeometryError::NoFactors));
        assert_eq!(
            ModelManifold::new(vec![1, 0]),
            Err(GeometryError::ZeroWeight)
        );
        assert!(ModelManifold::new(vec![1, 1]).is_err());
        // Odd signed sums everywhere, yet the equilateral triangle closes.
        assert!(ModelManifold::new(vec![1, 1, 1]).is_err());
        assert!(ModelManifold::new(vec![1, 1, 3]).is_ok());
        assert_eq!(m12().lambda_range(), (0.5, 1.5));
        assert_eq!(m12().critical_values(), vec![0.5, 1.5]);
        let m113 = ModelManifold::new(vec![1, 1, 3]).unwrap();
        assert_eq!(m113.critical_values(), vec![0.5, 1.5, 2.5]);
        assert_eq!(m113.lambda_range(), (0.5, 2.5));
    }

    #[test]
    fn aligned_and_antialigned_lambda() {
        let one = C::new(1.0, 0.0);
        let zero = C::new(0.0, 0.0);
        let up = ManifoldPoint::from_pairs(vec![[one, zero], [one, zero]]).unwrap();
        let mixed = ManifoldPoint::from_pairs(vec![[one, zero], [zero, one]]).unwrap();
        assert_eq!(lambda(&m12(), &up), 1.5);
        assert_eq!(lambda(&m12(), &mixed), 0.5);
        let (l, h) = diagonalize_moment(&moment_map(&m12(), &up)).unwrap();
        assert_eq!(l, 1.5);
        assert_eq!(h, GroupElement::identity());
    }

    #[test]
    fn bloch_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let u = random_unit(&mut rng);
            let back = pair_to_bloch(&bloch_to_pair(&u));
            for j in 0..3 {
                assert!((u[j] - back[j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn moment_matches_pairing_formula() {
        // <Phi, xi> = -(i/2) z* xi z summed with weights.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m_ = m12();
        for _ in 0..20 {
            let m = sample_point(&m_, &mut rng);
            let phi = moment_map(&m_, &m).coords;
            for e in AlgebraElement::basis() {
                let x = e.matrix();
                let mut h = 0.0;
                for (p, z) in m_.weights().iter().zip(&m.factors) {
                    let xz = [
                        x[0][0] * z[0] + x[0][1] * z[1],
                        x[1][0] * z[0] + x[1][1] * z[1],
                    ];
                    let s = z[0].conj() * xz[0] + z[1].conj() * xz[1];
                    h += *p as f64 * (C::new(0.0, -0.5) * s).re;
                }
                assert!((phi.dot(&e) - h).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn classification_examples() {
        let m_ = m12();
        let up = ManifoldPoint::from_bloch(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let down = ManifoldPoint::from_bloch(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let on = two_factor_point(1, 2, 1.0, 0.3);
        assert_eq!(
            classify_locus(&m_, &up, 1.0, 1e-9).unwrap().locus,
            Locus::Out
        );
        assert_eq!(
            classify_locus(&m_, &down, 1.0, 1e-9).unwrap().locus,
            Locus::In
        );
        assert_eq!(
            classify_locus(&m_, &on, 1.0, 1e-9).unwrap().locus,
            Locus::On
        );
        assert!(classify_locus(&m_, &on, 1.5, 1e-9).is_err());
        assert!(classify_locus(&m_, &on, 0.52, 0.05).unwrap().near_critical);
    }

    #[test]
    fn hamiltonian_field_satisfies_defining_identity() {
        // omega(X_H, v) = dH(v) with dH from central differences.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m_ = ModelManifold::new(vec![1, 1, 3]).unwrap();
        for _ in 0..10 {
            let m = sample_point(&m_, &mut rng);
            let frame = ChartFrame::at(&m_, &m);
            let xi = AlgebraElement::new(0.3, -0.7, 0.5);
            let x = hamiltonian_field_in(&frame, &xi, &m);
            for _ in 0..5 {
                let v = DVector::from_fn(frame.real_dim(), |_, _| {
                    crate::liegroup::standard_normal(&mut rng)
                });
                let h = 1e-5;
                let hp = vertical_weight(&m_, &xi, &frame.displaced(&v, h));
                let hm = vertical_weight(&m_, &xi, &frame.displaced(&v, -h));
                let dh = (hp - hm) / (2.0 * h);
                assert!(
                    (frame.omega(&x, &v) - dh).abs() < 1e-8,
                    "{} vs {}",
                    frame.omega(&x, &v),
                    dh
                );
            }
        }
    }

    #[test]
    fn d_lambda_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m_ = m12();
        for _ in 0..10 {
            let m = sample_point(&m_, &mut rng);
            let frame = ChartFrame::at(&m_, &m);
            let v = DVector::from_fn(4, |_, _| crate::liegroup::standard_normal(&mut rng));
            let h = 1e-5;
            let fd = (lambda(&m_, &frame.displaced(&v, h)) - lambda(&m_, &frame.displaced(&v, -h)))
                / (2.0 * h);
            assert!((frame.d_lambda(&v) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn torus_fixed_factor_has_zero_beta_component() {
        let m = ManifoldPoint::from_bloch(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let v = hamiltonian_field(&m12(), &AlgebraElement::BETA, &m);
        assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        assert!(v[2].abs() + v[3].abs() > 0.1);
    }

    #[test]
    fn single_factor_field_norm_matches_flow() {
        // Closed form on a weight-1 sphere: |xi_M| = |xi x u| with u the Bloch
        // vector; also checked against the finite-difference flow.
        let m_ = ModelManifold::new(vec![1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let m = sample_point(&m_, &mut rng);
            let xi = AlgebraElement::new(0.2, 0.9, -0.4);
            let frame = ChartFrame::at(&m_, &m);
            let v = hamiltonian_field_in(&frame, &xi, &m);
            let u = m.bloch_vectors()[0];
            let cr = xi.cross(&AlgebraElement { c: u });
            assert!((frame.norm(&v) - cr.norm()).abs() < 1e-12);
            let t = 1e-6;
            let g = GroupElement::exp(&xi.scale(-t));
            let moved = m.act(&g);
            let z = moved.factors[0];
            let z0 = m.factors[0];
            let (w1, w0) = if frame.charts[0] == 0 {
                (z[1] / z[0], z0[1] / z0[0])
            } else {
                (z[0] / z[1], z0[0] / z0[1])
            };
            let dw = (w1 - w0) / t;
            assert!((dw.re - v[0]).abs() < 1e-5 && (dw.im - v[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn gram_of_fields_matches_bloch_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m_ = ModelManifold::new(vec![1, 1, 3]).unwrap();
        let m = sample_point(&m_, &mut rng);
        let g = fundamental_gram(&m_, &m, &AlgebraElement::basis());
        let mut oracle = Matrix3::zeros();
        for (p, u) in m_.weights().iter().zip(m.bloch_vectors()) {
            let u = nalgebra::Vector3::from(u);
            oracle += (Matrix3::identity() - u * u.transpose()) * (*p as f64);
        }
        assert!((g - oracle).norm() < 1e-12);
    }

    #[test]
    fn level_set_sampling_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for w in [vec![1, 2], vec![1, 1, 3]] {
            let m_ = ModelManifold::new(w).unwrap();
            for _ in 0..20 {
                let m = sample_level_set(&m_, 1.0, &mut rng).unwrap();
                assert!((lambda(&m_, &m) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn on_locus_field_norm_for_one_two() {
        // cos(angle) = -1/4 between the factors; F^2 = sum p sin^2(gamma_i) = 45/32.
        let m = two_factor_point(1, 2, 1.0, 0.0);
        let f = field_norm(&m12(), &m).unwrap();
        assert!((f.value * f.value - 45.0 / 32.0).abs() < 1e-12);
        assert!(!f.singular);
    }
    #[test]
    fn calibration_finds_half() {
        let cal = calibrate_convention(&m12(), &[(8, 16), (12, 24), (16, 32)]).unwrap();
        assert_eq!(cal.scale, 0.5);
        assert!(
            (cal.samples[0].lambda_peak - 1.0).abs() < 0.02,
            "{:?}",
            cal.samples[0]
        );
        assert!(cal.spread < 0.02, "{}", cal.spread);
        let single = ModelManifold::new(vec![1]).unwrap();
        let cal = calibrate_convention(&single, &[(3, 3), (7, 7)]).unwrap();
        assert_eq!((cal.scale, cal.measured), (0.5, 0.5));
        assert!(matches!(
            calibrate_convention(&m12(), &[(8, 16)]),
            Err(CalibrationError::TooFewLevels(1))
        ));
        assert!(matches!(
            calibrate_convention(&m12(), &[(8, 15), (8, 16)]),
            Err(CalibrationError::EmptyIsotype { .. })
        ));
    }
}
