//! Power-law fits over level grids, decay verdicts, the predicted diagonal
//! and dimension constants, and the reduced volume by two independent
//! routes.

use crate::geometry::{
    field_norm, fundamental_gram, lambda, moment_map, ChartFrame, GeometryError, ManifoldPoint,
    ModelManifold,
};
use crate::hardy::{
    build_section_space, dimension, isotype_basis, multiplicity, HardyError, KernelEvaluator,
};
use crate::liegroup::{d_gt, AlgebraElement};
use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Residual RMS (natural-log units) above which a fit is rejected.
pub const DEFAULT_MAX_RMS: f64 = 0.05;
/// Largest N for which value * k^N is tested.
pub const DEFAULT_DECAY_ORDER: u32 = 4;
/// Distance from a critical value of lambda below which nu is refused.
pub const DEFAULT_CRITICAL_MARGIN: f64 = 0.05;
/// c in dim ~ (k/pi)^(d-1) dim(V_nu) vol(M_red) c, fixed on (1,2).
pub const VOLUME_NORMALIZATION: f64 = PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AsymptoticsError {
    #[error("power-law fit needs at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample at k = {k} has nonpositive value {value}")]
    NonPositive { k: f64, value: f64 },
    #[error("not a power law: residual RMS {rms} exceeds {bound}")]
    NotPowerLaw { rms: f64, bound: f64 },
    #[error("no admissible level in [{min}, {max}] for nu = {nu}")]
    EmptyGrid { nu: f64, min: u32, max: u32 },
    #[error("level k = {k} is not admissible for nu = {nu}")]
    Inadmissible { k: u32, nu: f64 },
    #[error("decay tail has {0} points; at least 3 are needed")]
    Inconclusive(usize),
    #[error("point has lambda = {lambda}, not on the locus nu = {nu}")]
    OffLocus { lambda: f64, nu: f64 },
    #[error("field norm vanishes; the diagonal prediction is singular")]
    SingularPrediction,
    #[error("nu = {nu} is within {margin} of the critical value {critical}")]
    Critical { nu: f64, critical: f64, margin: f64 },
    #[error("reduced space needs at least two factors")]
    SingleFactor,
    #[error("sampled stabilizer is not discrete (orbit Gram determinant {0:e})")]
    NonFree(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Hardy(#[from] HardyError),
}

type Result<T> = std::result::Result<T, AsymptoticsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: u32,
    pub n: u32,
    pub multiplicity: u64,
}

/// Admissible levels for a target moment eigenvalue nu: n(k) = nu k / s must
/// be an integer of the parity of k sum(p), with V_n present at level k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KGrid {
    pub nu: f64,
    pub scale: f64,
    pub points: Vec<GridPoint>,
}

/// Label n with nu = scale n / k, if integral.
pub fn label_for(nu: f64, scale: f64, k: u32) -> Option<u32> {
    let n = nu * k as f64 / scale;
    let r = n.round();
    ((n - r).abs() < 1e-9 && r >= 0.0).then_some(r as u32)
}

fn grid_point(m: &ModelManifold, nu: f64, scale: f64, k: u32) -> Option<GridPoint> {
    let n = label_for(nu, scale, k)?;
    if !(n + k * m.total_weight()).is_multiple_of(2) {
        return None;
    }
    let multiplicity = multiplicity(m, k, n);
    (multiplicity > 0).then_some(GridPoint { k, n, multiplicity })
}

impl KGrid {
    /// Every admissible k in [kmin, kmax].
    pub fn admissible(
        m: &ModelManifold,
        nu: f64,
        scale: f64,
        kmin: u32,
        kmax: u32,
    ) -> Result<Self> {
        let points: Vec<GridPoint> = (kmin.max(1)..=kmax)
            .filter_map(|k| grid_point(m, nu, scale, k))
            .collect();
        if points.is_empty() {
            return Err(AsymptoticsError::EmptyGrid {
                nu,
                min: kmin,
                max: kmax,
            });
        }
        Ok(Self { nu, scale, points })
    }

    /// Exactly the given levels, each of which must be admissible.
    pub fn from_levels(m: &ModelManifold, nu: f64, scale: f64, ks: &[u32]) -> Result<Self> {
        let points = ks
            .iter()
            .map(|&k| grid_point(m, nu, scale, k).ok_or(AsymptoticsError::Inadmissible { k, nu }))
            .collect::<Result<Vec<_>>>()?;
        if points.is_empty() {
            return Err(AsymptoticsError::EmptyGrid { nu, min: 0, max: 0 });
        }
        Ok(Self { nu, scale, points })
    }

    pub fn ks(&self) -> Vec<u32> {
        self.points.iter().map(|p| p.k).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index where the tail (last third) starts.
    pub fn tail_start(&self) -> usize {
        tail_start(self.points.len())
    }

    /// Index where the top half starts.
    pub fn top_half_start(&self) -> usize {
        self.points.len() / 2
    }
}

fn tail_start(len: usize) -> usize {
    len - len.div_ceil(3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub log_constant: f64,
    pub residual_rms: f64,
    /// max - min of the exponents with one sample left out.
    pub loo_spread: f64,
    pub samples: usize,
}

impl PowerLawFit {
    pub fn constant(&self) -> f64 {
        self.log_constant.exp()
    }

    pub fn eval(&self, k: f64) -> f64 {
        (self.log_constant + self.exponent * k.ln()).exp()
    }
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Least-squares line through (log k, log value).
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<PowerLawFit> {
    fit_power_law_bounded(samples, DEFAULT_MAX_RMS)
}

pub fn fit_power_law_bounded(samples: &[(f64, f64)], max_rms: f64) -> Result<PowerLawFit> {
    if samples.len() < 4 {
        return Err(AsymptoticsError::TooFewSamples(samples.len()));
    }
    if let Some(&(k, value)) = samples.iter().find(|(k, v)| !(*v > 0.0) || !(*k > 0.0)) {
        return Err(AsymptoticsError::NonPositive { k, value });
    }
    let x: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let (exponent, log_constant) = least_squares(&x, &y);
    let residual_rms = (x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - log_constant - exponent * a).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    let loo: Vec<f64> = (0..x.len())
        .map(|skip| {
            let xs: Vec<f64> = x
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| *v)
                .collect();
            let ys: Vec<f64> = y
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| *v)
                .collect();
            least_squares(&xs, &ys).0
        })
        .collect();
    let loo_spread =
        loo.iter().cloned().fold(f64::MIN, f64::max) - loo.iter().cloned().fold(f64::MAX, f64::min);
    if residual_rms > max_rms {
        return Err(AsymptoticsError::NotPowerLaw {
            rms: residual_rms,
            bound: max_rms,
        });
    }
    Ok(PowerLawFit {
        exponent,
        log_constant,
        residual_rms,
        loo_spread,
        samples: samples.len(),
    })
}

/// Whether value * k^N decreases on the tail of a sequence, for N up to a
/// bound. O(k^-inf) is certified only up to that N and only on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub ks: Vec<u32>,
    pub values: Vec<f64>,
    pub tail_start: usize,
    pub max_order: u32,
    /// Largest N <= max_order with value * k^N decreasing on the tail.
    pub largest_order: Option<u32>,
    pub superpolynomial: bool,
}

impl DecayReport {
    pub fn decreasing_at(&self, order: u32) -> bool {
        self.largest_order.is_some_and(|n| n >= order)
    }
}

fn decreasing_on(ks: &[u32], values: &[f64], order: u32) -> bool {
    ks.windows(2).zip(values.windows(2)).all(|(k, v)| {
        let a = v[0] * (k[0] as f64).powi(order as i32);
        let b = v[1] * (k[1] as f64).powi(order as i32);
        b < a
    })
}

pub fn check_rapid_decay(samples: &[(u32, f64)], max_order: u32) -> Result<DecayReport> {
    let start = tail_start(samples.len());
    if samples.len() - start < 3 {
        return Err(AsymptoticsError::Inconclusive(samples.len() - start));
    }
    let ks: Vec<u32> = samples.iter().map(|s| s.0).collect();
    let values: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let largest_order = (0..=max_order)
        .take_while(|&n| decreasing_on(&ks[start..], &values[start..], n))
        .last();
    Ok(DecayReport {
        superpolynomial: largest_order == Some(max_order),
        ks,
        values,
        tail_start: start,
        max_order,
        largest_order,
    })
}

/// Normalized correlation |Pi(x,y)|^2 / (Pi(x,x) Pi(y,y)) against k^-order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub ks: Vec<u32>,
    pub values: Vec<f64>,
    pub tail_start: usize,
    pub order: u32,
    /// Every tail value lies below k^-order.
    pub below: bool,
}

pub fn check_correlation_decay(samples: &[(u32, f64)], order: u32) -> Result<CorrelationReport> {
    let start = tail_start(samples.len());
    if samples.len() - start < 3 {
        return Err(AsymptoticsError::Inconclusive(samples.len() - start));
    }
    let below = samples[start..]
        .iter()
        .all(|&(k, v)| v < (k as f64).powi(-(order as i32)));
    Ok(CorrelationReport {
        ks: samples.iter().map(|s| s.0).collect(),
        values: samples.iter().map(|s| s.1).collect(),
        tail_start: start,
        order,
        below,
    })
}

/// Exact kernel values at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSample {
    pub k: u32,
    pub n: u32,
    pub diag_x: f64,
    pub diag_y: Option<f64>,
    pub cross: Option<Complex64>,
}

impl KernelSample {
    pub fn correlation(&self) -> Option<f64> {
        Some(self.cross?.norm_sqr() / (self.diag_x * self.diag_y?))
    }
}

/// Pi_(n,k)(x,x), and optionally Pi(y,y) and Pi(x,y), across a grid.
pub fn kernel_series(
    m: &ModelManifold,
    grid: &KGrid,
    x: &ManifoldPoint,
    y: Option<&ManifoldPoint>,
) -> Result<Vec<KernelSample>> {
    m.check_point(x)?;
    if let Some(y) = y {
        m.check_point(y)?;
    }
    crate::par_map(&grid.points, |p| -> Result<KernelSample> {
        let space = build_section_space(m, p.k)?;
        let basis = isotype_basis(&space, p.n)?;
        let eval = KernelEvaluator::new(&space, &basis);
        Ok(KernelSample {
            k: p.k,
            n: p.n,
            diag_x: eval.diagonal(x),
            diag_y: y.map(|y| eval.diagonal(y)),
            cross: y.map(|y| eval.evaluate(x, y).value),
        })
    })
    .into_iter()
    .collect()
}

/// sqrt(2) D_{G/T} (k/pi)^(d - 1/2) / field_norm.
pub fn diagonal_prediction(d: usize, k: f64, field_norm: f64) -> f64 {
    std::f64::consts::SQRT_2 * d_gt() * (k / PI).powf(d as f64 - 0.5) / field_norm
}

pub fn predict_diagonal(m: &ModelManifold, nu: f64, x: &ManifoldPoint, k: u32) -> Result<f64> {
    let l = lambda(m, x);
    if (l - nu).abs() > 1e-6 {
        return Err(AsymptoticsError::OffLocus { lambda: l, nu });
    }
    let f = field_norm(m, x)?;
    if f.singular {
        return Err(AsymptoticsError::SingularPrediction);
    }
    Ok(diagonal_prediction(m.dim(), k as f64, f.value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolumeMethod {
    OrbitQuadrature,
    FiberCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedVolume {
    pub value: f64,
    pub method: VolumeMethod,
    pub error: f64,
}

/// Sampling plan for the orbit-quadrature route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSampling {
    /// Independent stratified replicas; the error is their standard error.
    pub replicas: usize,
    /// Strata per sphere coordinate; each replica uses strata^2 samples.
    pub strata: usize,
    /// Trapezoid points on the circle solved for the last factor.
    pub circle_points: usize,
    pub seed: u64,
}

impl Default for OrbitSampling {
    fn default() -> Self {
        Self {
            replicas: 8,
            strata: 12,
            circle_points: 32,
            seed: 0,
        }
    }
}

fn check_regular(m: &ModelManifold, nu: f64, margin: f64) -> Result<()> {
    if m.dim() < 2 {
        return Err(AsymptoticsError::SingleFactor);
    }
    let (min, max) = m.lambda_range();
    if !(nu > min && nu < max) {
        return Err(GeometryError::OutOfRange { nu, min, max }.into());
    }
    let critical = m
        .critical_values()
        .into_iter()
        .min_by(|a, b| (a - nu).abs().total_cmp(&(b - nu).abs()))
        .unwrap();
    if (critical - nu).abs() < margin {
        return Err(AsymptoticsError::Critical {
            nu,
            critical,
            margin,
        });
    }
    Ok(())
}

pub fn reduced_volume(
    m: &ModelManifold,
    nu: f64,
    method: VolumeMethod,
    sampling: &OrbitSampling,
) -> Result<ReducedVolume> {
    match method {
        VolumeMethod::FiberCount => reduced_volume_fiber_count(m, nu),
        VolumeMethod::OrbitQuadrature => reduced_volume_orbit(m, nu, sampling),
    }
}

/// Duistermaat-Heckman: the beta-component of Phi pushes Liouville measure
/// forward to a piecewise polynomial density whose derivative at nu is
/// D'(nu) = sum_sigma (prod sigma) (nu + sigma.p/2)_+^(n-2) / (n-2)!, up to
/// pi^n. Then vol(M_red) = -pi^(n-2) D'(nu), the circle period being pi.
pub fn reduced_volume_fiber_count(m: &ModelManifold, nu: f64) -> Result<ReducedVolume> {
    check_regular(m, nu, 1e-9)?;
    let w = m.weights();
    let n = w.len();
    let fact: f64 = (1..=n as u64 - 2).map(|i| i as f64).product();
    let mut deriv = 0.0;
    for mask in 0..(1u32 << n) {
        let mut sign = 1.0;
        let mut shift = 0.0;
        for (i, &p) in w.iter().enumerate() {
            if mask >> i & 1 == 1 {
                shift += p as f64 / 2.0;
            } else {
                sign = -sign;
                shift -= p as f64 / 2.0;
            }
        }
        let t = nu + shift;
        if t > 0.0 {
            deriv += sign * t.powi(n as i32 - 2) / fact;
        }
    }
    Ok(ReducedVolume {
        value: -PI.powi(n as i32 - 2) * deriv,
        method: VolumeMethod::FiberCount,
        error: 0.0,
    })
}

/// Riemannian volume of the G-orbit through (x, Phi(x)) in M x O_nu.
pub fn effective_potential(m: &ModelManifold, x: &ManifoldPoint) -> Result<f64> {
    let phi = moment_map(m, x).coords;
    let nu = phi.norm();
    let basis = AlgebraElement::basis();
    let gm = fundamental_gram(m, x, &basis);
    let vel: Vec<AlgebraElement> = basis.iter().map(|e| e.cross(&phi).scale(2.0)).collect();
    let go = Matrix3::from_fn(|a, b| vel[a].dot(&vel[b]) / (2.0 * nu));
    let det = (gm + go).determinant();
    let scale = gm.trace().powi(3).max(1e-300);
    if det < 1e-10 * scale {
        return Err(AsymptoticsError::NonFree(det));
    }
    // Orbits are copies of SU(2)/{+-1}, volume pi^2 at unit speed.
    Ok(PI * PI * det.sqrt())
}

/// J_graph / V_eff * |grad lambda| at a point of M_nu.
fn orbit_integrand(m: &ModelManifold, x: &ManifoldPoint) -> Result<f64> {
    let frame = ChartFrame::at(m, x);
    let nu = lambda(m, x);
    let basis = frame.level_set_basis();
    let b = DMatrix::from_fn(3, basis.len(), |r, c| frame.d_moment(&basis[c]).c[r]);
    let graph = DMatrix::identity(basis.len(), basis.len()) + b.transpose() * &b / (2.0 * nu);
    let jac = graph.determinant().sqrt();
    let grad = frame.norm(&frame.grad_lambda());
    Ok(jac / effective_potential(m, x)? * grad)
}

fn sphere_point(t: f64, psi: f64) -> [f64; 3] {
    let s = (1.0 - t * t).max(0.0).sqrt();
    [t, s * psi.cos(), s * psi.sin()]
}

/// Integral over N_0 = graph of Phi over M_nu of dV / V_eff. The first factor
/// is pinned at the pole (G-invariance), the middle factors are sampled
/// by stratified replicas and the last factor is solved on a circle.
pub fn reduced_volume_orbit(
    m: &ModelManifold,
    nu: f64,
    sampling: &OrbitSampling,
) -> Result<ReducedVolume> {
    check_regular(m, nu, 1e-9)?;
    let w: Vec<f64> = m.weights().iter().map(|&p| p as f64).collect();
    let n = w.len();
    let mid = n - 2;
    let per_replica = if mid == 0 {
        1
    } else {
        sampling.strata * sampling.strata
    };
    let pn = w[n - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut estimates = Vec::with_capacity(sampling.replicas);
    for _ in 0..sampling.replicas.max(1) {
        // Latin-style pairing of strata across the middle factors.
        let perms: Vec<Vec<usize>> = (0..mid)
            .map(|_| {
                let mut p: Vec<usize> = (0..per_replica).collect();
                for i in (1..p.len()).rev() {
                    p.swap(i, rng.random_range(0..=i));
                }
                p
            })
            .collect();
        let configs: Vec<Vec<[f64; 3]>> = (0..per_replica)
            .map(|i| {
                let mut u = vec![[1.0, 0.0, 0.0]];
                for perm in &perms {
                    let cell = perm[i];
                    let (ct, cp) = (cell / sampling.strata, cell % sampling.strata);
                    let t = -1.0 + 2.0 * (ct as f64 + rng.random::<f64>()) / sampling.strata as f64;
                    let psi = 2.0 * PI * (cp as f64 + rng.random::<f64>()) / sampling.strata as f64;
                    u.push(sphere_point(t, psi));
                }
                u
            })
            .collect();
        let values = crate::par_map(&configs, |u| -> Result<f64> {
            let mut a = [0.0; 3];
            for (p, v) in w.iter().zip(u) {
                for j in 0..3 {
                    a[j] += p * v[j];
                }
            }
            let an = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if an < 1e-12 {
                return Ok(0.0);
            }
            let tstar = (4.0 * nu * nu - an * an - pn * pn) / (2.0 * pn * an);
            if tstar.abs() >= 1.0 {
                return Ok(0.0);
            }
            // Orthonormal frame (e0 = a-hat, e1, e2).
            let e0 = a.map(|x| x / an);
            let helper = if e0[0].abs() < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            let c = e0[0] * helper[0] + e0[1] * helper[1] + e0[2] * helper[2];
            let e1 = {
                let v = [
                    helper[0] - c * e0[0],
                    helper[1] - c * e0[1],
                    helper[2] - c * e0[2],
                ];
                let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                v.map(|x| x / l)
            };
            let e2 = [
                e0[1] * e1[2] - e0[2] * e1[1],
                e0[2] * e1[0] - e0[0] * e1[2],
                e0[0] * e1[1] - e0[1] * e1[0],
            ];
            let s = (1.0 - tstar * tstar).sqrt();
            let mut acc = 0.0;
            for j in 0..sampling.circle_points {
                let psi = 2.0 * PI * j as f64 / sampling.circle_points as f64;
                let (cp, sp) = (psi.cos(), psi.sin());
                let last: [f64; 3] =
                    std::array::from_fn(|r| tstar * e0[r] + s * (cp * e1[r] + sp * e2[r]));
                let mut full = u.clone();
                full.push(last);
                acc += orbit_integrand(m, &ManifoldPoint::from_bloch(&full))?;
            }
            let circle = 2.0 * PI / sampling.circle_points as f64;
            Ok(acc * circle * (pn / 4.0) * 4.0 * nu / (pn * an))
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        let areas: f64 = w[1..n - 1].iter().map(|p| PI * p).product();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        estimates.push(PI * w[0] * areas * mean);
    }
    let r = estimates.len() as f64;
    let value = estimates.iter().sum::<f64>() / r;
    let error = if estimates.len() > 1 {
        (estimates.iter().map(|e| (e - value).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt()
    } else {
        0.0
    };
    Ok(ReducedVolume {
        value,
        method: VolumeMethod::OrbitQuadrature,
        error,
    })
}

/// Reading of dim(V_nu) in the dimension asymptotics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimensionReading {
    /// Leading Weyl polynomial: dim V_(k nu) ~ k (nu / s).
    Weyl,
    /// Actual dimension nu / s + 1.
    Literal,
}

/// (k/pi)^(d-1) dim(V_nu) vol(M_red) c.
pub fn predict_dimension(
    m: &ModelManifold,
    nu: f64,
    k: u32,
    scale: f64,
    volume: f64,
    reading: DimensionReading,
) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let dim_v = match reading {
        DimensionReading::Weyl => nu / scale,
        DimensionReading::Literal => nu / scale + 1.0,
    };
    (k as f64 / PI).powi(m.dim() as i32 - 1) * dim_v * volume * VOLUME_NORMALIZATION
}

/// Exact isotype dimensions across a grid.
pub fn exact_dimensions(m: &ModelManifold, grid: &KGrid) -> Vec<(u32, u32, u64)> {
    grid.points
        .iter()
        .map(|p| (p.k, p.n, dimension(m, p.k, p.n)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::two_factor_point;

    fn mf(w: &[u32]) -> ModelManifold {
        ModelManifold::new(w.to_vec()).unwrap()
    }

    #[test]
    fn exact_power_law() {
        let s: Vec<(f64, f64)> = (1..8)
            .map(|k| (k as f64 * 3.0, 7.0 * (k as f64 * 3.0).powi(3)))
            .collect();
        let f = fit_power_law(&s).unwrap();
        assert!((f.exponent - 3.0).abs() < 1e-10);
        assert!((f.constant() - 7.0).abs() < 1e-9);
        assert!(f.residual_rms < 1e-12 && f.loo_spread < 1e-10);
        let s: Vec<(f64, f64)> = (10..=60).map(|k| (k as f64, k as f64 + 1.0)).collect();
        let f = fit_power_law(&s).unwrap();
        // The local slope of log(k + 1) is k / (k + 1): just below 1, rising.
        assert!(f.exponent > 0.95 && f.exponent < 1.0, "{}", f.exponent);
        let late: Vec<(f64, f64)> = (60..=360)
            .step_by(10)
            .map(|k| (k as f64, k as f64 + 1.0))
            .collect();
        assert!(fit_power_law(&late).unwrap().exponent > f.exponent);
        assert!(matches!(
            fit_power_law(&s[..3]),
            Err(AsymptoticsError::TooFewSamples(3))
        ));
        let bad: Vec<(f64, f64)> = (1..10).map(|k| (k as f64, (k as f64).exp())).collect();
        assert!(matches!(
            fit_power_law(&bad),
            Err(AsymptoticsError::NotPowerLaw { .. })
        ));
    }

    #[test]
    fn grids_follow_parity() {
        let m = mf(&[1, 2]);
        let g = KGrid::admissible(&m, 1.0, 0.5, 8, 60).unwrap();
        assert!(g
            .points
            .iter()
            .all(|p| p.k % 2 == 0 && p.n == 2 * p.k && p.multiplicity >= 1));
        assert_eq!(g.len(), 27);
        assert!(KGrid::from_levels(&m, 1.0, 0.5, &[9]).is_err());
        assert!(KGrid::admissible(&m, 0.3, 0.5, 1, 3).is_err());
    }

    #[test]
    fn decay_verdicts() {
        let geo: Vec<(u32, f64)> = (10..40).map(|k| (k, (-0.5 * k as f64).exp())).collect();
        let r = check_rapid_decay(&geo, 4).unwrap();
        assert!(r.superpolynomial);
        let grow: Vec<(u32, f64)> = (10..40).map(|k| (k, (k as f64).powf(1.5))).collect();
        let r = check_rapid_decay(&grow, 4).unwrap();
        assert_eq!(r.largest_order, None);
        let poly: Vec<(u32, f64)> = (10..40).map(|k| (k, (k as f64).powf(-2.5))).collect();
        let r = check_rapid_decay(&poly, 4).unwrap();
        assert_eq!(r.largest_order, Some(2));
        assert!(r.decreasing_at(1) && !r.decreasing_at(3));
        assert!(matches!(
            check_rapid_decay(&poly[..5], 4),
            Err(AsymptoticsError::Inconclusive(2))
        ));
    }

    #[test]
    fn diagonal_prediction_plug_in() {
        assert!((diagonal_prediction(2, PI, 1.0) - 2f64.sqrt() / PI).abs() < 1e-15);
        let r = diagonal_prediction(3, 20.0, 0.7) / diagonal_prediction(3, 10.0, 0.7);
        assert!((r - 2f64.powf(2.5)).abs() < 1e-12);
        let m = mf(&[1, 2]);
        let x = two_factor_point(1, 2, 1.0, 0.3);
        assert!(predict_diagonal(&m, 1.0, &x, 10).is_ok());
        assert!(matches!(
            predict_diagonal(&m, 1.2, &x, 10),
            Err(AsymptoticsError::OffLocus { .. })
        ));
    }

    #[test]
    fn fiber_count_volumes() {
        let v = reduced_volume_fiber_count(&mf(&[1, 2]), 1.0).unwrap().value;
        assert!((v - 1.0).abs() < 1e-14);
        let v = reduced_volume_fiber_count(&mf(&[1, 1, 3]), 1.0)
            .unwrap()
            .value;
        assert!((v - PI / 2.0).abs() < 1e-14);
        assert!(matches!(
            reduced_volume_fiber_count(&mf(&[1, 2]), 0.5),
            Err(AsymptoticsError::Critical { .. }) | Err(AsymptoticsError::Geometry(_))
        ));
    }

    #[test]
    fn orbit_quadrature_matches_fiber_count() {
        let s = OrbitSampling::default();
        for nu in [0.7, 1.0, 1.3] {
            let m = mf(&[1, 2]);
            let a = reduced_volume_orbit(&m, nu, &s).unwrap();
            let b = reduced_volume_fiber_count(&m, nu).unwrap();
            assert!(
                (a.value - b.value).abs() < 1e-8,
                "nu={nu}: {} vs {}",
                a.value,
                b.value
            );
        }
        let m = mf(&[1, 1, 3]);
        let a = reduced_volume_orbit(&m, 1.0, &s).unwrap();
        let b = reduced_volume_fiber_count(&m, 1.0).unwrap();
        assert!(
            (a.value - b.value).abs() < 4.0 * a.error + 0.02,
            "{a:?} vs {b:?}"
        );
    }

    #[test]
    fn dimension_predictions() {
        let m = mf(&[1, 2]);
        assert_eq!(
            predict_dimension(&m, 1.0, 0, 0.5, 1.0, DimensionReading::Weyl),
            0.0
        );
        let p = predict_dimension(&m, 1.0, 30, 0.5, 1.0, DimensionReading::Weyl);
        assert!((p - 60.0).abs() < 1e-12);
        let l = predict_dimension(&m, 1.0, 30, 0.5, 1.0, DimensionReading::Literal);
        assert!((l - 90.0).abs() < 1e-12);
    }
}
