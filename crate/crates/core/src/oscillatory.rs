//! The stationary-phase chain behind the diagonal constant: model phases,
//! the inner (u, theta) integral against its leading term, the Gaussian
//! integral J, and the radial integral over G/T.

use crate::geometry::{
    adapted_frame, fundamental_gram, hamiltonian_field_in, lambda, upsilon, ChartFrame,
    GeometryError, ManifoldPoint, ModelManifold,
};
use crate::liegroup::{coset_density, coset_point, d_gt, LieError};
use crate::quadrature::{composite_gauss_legendre, gauss_legendre, Estimate, Integrator};
use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

type C = Complex64;

/// Every point of M is fixed by -Id, so the stationary set over G/T is
/// covered twice.
pub const STABILIZER_ORDER: f64 = 2.0;
/// Default support parameter of the cutoff rho on (1/D, D).
pub const DEFAULT_CUTOFF: f64 = 10.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OscillatoryError {
    #[error("lambda must be positive, got {0}")]
    Domain(f64),
    #[error("cutoff parameter D = {0} must exceed 2")]
    Cutoff(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lie(#[from] LieError),
}

type Result<T> = std::result::Result<T, OscillatoryError>;

/// Data of the model integrals at a point m of M_nu, in the frame adapted to
/// Phi(m): the Gram matrix of the fundamental fields and the pairings
/// omega_m(e_M, Upsilon).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub nu: f64,
    pub d: usize,
    pub gram: Matrix3<f64>,
    pub pairing: [f64; 3],
    pub tau: f64,
    pub cutoff: f64,
}

impl ModelParams {
    /// Isotropic model: gram = field_norm^2 I, no pairing.
    pub fn isotropic(nu: f64, d: usize, field_norm: f64) -> Self {
        Self {
            nu,
            d,
            gram: Matrix3::identity() * (field_norm * field_norm),
            pairing: [0.0; 3],
            tau: 0.0,
            cutoff: DEFAULT_CUTOFF,
        }
    }

    pub fn from_geometry(m: &ModelManifold, x: &ManifoldPoint, tau: f64) -> Result<Self> {
        m.check_point(x)?;
        let basis = adapted_frame(m, x)?;
        let frame = ChartFrame::at(m, x);
        let ups = upsilon(m, x);
        let pairing = basis.map(|e| frame.omega(&hamiltonian_field_in(&frame, &e, x), &ups));
        Ok(Self {
            nu: lambda(m, x),
            d: m.dim(),
            gram: fundamental_gram(m, x, &basis),
            pairing,
            tau,
            cutoff: DEFAULT_CUTOFF,
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    /// ||(Ad_{h_m} beta)_M(m)||.
    pub fn field_norm(&self) -> f64 {
        self.gram[(0, 0)].sqrt()
    }

    fn direction(r: f64, delta: f64) -> Result<[f64; 3]> {
        Ok(coset_point(r, delta)?.c)
    }

    /// lambda_tau(r, delta) = ||(Ad_{h_m g} beta)_M(m)||^2.
    pub fn lambda_tau(&self, r: f64, delta: f64) -> Result<f64> {
        let a = Self::direction(r, delta)?;
        Ok((0..3)
            .map(|i| (0..3).map(|j| a[i] * self.gram[(i, j)] * a[j]).sum::<f64>())
            .sum())
    }

    /// omega_m((Ad_{h_m g} beta)_M, Upsilon).
    pub fn omega_pairing(&self, r: f64, delta: f64) -> Result<f64> {
        let a = Self::direction(r, delta)?;
        Ok((0..3).map(|i| a[i] * self.pairing[i]).sum())
    }

    /// xi_tau(r, delta) = 2 tau omega - sqrt(k) nu (kappa - 1).
    pub fn xi_tau(&self, k: f64, r: f64, delta: f64) -> Result<f64> {
        let kappa = Self::direction(r, delta)?[0];
        Ok(2.0 * self.tau * self.omega_pairing(r, delta)? - k.sqrt() * self.nu * (kappa - 1.0))
    }

    /// B_tau = -lambda_tau vartheta^2 / 2 - 2 i tau vartheta omega.
    pub fn b_tau(&self, vartheta: f64, r: f64, delta: f64) -> Result<C> {
        Ok(C::new(
            -0.5 * self.lambda_tau(r, delta)? * vartheta * vartheta,
            -2.0 * self.tau * vartheta * self.omega_pairing(r, delta)?,
        ))
    }
}

/// A = theta + nu vartheta kappa.
pub fn phase_a(theta: f64, vartheta: f64, kappa: f64, nu: f64) -> f64 {
    theta + nu * vartheta * kappa
}

/// G = nu vartheta (kappa u - 1) + theta (u - 1).
pub fn phase_g(u: f64, theta: f64, vartheta: f64, kappa: f64, nu: f64) -> f64 {
    nu * vartheta * (kappa * u - 1.0) + theta * (u - 1.0)
}

/// Gamma = theta (u - 1) + nu vartheta kappa u.
pub fn phase_gamma(u: f64, theta: f64, vartheta: f64, kappa: f64, nu: f64) -> f64 {
    theta * (u - 1.0) + nu * vartheta * kappa * u
}

/// (d/du, d/dtheta) of Gamma.
pub fn gamma_gradient(u: f64, theta: f64, vartheta: f64, kappa: f64, nu: f64) -> [f64; 2] {
    [theta + nu * vartheta * kappa, u - 1.0]
}

/// Hessian of Gamma in (u, theta); constant, with determinant -1.
pub fn gamma_hessian() -> [[f64; 2]; 2] {
    [[0.0, 1.0], [1.0, 0.0]]
}

/// Critical point (1, -nu kappa vartheta) of Gamma.
pub fn gamma_critical_point(vartheta: f64, kappa: f64, nu: f64) -> (f64, f64) {
    (1.0, -nu * kappa * vartheta)
}

/// i D_tau = -(u/2)(A^2 + vartheta^2 lambda_tau) - 2 i tau vartheta omega.
pub fn exponent_d(
    params: &ModelParams,
    u: f64,
    theta: f64,
    vartheta: f64,
    r: f64,
    delta: f64,
) -> Result<C> {
    let kappa = coset_point(r, delta)?.c[0];
    let a = phase_a(theta, vartheta, kappa, params.nu);
    let lam = params.lambda_tau(r, delta)?;
    Ok(C::new(
        -0.5 * u * (a * a + vartheta * vartheta * lam),
        -2.0 * params.tau * vartheta * params.omega_pairing(r, delta)?,
    ))
}

/// sqrt(2 pi) (-i) xi lambda^(-3/2) exp(-xi^2 / (2 lambda)).
pub fn gaussian_j(lambda: f64, xi: f64) -> Result<C> {
    if !(lambda > 0.0) {
        return Err(OscillatoryError::Domain(lambda));
    }
    let v = (2.0 * PI).sqrt() * xi * lambda.powf(-1.5) * (-xi * xi / (2.0 * lambda)).exp();
    Ok(C::new(0.0, -v))
}

/// int vartheta exp(-lambda vartheta^2 / 2 - i xi vartheta) d vartheta by
/// adaptive quadrature over the window where the Gaussian exceeds e^-40.
pub fn gaussian_j_quadrature(lambda: f64, xi: f64) -> Result<Estimate<C>> {
    if !(lambda > 0.0) {
        return Err(OscillatoryError::Domain(lambda));
    }
    let half = (80.0 / lambda).sqrt();
    let pieces = ((xi.abs() * half / PI).ceil() as usize).clamp(4, 4096);
    let breaks: Vec<f64> = (0..=pieces)
        .map(|i| -half + 2.0 * half * i as f64 / pieces as f64)
        .collect();
    Ok(Integrator::new(1e-16, 1e-12).integrate_panels(
        |t: f64| C::from_polar(t * (-0.5 * lambda * t * t).exp(), -xi * t),
        &breaks,
    ))
}

fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Smooth cutoff, 1 on [2/D, D/2] and supported in (1/D, D).
pub fn cutoff_rho(u: f64, d: f64) -> f64 {
    if u <= 2.0 / d {
        smooth_step((u - 1.0 / d) * d)
    } else if u >= d / 2.0 {
        smooth_step((d - u) / (d / 2.0))
    } else {
        1.0
    }
}

/// Resolution of the inner quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerQuadrature {
    /// Gauss-Legendre nodes per theta panel.
    pub nodes: usize,
    /// theta panels per oscillation period.
    pub panels_per_period: f64,
    /// Half-width of the theta window in units of 1/sqrt(u).
    pub window: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for InnerQuadrature {
    fn default() -> Self {
        Self {
            nodes: 16,
            panels_per_period: 1.0,
            window: 9.0,
            abs_tol: 1e-15,
            rel_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerIntegral {
    pub quadrature: C,
    pub leading: C,
    /// Richardson (panel doubling) plus Gauss-Kronrod error estimate.
    pub error: f64,
    /// The error estimate is below 10% of |quadrature - leading|.
    pub resolved: bool,
}

impl InnerIntegral {
    pub fn relative_deviation(&self) -> f64 {
        (self.quadrature - self.leading).norm() / self.leading.norm()
    }
}

/// I_k(vartheta, r) = int du int dtheta rho(u) u^d e^{i sqrt(k) Gamma} e^{i D_tau},
/// with its leading term e^{i sqrt(k) nu vartheta kappa} (2 pi / sqrt(k)) e^{B_tau}.
pub fn inner_integral_i(
    k: f64,
    vartheta: f64,
    r: f64,
    delta: f64,
    params: &ModelParams,
    q: &InnerQuadrature,
) -> Result<InnerIntegral> {
    let dcut = params.cutoff;
    if !(dcut > 2.0) {
        return Err(OscillatoryError::Cutoff(dcut));
    }
    let kappa = coset_point(r, delta)?.c[0];
    let lam = params.lambda_tau(r, delta)?;
    let om = params.omega_pairing(r, delta)?;
    let nu = params.nu;
    let sk = k.sqrt();
    let rule = gauss_legendre(q.nodes);
    let theta_integral = |u: f64, panels: usize| -> C {
        let c = -nu * vartheta * kappa;
        let half = q.window / u.sqrt();
        composite_gauss_legendre(
            |theta: f64| {
                let a = phase_a(theta, vartheta, kappa, nu);
                let re = -0.5 * u * (a * a + vartheta * vartheta * lam);
                let im = sk * phase_gamma(u, theta, vartheta, kappa, nu)
                    - 2.0 * params.tau * vartheta * om;
                C::from_polar(re.exp(), im)
            },
            c - half,
            c + half,
            panels,
            &rule,
        )
    };
    let panels_at = |u: f64| -> usize {
        let periods = sk * (u - 1.0).abs() * 2.0 * q.window / u.sqrt() / (2.0 * PI);
        (periods * q.panels_per_period).ceil() as usize + 4
    };
    let richardson = std::cell::Cell::new(0.0f64);
    let h = (6.0 / sk).min(0.4);
    let mut breaks = vec![
        1.0 / dcut,
        2.0 / dcut,
        1.0 - h,
        1.0,
        1.0 + h,
        dcut / 2.0,
        dcut,
    ];
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    let est = Integrator::new(q.abs_tol, q.rel_tol).integrate_panels(
        |u: f64| {
            let w = cutoff_rho(u, dcut) * u.powi(params.d as i32);
            if w == 0.0 {
                return C::new(0.0, 0.0);
            }
            let p = panels_at(u);
            let coarse = theta_integral(u, p);
            let fine = theta_integral(u, 2 * p);
            richardson.set(richardson.get().max(w * (fine - coarse).norm()));
            fine * w
        },
        &breaks,
    );
    let leading = C::from_polar(2.0 * PI / sk, sk * nu * vartheta * kappa)
        * C::new(
            -0.5 * lam * vartheta * vartheta,
            -2.0 * params.tau * vartheta * om,
        )
        .exp()
        * cutoff_rho(1.0, dcut);
    // The theta error is per unit u; the u-range has length below D.
    let error = est.error + richardson.get() * dcut;
    Ok(InnerIntegral {
        quadrature: est.value,
        leading,
        error,
        resolved: est.converged && error <= 0.1 * (est.value - leading).norm(),
    })
}

/// Integrand of the radial integral in (r, delta):
/// xi / lambda^(3/2) exp(-xi^2 / (2 lambda)) V(r) r.
pub fn final_pi_integrand(k: f64, r: f64, delta: f64, params: &ModelParams) -> Result<f64> {
    let lam = params.lambda_tau(r, delta)?;
    if !(lam > 0.0) {
        return Err(OscillatoryError::Domain(lam));
    }
    let xi = params.xi_tau(k, r, delta)?;
    Ok(xi / lam.powf(1.5) * (-xi * xi / (2.0 * lam)).exp() * coset_density(r)? * r)
}

/// Prefactor sqrt(2) nu / sqrt(pi) (k/pi)^d of the assembled chain, times
/// the stabilizer order.
fn radial_prefactor(k: f64, params: &ModelParams) -> f64 {
    STABILIZER_ORDER * std::f64::consts::SQRT_2 * params.nu / PI.sqrt()
        * (k / PI).powi(params.d as i32)
}

/// Closed-form leading term from int r^3 e^{-a r^4} dr = 1 / (4a), with
/// a = k nu^2 / (8 lambda_0) and V(0) = 1/(4 pi).
pub fn radial_leading_term(k: f64, params: &ModelParams) -> Result<f64> {
    let lam0 = params.lambda_tau(0.0, 0.0)?;
    if !(lam0 > 0.0) {
        return Err(OscillatoryError::Domain(lam0));
    }
    let nu = params.nu;
    let a = k * nu * nu / (8.0 * lam0);
    let angular = 2.0 * PI * coset_density(0.0)?;
    Ok(radial_prefactor(k, params) * angular * (k.sqrt() * nu / 2.0) / lam0.powf(1.5) / (4.0 * a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialResult {
    pub k: f64,
    pub full: f64,
    pub leading: f64,
    /// full / leading.
    pub ratio: f64,
    /// sqrt(2) D_{G/T} (k/pi)^(d - 1/2) / field_norm.
    pub predicted: f64,
    pub error: f64,
}

/// Full radial-angular integral with exact kappa and V, over the chart
/// r = sin(phi) of the hemisphere around the stationary coset.
pub fn radial_integral(k: f64, params: &ModelParams, delta_points: usize) -> Result<RadialResult> {
    let lam0 = params.lambda_tau(0.0, 0.0)?;
    let peak = (8.0 * lam0 / (k * params.nu * params.nu)).powf(0.25);
    let mut breaks = vec![0.0];
    let mut b = 0.25 * peak;
    while b < 0.5 * PI {
        breaks.push(b);
        b *= 2.0;
    }
    breaks.push(0.5 * PI);
    let integ = Integrator::new(1e-300, 1e-13);
    let mut total = 0.0;
    let mut err = 0.0;
    let mut failure = None;
    for j in 0..delta_points {
        let delta = 2.0 * PI * j as f64 / delta_points as f64;
        let est = integ.integrate_panels(
            |phi: f64| {
                let (r, kappa) = (phi.sin(), phi.cos());
                let a = [kappa, r * delta.cos(), r * delta.sin()];
                let lam: f64 = (0..3)
                    .map(|i| {
                        (0..3)
                            .map(|l| a[i] * params.gram[(i, l)] * a[l])
                            .sum::<f64>()
                    })
                    .sum();
                let om: f64 = (0..3).map(|i| a[i] * params.pairing[i]).sum();
                let xi = 2.0 * params.tau * om - k.sqrt() * params.nu * (kappa - 1.0);
                if lam <= 0.0 {
                    failure = Some(lam);
                    return 0.0;
                }
                xi / lam.powf(1.5) * (-xi * xi / (2.0 * lam)).exp() * r / (4.0 * PI)
            },
            &breaks,
        );
        total += est.value;
        err += est.error;
    }
    if let Some(l) = failure {
        return Err(OscillatoryError::Domain(l));
    }
    let dw = 2.0 * PI / delta_points as f64;
    let full = radial_prefactor(k, params) * total * dw;
    let leading = radial_leading_term(k, params)?;
    Ok(RadialResult {
        k,
        full,
        leading,
        ratio: full / leading,
        predicted: std::f64::consts::SQRT_2 * d_gt() * (k / PI).powf(params.d as f64 - 0.5)
            / params.field_norm(),
        error: radial_prefactor(k, params) * err * dw,
    })
}

/// (int_0^inf r^3 e^{-a r^4} dr by quadrature, 1 / (4a)).
pub fn radial_moment_integral(a: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) {
        return Err(OscillatoryError::Domain(a));
    }
    let top = (60.0 / a).powf(0.25);
    let breaks: Vec<f64> = (0..=8).map(|i| top * i as f64 / 8.0).collect();
    let est = Integrator::new(1e-300, 1e-14)
        .integrate_panels(|r: f64| r.powi(3) * (-a * r.powi(4)).exp(), &breaks);
    Ok((est.value, 1.0 / (4.0 * a)))
}
