//! SU(2): group elements, the Lie algebra in the orthonormal basis
//! (beta, xi1, xi2), irreducible characters, Haar quadrature and the
//! G/T = S^2 chart with its radial density.

use crate::quadrature::gauss_legendre_on;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

type C = Complex64;

const I: C = C::new(0.0, 1.0);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LieError {
    #[error("Haar quadrature did not converge: orders {low} and {high} differ by {diff:e}")]
    NonConvergence { low: usize, high: usize, diff: f64 },
    #[error(
        "projection rule of degree {degree} is insufficient: idempotency residual {residual:e}"
    )]
    InsufficientOrder { degree: usize, residual: f64 },
    #[error("coset chart radius {0} outside [0, 1)")]
    Domain(f64),
}

/// Element of SU(2), stored as the unit quaternion (Re a, Im a, Re b, Im b)
/// of the matrix [[a, -conj b], [b, conj a]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement {
    pub q: [f64; 4],
}

impl GroupElement {
    pub fn identity() -> Self {
        Self {
            q: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Normalizes (a, b) onto S^3.
    pub fn from_pair(a: C, b: C) -> Self {
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        Self {
            q: [a.re / n, a.im / n, b.re / n, b.im / n],
        }
    }

    pub fn alpha(&self) -> C {
        C::new(self.q[0], self.q[1])
    }

    pub fn beta(&self) -> C {
        C::new(self.q[2], self.q[3])
    }

    pub fn matrix(&self) -> [[C; 2]; 2] {
        let (a, b) = (self.alpha(), self.beta());
        [[a, -b.conj()], [b, a.conj()]]
    }

    /// Reads (a, b) off the first column of a special-unitary matrix.
    pub fn from_matrix(m: &[[C; 2]; 2]) -> Self {
        Self::from_pair(m[0][0], m[1][0])
    }

    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        Self::from_matrix(&mat_mul(&self.matrix(), &other.matrix()))
    }

    pub fn inverse(&self) -> GroupElement {
        Self::from_pair(self.alpha().conj(), -self.beta())
    }

    /// exp of an algebra element; xi^2 = -|xi|^2 Id in this basis.
    pub fn exp(xi: &AlgebraElement) -> GroupElement {
        let t = xi.norm();
        let m = xi.matrix();
        let (c, s) = if t < 1e-300 {
            (1.0, 1.0)
        } else {
            (t.cos(), t.sin() / t)
        };
        Self::from_pair(c + m[0][0] * s, m[1][0] * s)
    }

    /// The torus element diag(e^{i phi}, e^{-i phi}).
    pub fn torus(phi: f64) -> GroupElement {
        Self::from_pair(C::from_polar(1.0, phi), C::new(0.0, 0.0))
    }

    /// Matrix action on a column vector of C^2.
    pub fn act(&self, z: &[C; 2]) -> [C; 2] {
        let m = self.matrix();
        [
            m[0][0] * z[0] + m[0][1] * z[1],
            m[1][0] * z[0] + m[1][1] * z[1],
        ]
    }

    /// Haar-distributed sample (uniform on S^3).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> GroupElement {
        loop {
            let v: [f64; 4] = std::array::from_fn(|_| standard_normal(rng));
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-8 {
                return Self {
                    q: v.map(|x| x / n),
                };
            }
        }
    }

    /// Rotation angle parameter: trace = 2 cos(phi).
    pub fn class_angle(&self) -> f64 {
        self.q[0].clamp(-1.0, 1.0).acos()
    }
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; rand_distr is not needed for a single normal stream.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn mat_mul(a: &[[C; 2]; 2], b: &[[C; 2]; 2]) -> [[C; 2]; 2] {
    let mut out = [[C::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn mat_adj(a: &[[C; 2]; 2]) -> [[C; 2]; 2] {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

/// Element of su(2) with coefficients in the basis
/// beta = diag(i, -i), xi1 = [[0, i], [i, 0]], xi2 = [[0, -1], [1, 0]],
/// orthonormal for <X, Y> = -tr(XY)/2. The same coefficient order is used
/// for every R^3 vector in the crate (moment values, Bloch vectors).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlgebraElement {
    pub c: [f64; 3],
}

impl AlgebraElement {
    pub const BETA: AlgebraElement = AlgebraElement { c: [1.0, 0.0, 0.0] };
    pub const XI1: AlgebraElement = AlgebraElement { c: [0.0, 1.0, 0.0] };
    pub const XI2: AlgebraElement = AlgebraElement { c: [0.0, 0.0, 1.0] };

    pub fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c: [c0, c1, c2] }
    }

    pub fn basis() -> [AlgebraElement; 3] {
        [Self::BETA, Self::XI1, Self::XI2]
    }

    pub fn matrix(&self) -> [[C; 2]; 2] {
        let [b, x, y] = self.c;
        [[I * b, I * x - y], [I * x + y, -I * b]]
    }

    /// Coefficients of a traceless anti-Hermitian matrix.
    pub fn from_matrix(m: &[[C; 2]; 2]) -> Self {
        // <m, e> = -tr(m e)/2 for each basis element e.
        let coeff = |e: &AlgebraElement| {
            let p = mat_mul(m, &e.matrix());
            -(p[0][0] + p[1][1]).re / 2.0
        };
        let [b, x, y] = Self::basis();
        Self::new(coeff(&b), coeff(&x), coeff(&y))
    }

    pub fn dot(&self, other: &AlgebraElement) -> f64 {
        self.c.iter().zip(&other.c).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> AlgebraElement {
        AlgebraElement {
            c: self.c.map(|v| v * s),
        }
    }

    pub fn add(&self, other: &AlgebraElement) -> AlgebraElement {
        Self::new(
            self.c[0] + other.c[0],
            self.c[1] + other.c[1],
            self.c[2] + other.c[2],
        )
    }

    /// Cross product in coefficient space; [X, Y] = 2 X x Y.
    pub fn cross(&self, other: &AlgebraElement) -> AlgebraElement {
        let (a, b) = (self.c, other.c);
        Self::new(
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        )
    }

    pub fn bracket(&self, other: &AlgebraElement) -> AlgebraElement {
        self.cross(other).scale(2.0)
    }
}

/// Ad_g(xi) = g xi g^{-1}.
pub fn adjoint(g: &GroupElement, xi: &AlgebraElement) -> AlgebraElement {
    let m = g.matrix();
    AlgebraElement::from_matrix(&mat_mul(&mat_mul(&m, &xi.matrix()), &mat_adj(&m)))
}

/// Highest-weight label of an irreducible representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IrrepLabel(pub u32);

impl IrrepLabel {
    pub fn dim(&self) -> u32 {
        self.0 + 1
    }
    pub fn casimir(&self) -> u64 {
        let n = self.0 as u64;
        n * (n + 2)
    }
    /// Moment eigenvalue of the coadjoint orbit under the calibrated scale 1/2.
    pub fn lambda_value(&self) -> f64 {
        self.0 as f64 / 2.0
    }
}

/// sin((n+1) phi) / sin(phi), the character at diag(e^{i phi}, e^{-i phi}).
pub fn character(n: u32, phi: f64) -> f64 {
    let s = phi.sin();
    if s == 0.0 || (phi / PI - (phi / PI).round()).abs() < 1e-15 {
        let k = (phi / PI).round() as i64;
        let sign = if k.rem_euclid(2) == 1 && n % 2 == 1 {
            -1.0
        } else {
            1.0
        };
        return sign * (n as f64 + 1.0);
    }
    if s.abs() > 1e-4 {
        ((n as f64 + 1.0) * phi).sin() / s
    } else {
        // Chebyshev recurrence U_n(cos phi) avoids the cancellation near pi Z.
        chebyshev_u(n, phi.cos())
    }
}

fn chebyshev_u(n: u32, x: f64) -> f64 {
    let (mut u0, mut u1) = (1.0, 2.0 * x);
    if n == 0 {
        return u0;
    }
    for _ in 1..n {
        let u2 = 2.0 * x * u1 - u0;
        u0 = u1;
        u1 = u2;
    }
    u1
}

/// Character evaluated on a group element.
pub fn character_of(n: u32, g: &GroupElement) -> f64 {
    chebyshev_u(n, g.q[0].clamp(-1.0, 1.0))
}

/// Product rule on S^3: a = sqrt(t) e^{i s1}, b = sqrt(1-t) e^{i s2}, with
/// Gauss-Legendre in t and the trapezoid rule in s1, s2. The normalized Haar
/// measure is dt ds1 ds2 / (4 pi^2), and the rule is exact on polynomials
/// in (a, conj a, b, conj b) of total degree at most `degree`.
#[derive(Debug, Clone)]
pub struct HaarQuadrature {
    pub degree: usize,
    nodes: Vec<GroupElement>,
    weights: Vec<f64>,
}

impl HaarQuadrature {
    pub fn for_degree(degree: usize) -> Self {
        let l = degree / 4 + 1;
        let p = degree + 1;
        Self::with_sizes(degree, l, p)
    }

    pub fn with_sizes(degree: usize, gl: usize, periodic: usize) -> Self {
        let (ts, wt) = gauss_legendre_on(gl, 0.0, 1.0);
        let mut nodes = Vec::with_capacity(gl * periodic * periodic);
        let mut weights = Vec::with_capacity(nodes.capacity());
        let w_ang = 1.0 / (periodic * periodic) as f64;
        for (t, w) in ts.iter().zip(&wt) {
            let (ra, rb) = (t.sqrt(), (1.0 - t).sqrt());
            for i in 0..periodic {
                let s1 = 2.0 * PI * i as f64 / periodic as f64;
                for j in 0..periodic {
                    let s2 = 2.0 * PI * j as f64 / periodic as f64;
                    nodes.push(GroupElement {
                        q: [ra * s1.cos(), ra * s1.sin(), rb * s2.cos(), rb * s2.sin()],
                    });
                    weights.push(w * w_ang);
                }
            }
        }
        Self {
            degree,
            nodes,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&GroupElement, f64)> {
        self.nodes.iter().zip(self.weights.iter().copied())
    }

    pub fn integrate<F: Fn(&GroupElement) -> C>(&self, f: F) -> C {
        self.nodes().map(|(g, w)| f(g) * w).sum()
    }
}

/// Trapezoid rule on the maximal torus with the Weyl weight 2 sin^2(phi);
/// exact for class functions that are trigonometric polynomials of degree
/// below `points` - 2.
pub fn torus_integrate<F: Fn(f64) -> C>(f: F, points: usize) -> C {
    let h = 2.0 * PI / points as f64;
    (0..points)
        .map(|i| {
            let phi = i as f64 * h;
            f(phi) * (2.0 * phi.sin().powi(2))
        })
        .sum::<C>()
        / points as f64
}

const HAAR_TOL: f64 = 1e-10;

/// Normalized Haar integral by the S^3 product rule; `order` is the exact
/// polynomial degree of the rule. Compares against the rule of the next
/// order and reports non-convergence.
pub fn haar_integrate<F: Fn(&GroupElement) -> C>(f: F, order: usize) -> Result<C, LieError> {
    let low = HaarQuadrature::for_degree(order).integrate(&f);
    let high = HaarQuadrature::for_degree(order + 4).integrate(&f);
    let diff = (low - high).norm();
    if diff > HAAR_TOL * (1.0 + high.norm()) {
        return Err(LieError::NonConvergence {
            low: order,
            high: order + 4,
            diff,
        });
    }
    Ok(high)
}

/// Normalized Haar integral of a class function given as a function of the
/// torus angle, by Weyl integration.
pub fn haar_integrate_class<F: Fn(f64) -> C>(f: F, order: usize) -> Result<C, LieError> {
    let low = torus_integrate(&f, order + 3);
    let high = torus_integrate(&f, order + 7);
    let diff = (low - high).norm();
    if diff > HAAR_TOL * (1.0 + high.norm()) {
        return Err(LieError::NonConvergence {
            low: order,
            high: order + 4,
            diff,
        });
    }
    Ok(high)
}

/// Quadrature nodes with weights (n+1) chi_n(g_i) w_i; summing rho(g_i)
/// against them gives the isotypic projector of V_n.
#[derive(Debug, Clone)]
pub struct ProjectionRule {
    pub label: IrrepLabel,
    pub degree: usize,
    nodes: Vec<(GroupElement, f64)>,
}

pub fn isotype_projection_weights(n: IrrepLabel, order: usize) -> ProjectionRule {
    let rule = HaarQuadrature::for_degree(order);
    let nodes = rule
        .nodes()
        .map(|(g, w)| (*g, w * n.dim() as f64 * character_of(n.0, g)))
        .filter(|(_, w)| *w != 0.0)
        .collect();
    ProjectionRule {
        label: n,
        degree: order,
        nodes,
    }
}

impl ProjectionRule {
    pub fn nodes(&self) -> &[(GroupElement, f64)] {
        &self.nodes
    }

    pub fn apply<F: Fn(&GroupElement) -> DMatrix<C>>(&self, rho: F) -> DMatrix<C> {
        let mut iter = self.nodes.iter();
        let (g0, w0) = iter.next().expect("rule has nodes");
        let mut acc = rho(g0) * C::new(*w0, 0.0);
        for (g, w) in iter {
            acc += rho(g) * C::new(*w, 0.0);
        }
        acc
    }

    /// Projector with its idempotency and self-adjointness residuals checked.
    pub fn project_checked<F: Fn(&GroupElement) -> DMatrix<C>>(
        &self,
        rho: F,
        tol: f64,
    ) -> Result<DMatrix<C>, LieError> {
        let p = self.apply(rho);
        let residual = projector_residual(&p);
        if residual > tol {
            return Err(LieError::InsufficientOrder {
                degree: self.degree,
                residual,
            });
        }
        Ok(p)
    }
}

/// max(|P^2 - P|, |P* - P|) in operator 2-norm.
pub fn projector_residual(p: &DMatrix<C>) -> f64 {
    let idem = (p * p - p).norm();
    let adj = (p.adjoint() - p).norm();
    // Frobenius bounds the operator norm from above.
    idem.max(adj)
}

/// Matrix of g on V_n = Sym^n(C^2) in the orthonormal weight basis
/// e_a = sqrt(C(n,a)) X0^a X1^(n-a).
pub fn irrep_matrix(n: u32, g: &GroupElement) -> DMatrix<C> {
    let n = n as usize;
    let (a, b) = (g.alpha(), g.beta());
    // g X0 = a X0 + b X1, g X1 = -conj(b) X0 + conj(a) X1.
    let col0 = [b, a]; // coefficients of (X1, X0) powers: index = power of X0
    let col1 = [a.conj(), -b.conj()];
    let binom = binomials(n);
    let mut m = DMatrix::from_element(n + 1, n + 1, C::new(0.0, 0.0));
    for src in 0..=n {
        // (a X0 + b X1)^src (-conj b X0 + conj a X1)^(n - src) as a polynomial in X0.
        let p0 = poly_pow(&col0, src);
        let p1 = poly_pow(&col1, n - src);
        let prod = poly_mul(&p0, &p1);
        for (dst, coeff) in prod.iter().enumerate() {
            let scale = (binom[src] / binom[dst]).sqrt();
            m[(dst, src)] = coeff * scale;
        }
    }
    m
}

fn binomials(n: usize) -> Vec<f64> {
    let mut row = vec![1.0; n + 1];
    for a in 1..=n {
        row[a] = row[a - 1] * (n - a + 1) as f64 / a as f64;
    }
    row
}

fn poly_pow(lin: &[C; 2], e: usize) -> Vec<C> {
    let mut p = vec![C::new(1.0, 0.0)];
    for _ in 0..e {
        p = poly_mul(&p, lin);
    }
    p
}

fn poly_mul(a: &[C], b: &[C]) -> Vec<C> {
    let mut out = vec![C::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Kronecker product of representation matrices.
pub fn kron(a: &DMatrix<C>, b: &DMatrix<C>) -> DMatrix<C> {
    a.kronecker(b)
}

/// Area of the unit S^3 in closed form.
pub const V3: f64 = 2.0 * PI * PI;

/// D_{G/T} = 2 pi / V3 = 1/pi.
pub fn d_gt() -> f64 {
    2.0 * PI / V3
}

/// Measures D_{G/T} as the density, per unit area, of the Haar pushforward
/// on the radius-1/2 sphere G/T: Haar mass of the cap x3 >= c computed by
/// the S^3 product rule, divided by the cap area computed by quadrature of
/// the sphere's area form.
pub fn measure_d_gt(c: f64, order: usize) -> f64 {
    // x3 = |a|^2 - |b|^2 = 2t - 1, so the cap is t >= (1 + c)/2; the angular
    // factors integrate to one.
    let t0 = 0.5 * (1.0 + c);
    let (_, wt) = gauss_legendre_on(order, t0, 1.0);
    let mass: f64 = wt.iter().sum::<f64>();
    // Radius-1/2 sphere: area element (1/4) sin(theta) dtheta dphi.
    let (th, wth) = gauss_legendre_on(order, 0.0, c.acos());
    let area: f64 = th
        .iter()
        .zip(&wth)
        .map(|(t, w)| w * 0.25 * t.sin())
        .sum::<f64>()
        * 2.0
        * PI;
    mass / area
}

/// Area of the unit S^3 by Gauss-Legendre quadrature of the Hopf-coordinate
/// area form sin(eta) cos(eta) d eta ds1 ds2.
pub fn measure_sphere_area(order: usize) -> f64 {
    let (x, w) = gauss_legendre_on(order, 0.0, PI / 2.0);
    x.iter()
        .zip(&w)
        .map(|(e, w)| w * e.sin() * e.cos())
        .sum::<f64>()
        * 4.0
        * PI
        * PI
}

/// kappa(r) = |a|^2 - |b|^2 on the chart point with |2 a conj b| = r.
pub fn kappa(r: f64) -> Result<f64, LieError> {
    if !(0.0..1.0).contains(&r) {
        return Err(LieError::Domain(r));
    }
    // |a| = cos(eta), |b| = sin(eta), r = sin(2 eta), eta in [0, pi/4).
    let eta = 0.5 * r.asin();
    let g = GroupElement::from_pair(C::new(eta.cos(), 0.0), C::new(eta.sin(), 0.0));
    let k = g.alpha().norm_sqr() - g.beta().norm_sqr();
    // Snap to the exact value when it differs only by round-off.
    let exact = (1.0 - r * r).sqrt();
    Ok(if (k - exact).abs() < 1e-14 { exact } else { k })
}

/// Chart point of G/T: Ad_g(beta) for the coset with radial coordinate r and
/// angle delta on the upper hemisphere; coefficients are (kappa, r cos, r sin).
pub fn coset_point(r: f64, delta: f64) -> Result<AlgebraElement, LieError> {
    let k = kappa(r)?;
    Ok(AlgebraElement::new(k, r * delta.cos(), r * delta.sin()))
}

/// Group element whose coset has chart coordinates (r, delta).
pub fn coset_representative(r: f64, delta: f64) -> Result<GroupElement, LieError> {
    let target = coset_point(r, delta)?;
    Ok(rotation_taking_beta_to(&target))
}

/// Geodesic section of G -> G/T: the element rotating beta to `v` in the
/// plane they span (identity when aligned).
pub fn rotation_taking_beta_to(v: &AlgebraElement) -> GroupElement {
    let vhat = v.scale(1.0 / v.norm());
    let axis = AlgebraElement::BETA.cross(&vhat);
    let s = axis.norm();
    let c = vhat.c[0];
    if s < 1e-15 {
        if c > 0.0 {
            return GroupElement::identity();
        }
        return GroupElement::exp(&AlgebraElement::XI1.scale(PI / 2.0));
    }
    let angle = s.atan2(c);
    // Ad of exp(t eta) rotates by 2t about eta.
    GroupElement::exp(&axis.scale(0.5 * angle / s))
}

/// Pullback of the normalized G/T volume under f, then projected onto the
/// plane x3 = 0: 1 / (4 pi sqrt(1 - r^2)) on the unit-sphere chart.
pub fn coset_density(r: f64) -> Result<f64, LieError> {
    Ok(1.0 / (4.0 * PI * kappa(r)?))
}

/// Density measured from the Haar mass of thin annuli in the chart, using
/// x3 = 2t - 1 in the S^3 product parametrization.
pub fn measure_coset_density(r: f64, h: f64) -> Result<f64, LieError> {
    let (lo, hi) = ((r - h).max(0.0), r + h);
    let (k_lo, k_hi) = (kappa(lo)?, kappa(hi)?);
    // Haar mass of {kappa(hi) <= x3 <= kappa(lo)} is the t-length of the band.
    let (_, w) = gauss_legendre_on(8, 0.5 * (1.0 + k_hi), 0.5 * (1.0 + k_lo));
    let mass: f64 = w.iter().sum();
    Ok(mass / (PI * (hi * hi - lo * lo)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn basis_is_orthonormal_and_brackets_cyclically() {
        let b = AlgebraElement::basis();
        for (i, x) in b.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                let p = mat_mul(&x.matrix(), &y.matrix());
                let ip = -(p[0][0] + p[1][1]).re / 2.0;
                assert!(close(ip, if i == j { 1.0 } else { 0.0 }, 1e-15));
            }
        }
        // [beta, xi1] = 2 xi2 by direct matrices
        let (bm, xm) = (b[0].matrix(), b[1].matrix());
        let comm = {
            let p = mat_mul(&bm, &xm);
            let q = mat_mul(&xm, &bm);
            [
                [p[0][0] - q[0][0], p[0][1] - q[0][1]],
                [p[1][0] - q[1][0], p[1][1] - q[1][1]],
            ]
        };
        assert_eq!(
            AlgebraElement::from_matrix(&comm),
            AlgebraElement::XI2.scale(2.0)
        );
        assert_eq!(b[0].bracket(&b[1]), AlgebraElement::XI2.scale(2.0));
    }

    #[test]
    fn adjoint_identity_and_explicit_conjugation() {
        assert_eq!(
            adjoint(&GroupElement::identity(), &AlgebraElement::BETA),
            AlgebraElement::BETA
        );
        let g = GroupElement::exp(&AlgebraElement::XI1.scale(PI / 4.0));
        // Independent oracle: exp by series, conjugation by explicit products.
        let x = AlgebraElement::XI1.scale(PI / 4.0).matrix();
        let mut term = [
            [C::new(1.0, 0.0), C::new(0.0, 0.0)],
            [C::new(0.0, 0.0), C::new(1.0, 0.0)],
        ];
        let mut e = term;
        for k in 1..40 {
            term = mat_mul(&term, &x);
            for r in term.iter_mut() {
                for v in r.iter_mut() {
                    *v /= k as f64;
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    e[i][j] += term[i][j];
                }
            }
        }
        let einv = mat_adj(&e);
        let conj = mat_mul(&mat_mul(&e, &AlgebraElement::BETA.matrix()), &einv);
        let oracle = AlgebraElement::from_matrix(&conj);
        let got = adjoint(&g, &AlgebraElement::BETA);
        for i in 0..3 {
            assert!(close(got.c[i], oracle.c[i], 1e-14));
        }
        // rotation by pi/2 about xi1 sends beta to -xi2 or xi2
        assert!(close(got.c[0], 0.0, 1e-14));
        assert!(close(got.c[2].abs(), 1.0, 1e-14));
    }

    #[test]
    fn characters_match_closed_forms() {
        assert_eq!(character(2, 0.0), 3.0);
        assert!(close(character(1, PI / 2.0), 0.0, 1e-15));
        assert_eq!(character(0, 1.234), 1.0);
        assert_eq!(character(3, PI), -4.0);
        assert_eq!(character(4, PI), 5.0);
        for n in 0..8 {
            for &phi in &[0.3, 1.1, 2.9, 1e-7, PI - 1e-7] {
                let direct: f64 = (0..=n)
                    .map(|a| ((2 * a as i32 - n as i32) as f64 * phi).cos())
                    .sum();
                assert!(close(character(n, phi), direct, 1e-9), "n={n} phi={phi}");
            }
        }
    }

    #[test]
    fn haar_normalization_and_orthogonality() {
        let one = haar_integrate(|_| C::new(1.0, 0.0), 4).unwrap();
        assert!(close(one.re, 1.0, 1e-14));
        let chi1 = haar_integrate(|g| C::new(character_of(1, g), 0.0), 4).unwrap();
        assert!(chi1.norm() < 1e-14);
        for n in 0..=6 {
            let s3 = haar_integrate(|g| C::new(character_of(n, g).powi(2), 0.0), 2 * n as usize)
                .unwrap();
            let torus =
                haar_integrate_class(|p| C::new(character(n, p).powi(2), 0.0), 2 * n as usize)
                    .unwrap();
            assert!(close(s3.re, 1.0, 1e-12));
            assert!(close(torus.re, 1.0, 1e-12));
        }
    }

    #[test]
    fn haar_reports_nonconvergence() {
        let err = haar_integrate(|g| C::new((40.0 * g.q[0]).cos(), 0.0), 2);
        assert!(matches!(err, Err(LieError::NonConvergence { .. })));
    }

    #[test]
    fn irrep_matrices_are_unitary_homomorphisms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 0..5 {
            let g = GroupElement::random(&mut rng);
            let h = GroupElement::random(&mut rng);
            let (rg, rh) = (irrep_matrix(n, &g), irrep_matrix(n, &h));
            let rgh = irrep_matrix(n, &g.mul(&h));
            assert!((&rg * &rh - rgh).norm() < 1e-12);
            let id = DMatrix::<C>::identity(n as usize + 1, n as usize + 1);
            assert!((rg.adjoint() * &rg - id).norm() < 1e-12);
            assert!((rg.trace().re - character_of(n, &g)).abs() < 1e-12);
        }
    }

    #[test]
    fn projector_on_two_spin_halves() {
        let rho = |g: &GroupElement| kron(&irrep_matrix(1, g), &irrep_matrix(1, g));
        let p2 = isotype_projection_weights(IrrepLabel(2), 4)
            .project_checked(rho, 1e-8)
            .unwrap();
        assert!((p2.trace().re - 3.0).abs() < 1e-10);
        let p1 = isotype_projection_weights(IrrepLabel(1), 3).apply(rho);
        assert!(p1.norm() < 1e-12);
        let p0 = isotype_projection_weights(IrrepLabel(0), 2).apply(|_| DMatrix::identity(1, 1));
        assert!((p0[(0, 0)].re - 1.0).abs() < 1e-13);
    }

    #[test]
    fn projector_flags_insufficient_order() {
        let rho = |g: &GroupElement| irrep_matrix(6, g);
        let err = isotype_projection_weights(IrrepLabel(6), 3).project_checked(rho, 1e-8);
        assert!(matches!(err, Err(LieError::InsufficientOrder { .. })));
    }

    #[test]
    fn coset_chart_values() {
        assert_eq!(kappa(0.0).unwrap(), 1.0);
        assert!(close(kappa(0.6).unwrap(), 0.8, 1e-15));
        assert!(matches!(kappa(1.0), Err(LieError::Domain(_))));
        assert!(close(coset_density(0.0).unwrap(), 1.0 / (4.0 * PI), 1e-15));
        assert!(close(d_gt(), 1.0 / PI, 1e-15));
        for &r in &[0.05, 0.3, 0.7, 0.95] {
            let m = measure_coset_density(r, 1e-4).unwrap();
            assert!(((m - coset_density(r).unwrap()) / m).abs() < 1e-6, "r={r}");
        }
    }

    #[test]
    fn coset_representative_lands_on_chart_point() {
        for &(r, d) in &[(0.0, 0.0), (0.3, 1.0), (0.9, 4.0)] {
            let g = coset_representative(r, d).unwrap();
            let v = adjoint(&g, &AlgebraElement::BETA);
            let want = coset_point(r, d).unwrap();
            for i in 0..3 {
                assert!(close(v.c[i], want.c[i], 1e-13));
            }
            // kappa is |a|^2 - |b|^2 and r = |2 a conj b|
            assert!(close(
                g.alpha().norm_sqr() - g.beta().norm_sqr(),
                kappa(r).unwrap(),
                1e-13
            ));
            assert!(close((2.0 * g.alpha() * g.beta().conj()).norm(), r, 1e-13));
        }
    }

    #[test]
    fn kappa_second_order_coefficient_is_minus_half() {
        // Richardson-extrapolated finite difference of (kappa(h) - 1) / h^2.
        let q = |h: f64| (kappa(h).unwrap() - 1.0) / (h * h);
        let (h1, h2) = (1e-2, 5e-3);
        let b1 = (4.0 * q(h2) - q(h1)) / 3.0;
        assert!(close(b1, -0.5, 1e-8), "{b1}");
    }

    #[test]
    fn measured_constants() {
        assert!(close(measure_sphere_area(12), V3, 1e-12));
        assert!(close(measure_d_gt(0.3, 16), 1.0 / PI, 1e-12));
    }
}
