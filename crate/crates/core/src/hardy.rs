//! Level-k section spaces of O(kp_1) x ... x O(kp_n), their SU(2)
//! isotypes and the equivariant kernels.
//!
//! Sections are polynomials in the homogeneous coordinates, indexed by the
//! exponent a_i of z0 in each factor. Under the probability Fubini-Study
//! measure on a factor of degree N the monomials are orthogonal with
//! <z^a, z^a> = a! (N - a)! / (N + 1)!, so e_a = sqrt((N+1) C(N,a)) z^a is
//! orthonormal; kernels are reproducing kernels of L^2(M, dV_M) with
//! vol(M) = pi^d prod p_i.

use crate::geometry::{ManifoldPoint, ModelManifold};
use crate::liegroup::{character_of, torus_integrate, HaarQuadrature};
use crate::quadrature::gauss_legendre_on;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::{One, ToPrimitive};
use std::f64::consts::PI;

type C = Complex64;

/// Largest section-space dimension built without an explicit cap.
pub const DEFAULT_DIMENSION_CAP: u64 = 2_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HardyError {
    #[error("section space of dimension {dim} exceeds the cap {cap}")]
    Resource { dim: u64, cap: u64 },
    #[error("label n = {n} outside 0..={max}")]
    LabelRange { n: u32, max: u32 },
    #[error(
        "weight block {total} holds {found} Casimir eigenvectors for n = {n}, expected {expected}"
    )]
    Eigenspace {
        n: u32,
        total: u32,
        found: usize,
        expected: u64,
    },
    #[error("kernel routes disagree: basis sum {basis}, character quadrature {quadrature} (degree {degree})")]
    QuadratureInsufficient {
        basis: C,
        quadrature: C,
        degree: usize,
    },
}

/// Polynomial sections at level k with exact diagonal Gram data.
#[derive(Debug, Clone)]
pub struct SectionSpace {
    manifold: ModelManifold,
    k: u32,
    degrees: Vec<u32>,
    strides: Vec<usize>,
    /// Global indices grouped by total z0-degree A = sum a_i.
    blocks: Vec<Vec<usize>>,
    pos_in_block: Vec<usize>,
    /// Per factor: (N + 1) C(N, a), the inverse Gram entries.
    gram_denominators: Vec<Vec<BigUint>>,
    /// Per factor: sqrt((N + 1) C(N, a)) as f64.
    norms: Vec<Vec<f64>>,
}

pub fn build_section_space(m: &ModelManifold, k: u32) -> Result<SectionSpace, HardyError> {
    build_section_space_capped(m, k, DEFAULT_DIMENSION_CAP)
}

pub fn build_section_space_capped(
    m: &ModelManifold,
    k: u32,
    cap: u64,
) -> Result<SectionSpace, HardyError> {
    let degrees: Vec<u32> = m.weights().iter().map(|p| p * k).collect();
    let dim: u64 = degrees.iter().map(|&n| n as u64 + 1).product();
    if dim > cap {
        return Err(HardyError::Resource { dim, cap });
    }
    let n = degrees.len();
    let mut strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * (degrees[i + 1] as usize + 1);
    }
    let total_degree: u32 = degrees.iter().sum();
    let mut blocks = vec![Vec::new(); total_degree as usize + 1];
    let mut pos_in_block = vec![0usize; dim as usize];
    for idx in 0..dim as usize {
        let total: usize = (0..n)
            .map(|i| (idx / strides[i]) % (degrees[i] as usize + 1))
            .sum();
        pos_in_block[idx] = blocks[total].len();
        blocks[total].push(idx);
    }
    let gram_denominators: Vec<Vec<BigUint>> = degrees
        .iter()
        .map(|&nn| {
            let mut row = Vec::with_capacity(nn as usize + 1);
            let mut c = BigUint::one();
            for a in 0..=nn {
                if a > 0 {
                    c = c * BigUint::from(nn - a + 1) / BigUint::from(a);
                }
                row.push(&c * BigUint::from(nn + 1));
            }
            row
        })
        .collect();
    let norms = gram_denominators
        .iter()
        .map(|row| {
            row.iter()
                .map(|d| d.to_f64().expect("finite").sqrt())
                .collect()
        })
        .collect();
    Ok(SectionSpace {
        manifold: m.clone(),
        k,
        degrees,
        strides,
        blocks,
        pos_in_block,
        gram_denominators,
        norms,
    })
}

impl SectionSpace {
    pub fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }

    pub fn level(&self) -> u32 {
        self.k
    }

    /// Per-factor degrees k p_i.
    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn dim(&self) -> usize {
        self.pos_in_block.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.degrees.iter().sum()
    }

    pub fn multi_index(&self, idx: usize) -> Vec<u32> {
        (0..self.degrees.len())
            .map(|i| ((idx / self.strides[i]) % (self.degrees[i] as usize + 1)) as u32)
            .collect()
    }

    pub fn index_of(&self, a: &[u32]) -> usize {
        a.iter()
            .zip(&self.strides)
            .map(|(&ai, &s)| ai as usize * s)
            .sum()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Twice the T-weight of block A: 2A - sum N_i.
    pub fn twice_weight(&self, total: usize) -> i64 {
        2 * total as i64 - self.total_degree() as i64
    }

    /// Exact Gram entry <z^a, z^a> as (1, denominator).
    pub fn gram_exact(&self, idx: usize) -> BigUint {
        let a = self.multi_index(idx);
        a.iter()
            .enumerate()
            .map(|(i, &ai)| self.gram_denominators[i][ai as usize].clone())
            .product()
    }

    pub fn gram(&self, idx: usize) -> f64 {
        1.0 / self.gram_exact(idx).to_f64().expect("finite")
    }

    /// Orthonormal section values e_a(x) on a block, with the phases of x.
    fn coherent_block(&self, factors: &[Vec<C>], total: usize) -> DVector<C> {
        let blk = &self.blocks[total];
        DVector::from_iterator(
            blk.len(),
            blk.iter().map(|&idx| {
                let mut v = C::new(1.0, 0.0);
                for (i, f) in factors.iter().enumerate() {
                    v *= f[(idx / self.strides[i]) % (self.degrees[i] as usize + 1)];
                }
                v
            }),
        )
    }

    fn coherent_factors(&self, x: &ManifoldPoint) -> Vec<Vec<C>> {
        self.degrees
            .iter()
            .zip(&x.factors)
            .enumerate()
            .map(|(i, (&nn, z))| {
                let nn = nn as usize;
                let mut p0 = vec![C::new(1.0, 0.0); nn + 1];
                let mut p1 = vec![C::new(1.0, 0.0); nn + 1];
                for a in 1..=nn {
                    p0[a] = p0[a - 1] * z[0];
                    p1[a] = p1[a - 1] * z[1];
                }
                (0..=nn)
                    .map(|a| p0[a] * p1[nn - a] * self.norms[i][a])
                    .collect()
            })
            .collect()
    }
}

/// Raising operator J+ from block A to block A+1 in the orthonormal basis:
/// e_a -> sqrt((N - a)(a + 1)) e_{a+1} on each factor.
pub fn raising_block(s: &SectionSpace, total: usize) -> DMatrix<f64> {
    let src = &s.blocks[total];
    let rows = s.blocks.get(total + 1).map_or(0, |b| b.len());
    let mut r = DMatrix::zeros(rows, src.len());
    for (col, &idx) in src.iter().enumerate() {
        let a = s.multi_index(idx);
        for (i, &ai) in a.iter().enumerate() {
            let nn = s.degrees[i];
            if ai < nn {
                let target = idx + s.strides[i];
                r[(s.pos_in_block[target], col)] = (((nn - ai) * (ai + 1)) as f64).sqrt();
            }
        }
    }
    r
}

/// 4|J|^2 on block A (eigenvalue n(n+2) on V_n), orthonormal basis.
pub fn casimir_block(s: &SectionSpace, total: usize) -> DMatrix<f64> {
    let r = raising_block(s, total);
    let tm = s.twice_weight(total) as f64;
    let dim = s.blocks[total].len();
    let mut c = r.transpose() * r * 4.0;
    for i in 0..dim {
        c[(i, i)] += tm * tm + 2.0 * tm;
    }
    c
}

/// 4|J|^2 on block A in the raw monomial basis, from the derivations
/// J+ = z0 d/dz1 and J- = z1 d/dz0 on each factor.
pub fn casimir_raw_block(s: &SectionSpace, total: usize) -> DMatrix<f64> {
    let src = &s.blocks[total];
    let dim = src.len();
    let tm = s.twice_weight(total) as f64;
    let mut c = DMatrix::zeros(dim, dim);
    for (col, &idx) in src.iter().enumerate() {
        let a = s.multi_index(idx);
        for (i, &ai) in a.iter().enumerate() {
            if ai == s.degrees[i] {
                continue;
            }
            // J+ along factor i, then J- along every factor j.
            let up = idx + s.strides[i];
            let cu = (s.degrees[i] - ai) as f64;
            let b = s.multi_index(up);
            for (j, &bj) in b.iter().enumerate() {
                if bj == 0 {
                    continue;
                }
                let down = up - s.strides[j];
                c[(s.pos_in_block[down], col)] += 4.0 * cu * bj as f64;
            }
        }
        c[(col, col)] += tm * tm + 2.0 * tm;
    }
    c
}

/// The Casimir of the induced su(2) action, block-diagonal over T-weights.
#[derive(Debug, Clone)]
pub struct CasimirOperator {
    pub blocks: Vec<DMatrix<f64>>,
}

pub fn casimir_matrix(s: &SectionSpace) -> CasimirOperator {
    CasimirOperator {
        blocks: (0..s.blocks.len()).map(|a| casimir_block(s, a)).collect(),
    }
}

impl CasimirOperator {
    /// Sorted eigenvalues of all blocks.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .blocks
            .iter()
            .flat_map(|b| {
                SymmetricEigen::new(b.clone())
                    .eigenvalues
                    .iter()
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }
}

/// Orthonormal basis of one isotype, stored per weight block.
#[derive(Debug, Clone)]
pub struct IsotypeBasis {
    pub k: u32,
    pub n: u32,
    pub multiplicity: u64,
    /// (block index A, |B_A| x multiplicity matrix of orthonormal coordinates).
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl IsotypeBasis {
    pub fn dimension(&self) -> u64 {
        self.multiplicity * (self.n as u64 + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.multiplicity == 0
    }

    /// Dense dim(S) x dimension matrix of orthonormal coordinates, columns
    /// grouped by ascending block.
    pub fn coefficient_matrix(&self, s: &SectionSpace) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(s.dim(), self.dimension() as usize);
        let mut col = 0;
        for (total, v) in &self.blocks {
            for (r, &idx) in s.blocks[*total].iter().enumerate() {
                for c in 0..v.ncols() {
                    out[(idx, col + c)] = v[(r, c)];
                }
            }
            col += v.ncols();
        }
        out
    }

    /// Coefficients on the raw monomials z^a; orthonormal under the Gram.
    pub fn raw_coefficients(&self, s: &SectionSpace) -> DMatrix<f64> {
        let mut m = self.coefficient_matrix(s);
        for idx in 0..s.dim() {
            let scale = 1.0 / s.gram(idx).sqrt();
            m.row_mut(idx).scale_mut(scale);
        }
        m
    }

    /// Rebuilds the block structure from a dense coefficient matrix.
    pub fn from_coefficient_matrix(
        s: &SectionSpace,
        n: u32,
        multiplicity: u64,
        m: &DMatrix<f64>,
    ) -> Self {
        let mut blocks = Vec::new();
        let mut col = 0;
        for total in isotype_blocks(s, n) {
            let rows = &s.blocks[total];
            let v = DMatrix::from_fn(rows.len(), multiplicity as usize, |r, c| {
                m[(rows[r], col + c)]
            });
            col += multiplicity as usize;
            blocks.push((total, v));
        }
        Self {
            k: s.k,
            n,
            multiplicity,
            blocks,
        }
    }
}

fn isotype_blocks(s: &SectionSpace, n: u32) -> Vec<usize> {
    (0..s.blocks.len())
        .filter(|&a| s.twice_weight(a).unsigned_abs() <= n as u64)
        .collect()
}

/// Casimir eigenspace n(n+2), extracted block by block.
pub fn isotype_basis(s: &SectionSpace, n: u32) -> Result<IsotypeBasis, HardyError> {
    let max = s.total_degree();
    if n > max {
        return Err(HardyError::LabelRange { n, max });
    }
    let mult = multiplicity_of_degrees(&s.degrees, n);
    if mult == 0 {
        return Ok(IsotypeBasis {
            k: s.k,
            n,
            multiplicity: 0,
            blocks: Vec::new(),
        });
    }
    let target = (n as f64) * (n as f64 + 2.0);
    let mut blocks = Vec::new();
    for total in isotype_blocks(s, n) {
        let eig = SymmetricEigen::new(casimir_block(s, total));
        let cols: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&i| (eig.eigenvalues[i] - target).abs() < 1.0)
            .collect();
        if cols.len() as u64 != mult {
            return Err(HardyError::Eigenspace {
                n,
                total: total as u32,
                found: cols.len(),
                expected: mult,
            });
        }
        let mut v = DMatrix::from_fn(eig.eigenvectors.nrows(), cols.len(), |r, c| {
            eig.eigenvectors[(r, cols[c])]
        });
        for mut col in v.column_iter_mut() {
            if let Some(first) = col.iter().find(|x| x.abs() > 1e-10) {
                if *first < 0.0 {
                    col.neg_mut();
                }
            }
        }
        blocks.push((total, v));
    }
    Ok(IsotypeBasis {
        k: s.k,
        n,
        multiplicity: mult,
        blocks,
    })
}

/// Multiplicities of V_n in V_{N_1} x ... x V_{N_r} by iterated
/// Clebsch-Gordan, indexed by n.
pub fn multiplicities_of_degrees(degrees: &[u32]) -> Vec<u64> {
    let total: u32 = degrees.iter().sum();
    let mut cur = vec![0u64; total as usize + 1];
    cur[0] = 1;
    let mut reach = 0u32;
    for &nn in degrees {
        let mut next = vec![0u64; total as usize + 1];
        for a in 0..=reach {
            let m = cur[a as usize];
            if m == 0 {
                continue;
            }
            let mut c = a.abs_diff(nn);
            while c <= a + nn {
                next[c as usize] = next[c as usize]
                    .checked_add(m)
                    .expect("multiplicity overflow");
                c += 2;
            }
        }
        cur = next;
        reach += nn;
    }
    cur
}

pub fn multiplicity_of_degrees(degrees: &[u32], n: u32) -> u64 {
    multiplicities_of_degrees(degrees)
        .get(n as usize)
        .copied()
        .unwrap_or(0)
}

/// Multiplicity of V_n in the level-k sections.
pub fn multiplicity(m: &ModelManifold, k: u32, n: u32) -> u64 {
    let degrees: Vec<u32> = m.weights().iter().map(|p| p * k).collect();
    multiplicity_of_degrees(&degrees, n)
}

/// multiplicity * (n + 1).
pub fn dimension(m: &ModelManifold, k: u32, n: u32) -> u64 {
    multiplicity(m, k, n) * (n as u64 + 1)
}

/// Multiplicity from the character inner product on the torus; an
/// independent route to the Clebsch-Gordan recursion.
pub fn multiplicity_by_characters(degrees: &[u32], n: u32) -> u64 {
    let deg: u32 = degrees.iter().sum::<u32>() + n;
    let v = torus_integrate(
        |phi| {
            let prod: f64 = degrees
                .iter()
                .map(|&d| crate::liegroup::character(d, phi))
                .product();
            C::new(crate::liegroup::character(n, phi) * prod, 0.0)
        },
        deg as usize + 4,
    );
    v.re.round().max(0.0) as u64
}

/// Value of Pi_{(n,k)}(x, y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: C,
    pub k: u32,
    pub n: u32,
}

/// Evaluates an isotype kernel by summing over an orthonormal basis.
pub struct KernelEvaluator<'a> {
    space: &'a SectionSpace,
    basis: &'a IsotypeBasis,
    scale: f64,
}

impl<'a> KernelEvaluator<'a> {
    pub fn new(space: &'a SectionSpace, basis: &'a IsotypeBasis) -> Self {
        Self {
            space,
            basis,
            scale: 1.0 / space.manifold.volume(),
        }
    }

    /// Projections <s_j, K_x> of the coherent vector of x on the basis.
    fn projections(&self, x: &ManifoldPoint) -> Vec<DVector<C>> {
        let f = self.space.coherent_factors(x);
        self.basis
            .blocks
            .iter()
            .map(|(total, v)| {
                let cx = self.space.coherent_block(&f, *total);
                v.map(|t| C::new(t, 0.0)).transpose() * cx
            })
            .collect()
    }

    pub fn evaluate(&self, x: &ManifoldPoint, y: &ManifoldPoint) -> KernelValue {
        let px = self.projections(x);
        let py = self.projections(y);
        let mut acc = C::new(0.0, 0.0);
        for (a, b) in px.iter().zip(&py) {
            acc += a.iter().zip(b.iter()).map(|(u, v)| u * v.conj()).sum::<C>();
        }
        KernelValue {
            value: acc * self.scale,
            k: self.basis.k,
            n: self.basis.n,
        }
    }

    /// Diagonal value, real and nonnegative by construction.
    pub fn diagonal(&self, x: &ManifoldPoint) -> f64 {
        let px = self.projections(x);
        px.iter()
            .map(|p| p.iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            * self.scale
    }

    /// Routes (a) and (b) compared at relative tolerance `tol`.
    pub fn evaluate_checked(
        &self,
        x: &ManifoldPoint,
        y: &ManifoldPoint,
        tol: f64,
    ) -> Result<KernelValue, HardyError> {
        let a = self.evaluate(x, y);
        let degree = self.space.total_degree() as usize + self.basis.n as usize;
        let rule = HaarQuadrature::for_degree(degree);
        let b = character_kernel(self.space, self.basis.n, x, y, &rule);
        let m = &self.space.manifold;
        let scale =
            (full_kernel(m, self.space.k, x, x).re * full_kernel(m, self.space.k, y, y).re).sqrt();
        if (a.value - b).norm() > tol * scale {
            return Err(HardyError::QuadratureInsufficient {
                basis: a.value,
                quadrature: b,
                degree,
            });
        }
        Ok(a)
    }
}

/// Kernel of the full level-k space:
/// prod_i (N_i + 1)/(pi p_i) (x_i . conj y_i)^{N_i}.
pub fn full_kernel(m: &ModelManifold, k: u32, x: &ManifoldPoint, y: &ManifoldPoint) -> C {
    m.weights()
        .iter()
        .zip(x.factors.iter().zip(&y.factors))
        .map(|(&p, (a, b))| {
            let nn = p * k;
            let ip = a[0] * b[0].conj() + a[1] * b[1].conj();
            ip.powu(nn) * ((nn as f64 + 1.0) / (PI * p as f64))
        })
        .product()
}

/// Route (b): (n + 1) int_G chi_n(g) Pi_k(g^{-1} x, y) dg by Haar quadrature.
pub fn character_kernel(
    s: &SectionSpace,
    n: u32,
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    rule: &HaarQuadrature,
) -> C {
    let m = &s.manifold;
    rule.integrate(|g| {
        let chi = character_of(n, g);
        if chi == 0.0 {
            return C::new(0.0, 0.0);
        }
        full_kernel(m, s.k, &x.act(&g.inverse()), y) * chi
    }) * (n as f64 + 1.0)
}

/// Builds the isotype basis and evaluates Pi_{(n,k)}(x, y).
pub fn equivariant_kernel(
    s: &SectionSpace,
    n: u32,
    x: &ManifoldPoint,
    y: &ManifoldPoint,
) -> Result<KernelValue, HardyError> {
    let basis = isotype_basis(s, n)?;
    Ok(KernelEvaluator::new(s, &basis).evaluate(x, y))
}

/// int_M Pi_{(n,k)}(x, x) dV_M by a product rule that is exact on the
/// polynomial integrand (Gauss-Legendre in cos(theta), trapezoid in phi).
pub fn trace_by_quadrature(s: &SectionSpace, basis: &IsotypeBasis) -> f64 {
    let eval = KernelEvaluator::new(s, basis);
    let rules: Vec<(Vec<(f64, f64)>, usize, f64)> = s
        .degrees
        .iter()
        .zip(s.manifold.weights())
        .map(|(&nn, &p)| {
            let (t, w) = gauss_legendre_on(nn as usize / 2 + 2, -1.0, 1.0);
            (
                t.into_iter().zip(w).collect(),
                nn as usize + 2,
                p as f64 / 4.0,
            )
        })
        .collect();
    let dims: Vec<usize> = rules.iter().map(|(t, per, _)| t.len() * per).collect();
    let total: usize = dims.iter().product();
    let mut acc = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut weight = 1.0;
        let mut vecs = Vec::with_capacity(dims.len());
        for (i, (t, per, scale)) in rules.iter().enumerate() {
            let j = rem % dims[i];
            rem /= dims[i];
            let (ti, wi) = t[j / per];
            let phi = 2.0 * PI * (j % per) as f64 / *per as f64;
            let s = (1.0 - ti * ti).max(0.0).sqrt();
            vecs.push([ti, s * phi.cos(), s * phi.sin()]);
            weight *= wi * 2.0 * PI / *per as f64 * scale;
        }
        acc += weight * eval.diagonal(&ManifoldPoint::from_bloch(&vecs));
    }
    acc
}

pub mod cache {
    //! Binary cache of isotype bases: magic, format version, key (weights,
    //! k, n, version), shape, then the row-major coefficient matrix as
    //! little-endian f64.

    use super::{IsotypeBasis, SectionSpace};
    use nalgebra::DMatrix;
    use std::io::{Read, Write};
    use std::path::Path;

    pub const MAGIC: [u8; 8] = *b"SZISOB\0\0";
    pub const FORMAT_VERSION: u32 = 1;

    #[derive(Debug, thiserror::Error)]
    pub enum CacheError {
        #[error(transparent)]
        Io(#[from] std::io::Error),
        #[error("not an isotype cache file")]
        BadMagic,
        #[error("cache format version {0} is not supported")]
        Version(u32),
        #[error("cache key does not match the request")]
        KeyMismatch,
        #[error("cache payload is malformed")]
        Malformed,
    }

    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct CacheKey {
        pub weights: Vec<u32>,
        pub k: u32,
        pub n: u32,
        pub version: u32,
    }

    impl CacheKey {
        pub fn for_space(s: &SectionSpace, n: u32) -> Self {
            Self {
                weights: s.manifold().weights().to_vec(),
                k: s.level(),
                n,
                version: FORMAT_VERSION,
            }
        }
    }

    pub fn encode(key: &CacheKey, multiplicity: u64, m: &DMatrix<f64>) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * m.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(key.weights.len() as u32).to_le_bytes());
        for w in &key.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&key.k.to_le_bytes());
        out.extend_from_slice(&key.n.to_le_bytes());
        out.extend_from_slice(&key.version.to_le_bytes());
        out.extend_from_slice(&multiplicity.to_le_bytes());
        out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
        out
    }

    struct Reader<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl Reader<'_> {
        fn take<const N: usize>(&mut self) -> Result<[u8; N], CacheError> {
            let end = self.pos + N;
            let bytes = self.buf.get(self.pos..end).ok_or(CacheError::Malformed)?;
            self.pos = end;
            Ok(bytes.try_into().unwrap())
        }
        fn u32(&mut self) -> Result<u32, CacheError> {
            Ok(u32::from_le_bytes(self.take()?))
        }
        fn u64(&mut self) -> Result<u64, CacheError> {
            Ok(u64::from_le_bytes(self.take()?))
        }
    }

    /// Returns (key, multiplicity, matrix).
    pub fn decode(buf: &[u8]) -> Result<(CacheKey, u64, DMatrix<f64>), CacheError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take::<8>()? != MAGIC {
            return Err(CacheError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CacheError::Version(version));
        }
        let nw = r.u32()? as usize;
        let weights = (0..nw).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let key = CacheKey {
            weights,
            k: r.u32()?,
            n: r.u32()?,
            version: r.u32()?,
        };
        let mult = r.u64()?;
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        if buf.len() != r.pos + 8 * rows * cols {
            return Err(CacheError::Malformed);
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f64::from_le_bytes(r.take()?);
            }
        }
        Ok((key, mult, m))
    }

    pub fn store(path: &Path, s: &SectionSpace, basis: &IsotypeBasis) -> Result<(), CacheError> {
        let key = CacheKey::for_space(s, basis.n);
        let bytes = encode(&key, basis.multiplicity, &basis.coefficient_matrix(s));
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path, s: &SectionSpace, n: u32) -> Result<IsotypeBasis, CacheError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let (key, mult, m) = decode(&buf)?;
        if key != CacheKey::for_space(s, n) {
            return Err(CacheError::KeyMismatch);
        }
        if m.nrows() != s.dim() || m.ncols() as u64 != mult * (n as u64 + 1) {
            return Err(CacheError::Malformed);
        }
        Ok(IsotypeBasis::from_coefficient_matrix(s, n, mult, &m))
    }

    /// Loads the basis from `path` when present and valid, otherwise computes
    /// and stores it.
    pub fn load_or_compute(
        path: &Path,
        s: &SectionSpace,
        n: u32,
    ) -> Result<IsotypeBasis, Box<dyn std::error::Error + Send + Sync>> {
        if let Ok(b) = load(path, s, n) {
            return Ok(b);
        }
        let b = super::isotype_basis(s, n)?;
        store(path, s, &b)?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_point, two_factor_point};
    use num_traits::Zero;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mf(w: &[u32]) -> ModelManifold {
        ModelManifold::new(w.to_vec()).unwrap()
    }

    #[test]
    fn gram_entries_match_beta_integrals() {
        let s = build_section_space(&mf(&[1]), 1).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.gram(0), 0.5);
        assert_eq!(s.gram(1), 0.5);
        // Beta integral oracle: int_0^1 t^a (1-t)^(N-a) dt = a!(N-a)!/(N+1)!.
        let s = build_section_space(&mf(&[1, 2]), 2).unwrap();
        assert_eq!(s.dim(), 15);
        for idx in 0..s.dim() {
            let a = s.multi_index(idx);
            let mut oracle = 1.0;
            for (i, &ai) in a.iter().enumerate() {
                let nn = s.degrees()[i];
                let (t, w) = gauss_legendre_on(12, 0.0, 1.0);
                oracle *= t
                    .iter()
                    .zip(&w)
                    .map(|(t, w)| w * t.powi(ai as i32) * (1.0 - t).powi((nn - ai) as i32))
                    .sum::<f64>();
            }
            assert!((s.gram(idx) - oracle).abs() < 1e-15);
            assert!(!s.gram_exact(idx).is_zero());
        }
    }

    #[test]
    fn resource_cap() {
        assert!(matches!(
            build_section_space_capped(&mf(&[1, 2]), 10, 100),
            Err(HardyError::Resource { dim: 231, cap: 100 })
        ));
    }

    #[test]
    fn casimir_on_spin_half_and_cg() {
        let s = build_section_space(&mf(&[1]), 1).unwrap();
        let ev = casimir_matrix(&s).eigenvalues();
        assert_eq!(ev, vec![3.0, 3.0]);
        let s = build_section_space(&mf(&[1, 2]), 1).unwrap();
        let ev = casimir_matrix(&s).eigenvalues();
        let n1 = ev.iter().filter(|v| (*v - 3.0).abs() < 1e-10).count();
        let n3 = ev.iter().filter(|v| (*v - 15.0).abs() < 1e-10).count();
        assert_eq!((n1, n3, ev.len()), (2, 4, 6));
    }

    #[test]
    fn raw_casimir_is_gram_self_adjoint_and_similar() {
        let s = build_section_space(&mf(&[1, 1, 3]), 2).unwrap();
        for total in 0..s.blocks().len() {
            let raw = casimir_raw_block(&s, total);
            let on = casimir_block(&s, total);
            let g = DMatrix::from_fn(raw.nrows(), raw.nrows(), |a, b| {
                if a == b {
                    s.gram(s.blocks()[total][a])
                } else {
                    0.0
                }
            });
            let gc = &g * &raw;
            let scale = gc.amax().max(1e-300);
            assert!((&gc - gc.transpose()).amax() / scale < 1e-12);
            // Orthonormal form is sqrt(G) C sqrt(G)^{-1}.
            let sq = g.map(|v| v.sqrt());
            let sqi = g.map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
            let conj = &sq * &raw * &sqi;
            assert!((conj - on).amax() < 1e-9);
        }
    }

    #[test]
    fn isotype_examples() {
        let s = build_section_space(&mf(&[1, 2]), 2).unwrap();
        let b4 = isotype_basis(&s, 4).unwrap();
        assert_eq!((b4.multiplicity, b4.dimension()), (1, 5));
        assert!(isotype_basis(&s, 3).unwrap().is_empty());
        let s0 = build_section_space(&mf(&[1, 2]), 0).unwrap();
        assert_eq!(isotype_basis(&s0, 0).unwrap().dimension(), 1);
        // Columns orthonormal under the Gram in raw coordinates.
        let raw = b4.raw_coefficients(&s);
        let g = DMatrix::from_fn(
            s.dim(),
            s.dim(),
            |a, b| if a == b { s.gram(a) } else { 0.0 },
        );
        let ip = raw.transpose() * g * &raw;
        assert!((ip - DMatrix::identity(5, 5)).amax() < 1e-12);
    }

    #[test]
    fn multiplicity_examples() {
        assert_eq!(multiplicity_of_degrees(&[1, 1], 2), 1);
        assert_eq!(multiplicity_of_degrees(&[1, 1], 0), 1);
        assert_eq!(multiplicity_of_degrees(&[1, 1], 1), 0);
        assert_eq!(multiplicity(&mf(&[1, 2]), 2, 4), 1);
        assert_eq!(multiplicity(&mf(&[1, 1, 3]), 1, 3), 2);
        assert_eq!(dimension(&mf(&[1, 2]), 2, 4), 5);
        assert_eq!(dimension(&mf(&[1, 2]), 2, 7), 0);
        assert_eq!(dimension(&mf(&[1]), 7, 7), 8);
        assert_eq!(multiplicity_by_characters(&[1, 1], 2), 1);
        assert_eq!(
            multiplicity_by_characters(&[2, 2, 6], 4),
            multiplicity_of_degrees(&[2, 2, 6], 4)
        );
    }

    #[test]
    fn dimensions_sum_to_space_dimension() {
        for k in 0..6 {
            let m = mf(&[1, 1, 3]);
            let total: u64 = (0..=5 * k).map(|n| dimension(&m, k, n)).sum();
            let expect: u64 = m.weights().iter().map(|p| (p * k + 1) as u64).product();
            assert_eq!(total, expect);
        }
    }

    #[test]
    fn routes_agree_and_kernel_symmetries_hold() {
        let m = mf(&[1, 2]);
        let s = build_section_space(&m, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [1u32, 3, 5, 7, 9] {
            let basis = isotype_basis(&s, n).unwrap();
            let ev = KernelEvaluator::new(&s, &basis);
            for _ in 0..3 {
                let x = sample_point(&m, &mut rng);
                let y = sample_point(&m, &mut rng);
                let v = ev.evaluate_checked(&x, &y, 1e-9).unwrap();
                let w = ev.evaluate(&y, &x);
                assert!((v.value - w.value.conj()).norm() < 1e-12);
                let d = ev.evaluate(&x, &x).value;
                assert!(d.im.abs() < 1e-12 && d.re >= 0.0);
                // S^1-equivariance.
                let th = 0.7;
                let r = ev.evaluate(&x.rotate_fiber(th, &m), &y).value;
                let want = v.value * C::from_polar(1.0, 3.0 * th);
                assert!((r - want).norm() < 1e-11);
                // G-invariance.
                let g = crate::liegroup::GroupElement::random(&mut rng);
                let gv = ev.evaluate(&x.act(&g), &y.act(&g)).value;
                assert!((gv - v.value).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn isotype_kernels_sum_to_full_kernel() {
        let m = mf(&[1, 2]);
        let s = build_section_space(&m, 2).unwrap();
        let x = two_factor_point(1, 2, 1.0, 0.4).with_phases(&[0.3, -1.1]);
        let y = two_factor_point(1, 2, 0.8, 2.0).with_phases(&[0.9, 0.2]);
        let sum: C = (0..=6)
            .map(|n| equivariant_kernel(&s, n, &x, &y).unwrap().value)
            .sum();
        assert!((sum - full_kernel(&m, 2, &x, &y)).norm() < 1e-12);
    }

    #[test]
    fn trace_identity() {
        let m = mf(&[1, 2]);
        let s = build_section_space(&m, 2).unwrap();
        for n in [2u32, 4, 6] {
            let b = isotype_basis(&s, n).unwrap();
            let tr = trace_by_quadrature(&s, &b);
            assert!((tr - b.dimension() as f64).abs() < 1e-9, "n={n}: {tr}");
        }
    }

    #[test]
    fn cache_round_trip_and_key_check() {
        let m = mf(&[1, 2]);
        let s = build_section_space(&m, 4).unwrap();
        let b = isotype_basis(&s, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("iso.bin");
        cache::store(&path, &s, &b).unwrap();
        let back = cache::load(&path, &s, 6).unwrap();
        assert_eq!(back.coefficient_matrix(&s), b.coefficient_matrix(&s));
        assert!(matches!(
            cache::load(&path, &s, 8),
            Err(cache::CacheError::KeyMismatch)
        ));
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], &cache::MAGIC);
        assert!(matches!(
            cache::decode(&bytes[..bytes.len() - 1]),
            Err(cache::CacheError::Malformed)
        ));
    }
}
