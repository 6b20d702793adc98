//! WebAssembly bindings for the static page in `www/`.

use szego_lab::asymptotics::{predict_diagonal, KGrid};
use szego_lab::geometry::{two_factor_point, ModelManifold};
use szego_lab::hardy::{build_section_space, isotype_basis, KernelEvaluator};
use szego_lab::oscillatory;
use wasm_bindgen::prelude::*;

/// Scale in nu = s n / k used throughout the demo.
const SCALE: f64 = 0.5;
/// Largest level the page may request; keeps the blocked eigenproblems quick.
pub const MAX_K: u32 = 40;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn manifold(p: u32, q: u32) -> Result<ModelManifold, JsValue> {
    ModelManifold::new(vec![p, q]).map_err(err)
}

fn label(m: &ModelManifold, nu: f64, k: u32) -> Result<u32, JsValue> {
    if k == 0 || k > MAX_K {
        return Err(err(format!("k must lie in 1..={MAX_K}")));
    }
    let grid = KGrid::from_levels(m, nu, SCALE, &[k]).map_err(err)?;
    Ok(grid.points[0].n)
}

/// Diagonal of the (2 k nu, k) isotype kernel at points with the given
/// values of lambda, all at one azimuth.
#[wasm_bindgen]
pub fn kernel_profile(
    p: u32,
    q: u32,
    nu: f64,
    k: u32,
    lambdas: Vec<f64>,
) -> Result<Vec<f64>, JsValue> {
    let m = manifold(p, q)?;
    let n = label(&m, nu, k)?;
    let (lo, hi) = m.lambda_range();
    let space = build_section_space(&m, k).map_err(err)?;
    let basis = isotype_basis(&space, n).map_err(err)?;
    let ev = KernelEvaluator::new(&space, &basis);
    lambdas
        .iter()
        .map(|&l| {
            if !(l > lo && l < hi) {
                return Err(err(format!("lambda = {l} outside ({lo}, {hi})")));
            }
            Ok(ev.diagonal(&two_factor_point(p, q, l, 0.3)))
        })
        .collect()
}

/// Rows (k, exact, predicted) flattened, for admissible k up to `kmax`.
#[wasm_bindgen]
pub fn diagonal_series(p: u32, q: u32, nu: f64, kmax: u32) -> Result<Vec<f64>, JsValue> {
    let m = manifold(p, q)?;
    let grid = KGrid::admissible(&m, nu, SCALE, 2, kmax.min(MAX_K)).map_err(err)?;
    let x = two_factor_point(p, q, nu, 0.3);
    let mut out = Vec::with_capacity(3 * grid.len());
    for pt in &grid.points {
        let space = build_section_space(&m, pt.k).map_err(err)?;
        let basis = isotype_basis(&space, pt.n).map_err(err)?;
        let exact = KernelEvaluator::new(&space, &basis).diagonal(&x);
        let predicted = predict_diagonal(&m, nu, &x, pt.k).map_err(err)?;
        out.extend([pt.k as f64, exact, predicted]);
    }
    Ok(out)
}

/// Closed form and quadrature of the Gaussian integral J(lambda, xi) as
/// (re, im, quad re, quad im).
#[wasm_bindgen]
pub fn gaussian_j(lambda: f64, xi: f64) -> Result<Vec<f64>, JsValue> {
    let exact = oscillatory::gaussian_j(lambda, xi).map_err(err)?;
    let quad = oscillatory::gaussian_j_quadrature(lambda, xi)
        .map_err(err)?
        .value;
    Ok(vec![exact.re, exact.im, quad.re, quad.im])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_tracks_prediction() {
        let rows = diagonal_series(1, 2, 1.0, 30).unwrap();
        let last = &rows[rows.len() - 3..];
        assert_eq!(last[0], 30.0);
        assert!((last[1] / last[2] - 1.0).abs() < 0.1);
    }

    #[test]
    fn profile_peaks_on_the_locus() {
        let v = kernel_profile(1, 2, 1.0, 20, vec![0.7, 1.0, 1.3]).unwrap();
        assert!(v[1] > v[0] && v[1] > v[2]);
    }

    #[test]
    fn j_routes_agree() {
        let v = gaussian_j(2.0, 0.5).unwrap();
        assert!((v[0] - v[2]).abs() + (v[1] - v[3]).abs() < 1e-8 * v[0].hypot(v[1]));
    }
}
