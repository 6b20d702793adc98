use std::path::Path;
use szego_lab::asymptotics::{
    fit_power_law, predict_dimension, reduced_volume, DimensionReading, KGrid, OrbitSampling,
    VolumeMethod,
};
use szego_lab::experiment::{run, Command, ExperimentConfig, ExperimentError, GridConfig};
use szego_lab::geometry::ModelManifold;
use szego_lab::hardy::dimension;

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn verdict(s: &serde_json::Value, name: &str) -> (bool, f64) {
    let v = s["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["name"] == name)
        .unwrap();
    (v["pass"].as_bool().unwrap(), v["value"].as_f64().unwrap())
}

#[test]
fn dims_csv_format_and_recomputed_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::default();
    let out = run(Command::Dims, &config, dir.path()).unwrap();
    assert!(out.passed);

    let raw = std::fs::read(dir.path().join("dims.csv")).unwrap();
    assert!(!raw.contains(&b'\r'));
    assert_eq!(*raw.last().unwrap(), b'\n');
    let (header, rows) = read_csv(&dir.path().join("dims.csv"));
    assert_eq!(header[..5], ["k", "n", "exact_dim", "predicted", "ratio"]);
    // 17 significant digits: one leading digit plus sixteen decimals.
    let mantissa = rows[0][3].split('e').next().unwrap();
    assert_eq!(mantissa.replace(['.', '-'], "").len(), 17);

    let samples: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    let fit = fit_power_law(&samples).unwrap();
    let s = summary(dir.path());
    let (_, exponent) = verdict(&s, "dimension exponent");
    assert_eq!(exponent, fit.exponent);
    assert_eq!(s["calibration"]["scale"].as_f64().unwrap(), 0.5);
    assert!(s["tolerances"]["dims_ratio_drift"].as_f64().is_some());
}

#[test]
fn kernel_verdicts_recompute_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.grid = GridConfig {
        min: 8,
        max: 40,
        ..Default::default()
    };
    run(Command::Kernel, &config, dir.path()).unwrap();
    let (_, rows) = read_csv(&dir.path().join("kernel.csv"));
    let samples: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse::<f64>().unwrap(), r[2].parse::<f64>().unwrap()))
        .filter(|(k, _)| *k >= config.kernel.fit_min_k as f64)
        .collect();
    let fit = fit_power_law(&samples).unwrap();
    let s = summary(dir.path());
    assert_eq!(verdict(&s, "on-locus diagonal exponent").1, fit.exponent);
    let last: f64 = rows.last().unwrap()[4].parse().unwrap();
    assert_eq!(verdict(&s, "exact/predicted diagonal at largest k").1, last);
    let (_, decay) = read_csv(&dir.path().join("decay.csv"));
    assert!(decay.iter().any(|r| r[0] == "off-orbit-correlation"));
}

#[test]
fn config_errors_map_to_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.nu = 0.5;
    let err = run(Command::Dims, &config, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(summary(dir.path())["error"].is_string());

    config.nu = 1.0;
    config.grid = GridConfig {
        min: 9,
        max: 9,
        ..Default::default()
    };
    let err = run(Command::Dims, &config, dir.path()).unwrap_err();
    assert!(matches!(err, ExperimentError::Config(_)));
}

#[test]
fn single_level_grid_is_a_verification_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.grid.levels = Some(vec![20]);
    let s = run(Command::Dims, &config, dir.path()).unwrap();
    assert!(!s.passed);
    assert_eq!(s.exit_code(), 2);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::default();
    config.seed = 5;
    run(Command::Loci, &config, a.path()).unwrap();
    run(Command::Loci, &config, b.path()).unwrap();
    for f in ["loci.csv", "constants.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
}

/// The orbit-quadrature error bar must cover the gap between the exact
/// dimension at the largest k and the prediction, in at least 95% of seeds.
#[test]
fn reduced_volume_error_covers_dimension_discrepancy() {
    let m = ModelManifold::new(vec![1, 2]).unwrap();
    let nu = 1.0;
    let grid = KGrid::admissible(&m, nu, 0.5, 8, 60).unwrap();
    let top = grid.points.last().unwrap();
    let exact = dimension(&m, top.k, top.n) as f64;
    let runs = 40;
    let mut covered = 0;
    for seed in 0..runs {
        let sampling = OrbitSampling {
            seed,
            ..OrbitSampling::default()
        };
        let vol = reduced_volume(&m, nu, VolumeMethod::OrbitQuadrature, &sampling).unwrap();
        let predicted = predict_dimension(&m, nu, top.k, 0.5, vol.value, DimensionReading::Weyl);
        // The prediction is linear in the volume.
        let implied = vol.value * exact / predicted;
        if (implied - vol.value).abs() <= vol.error {
            covered += 1;
        }
    }
    assert!(
        covered as f64 >= 0.95 * runs as f64,
        "error bar covered the discrepancy in {covered}/{runs} seeds"
    );
}
