use cnn_redundancy::experiments::*;
use proptest::prelude::*;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(StudyKind::Theorem1);
    cfg.settings = vec!["S1".into()];
    cfg.n_values = Some(vec![60, 120]);
    cfg.replications = 4;
    cfg.seed = 11;
    cfg
}

#[test]
fn identical_config_gives_identical_csv() {
    let cfg = small_config();
    let a = records_to_csv(&run_study(&cfg).unwrap().records);
    let b = records_to_csv(&run_study(&cfg).unwrap().records);
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = 12;
    assert_ne!(a, records_to_csv(&run_study(&other).unwrap().records));
}

#[test]
fn empty_records_give_header_only_csv() {
    assert_eq!(records_to_csv(&[]), "setting,n,sqrt_dM_over_n,mean_err,std_err,reps,failed_reps\n");
}

#[test]
fn csv_round_trip() {
    let result = run_study(&small_config()).unwrap();
    let back = records_from_csv(&records_to_csv(&result.records)).unwrap();
    assert_eq!(back.len(), result.records.len());
    for (a, b) in back.iter().zip(&result.records) {
        assert_eq!((&a.setting, a.n, a.reps, a.failed_reps), (&b.setting, b.n, b.reps, b.failed_reps));
        assert_eq!(a.sqrt_ratio, b.sqrt_ratio);
        assert_eq!(a.mean_err, b.mean_err);
        assert_eq!(a.std_err, b.std_err);
    }
    assert!(records_from_csv("setting,n\nS1,notanumber\n").is_err());
}

#[test]
fn svg_annotation_matches_fitted_slope() {
    let result = run_study(&small_config()).unwrap();
    let svg = render_svg("S1", &result);
    let at = svg.find("slope=").expect("annotation present") + "slope=".len();
    let text: String = svg[at..].chars().take_while(|c| c.is_ascii_digit() || *c == '.' || *c == '-').collect();
    let shown: f64 = text.parse().unwrap();
    assert!((shown - result.fits[0].slope).abs() <= 5e-4);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn outputs_written_to_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let result = run_study(&cfg).unwrap();
    let paths = write_outputs(&cfg, &result, dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    let csv = std::fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(csv, records_to_csv(&result.records));
    let summary = std::fs::read_to_string(&paths[2]).unwrap();
    assert!(summary.contains("r2_uncentered") && summary.contains("mean_rel_err"));
}

#[test]
fn io_errors_name_the_path() {
    let err = emit_csv(&[], std::path::Path::new("/nonexistent-dir/x.csv")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
}

#[test]
fn var1_inputs_are_stationary_with_lag_one_correlation() {
    let rho = 0.5;
    let xs = gen_inputs_var1(&[4, 5], 20_000, rho, 3).unwrap();
    let (mut c0, mut c1) = (0.0, 0.0);
    for w in xs.windows(2) {
        let a = w[0].data();
        let b = w[1].data();
        c0 += a.iter().map(|v| v * v).sum::<f64>();
        c1 += a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    }
    let count = ((xs.len() - 1) * 20) as f64;
    assert!((c0 / count - 1.0).abs() < 0.03, "variance {}", c0 / count);
    assert!((c1 / c0 - rho).abs() < 0.02, "lag-1 correlation {}", c1 / c0);
    assert!(gen_inputs_var1(&[2], 2, -1.0, 0).is_err());
}

#[test]
fn iid_inputs_are_reproducible() {
    let a = gen_inputs_iid(&[3, 3], 5, 9);
    let b = gen_inputs_iid(&[3, 3], 5, 9);
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
}

#[test]
fn grid_example_and_ordering() {
    let g = n_grid_from_ratio(17, 0.5, 0.6, 2).unwrap();
    assert_eq!(g, vec![47, 68]);
    let g = n_grid_from_ratio(17, 0.15, 0.60, 8).unwrap();
    assert_eq!(g.len(), 8);
    assert_eq!(*g.last().unwrap(), 756);
}

#[test]
fn noiseless_runs_recover_the_truth() {
    let mut cfg = small_config();
    cfg.noise_std = 0.0;
    cfg.n_values = Some(vec![100, 200]);
    cfg.train.tol = Some(1e-14);
    let result = run_study(&cfg).unwrap();
    for r in &result.records {
        assert!(r.mean_rel_err < 1e-3, "n={} rel err {}", r.n, r.mean_rel_err);
    }
}

#[test]
fn kernel_truth_has_unit_norm() {
    let s = &kernel_settings()[0];
    for k in [2, 4, 8] {
        let w = kernel_study_truth(s, k, 5).unwrap();
        assert!((w.frobenius() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn kernel_study_labels_each_kernel_count() {
    let mut cfg = ExperimentConfig::new(StudyKind::Kernel);
    cfg.kernel_counts = Some(vec![2, 4]);
    cfg.n_values = Some(vec![80]);
    cfg.replications = 2;
    let result = run_study(&cfg).unwrap();
    let labels: Vec<&str> = result.fits.iter().map(|f| f.setting.as_str()).collect();
    assert_eq!(labels, ["desk-K2", "desk-K4"]);
}

#[test]
fn config_toml_round_trip_and_validation() {
    let text = r#"
study = "theorem2"
settings = ["S1", "mini"]
replications = 10
seed = 4

[input]
kind = "var1"
rho = 0.5

[train]
learning_rate = 0.005

[[custom]]
id = "C1"
input_dims = [6, 6]
kernel_dims = [3, 3]
pool_sizes = [2, 2]
kernels = 2
tucker_ranks = [2, 2, 1]
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.input, InputKind::Var1 { rho: 0.5 });
    assert_eq!(cfg.grid_points, 8);
    assert_eq!(cfg.resolve_settings().unwrap().len(), 3);
    assert_eq!(cfg.train_config(0).learning_rate, 0.005);
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);

    assert!(ExperimentConfig::from_toml("study = \"theorem1\"\nbogus = 1\n").is_err());
    assert!(ExperimentConfig::from_toml("study = \"theorem1\"\nsettings = [\"S9\"]\n").is_err());
    assert!(ExperimentConfig::from_toml("study = \"theorem1\"\n[input]\nkind = \"var1\"\nrho = 1.2\n").is_err());
    assert!(ExperimentConfig::from_toml("study = \"theorem1\"\nreplications = 0\n").is_err());
    let deficient = "study = \"theorem1\"\n[[custom]]\nid = \"X\"\ninput_dims = [12, 12, 6]\nkernel_dims = [7, 7, 3]\npool_sizes = [1, 1, 1]\n";
    assert!(ExperimentConfig::from_toml(deficient).is_err());
}

proptest! {
    #[test]
    fn r2_matches_sum_of_squares_identities(
        pts in proptest::collection::vec((0.05f64..1.0, 0.0f64..5.0), 3..12)
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let fit = fit_through_origin("p", &x, &y);
        let n = y.len() as f64;
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let syy: f64 = y.iter().map(|v| v * v).sum();
        let ybar = y.iter().sum::<f64>() / n;
        // For a least-squares line through the origin, SS_res = Σy² − slope²Σx².
        let ss_res = syy - fit.slope * fit.slope * sxx;
        let ss_tot = syy - n * ybar * ybar;
        prop_assume!(ss_tot > 1e-6 && syy > 1e-6);
        prop_assert!((fit.r2 - (1.0 - ss_res / ss_tot)).abs() < 1e-8);
        prop_assert!((fit.r2_uncentered - (1.0 - ss_res / syy)).abs() < 1e-8);
        prop_assert!(fit.r2_uncentered >= fit.r2 - 1e-12);
    }
}
