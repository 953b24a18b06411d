//! Estimation error of an unconstrained network against √(d_M / n), with
//! CSV, SVG and summary written to a temporary directory.

use cnn_redundancy::experiments::{run_study, write_outputs, ExperimentConfig, StudyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::new(StudyKind::Theorem1);
    cfg.settings = vec!["S1".into(), "S2".into()];
    cfg.replications = 10;
    cfg.seed = 1;
    let result = run_study(&cfg)?;
    for rec in &result.records {
        println!("{:>3} n={:>5} sqrt(d_M/n)={:.3} mean err {:.4}", rec.setting, rec.n, rec.sqrt_ratio, rec.mean_err);
    }
    for f in &result.fits {
        println!("{}: slope {:.3}, R2 {:.3} (centered {:.3})", f.setting, f.slope, f.r2_uncentered, f.r2);
    }
    let dir = std::env::temp_dir().join("cnnr-error-scaling");
    std::fs::create_dir_all(&dir)?;
    for p in write_outputs(&cfg, &result, &dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
