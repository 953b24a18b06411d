//! Binary classification: error of the logistic estimator against √(d_M / n).

use cnn_redundancy::experiments::{run_study, ExperimentConfig, StudyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::new(StudyKind::Logistic);
    cfg.replications = 10;
    let result = run_study(&cfg)?;
    for rec in &result.records {
        println!("n={:>5} mean err {:.4} (failed {})", rec.n, rec.mean_err, rec.failed_reps);
    }
    let fit = &result.fits[0];
    println!("slope {:.3}, R2 {:.3}", fit.slope, fit.r2_uncentered);
    Ok(())
}
