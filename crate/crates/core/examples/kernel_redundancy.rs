//! Error of a CP bottleneck with rank R as the number of output kernels K grows.

use cnn_redundancy::experiments::{run_study, ExperimentConfig, StudyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::new(StudyKind::Kernel);
    cfg.kernel_counts = Some(vec![2, 4, 8]);
    cfg.replications = 10;
    cfg.grid_points = 4;
    let result = run_study(&cfg)?;
    for rec in &result.records {
        println!("{:>8} n={:>4} mean err {:.4} ± {:.4}", rec.setting, rec.n, rec.mean_err, rec.std_err);
    }
    Ok(())
}
