//! Parameter counts versus sample complexity for compressed kernels.

use cnn_redundancy::complexity::{kr_classify, ComplexityReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (l, p) = ([3, 3], 16);
    println!("{:>4} {:>4} {:>8} {:>8} {:>8} {:>6}  class", "K", "R", "naive", "d_M", "gap", "K/R");
    for r in [2, 4] {
        for k in [r, 2 * r, 4 * r, 8 * r] {
            let rep = ComplexityReport::tucker(&[2, 2], r, &l, k, p)?;
            println!(
                "{k:>4} {r:>4} {:>8} {:>8} {:>8} {:>6}  {}",
                rep.naive_compressed,
                rep.sample_compressed,
                rep.discrepancy,
                rep.kr_ratio.to_string(),
                kr_classify(rep.kr_ratio, 4.0).as_str()
            );
        }
    }
    let cp = ComplexityReport::cp(3, &l, 12, p)?;
    println!("CP rank 3, K = 12: naive {} vs d_M {}", cp.naive_compressed, cp.sample_compressed);
    Ok(())
}
