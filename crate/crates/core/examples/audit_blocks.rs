//! Audit the bottleneck blocks of a ResNet-style network for kernel redundancy.

use cnn_redundancy::complexity::{audit_blocks, parse_network_spec};

const NETWORK: &str = "\
# group 1
bottleneck C=256 R=64 K=256 k=3x3
# group 2
bottleneck C=512 R=128 K=512 k=3x3
grouped C=512 R=128 K=512 k=3x3 g=32
# CP-structured blocks; their d_M carries an R^4 term and can exceed the naive count
depthwise_separable C=64 R=64 K=128 k=3x3
inverted_residual C=32 R=192 K=32 k=3x3 x=6
funnel C=64 R=64 K=64 k=3x3
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let blocks = parse_network_spec(NETWORK)?;
    let audit = audit_blocks(&blocks, 1, 4.0)?;
    print!("{}", audit.to_csv());
    println!(
        "total naive {} vs sample complexity {} (gap {})",
        audit.total_naive, audit.total_sample, audit.total_discrepancy
    );
    Ok(())
}
