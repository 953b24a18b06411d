//! A bank of K kernels whose stack has output rank R computes the same
//! function as a bank of only R kernels.

use cnn_redundancy::decomposition::random_tucker;
use cnn_redundancy::linearize::{build_composite, reparameterize_tucker, split_stack, ConvPoolSpec, KernelBank};
use cnn_redundancy::random::{normal_tensor, rng};
use cnn_redundancy::tensor::relative_error;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ConvPoolSpec::new(&[8, 8], &[3, 3], 1, &[3, 3])?;
    let (k, r) = (8, 2);
    // Stacked kernel (3, 3, K) with Tucker ranks (2, 2, R).
    let stack = random_tucker(&[3, 3, k], &[2, 2, r], 1)?;
    let mut g = rng(2);
    let fc = (0..k).map(|_| normal_tensor(&mut g, &spec.pooled_dims(), 1.0)).collect();
    let bank = KernelBank::new(split_stack(&stack.reconstruct()), fc)?;

    let small = reparameterize_tucker(&bank, &stack)?;
    println!("{} kernels rewritten as {}", bank.len(), small.len());
    let w_big = build_composite(&bank, &spec)?.composite;
    let w_small = build_composite(&small, &spec)?.composite;
    println!("relative difference of composite weights: {:.2e}", relative_error(&w_small, &w_big)?);
    Ok(())
}
