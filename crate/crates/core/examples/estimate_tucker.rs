//! Fit a Tucker-constrained network by gradient descent on simulated data and
//! compare with an unconstrained fit.

use cnn_redundancy::decomposition::random_tucker;
use cnn_redundancy::estimation::{train_least_squares, Dataset, ModelShape, Parameterization, TrainConfig};
use cnn_redundancy::linearize::{build_composite, split_stack, transform_input, ConvPoolSpec, KernelBank};
use cnn_redundancy::random::{normal, normal_tensor, rng};
use cnn_redundancy::tensor::relative_error;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ConvPoolSpec::new(&[8, 8, 5], &[3, 3, 2], 1, &[3, 3, 2])?;
    let kernels = 3;
    let stack = random_tucker(&[3, 3, 2, kernels], &[2, 2, 2, 1], 4)?.reconstruct();
    let mut r = rng(9);
    let fc = (0..kernels).map(|_| normal_tensor(&mut r, &spec.pooled_dims(), 1.0)).collect();
    let truth = build_composite(&KernelBank::new(split_stack(&stack), fc)?, &spec)?.composite;
    let truth = truth.scale(1.0 / truth.frobenius());

    let n = 400;
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let z = transform_input(&normal_tensor(&mut r, spec.input_dims(), 1.0), &spec)?;
        targets.push(z.inner(&truth)? + 0.1 * normal(&mut r));
        inputs.push(z);
    }
    let data = Dataset { inputs, targets };
    let shape = ModelShape::from_spec(&spec);
    let cfg = TrainConfig::default();

    for (name, param) in [
        ("free", Parameterization::Free { kernels }),
        ("tucker", Parameterization::Tucker { ranks: vec![2, 2, 2, 1], kernels }),
    ] {
        let fit = train_least_squares(&data, &shape, &param, &cfg)?;
        println!(
            "{name:>6}: {} iterations, objective {:.5}, relative error {:.4}",
            fit.iterations,
            fit.objective(),
            relative_error(&fit.composite(0), &truth)?
        );
    }
    Ok(())
}
