//! Collapse a conv → average-pool → fully-connected network to one weight
//! tensor and check it against direct evaluation.

use cnn_redundancy::linearize::{build_composite, forward_oracle, Activation, ConvPoolSpec};
use cnn_redundancy::random::{normal_tensor, rng};
use cnn_redundancy::verify::random_bank;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 10x10x3 input, 2x2x3 kernels, stride 1, 3x3 pooling.
    let spec = ConvPoolSpec::new(&[10, 10, 3], &[2, 2, 3], 1, &[3, 3, 1])?;
    println!("conv output {:?}, pooled {:?}", spec.conv_dims(), spec.pooled_dims());

    let mut r = rng(7);
    let bank = random_bank(&mut r, &spec, 4);
    let model = build_composite(&bank, &spec)?;
    println!("composite weight on Z: {:?}, on X: {:?}", model.composite.shape(), model.composite_x.shape());

    for _ in 0..3 {
        let x = normal_tensor(&mut r, spec.input_dims(), 1.0);
        let direct = forward_oracle(&x, &bank, &spec, Activation::Linear)?;
        let linear = model.predict(&x)?;
        println!("direct {direct:+.10}  linearized {linear:+.10}  diff {:.1e}", (direct - linear).abs());
    }
    Ok(())
}
