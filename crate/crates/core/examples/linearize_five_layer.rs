//! Two conv/pool stages followed by a fully-connected layer still collapse to
//! a single weight tensor.

use cnn_redundancy::linearize::{build_composite_5layer, forward_oracle_5layer, Activation};
use cnn_redundancy::random::{normal_tensor, rng};
use cnn_redundancy::verify::{random_five_layer, verify_five_layer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut r = rng(3);
    let (s1, s2, bank) = random_five_layer(&mut r, 2, 14);
    println!(
        "stage 1: input {:?} kernel {:?} pooled {:?}; stage 2: kernel {:?} pooled {:?}",
        s1.input_dims(),
        s1.kernel_dims(),
        s1.pooled_dims(),
        s2.kernel_dims(),
        s2.pooled_dims()
    );
    let model = build_composite_5layer(&bank, &s1, &s2)?;
    let x = normal_tensor(&mut r, s1.input_dims(), 1.0);
    println!(
        "direct {:+.10}  linearized {:+.10}",
        forward_oracle_5layer(&x, &bank, &s1, &s2, Activation::Linear)?,
        model.predict(&x)?
    );

    let report = verify_five_layer(50, 3, 12, 11, 1e-9)?;
    println!("random geometries: {report}, passed {}", report.passed());
    Ok(())
}
