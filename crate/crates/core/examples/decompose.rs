//! HOSVD, HOOI refinement and CP-ALS on synthetic tensors.

use cnn_redundancy::decomposition::{cp_als, hooi_refine, hosvd, random_cp, random_tucker, tucker_error, CpAlsOptions};
use cnn_redundancy::random::{normal_tensor, rng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exact = random_tucker(&[6, 5, 4], &[2, 3, 2], 1)?.reconstruct();
    let f = hosvd(&exact, &[2, 3, 2])?;
    println!("HOSVD on an exact (2,3,2) tensor: relative error {:.2e}", tucker_error(&exact, &f));

    // Add noise and truncate below the true ranks; HOOI improves on HOSVD.
    let noise = normal_tensor(&mut rng(5), &[6, 5, 4], 0.05);
    let noisy = exact.add(&noise)?;
    let init = hosvd(&noisy, &[2, 2, 2])?;
    let refined = hooi_refine(&noisy, &init, 100, 1e-12)?;
    println!(
        "rank (2,2,2) on noisy data: HOSVD {:.4}, HOOI {:.4} after {} sweeps",
        tucker_error(&noisy, &init),
        refined.errors.last().unwrap(),
        refined.errors.len() - 1
    );

    let t = random_cp(&[7, 6, 8], 5, 2)?.reconstruct();
    let fit = cp_als(&t, 5, CpAlsOptions::default())?;
    println!("CP-ALS rank 5: fit {:.12}, per-start fits {:?}", fit.fit, fit.start_fits);
    Ok(())
}
