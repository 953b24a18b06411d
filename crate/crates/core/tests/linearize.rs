use cnn_redundancy::decomposition::{random_cp, random_tucker, CpForm, TuckerForm};
use cnn_redundancy::linearize::*;
use cnn_redundancy::verify::{random_bank, random_spec};
use cnn_redundancy::random::{normal_tensor, rng, Rng};
use cnn_redundancy::tensor::{relative_error, DenseTensor};
use nalgebra::DMatrix;
use rand::Rng as _;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn oracle_equivalence_random_instances() {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for t in 0..150 {
        let order = r.random_range(1..=3);
        let spec = random_spec(&mut r, order, 12, t % 3 == 0);
        let k = r.random_range(1..=4);
        let bank = random_bank(&mut r, &spec, k);
        let x = normal_tensor(&mut r, spec.input_dims(), 1.0);
        let lin = build_composite(&bank, &spec).unwrap();
        let direct = forward_oracle(&x, &bank, &spec, Activation::Linear).unwrap();
        let via_w = lin.predict(&x).unwrap();
        worst = worst.max(rel(via_w, direct));
    }
    assert!(worst <= 1e-10, "worst relative error {worst:e}");
}

#[test]
fn adjoint_and_kronecker_operator() {
    let mut r = rng(7);
    for t in 0..40 {
        let spec = random_spec(&mut r, 1 + t % 3, 10, t % 2 == 0);
        let bank = random_bank(&mut r, &spec, 2);
        let lin = build_composite(&bank, &spec).unwrap();
        let x = normal_tensor(&mut r, spec.input_dims(), 1.0);
        let z = transform_input(&x, &spec).unwrap();
        assert_eq!(z.shape(), spec.z_dims().as_slice());
        let lhs = z.inner(&lin.composite).unwrap();
        let rhs = x.inner(&lin.composite_x).unwrap();
        assert!(rel(lhs, rhs) < 1e-12);

        let ug = spec.input_operator();
        let vz = ug.transpose() * nalgebra::DVector::from_vec(x.vectorize());
        let diff: f64 = vz.iter().zip(z.vectorize()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }
}

#[test]
fn transform_is_linear() {
    let mut r = rng(8);
    let spec = random_spec(&mut r, 3, 10, false);
    let x = normal_tensor(&mut r, spec.input_dims(), 1.0);
    let y = normal_tensor(&mut r, spec.input_dims(), 1.0);
    let lhs = transform_input(&x.scale(2.5).add(&y).unwrap(), &spec).unwrap();
    let rhs = transform_input(&x, &spec).unwrap().scale(2.5).add(&transform_input(&y, &spec).unwrap()).unwrap();
    assert!(relative_error(&lhs, &rhs).unwrap() < 1e-13);
}

#[test]
fn composite_is_bilinear() {
    let mut r = rng(9);
    let spec = random_spec(&mut r, 2, 10, false);
    let a1 = normal_tensor(&mut r, spec.kernel_dims(), 1.0);
    let a2 = normal_tensor(&mut r, spec.kernel_dims(), 1.0);
    let b = normal_tensor(&mut r, &spec.pooled_dims(), 1.0);
    let w = |a: &DenseTensor, b: &DenseTensor| {
        build_composite(&KernelBank::new(vec![a.clone()], vec![b.clone()]).unwrap(), &spec)
            .unwrap()
            .composite_x
    };
    let lhs = w(&a1.scale(3.0).add(&a2).unwrap(), &b);
    let rhs = w(&a1, &b).scale(3.0).add(&w(&a2, &b)).unwrap();
    assert!(relative_error(&lhs, &rhs).unwrap() < 1e-13);
    let b2 = normal_tensor(&mut r, &spec.pooled_dims(), 1.0);
    let lhs = w(&a1, &b.sub(&b2.scale(0.5)).unwrap());
    let rhs = w(&a1, &b).sub(&w(&a1, &b2).scale(0.5)).unwrap();
    assert!(relative_error(&lhs, &rhs).unwrap() < 1e-13);
}

#[test]
fn relu_oracle_is_nonlinear_but_runs() {
    let mut r = rng(10);
    let spec = ConvPoolSpec::new(&[7, 5, 7], &[2, 2, 2], 1, &[3, 2, 3]).unwrap();
    let bank = random_bank(&mut r, &spec, 2);
    let x = normal_tensor(&mut r, spec.input_dims(), 1.0);
    let relu = forward_oracle(&x, &bank, &spec, Activation::Relu).unwrap();
    let relu_neg = forward_oracle(&x.scale(-1.0), &bank, &spec, Activation::Relu).unwrap();
    let lin = forward_oracle(&x, &bank, &spec, Activation::Linear).unwrap();
    // g(s) - g(-s) = s for ReLU
    assert!(rel(relu - relu_neg, lin) < 1e-10);
}

#[test]
fn stacked_slices_match_kernels() {
    let mut r = rng(11);
    let spec = random_spec(&mut r, 3, 10, false);
    let bank = random_bank(&mut r, &spec, 3);
    let st = stack_kernels(&bank);
    let l = spec.kernel_dims();
    for (k, a) in bank.kernels.iter().enumerate() {
        let mut idx = vec![0; l.len() + 1];
        idx[l.len()] = k;
        let mut sub = vec![0; l.len()];
        loop {
            idx[..l.len()].copy_from_slice(&sub);
            assert_eq!(st.get(&idx).unwrap(), a.get(&sub).unwrap());
            if !cnn_redundancy::tensor::next_index(&mut sub, l) {
                break;
            }
        }
    }
    assert_eq!(split_stack(&st), bank.kernels);
}

fn bank_from_stack(r: &mut Rng, stack: &DenseTensor, spec: &ConvPoolSpec) -> KernelBank {
    let kernels = split_stack(stack);
    let fc = (0..kernels.len()).map(|_| normal_tensor(r, &spec.pooled_dims(), 1.0)).collect();
    KernelBank::new(kernels, fc).unwrap()
}

#[test]
fn tucker_reparameterization_preserves_composite() {
    let mut r = rng(12);
    let spec = ConvPoolSpec::new(&[8, 8, 3], &[3, 3, 3], 1, &[3, 3, 1]).unwrap();
    for (k, ranks) in [(3, vec![2, 2, 2, 1]), (4, vec![3, 2, 3, 2]), (3, vec![3, 3, 3, 3])] {
        let mut shape = spec.kernel_dims().to_vec();
        shape.push(k);
        let t = random_tucker(&shape, &ranks, r.random()).unwrap();
        let bank = bank_from_stack(&mut r, &t.reconstruct(), &spec);
        let small = reparameterize_tucker(&bank, &t).unwrap();
        assert_eq!(small.len(), *ranks.last().unwrap());
        let w = bank.kron_sum().unwrap();
        let w2 = small.kron_sum().unwrap();
        assert!(relative_error(&w2, &w).unwrap() <= 1e-10);
    }
}

#[test]
fn tucker_identity_output_factor_keeps_bank() {
    let mut r = rng(13);
    let spec = ConvPoolSpec::new(&[6, 6], &[2, 2], 1, &[5, 5]).unwrap();
    let bank = random_bank(&mut r, &spec, 3);
    let mut core_shape = spec.kernel_dims().to_vec();
    core_shape.push(3);
    let t = TuckerForm::new(
        stack_kernels(&bank),
        vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::identity(3, 3)],
    )
    .unwrap();
    let same = reparameterize_tucker(&bank, &t).unwrap();
    for (a, b) in same.kernels.iter().zip(&bank.kernels) {
        assert!(relative_error(a, b).unwrap() < 1e-15);
    }
    for (a, b) in same.fc.iter().zip(&bank.fc) {
        assert!(relative_error(a, b).unwrap() < 1e-15);
    }
}

#[test]
fn cp_reparameterization_preserves_composite() {
    let mut r = rng(14);
    let spec = ConvPoolSpec::new(&[8, 8, 3], &[3, 3, 3], 1, &[3, 3, 1]).unwrap();
    for (k, rank) in [(3, 1), (4, 2), (3, 3)] {
        let mut shape = spec.kernel_dims().to_vec();
        shape.push(k);
        let cp = random_cp(&shape, rank, r.random()).unwrap();
        let bank = bank_from_stack(&mut r, &cp.reconstruct(), &spec);
        let small = reparameterize_cp(&bank, &cp).unwrap();
        assert_eq!(small.len(), rank);
        let w = bank.kron_sum().unwrap();
        assert!(relative_error(&small.kron_sum().unwrap(), &w).unwrap() <= 1e-10);
    }
}

#[test]
fn reparameterization_rejects_inexact_forms() {
    let mut r = rng(15);
    let spec = ConvPoolSpec::new(&[6, 6], &[2, 2], 1, &[5, 5]).unwrap();
    let bank = random_bank(&mut r, &spec, 3);
    let t = random_tucker(&[2, 2, 3], &[1, 1, 1], 1).unwrap();
    assert!(matches!(reparameterize_tucker(&bank, &t), Err(LinearizeError::InexactDecomposition(_))));
    let cp = CpForm::new(
        vec![1.0],
        vec![
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
        ],
    )
    .unwrap();
    assert!(reparameterize_cp(&bank, &cp).is_err());
    let wrong = random_tucker(&[3, 2, 3], &[1, 1, 1], 1).unwrap();
    assert!(matches!(reparameterize_tucker(&bank, &wrong), Err(LinearizeError::ShapeMismatch { .. })));
}

fn random_five_layer(r: &mut Rng, s1: &ConvPoolSpec, s2: &ConvPoolSpec, k1: usize, k2: usize) -> FiveLayerBank {
    FiveLayerBank {
        first: (0..k1).map(|_| normal_tensor(r, s1.kernel_dims(), 1.0)).collect(),
        second: (0..k2).map(|_| normal_tensor(r, s2.kernel_dims(), 1.0)).collect(),
        fc: (0..k1)
            .map(|_| (0..k2).map(|_| normal_tensor(r, &s2.pooled_dims(), 1.0)).collect())
            .collect(),
    }
}

#[test]
fn five_layer_matches_nested_oracle() {
    let mut r = rng(16);
    let s1 = ConvPoolSpec::new(&[12, 12, 6], &[2, 2, 2], 2, &[2, 2, 1]).unwrap();
    assert_eq!(s1.pooled_dims(), vec![3, 3, 3]);
    let s2 = ConvPoolSpec::new(&[3, 3, 3], &[1, 1, 1], 1, &[3, 1, 1]).unwrap();
    assert_eq!(s2.pooled_dims(), vec![1, 3, 3]);
    for (k1, k2) in [(1, 1), (2, 3)] {
        let bank = random_five_layer(&mut r, &s1, &s2, k1, k2);
        let lin = build_composite_5layer(&bank, &s1, &s2).unwrap();
        for _ in 0..5 {
            let x = normal_tensor(&mut r, s1.input_dims(), 1.0);
            let direct = forward_oracle_5layer(&x, &bank, &s1, &s2, Activation::Linear).unwrap();
            assert!(rel(lin.predict(&x).unwrap(), direct) <= 1e-9);
        }
        let doubled = FiveLayerBank {
            fc: bank.fc.iter().map(|row| row.iter().map(|b| b.scale(2.0)).collect()).collect(),
            ..bank.clone()
        };
        let x = normal_tensor(&mut r, s1.input_dims(), 1.0);
        let y1 = build_composite_5layer(&bank, &s1, &s2).unwrap().predict(&x).unwrap();
        let y2 = build_composite_5layer(&doubled, &s1, &s2).unwrap().predict(&x).unwrap();
        assert!(rel(y2, 2.0 * y1) < 1e-13);
    }
}

#[test]
fn five_layer_two_mode_wide_second_kernel() {
    let mut r = rng(20);
    let s1 = ConvPoolSpec::new(&[10, 10], &[2, 2], 2, &[1, 1]).unwrap();
    let s2 = ConvPoolSpec::new(&[5, 5], &[2, 3], 1, &[2, 3]).unwrap();
    assert_eq!(s2.pooled_dims(), vec![2, 1]);
    let bank = random_five_layer(&mut r, &s1, &s2, 3, 2);
    let lin = build_composite_5layer(&bank, &s1, &s2).unwrap();
    assert_eq!(lin.composite.shape(), &[8, 6]);
    for _ in 0..5 {
        let x = normal_tensor(&mut r, &[10, 10], 1.0);
        let direct = forward_oracle_5layer(&x, &bank, &s1, &s2, Activation::Linear).unwrap();
        assert!(rel(lin.predict(&x).unwrap(), direct) <= 1e-9);
    }
}

#[test]
fn five_layer_factor_equals_kronecker_identity() {
    let mut r = rng(17);
    for _ in 0..20 {
        let s1 = random_spec(&mut r, 2, 12, false);
        let p = s1.pooled_dims();
        let l2: Vec<usize> = p.iter().map(|&pj| r.random_range(1..=pj)).collect();
        let Ok(s2) = ConvPoolSpec::new(&p, &l2, 1, &vec![1; p.len()]) else { continue };
        for j in 0..2 {
            let lhs = five_layer_factor(&s1, &s2, j);
            let l = s1.kernel_dims()[j];
            let rhs = s1.pooled_factor(j) * s2.pooled_factor(j).kronecker(&DMatrix::<f64>::identity(l, l));
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }
}

#[test]
fn five_layer_degenerate_single_windows() {
    let mut r = rng(18);
    let s1 = ConvPoolSpec::new(&[4, 5], &[2, 1], 2, &[2, 3]).unwrap();
    assert_eq!(s1.pooled_dims(), vec![1, 1]);
    let s2 = ConvPoolSpec::new(&[1, 1], &[1, 1], 1, &[1, 1]).unwrap();
    let bank = random_five_layer(&mut r, &s1, &s2, 1, 1);
    let lin = build_composite_5layer(&bank, &s1, &s2).unwrap();
    let scale = bank.second[0].data()[0] * bank.fc[0][0].data()[0];
    let single = build_composite(
        &KernelBank::new(bank.first.clone(), vec![DenseTensor::scalar(2, scale)]).unwrap(),
        &s1,
    )
    .unwrap();
    assert!(relative_error(&lin.composite_x, &single.composite_x).unwrap() < 1e-14);
    let x = normal_tensor(&mut r, &[4, 5], 1.0);
    let direct = forward_oracle_5layer(&x, &bank, &s1, &s2, Activation::Linear).unwrap();
    assert!(rel(lin.predict(&x).unwrap(), direct) < 1e-12);
}

#[test]
fn five_layer_stage_mismatch() {
    let mut r = rng(19);
    let s1 = ConvPoolSpec::new(&[12, 12, 6], &[2, 2, 2], 2, &[2, 2, 1]).unwrap();
    let s2 = ConvPoolSpec::new(&[4, 3, 3], &[1, 1, 1], 1, &[2, 3, 3]).unwrap();
    let bank = random_five_layer(&mut r, &s1, &s2, 1, 1);
    assert!(matches!(
        build_composite_5layer(&bank, &s1, &s2),
        Err(LinearizeError::ShapeMismatch { .. })
    ));
}
