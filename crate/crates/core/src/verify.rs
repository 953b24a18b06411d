//! Randomized equivalence checks between direct network evaluation and the
//! composite-weight form.

use std::fmt;

use rand::Rng as _;

use crate::linearize::{
    build_composite, build_composite_5layer, forward_oracle, forward_oracle_5layer, Activation, ConvPoolSpec,
    FiveLayerBank, KernelBank, Result,
};
use crate::random::{normal_tensor, rng, Rng};

/// Random valid geometry of the given order with every input extent at most
/// `max_dim`. With `overlap`, a shared pool stride smaller than some pool sizes may be drawn.
pub fn random_spec(r: &mut Rng, order: usize, max_dim: usize, overlap: bool) -> ConvPoolSpec {
    loop {
        let sc = r.random_range(1..=2);
        let sp = overlap.then(|| r.random_range(1..=2));
        let mut d = Vec::with_capacity(order);
        let mut l = Vec::with_capacity(order);
        let mut q = Vec::with_capacity(order);
        for _ in 0..order {
            let (lj, qj, pj) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3));
            let m = match sp {
                Some(s) => (pj - 1) * s + qj,
                None => pj * qj,
            };
            d.push((m - 1) * sc + lj);
            l.push(lj);
            q.push(qj);
        }
        if d.iter().any(|&x| x > max_dim) {
            continue;
        }
        let spec = match sp {
            Some(s) => ConvPoolSpec::with_pool_stride(&d, &l, sc, &q, s),
            None => ConvPoolSpec::new(&d, &l, sc, &q),
        };
        if let Ok(s) = spec {
            return s;
        }
    }
}

/// Random non-overlapping geometry whose pooled output has shape `pooled`.
pub fn random_spec_into(r: &mut Rng, pooled: &[usize], max_dim: usize) -> Option<ConvPoolSpec> {
    for _ in 0..200 {
        let sc = r.random_range(1..=2);
        let l: Vec<usize> = pooled.iter().map(|_| r.random_range(1..=3)).collect();
        let q: Vec<usize> = pooled.iter().map(|_| r.random_range(1..=2)).collect();
        let d: Vec<usize> = (0..pooled.len()).map(|j| (pooled[j] * q[j] - 1) * sc + l[j]).collect();
        if d.iter().any(|&x| x > max_dim) {
            continue;
        }
        if let Ok(s) = ConvPoolSpec::new(&d, &l, sc, &q) {
            return Some(s);
        }
    }
    None
}

/// `k` kernels and fc weights with standard normal entries.
pub fn random_bank(r: &mut Rng, spec: &ConvPoolSpec, k: usize) -> KernelBank {
    let a = (0..k).map(|_| normal_tensor(r, spec.kernel_dims(), 1.0)).collect();
    let b = (0..k).map(|_| normal_tensor(r, &spec.pooled_dims(), 1.0)).collect();
    KernelBank::new(a, b).expect("shapes match")
}

/// Two chained geometries (the second consumes the first's pooled output)
/// with a random five-layer bank.
pub fn random_five_layer(r: &mut Rng, order: usize, max_dim: usize) -> (ConvPoolSpec, ConvPoolSpec, FiveLayerBank) {
    loop {
        let s2 = random_spec(r, order, max_dim.min(8), false);
        let Some(s1) = random_spec_into(r, s2.input_dims(), max_dim) else {
            continue;
        };
        let (k1, k2) = (r.random_range(1..=3), r.random_range(1..=3));
        let first = (0..k1).map(|_| normal_tensor(r, s1.kernel_dims(), 1.0)).collect();
        let second = (0..k2).map(|_| normal_tensor(r, s2.kernel_dims(), 1.0)).collect();
        let fc = (0..k1)
            .map(|_| (0..k2).map(|_| normal_tensor(r, &s2.pooled_dims(), 1.0)).collect())
            .collect();
        return (s1, s2, FiveLayerBank { first, second, fc });
    }
}

/// `|oracle − linear| / (1 + |oracle|)`.
pub fn deviation(oracle: f64, linear: f64) -> f64 {
    (oracle - linear).abs() / (1.0 + oracle.abs())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EquivalenceReport {
    pub checks: usize,
    pub max_deviation: f64,
    /// Description of the first instance above the tolerance.
    pub first_failure: Option<String>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }

    fn record(&mut self, dev: f64, tol: f64, describe: impl FnOnce() -> String) {
        self.checks += 1;
        self.max_deviation = self.max_deviation.max(dev);
        if !(dev <= tol) && self.first_failure.is_none() {
            self.first_failure = Some(format!("deviation {dev:e}: {}", describe()));
        }
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} checks, max deviation {:.3e}", self.checks, self.max_deviation)
    }
}

fn describe(spec: &ConvPoolSpec) -> String {
    format!(
        "input {:?} kernel {:?} conv stride {} pool {:?} pool stride {:?}",
        spec.input_dims(),
        spec.kernel_dims(),
        spec.conv_stride(),
        spec.pool_sizes(),
        spec.pool_stride()
    )
}

/// Compares `forward_oracle` with `<x, W_X>` on `trials` random three-layer
/// networks (order up to `max_order`, extents up to `max_dim`, 1 to 4 kernels).
pub fn verify_three_layer(trials: usize, max_order: usize, max_dim: usize, seed: u64, tol: f64) -> Result<EquivalenceReport> {
    let mut r = rng(seed);
    let mut report = EquivalenceReport::default();
    for t in 0..trials {
        let order = r.random_range(1..=max_order.max(1));
        let spec = random_spec(&mut r, order, max_dim, t % 3 == 2);
        let k = r.random_range(1..=4);
        let bank = random_bank(&mut r, &spec, k);
        let x = normal_tensor(&mut r, spec.input_dims(), 1.0);
        let oracle = forward_oracle(&x, &bank, &spec, Activation::Linear)?;
        let linear = build_composite(&bank, &spec)?.predict(&x)?;
        report.record(deviation(oracle, linear), tol, || format!("{} with {k} kernels", describe(&spec)));
    }
    Ok(report)
}

/// The same comparison for conv → pool → conv → pool → fully connected.
pub fn verify_five_layer(trials: usize, max_order: usize, max_dim: usize, seed: u64, tol: f64) -> Result<EquivalenceReport> {
    let mut r = rng(seed);
    let mut report = EquivalenceReport::default();
    for _ in 0..trials {
        let order = r.random_range(1..=max_order.max(1));
        let (s1, s2, bank) = random_five_layer(&mut r, order, max_dim.max(4));
        let x = normal_tensor(&mut r, s1.input_dims(), 1.0);
        let oracle = forward_oracle_5layer(&x, &bank, &s1, &s2, Activation::Linear)?;
        let linear = build_composite_5layer(&bank, &s1, &s2)?.predict(&x)?;
        report.record(deviation(oracle, linear), tol, || {
            format!("stage 1 {}; stage 2 {}", describe(&s1), describe(&s2))
        });
    }
    Ok(report)
}
