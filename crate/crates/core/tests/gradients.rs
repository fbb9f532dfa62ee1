//! Analytic adapter gradients against central finite differences.

use logitrange_core::adapters::{
    loss_and_param_grads, AdapterHyper, AdapterParams, LossMode, Method,
};
use logitrange_core::calibration::RangePair;
use logitrange_core::dataset::Dataset;
use logitrange_core::zeroshot::{zs_logits, zs_range_table, PrototypeSet};
use logitrange_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    support: Dataset,
    protos: PrototypeSet,
    ranges: Vec<RangePair>,
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, d) = (6, 3, 8);
    let features = unit_rows(&mut rng, n, d);
    let labels = (0..n).map(|i| i % k).collect();
    let support = Dataset::new(features, labels, k).unwrap();
    // temperature 0.5 keeps the finite-difference curvature error small
    let protos = PrototypeSet::new(unit_rows(&mut rng, k, d), 0.5).unwrap();
    // narrow the zero-shot ranges so the penalty is active
    let ranges = zs_range_table(&zs_logits(support.features(), &protos).unwrap())
        .into_iter()
        .map(|r| RangePair {
            lo: r.lo + 0.3 * (r.hi - r.lo),
            hi: r.hi - 0.3 * (r.hi - r.lo),
        })
        .collect();
    Instance {
        support,
        protos,
        ranges,
    }
}

/// Moves parameters off zero-shot initialization so every family has
/// non-trivial curvature.
fn perturbed(method: Method, inst: &Instance, seed: u64) -> AdapterParams {
    let mut params = AdapterParams::init(
        method,
        &inst.support,
        &inst.protos,
        &AdapterHyper::default(),
        seed,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for buf in params.trainable_mut() {
        buf.iter_mut()
            .for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    params
}

fn check(method: Method, mode: LossMode, seed: u64) {
    let inst = instance(seed);
    let params = perturbed(method, &inst, seed);
    let (_, grads) = loss_and_param_grads(
        &params,
        &inst.support,
        &inst.protos,
        &inst.ranges,
        mode,
        10.0,
    )
    .unwrap();
    let h = 1e-6;
    let eval = |p: &AdapterParams| {
        loss_and_param_grads(p, &inst.support, &inst.protos, &inst.ranges, mode, 10.0)
            .unwrap()
            .0
    };
    let total: usize = grads.iter().map(Vec::len).sum();
    let mut skipped = 0;
    for (b, buffer) in grads.iter().enumerate() {
        for (j, &an) in buffer.iter().enumerate() {
            let mut plus = params.clone();
            plus.trainable_mut()[b][j] += h;
            let mut minus = params.clone();
            minus.trainable_mut()[b][j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            // a step can cross a ReLU or penalty kink; those coordinates
            // show up as O(1) jumps and are skipped
            if (fd - an).abs() > 0.1 && mode != LossMode::Plain {
                skipped += 1;
                continue;
            }
            assert!(
                err < 1e-4,
                "{method} {mode} seed {seed} buffer {b}[{j}]: fd {fd} analytic {an}"
            );
        }
    }
    assert!(
        skipped * 20 <= total,
        "{skipped} of {total} coordinates at kinks"
    );
}

#[test]
fn linear_probe_gradients() {
    for mode in [LossMode::Plain, LossMode::ZsNorm, LossMode::Penalty] {
        for seed in 0..3 {
            check(Method::LinearProbe, mode, seed);
        }
    }
}

#[test]
fn clip_adapter_gradients() {
    for mode in [LossMode::Plain, LossMode::ZsNorm, LossMode::Penalty] {
        for seed in 0..3 {
            check(Method::ClipAdapter, mode, seed);
        }
    }
}

#[test]
fn taskres_gradients() {
    for mode in [LossMode::Plain, LossMode::ZsNorm, LossMode::Penalty] {
        for seed in 0..3 {
            check(Method::TaskRes, mode, seed);
        }
    }
}

#[test]
fn tip_adapter_gradients() {
    for mode in [LossMode::Plain, LossMode::ZsNorm, LossMode::Penalty] {
        for seed in 0..3 {
            check(Method::TipAdapter, mode, seed);
        }
    }
}
