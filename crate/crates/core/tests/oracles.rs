//! Metrics and losses against independent brute-force implementations.

use logitrange_core::adapters::{ce_loss_and_grad, train_adapter, LossMode, Method, TrainConfig};
use logitrange_core::dataset::Dataset;
use logitrange_core::math::softmax;
use logitrange_core::metrics::ece;
use logitrange_core::zeroshot::{zs_logits, zs_range_table, PrototypeSet};
use logitrange_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bin membership by explicit interval tests rather than index arithmetic.
fn brute_force_ece(probs: &Matrix, labels: &[usize], m: usize) -> f64 {
    let n = labels.len() as f64;
    let mut total = 0.0;
    for b in 0..m {
        let lo = b as f64 / m as f64;
        let hi = (b + 1) as f64 / m as f64;
        let mut gap = 0.0;
        for (row, &y) in probs.row_iter().zip(labels) {
            let mut k = 0;
            for j in 1..row.len() {
                if row[j] > row[k] {
                    k = j;
                }
            }
            let c = row[k];
            let inside = (c > lo && c <= hi) || (b == 0 && c == 0.0);
            if inside {
                gap += if k == y { 1.0 } else { 0.0 } - c;
            }
        }
        total += gap.abs() / n;
    }
    total
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Matrix, Vec<usize>, usize) {
    let n = rng.random_range(1..=200);
    let k = rng.random_range(2..=10);
    let m = if rng.random_bool(0.5) { 10 } else { 15 };
    let spread = rng.random_range(0.1..8.0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let l: Vec<f64> = (0..k).map(|_| rng.random_range(-spread..spread)).collect();
            softmax(&l).unwrap()
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    (Matrix::from_rows(&rows).unwrap(), labels, m)
}

#[test]
fn ece_matches_brute_force_binning() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let (probs, labels, m) = random_instance(&mut rng);
        let (fast, bins) = ece(&probs, &labels, m).unwrap();
        let slow = brute_force_ece(&probs, &labels, m);
        assert!(
            (fast - slow).abs() <= 1e-12,
            "case {case}: {fast} vs {slow}"
        );
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), labels.len());
    }
}

#[test]
fn fully_confident_ece_is_error_rate() {
    for (n, correct) in [(10, 7), (4, 4), (5, 0), (200, 131)] {
        let rows: Vec<[f64; 3]> = (0..n).map(|_| [1.0, 0.0, 0.0]).collect();
        let labels: Vec<usize> = (0..n).map(|i| if i < correct { 0 } else { 2 }).collect();
        let (e, _) = ece(&Matrix::from_rows(&rows).unwrap(), &labels, 15).unwrap();
        let a = correct as f64 / n as f64;
        assert_eq!(e, 1.0 - a, "n {n} correct {correct}");
    }
}

#[test]
fn ece_ignores_sample_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (probs, labels, m) = random_instance(&mut rng);
    let order: Vec<usize> = (0..labels.len()).rev().collect();
    let shuffled = probs.select_rows(&order);
    let relabelled: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let a = ece(&probs, &labels, m).unwrap().0;
    let b = ece(&shuffled, &relabelled, m).unwrap().0;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn range_table_matches_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..7).map(|_| rng.random_range(-30.0..30.0)).collect())
        .collect();
    let table = zs_range_table(&Matrix::from_rows(&rows).unwrap());
    for (row, r) in rows.iter().zip(&table) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert_eq!((r.lo, r.hi), (lo, hi));
    }
}

#[test]
fn ce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let data: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
    let logits = Matrix::new(3, 4, data).unwrap();
    let labels = [1, 3, 0];
    let (_, grad) = ce_loss_and_grad(&logits, &labels).unwrap();
    let h = 1e-6;
    for i in 0..12 {
        let mut plus = logits.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = logits.clone();
        minus.as_mut_slice()[i] -= h;
        let fd = (ce_loss_and_grad(&plus, &labels).unwrap().0
            - ce_loss_and_grad(&minus, &labels).unwrap().0)
            / (2.0 * h);
        assert!((fd - grad.as_slice()[i]).abs() < 1e-5);
    }
}

/// Plain gradient-descent logistic regression on `w·z` (no bias), the
/// textbook binary form.
fn logistic_regression(features: &Matrix, labels: &[usize]) -> Vec<f64> {
    let mut w = vec![0.0; features.cols()];
    for _ in 0..5000 {
        let mut g = vec![0.0; w.len()];
        for (z, &y) in features.row_iter().zip(labels) {
            let s: f64 = w.iter().zip(z).map(|(a, b)| a * b).sum();
            let p = 1.0 / (1.0 + (-s).exp());
            let t = if y == 1 { 1.0 } else { 0.0 };
            g.iter_mut().zip(z).for_each(|(gi, zi)| *gi += (p - t) * zi);
        }
        w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= 0.5 * gi);
    }
    w
}

#[test]
fn linear_probe_separates_what_logistic_regression_separates() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let y = i % 2;
        // two clusters either side of the line x = y, margin ~0.2 rad
        let centre: f64 = if y == 0 { 0.5 } else { 1.1 };
        let a = centre + rng.random_range(-0.15..0.15);
        rows.push([a.cos(), a.sin()]);
        labels.push(y);
    }
    let features = Matrix::from_rows(&rows).unwrap();
    let support = Dataset::new(features.clone(), labels.clone(), 2).unwrap();
    // prototypes deliberately rotated so the zero-shot rule misclassifies
    let protos = PrototypeSet::new(
        Matrix::from_rows(&[[1.2f64.cos(), 1.2f64.sin()], [1.6f64.cos(), 1.6f64.sin()]]).unwrap(),
        0.1,
    )
    .unwrap();
    let zs = zs_logits(&features, &protos).unwrap();
    let train_acc = |logits: &Matrix| {
        logits
            .row_iter()
            .zip(&labels)
            .filter(|(l, &y)| (l[1] > l[0]) == (y == 1))
            .count() as f64
            / labels.len() as f64
    };
    assert!(train_acc(&zs) < 1.0);

    let w = logistic_regression(&features, &labels);
    let lr_acc = features
        .row_iter()
        .zip(&labels)
        .filter(|(z, &y)| ((w[0] * z[0] + w[1] * z[1]) > 0.0) == (y == 1))
        .count();
    assert_eq!(
        lr_acc,
        labels.len(),
        "reference fit must separate the toy set"
    );

    let ranges = zs_range_table(&zs);
    let config = TrainConfig {
        loss_mode: LossMode::Plain,
        ..TrainConfig::default()
    };
    let (params, _) =
        train_adapter(Method::LinearProbe, &support, &protos, &ranges, &config).unwrap();
    let logits = params.logits(&features, &protos).unwrap();
    assert_eq!(train_acc(&logits), 1.0);
}
