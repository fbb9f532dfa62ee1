//! Test-time adaptation properties.

use logitrange_core::math::{argmax_index, softmax};
use logitrange_core::synth::{synth_generate, synth_views, SynthConfig};
use logitrange_core::tta::{tta_adapt, tta_predict, TtaCalib, TtaConfig, ViewBatch};
use logitrange_core::zeroshot::{zs_logits, zs_range_table, PrototypeSet};
use logitrange_core::Matrix;

fn setup(n: usize) -> (PrototypeSet, Vec<ViewBatch>) {
    let cfg = SynthConfig {
        test_n: n,
        ..SynthConfig::default()
    };
    let b = synth_generate(&cfg).unwrap();
    let views = synth_views(&cfg, &b.target, 1).unwrap();
    (b.prototypes, views)
}

fn view_ranges(
    batch: &ViewBatch,
    protos: &PrototypeSet,
) -> Vec<logitrange_core::calibration::RangePair> {
    zs_range_table(&zs_logits(batch.views(), protos).unwrap())
}

#[test]
fn one_step_never_raises_entropy() {
    let (protos, views) = setup(100);
    for calib in [TtaCalib::None, TtaCalib::Sals] {
        for (i, batch) in views.iter().enumerate() {
            let cfg = TtaConfig {
                seed: i as u64,
                calib,
                ..TtaConfig::default()
            };
            let out = tta_adapt(batch, &protos, &view_ranges(batch, &protos), &cfg).unwrap();
            assert_eq!(out.objective.len(), 2);
            assert!(
                out.objective[1] <= out.objective[0],
                "batch {i}: {:?}",
                out.objective
            );
        }
    }
}

#[test]
fn vanishing_step_reproduces_zero_shot() {
    let (protos, views) = setup(30);
    let cfg = TtaConfig {
        learning_rate: 1e-12,
        ..TtaConfig::default()
    };
    for batch in &views {
        let ranges = view_ranges(batch, &protos);
        let out = tta_adapt(batch, &protos, &ranges, &cfg).unwrap();
        let (probs, _) = tta_predict(batch, &protos, &out.residual, cfg.calib, ranges[0]).unwrap();
        let original = Matrix::new(1, protos.dim(), batch.original().to_vec()).unwrap();
        let zs = softmax(zs_logits(&original, &protos).unwrap().row(0)).unwrap();
        for (p, q) in probs.iter().zip(&zs) {
            assert!((p - q).abs() <= 1e-6);
        }
    }
}

#[test]
fn confident_views_leave_prototypes_alone() {
    let protos = PrototypeSet::new(
        Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap(),
        0.001,
    )
    .unwrap();
    let batch = ViewBatch::new(Matrix::from_rows(&[[1.0, 0.0, 0.0]; 8]).unwrap()).unwrap();
    let out = tta_adapt(
        &batch,
        &protos,
        &view_ranges(&batch, &protos),
        &TtaConfig::default(),
    )
    .unwrap();
    assert!(out.residual.as_slice().iter().all(|r| r.abs() < 1e-9));
}

#[test]
fn sals_keeps_the_adapted_class() {
    let (protos, views) = setup(60);
    for calib in [TtaCalib::None, TtaCalib::Penalty, TtaCalib::ZsNorm] {
        let cfg = TtaConfig {
            calib,
            ..TtaConfig::default()
        };
        for batch in &views {
            let ranges = view_ranges(batch, &protos);
            let out = tta_adapt(batch, &protos, &ranges, &cfg).unwrap();
            let (_, raw) =
                tta_predict(batch, &protos, &out.residual, TtaCalib::None, ranges[0]).unwrap();
            let (_, scaled) =
                tta_predict(batch, &protos, &out.residual, TtaCalib::Sals, ranges[0]).unwrap();
            assert_eq!(argmax_index(&raw), argmax_index(&scaled));
        }
    }
}

#[test]
fn selection_size_follows_fraction() {
    let (protos, views) = setup(5);
    for (rho, expected) in [(0.1, 7), (0.5, 32), (1.0, 64), (1e-6, 1)] {
        let cfg = TtaConfig {
            select_fraction: rho,
            ..TtaConfig::default()
        };
        let batch = &views[0];
        let out = tta_adapt(batch, &protos, &view_ranges(batch, &protos), &cfg).unwrap();
        assert_eq!(out.selected.len(), expected, "rho {rho}");
    }
}
