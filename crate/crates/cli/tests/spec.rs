use std::fs;

use logitrange::params::{load_adapter, save_adapter, SavedAdapter};
use logitrange::spec::{DataSource, PrototypeSource, RunSpec};
use logitrange::Error;
use logitrange_core::adapters::{train_adapter, Method, TrainConfig};
use logitrange_core::pipeline::{Calib, ExpMethod};
use logitrange_core::synth::{synth_generate, SynthConfig};
use logitrange_core::zeroshot::{zs_logits, zs_range_table};

fn write_spec(body: &str) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.spec");
    fs::write(&path, body).unwrap();
    (dir, path)
}

#[test]
fn synth_spec_with_overrides() {
    let (_d, path) = write_spec(
        "# comment\nmethod = lp\ncalib = sals\nrange_factor = 0.5\nseed = 4\nsynth.sigma_tgt = 0.5\n",
    );
    let spec = RunSpec::load(&path, &["synth.classes=5".into(), "train.epochs=7".into()]).unwrap();
    assert_eq!(
        spec.experiment.method,
        ExpMethod::Adapter(Method::LinearProbe)
    );
    assert_eq!(spec.experiment.calib, Calib::Sals);
    assert_eq!(spec.experiment.range_factor, 0.5);
    assert_eq!(spec.experiment.train.epochs, 7);
    assert_eq!(spec.experiment.train.seed, 4);
    let DataSource::Synth(cfg) = spec.data else {
        panic!("expected synth data")
    };
    assert_eq!(cfg.sigma_tgt, 0.5);
    assert_eq!(cfg.class_count, 5);
    assert_eq!(cfg.seed, 4);
}

#[test]
fn spec_errors() {
    for (body, what) in [
        ("calib = sals\n", "missing method"),
        ("method = lp\ntypo = 1\n", "unknown key"),
        ("method = lp\nmethod = tta\n", "duplicate key"),
        (
            "method = lp\ncalib = penalty\nrange_factor = 0.5\n",
            "factor without sals",
        ),
        ("method = zeroshot\ncalib = zs-norm\n", "zeroshot training"),
        ("method = lp\ntrain.lr = fast\n", "unparsable value"),
        ("method = lp\ndata = s3\n", "unknown source"),
        (
            "method = lp\ndata = files\nclasses = 3\ndomains = a\n",
            "no prototypes",
        ),
        ("method = nope\n", "unknown method"),
        ("method lp\n", "no equals sign"),
    ] {
        let (_d, path) = write_spec(body);
        assert!(RunSpec::load(&path, &[]).is_err(), "{what}");
    }
}

#[test]
fn file_spec_paths_are_relative_to_spec() {
    let (dir, path) = write_spec(
        "method = tta\ndata = files\nclasses = 3\nprompts = p/manifest.txt\nsupport.augmentations = 4\ndomains = a, b\ndomain.a.features = a.vlf\ndomain.a.labels = a.vll\ndomain.a.views = av\ndomain.b.features = b.vlf\ndomain.b.labels = b.vll\n",
    );
    let spec = RunSpec::load(&path, &[]).unwrap();
    let DataSource::Files(f) = spec.data else {
        panic!("expected files")
    };
    assert_eq!(
        f.prototypes,
        PrototypeSource::Prompts(dir.path().join("p/manifest.txt"))
    );
    assert_eq!(f.support_group, 4);
    assert_eq!(f.domains.len(), 2);
    assert_eq!(f.domains[0].views, Some(dir.path().join("av")));
    assert_eq!(f.domains[1].views, None);
    // domain b has no views, which tta needs at load time
    assert!(matches!(
        f.load(true),
        Err(Error::Io { .. } | Error::Spec(_))
    ));
}

#[test]
fn saved_adapters_round_trip() {
    let cfg = SynthConfig {
        class_count: 4,
        dim: 16,
        shots: 2,
        augmentations: 3,
        test_n: 20,
        ..SynthConfig::default()
    };
    let b = synth_generate(&cfg).unwrap();
    let ranges = zs_range_table(&zs_logits(b.support.features(), &b.prototypes).unwrap());
    let dir = tempfile::tempdir().unwrap();
    for method in Method::ALL {
        let train = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let (params, _) =
            train_adapter(method, &b.support, &b.prototypes, &ranges, &train).unwrap();
        let saved = SavedAdapter {
            params,
            prototypes: b.prototypes.clone(),
            calib: Calib::Penalty,
        };
        let out = dir.path().join(method.name());
        save_adapter(&saved, &out).unwrap();
        let back = load_adapter(&out).unwrap();
        assert_eq!(back.calib, Calib::Penalty);
        assert_eq!(back.params.method(), method);
        let a = saved
            .params
            .logits(b.target.features(), &saved.prototypes)
            .unwrap();
        let c = back
            .params
            .logits(b.target.features(), &back.prototypes)
            .unwrap();
        // stored as f32
        for (x, y) in a.as_slice().iter().zip(c.as_slice()) {
            assert!(
                (x - y).abs() < 1e-3 * x.abs().max(1.0),
                "{method}: {x} vs {y}"
            );
        }
    }
}

#[test]
fn tampered_adapter_is_rejected() {
    let cfg = SynthConfig {
        class_count: 3,
        dim: 8,
        shots: 1,
        augmentations: 1,
        test_n: 6,
        ..SynthConfig::default()
    };
    let b = synth_generate(&cfg).unwrap();
    let ranges = zs_range_table(&zs_logits(b.support.features(), &b.prototypes).unwrap());
    let train = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let (params, _) = train_adapter(
        Method::LinearProbe,
        &b.support,
        &b.prototypes,
        &ranges,
        &train,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let saved = SavedAdapter {
        params,
        prototypes: b.prototypes.clone(),
        calib: Calib::None,
    };
    save_adapter(&saved, dir.path()).unwrap();
    let manifest = dir.path().join("manifest.txt");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains("method=lp"), "{text}");
    fs::write(&manifest, text.replace("method=lp", "method=taskres")).unwrap();
    assert!(load_adapter(dir.path()).is_err());
    fs::write(&manifest, text).unwrap();
    fs::remove_file(dir.path().join("weights.vlf")).unwrap();
    assert!(load_adapter(dir.path()).is_err());
}
