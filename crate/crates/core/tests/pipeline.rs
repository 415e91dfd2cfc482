use std::sync::Arc;


use meshattn::decimation::{build_hierarchy, build_hierarchy_with_counts};
use meshattn::mesh::{generate_synthetic_dataset, icosahedron, SynthConfig};
use meshattn::model::{AggregationKind, Autoencoder, ModelConfig};
use meshattn::pipeline::{
    ablation_sweep, compare_aggregators, evaluate, model_gradient_suite, train, write_results_csv, ExperimentConfig,
    Method, TrainConfig,
};
use meshattn::{Dataset64, Hierarchy64};

fn small_dataset(n: usize) -> Dataset64 {
    let cfg = SynthConfig { n_samples: n, subdivisions: 1, harmonic_order: 2, amplitude: 0.15, seed: 11 };
    let mut ds = generate_synthetic_dataset(&cfg).unwrap();
    ds.normalize().unwrap();
    ds
}

fn hierarchy(ds: &Dataset64) -> Arc<Hierarchy64> {
    Arc::new(build_hierarchy(ds.template(), 2, 2).unwrap())
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, lr: 8e-3, batch_size: 4, ..TrainConfig::default() }
}

#[test]
fn autoencoder_gradients_match_finite_differences() {
    for case in model_gradient_suite(3, 1e-4).unwrap() {
        assert!(case.report.passed, "{}: {:?}", case.name, case.report);
    }
}

#[test]
fn training_is_bitwise_reproducible() {
    let ds = small_dataset(12);
    let h = hierarchy(&ds);
    let cfg = ModelConfig::simple(2).with_aggregation(AggregationKind::Attention);
    let run = || {
        let mut m = Autoencoder::build(cfg.clone(), Arc::clone(&h)).unwrap();
        let r = train(&mut m, &ds, &quick_train(3), None).unwrap();
        (r.history, m.params().entries().iter().map(|e| e.value.clone()).collect::<Vec<_>>())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), h2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(p1, p2);
}

#[test]
fn overfits_few_samples_on_twelve_vertices() {
    let cfg = SynthConfig { n_samples: 10, subdivisions: 0, harmonic_order: 1, amplitude: 0.2, seed: 1 };
    let mut ds: Dataset64 = generate_synthetic_dataset(&cfg).unwrap();
    ds.normalize().unwrap();
    assert_eq!(ds.split().train.len(), 8);
    let h = Arc::new(build_hierarchy_with_counts(ds.template(), &[6, 4]).unwrap());
    let mut m = Autoencoder::build(ModelConfig::simple(2), h).unwrap();
    let tc = TrainConfig { epochs: 200, lr: 2e-3, batch_size: 1, ..TrainConfig::default() };
    let r = train(&mut m, &ds, &tc, None).unwrap();
    assert!(r.final_loss < 0.1 * r.initial_loss, "{} -> {}", r.initial_loss, r.final_loss);
}

#[test]
fn non_matching_topology_rejected() {
    let ds = small_dataset(10);
    let h = Arc::new(build_hierarchy_with_counts(&icosahedron::<f64>(), &[6, 4]).unwrap());
    let mut m = Autoencoder::build(ModelConfig::simple(2), h).unwrap();
    assert!(train(&mut m, &ds, &quick_train(1), None).is_err());
}

#[test]
fn metrics_match_per_sample_recomputation() {
    let ds = small_dataset(20);
    let h = hierarchy(&ds);
    let m = Autoencoder::build(ModelConfig::simple(2), h).unwrap();
    let metrics = evaluate(&m, &ds, "test", 1.0).unwrap();
    let mut errs = Vec::new();
    for &i in &ds.split().test {
        let y = m.forward(&ds.normalized_sample(i).unwrap()).unwrap();
        let rec = ds.denormalize(&y).unwrap();
        for (p, q) in rec.iter().zip(&ds.samples()[i]) {
            errs.push(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt());
        }
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    errs.sort_by(f64::total_cmp);
    assert_eq!(metrics.count, errs.len());
    assert!((metrics.mean - mean).abs() < 1e-12);
    assert_eq!(metrics.max, *errs.last().unwrap());
    assert!(metrics.mean >= 0.0);
    assert!(metrics.curve.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].0 <= w[1].0));
}

#[test]
fn checkpoints_written_at_cadence() {
    let ds = small_dataset(10);
    let h = hierarchy(&ds);
    let mut m = Autoencoder::build(ModelConfig::simple(2), h).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { checkpoint_every: 2, ..quick_train(4) };
    train(&mut m, &ds, &cfg, Some(dir.path())).unwrap();
    assert!(dir.path().join("epoch_0002").is_dir());
    assert!(dir.path().join("epoch_0004").is_dir());
    assert!(!dir.path().join("epoch_0003").exists());
    let back = Autoencoder::<f64>::load(&dir.path().join("epoch_0004")).unwrap();
    let x = ds.normalized_sample(0).unwrap();
    assert_eq!(back.forward(&x).unwrap(), m.forward(&x).unwrap());
}

#[test]
fn comparison_and_sweep_tables() {
    let ds = small_dataset(10);
    let h = hierarchy(&ds);
    let base = ExperimentConfig { model: ModelConfig::simple(2), train: quick_train(1), ..ExperimentConfig::default() };
    let res = compare_aggregators(&ds, &h, &base, &Method::ALL, &[0, 1]).unwrap();
    assert_eq!(res.len(), 12);
    let qem = res.iter().find(|r| r.label == "qem").unwrap().inference_params;
    let att = res.iter().find(|r| r.label == "attention").unwrap().inference_params;
    assert_eq!(qem, att);
    let mut buf = Vec::new();
    write_results_csv(&res, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 13);

    let sweep = ablation_sweep(&ds, &h, &base, "k_down", &["1".into(), "3".into()]).unwrap();
    assert_eq!(sweep[1].label, "k_down=3");
    assert!(ablation_sweep(&ds, &h, &base, "depth", &["1".into()]).is_err());
}
