mod common;

use pipnet::networks::{HeadKind, Part};
use pipnet::tooling::{
    config_hash, count_flops, init_model, load_checkpoint, save_checkpoint, time_inference, Benchmark, RunConfig,
    RunManifest,
};
use pipnet::training::ModelSpec;

fn tiny() -> (RunConfig, Benchmark) {
    let cfg = common::small_config(8, 1, &[4, 8, 8]);
    let bench = Benchmark::build(&cfg).unwrap();
    (cfg, bench)
}

#[test]
fn checkpoints_roundtrip_bit_exactly() {
    let (cfg, bench) = tiny();
    let dir = tempfile::tempdir().unwrap();
    for kind in HeadKind::ALL {
        let spec = ModelSpec { kind, aux: kind.is_pip(), ..cfg.model.clone() };
        let (m, _) = pipnet::tooling::train_model(&cfg, &spec, &bench.train).unwrap();
        let path = dir.path().join(format!("{}.json", kind.name()));
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.spec, m.spec);
        assert_eq!(back.table, m.table);
        assert_eq!(back.mean, m.mean);
        for (a, b) in back.net.params().iter().zip(m.net.params()) {
            let bits = |t: &pipnet::tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(a.shape(), b.shape());
            assert_eq!(bits(a), bits(b));
        }
        let imgs: Vec<_> = bench.test.iter().map(|s| &s.image).collect();
        assert_eq!(back.predict(&imgs).unwrap(), m.predict(&imgs).unwrap());
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (cfg, bench) = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&init_model(&cfg, &cfg.model, &bench.train).unwrap(), &path).unwrap();
    let bin = path.with_extension("bin");
    let mut blob = std::fs::read(&bin).unwrap();
    blob.truncate(blob.len() - 4);
    std::fs::write(&bin, blob).unwrap();
    assert!(load_checkpoint(&path).is_err());
    assert!(load_checkpoint(&dir.path().join("missing.json")).is_err());
}

#[test]
fn flops_add_up_and_ignore_parameter_values() {
    let (cfg, bench) = tiny();
    let mut m = init_model(&cfg, &ModelSpec { aux: true, ..cfg.model.clone() }, &bench.train).unwrap();
    let r = count_flops(&m.net);
    assert_eq!(r.total, r.layers.iter().map(|l| l.macs).sum::<u64>());
    assert_eq!(r.total, r.backbone + r.head + r.aux);
    for part in [Part::Backbone, Part::Head, Part::Aux] {
        assert!(r.layers.iter().any(|l| l.part == part && l.macs > 0));
    }
    for i in 0..m.net.params().len() {
        let n = m.net.params()[i].len();
        m.net.set_param(i, vec![0.5; n]).unwrap();
    }
    assert_eq!(count_flops(&m.net), r);
}

#[test]
fn pip_head_is_cheaper_than_heatmap_head() {
    let cfg = RunConfig::default();
    let bench = Benchmark::build(&RunConfig { data: pipnet::tooling::DataConfig { train: 4, ..cfg.data.clone() }, ..cfg.clone() })
        .unwrap();
    let head = |kind| count_flops(&init_model(&cfg, &ModelSpec { kind, ..cfg.model.clone() }, &bench.train).unwrap().net);
    let (pip, map) = (head(HeadKind::Pip), head(HeadKind::Map));
    assert_eq!(pip.backbone, map.backbone);
    assert!(pip.head < map.head, "PIP {} vs MAP {}", pip.head, map.head);
    assert!(head(HeadKind::PipNrm).head < map.head);
}

#[test]
fn larger_inputs_take_longer() {
    let (cfg, bench) = tiny();
    let m = init_model(&cfg, &cfg.model, &bench.train).unwrap();
    let one = time_inference(&m, 0, 1).unwrap();
    assert_eq!(one.runs, 1);
    assert_eq!(one.median_ms, one.mean_ms);
    assert!(time_inference(&m, 0, 0).is_err());

    let mut big = cfg.clone();
    big.model.backbone.input_h = 128;
    big.model.backbone.input_w = 128;
    big.data.crop.out_size = 128;
    let big_bench = Benchmark::build(&big).unwrap();
    let mb = init_model(&big, &big.model, &big_bench.train).unwrap();
    let (small_t, big_t) = (time_inference(&m, 3, 15).unwrap(), time_inference(&mb, 3, 15).unwrap());
    assert!(big_t.median_ms > small_t.median_ms, "{} vs {}", big_t.median_ms, small_t.median_ms);
    assert_eq!(big_t.environment.threads, 1);
}

#[test]
fn config_validation() {
    assert!(RunConfig::from_json("{}").is_ok());
    assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    assert!(RunConfig::from_json(r#"{"schedule": {"epochs": 10, "decay_epochs": [12]}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"model": {"num_neighbors": 16}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"curriculum": {"tasks": ["T3", "T1"]}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"data": {"crop": {"out_size": 32}}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"augment": {"flip_p": 1.5}}"#).is_err());
    let cfg = RunConfig::from_json(r#"{"seed": 9}"#).unwrap();
    assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn manifest_pins_config_and_seed() {
    let cfg = RunConfig { seed: 3, ..RunConfig::default() };
    let m = RunManifest::new("train", &cfg, vec!["train.csv".into()]);
    assert_eq!(m.config_sha256, config_hash(&cfg));
    assert_eq!(m.config_sha256.len(), 64);
    assert_ne!(config_hash(&cfg), config_hash(&RunConfig::default()));
    let dir = tempfile::tempdir().unwrap();
    m.write(dir.path()).unwrap();
    let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(back, m);
}
