use ctxgcn::experiment::{make_tail, run_synth, write_dataset};
use ctxgcn::head::{GraphHeadConfig, Merge, ModelConfig};
use ctxgcn::io::{decode_checkpoint, decode_config, decode_fmap, encode_checkpoint, encode_fmap, load_dataset, Checkpoint, DataSection};
use ctxgcn::synth::{synth_generate, SynthSpec};
use ctxgcn::training::init_params;
use proptest::prelude::*;

fn spec() -> SynthSpec {
    SynthSpec {
        train_per_class: 1,
        test_per_class: 1,
        ..SynthSpec::default()
    }
}

#[test]
fn written_dataset_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_generate(&spec(), 8).unwrap();
    write_dataset(&data.train, dir.path()).unwrap();
    let loaded = load_dataset(&dir.path().join("annotations.json")).unwrap();
    assert_eq!(loaded.videos.len(), data.train.videos.len());
    for (a, b) in loaded.videos.iter().zip(&data.train.videos) {
        assert_eq!(a.tubes, b.tubes);
        assert_eq!(a.instances, b.instances);
        let rounded = b.features.values().map(|v| v as f32 as f64);
        assert_eq!(a.features.values(), &rounded);
    }
}

#[test]
fn synth_command_writes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"seed": 3, "model": {"baseline": {"num_classes": 4, "actor_dim": 8}},
        "train": {"base_lr": 0.1, "total_epochs": 1}, "data": {"synthetic": {"train_per_class": 1, "test_per_class": 1}}}"#;
    let cfg = decode_config(text).unwrap();
    assert!(matches!(cfg.data, DataSection::Synthetic(_)));
    run_synth(&cfg, dir.path()).unwrap();
    for split in ["train", "test"] {
        let d = load_dataset(&dir.path().join(split).join("annotations.json")).unwrap();
        assert_eq!(d.videos.len(), 4);
    }
}

#[test]
fn checkpoint_survives_round_trip_after_rounding() {
    let data = synth_generate(&spec(), 8).unwrap().train;
    let cfg = ModelConfig::Gcn(GraphHeadConfig {
        num_layers: 2,
        graphs_per_layer: 3,
        merge: Merge::Concat,
        embed_dim: 8,
        use_location: false,
        num_classes: 4,
        actor_dim: 16,
        context_dim: data.context_dim().unwrap(),
    });
    let mut model = init_params(cfg, 2).unwrap();
    let rounded: Vec<_> = model.parameter_values().iter().map(|t| t.map(|v| v as f32 as f64)).collect();
    model.set_parameters(&rounded).unwrap();
    let mut tail = make_tail(&cfg, data.context_dim().unwrap(), 2);
    tail.weight.value = tail.weight.value.map(|v| v as f32 as f64);
    let ckpt = Checkpoint { model, tail };
    let bytes = encode_checkpoint(&ckpt).unwrap();
    assert_eq!(decode_checkpoint(&bytes).unwrap(), ckpt);
    assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap(), bytes);
}

proptest! {
    #[test]
    fn fmap_round_trip_is_bit_exact(c in 1usize..4, t in 1usize..3, h in 1usize..4, w in 1usize..4, seed in 0u64..100) {
        let n = c * t * h * w;
        let values: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f32 as f64 / 7.0).map(|v| v as f32 as f64).collect();
        let fm = ctxgcn::features::FeatureMap::new(ctxgcn::Tensor::new(vec![c, t, h, w], values).unwrap()).unwrap();
        let bytes = encode_fmap(&fm).unwrap();
        prop_assert_eq!(bytes.len(), 24 + 4 * n);
        prop_assert_eq!(decode_fmap(&bytes).unwrap(), fm);
    }

    #[test]
    fn decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_fmap(&bytes);
        let _ = decode_checkpoint(&bytes);
        let mut prefixed = b"FMAP".to_vec();
        prefixed.extend_from_slice(&bytes);
        let _ = decode_fmap(&prefixed);
        let mut prefixed = b"CGCN".to_vec();
        prefixed.extend_from_slice(&bytes);
        let _ = decode_checkpoint(&prefixed);
    }
}

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn fuzz_corpus_seeds_decode_as_named() {
    for (name, bytes) in corpus("fmap") {
        let ok = ctxgcn::io::decode_fmap(&bytes).is_ok();
        assert_eq!(ok, !name.starts_with("truncated"), "{name}");
    }
    for (name, bytes) in corpus("checkpoint") {
        let ok = ctxgcn::io::decode_checkpoint(&bytes).is_ok();
        assert_eq!(ok, !name.starts_with("truncated"), "{name}");
    }
    for (name, bytes) in corpus("annotations") {
        let ok = ctxgcn::io::decode_annotations(std::str::from_utf8(&bytes).unwrap()).is_ok();
        assert_eq!(ok, !name.starts_with("bad"), "{name}");
    }
    for (name, bytes) in corpus("config") {
        assert!(ctxgcn::io::decode_config(std::str::from_utf8(&bytes).unwrap()).is_ok(), "{name}");
    }
}
