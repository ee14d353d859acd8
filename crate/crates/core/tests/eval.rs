use ctxgcn::dataset::Dataset;
use ctxgcn::eval::{average_precision, infer_video, score_from_clips, score_tube, ClipInference, EVAL_CLIPS};
use ctxgcn::experiment::make_tail;
use ctxgcn::features::ClipGeometry;
use ctxgcn::head::{GraphHeadConfig, Merge, ModelConfig};
use ctxgcn::synth::{synth_generate, SynthSpec};
use ctxgcn::tensor::Tensor;
use ctxgcn::training::init_params;
use ctxgcn::Error;
use proptest::prelude::*;

fn small_data() -> Dataset {
    let spec = SynthSpec {
        train_per_class: 1,
        test_per_class: 1,
        ..SynthSpec::default()
    };
    synth_generate(&spec, 5).unwrap().train
}

fn model_config(data: &Dataset) -> ModelConfig {
    ModelConfig::Gcn(GraphHeadConfig {
        num_layers: 1,
        graphs_per_layer: 2,
        merge: Merge::Concat,
        embed_dim: 8,
        use_location: true,
        num_classes: data.num_classes,
        actor_dim: 16,
        context_dim: data.context_dim().unwrap(),
    })
}

fn with_probabilities(clips: &[ClipInference], rows: &[Vec<f64>]) -> Vec<ClipInference> {
    clips
        .iter()
        .zip(rows)
        .map(|(c, r)| {
            let mut c = c.clone();
            let n = c.clip.tubes.len();
            c.probabilities = Tensor::from_rows(&vec![r.clone(); n]).unwrap();
            c
        })
        .collect()
}

#[test]
fn tube_scores_average_clip_softmaxes() {
    let data = small_data();
    let cfg = model_config(&data);
    let model = init_params(cfg, 1).unwrap();
    let tail = make_tail(&cfg, data.context_dim().unwrap(), 1);
    let video = &data.videos[0];
    let clips = infer_video(&model, &data, video, &tail, EVAL_CLIPS).unwrap();
    assert!(clips.len() >= 2);

    let s = vec![0.1, 0.2, 0.3, 0.15, 0.25];
    let same = with_probabilities(&clips, &vec![s.clone(); clips.len()]);
    let scored = score_from_clips(video, 0, &same).unwrap();
    for (a, b) in scored.scores.iter().zip(&s) {
        assert!((a - b).abs() < 1e-15);
    }

    let two = with_probabilities(&clips[..2], &[vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 0.0]]);
    assert_eq!(score_from_clips(video, 0, &two).unwrap().scores, vec![0.5, 0.5, 0.0, 0.0, 0.0]);

    let real = score_tube(&model, &data, video, 0, &tail).unwrap();
    assert!((real.scores.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(matches!(score_from_clips(video, 0, &[]), Err(Error::Coverage(_))));
}

#[test]
fn short_video_scores_come_from_one_padded_clip() {
    let spec = SynthSpec {
        num_frames: 16,
        train_per_class: 1,
        test_per_class: 1,
        ..SynthSpec::default()
    };
    let data = synth_generate(&spec, 2).unwrap().train;
    assert_eq!(data.geometry, ClipGeometry::with_size(112, 112));
    let cfg = model_config(&data);
    let model = init_params(cfg, 2).unwrap();
    let tail = make_tail(&cfg, data.context_dim().unwrap(), 2);
    let video = &data.videos[0];
    let clips = infer_video(&model, &data, video, &tail, EVAL_CLIPS).unwrap();
    assert_eq!(clips.len(), 1);
    let row = clips[0].clip.tubes.iter().position(|&t| t == 0).unwrap();
    assert_eq!(score_tube(&model, &data, video, 0, &tail).unwrap().scores, clips[0].probabilities.row(row));
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, usize)> {
    (1usize..6, 1usize..4).prop_flat_map(|(n, g)| {
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, g), n),
            Just(g),
        )
    })
}

proptest! {
    #[test]
    fn ap_depends_only_on_score_ranks((scores, ious, g) in instance()) {
        let base = average_precision(&scores, &ious, g, 0.5);
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 7.0).collect();
        prop_assert_eq!(average_precision(&squashed, &ious, g, 0.5), base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn duplicate_detection_never_raises_single_target_ap((scores, ious, _) in instance(), pick in 0usize..6, eps in 1e-6f64..1e-3) {
        let ious: Vec<Vec<f64>> = ious.iter().map(|r| vec![r[0]]).collect();
        let g = 1;
        let base = average_precision(&scores, &ious, g, 0.5);
        let d = pick % scores.len();
        let mut s2 = scores.clone();
        s2.push(scores[d] - eps);
        let mut i2 = ious.clone();
        i2.push(ious[d].clone());
        prop_assert!(average_precision(&s2, &i2, g, 0.5) <= base + 1e-12);
    }
}
