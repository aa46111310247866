mod common;

use common::{rng, small_synthetic};
use facile::data::{
    build_most_frequent_sets, build_unique_count_sets, sample_meta_task, split_per_class, AugmentPolicy, LabeledInstance,
};
use facile::eval::{Arm, Classifier, ClassifierKind, ClassifierParams, ProtocolConfig};
use facile::losses::LossKind;
use facile::models::{eval_frozen, AggregatorKind, EncoderConfig};
use facile::pipeline::{
    embed_fine, evaluate_encoder, fit_fine, predict, pretrain_coarse, FinePredictorSpec, PretrainMethod, PretrainSpec,
};
use facile::tensor::Tensor;
use facile::Error;
use rand::seq::SliceRandom;

fn encoder() -> EncoderConfig {
    EncoderConfig {
        input_dim: 8,
        hidden_dims: vec![16],
        embed_dim: 8,
    }
}

fn data() -> (Vec<LabeledInstance>, Vec<LabeledInstance>) {
    split_per_class(small_synthetic().generate(0).unwrap(), 15)
}

fn spec(method: PretrainMethod) -> PretrainSpec {
    let mut s = PretrainSpec::new(method, encoder());
    s.epochs = 5;
    s.seed = 4;
    s.head.aggregator = AggregatorKind::DeepsetMean;
    s.head.hidden_dim = 16;
    s.head.projection_dim = 8;
    s
}

#[test]
fn random_init_returns_the_fresh_encoder() {
    let (train, _) = data();
    let coarse = build_most_frequent_sets(&train, 20, (2, 5), 0).unwrap();
    let out = pretrain_coarse(&spec(PretrainMethod::RandomInit), &coarse).unwrap();
    assert_eq!(out.encoder, encoder().init(&mut rng(4)));
    assert_eq!(out.steps, 0);
    assert!(out.heads.is_empty());
}

#[test]
fn l1_unique_count_loss_halves() {
    let (train, _) = data();
    let coarse = build_unique_count_sets(&train, 500, (6, 10), 1).unwrap();
    let mut s = spec(PretrainMethod::FacileFsp);
    s.loss = LossKind::L1;
    s.epochs = 50;
    s.head.aggregator = AggregatorKind::DeepsetSum;
    let out = pretrain_coarse(&s, &coarse).unwrap();
    let (first, last) = (out.initial_loss().unwrap(), out.final_loss().unwrap());
    assert!(last <= 0.5 * first, "{first} -> {last}");
}

#[test]
fn single_batch_overfits() {
    let (train, _) = data();
    let coarse = build_most_frequent_sets(&train, 8, (3, 6), 2).unwrap();
    let mut s = spec(PretrainMethod::FacileFsp);
    s.epochs = 200;
    s.batch_size = 8;
    s.optim.lr0 = 0.05;
    let out = pretrain_coarse(&s, &coarse).unwrap();
    assert_eq!(out.steps, 200);
    let (first, last) = (out.initial_loss().unwrap(), *out.step_losses.last().unwrap());
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn smoothed_coarse_loss_trends_down() {
    let (train, _) = data();
    let coarse = build_most_frequent_sets(&train, 300, (4, 12), 3).unwrap();
    let mut s = spec(PretrainMethod::FacileFsp);
    s.epochs = 30;
    let out = pretrain_coarse(&s, &coarse).unwrap();
    let means: Vec<f64> = out.epoch_losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0] * 1.05, "window means {means:?}");
    }
}

#[test]
fn every_method_trains_and_is_deterministic() {
    let (train, test) = data();
    let coarse = build_most_frequent_sets(&train, 60, (3, 6), 4).unwrap();
    let proto = ProtocolConfig {
        tasks: 10,
        k_shot: 3,
        query: 5,
        arms: vec![Arm::new(ClassifierKind::NearestCentroid, false)],
        ..Default::default()
    };
    for method in [
        PretrainMethod::FacileFsp,
        PretrainMethod::FacileSupcon,
        PretrainMethod::FspPatch,
        PretrainMethod::Simclr,
        PretrainMethod::Simsiam,
    ] {
        let mut s = spec(method);
        s.epochs = 2;
        s.augmentation = AugmentPolicy::FeatureNoise { sigma: 0.1 };
        let a = pretrain_coarse(&s, &coarse).unwrap();
        let b = pretrain_coarse(&s, &coarse).unwrap();
        assert_eq!(a.encoder, b.encoder, "{method:?}");
        assert_ne!(a.encoder, encoder().init(&mut rng(4)), "{method:?} did not train");
        assert!(a.step_losses.iter().all(|l| l.is_finite()));
        let ra = evaluate_encoder(&encoder(), &a.encoder, &test, &proto, None, 1).unwrap();
        let rb = evaluate_encoder(&encoder(), &b.encoder, &test, &proto, None, 1).unwrap();
        assert_eq!(ra, rb);
    }
}

#[test]
fn pretraining_never_reads_fine_labels() {
    let (train, _) = data();
    let mut scrambled = train.clone();
    let mut fine: Vec<usize> = scrambled.iter().map(|i| i.fine_label).collect();
    fine.shuffle(&mut rng(9));
    for (inst, f) in scrambled.iter_mut().zip(fine) {
        inst.fine_label = f;
    }
    let a = build_most_frequent_sets(&train, 40, (3, 6), 5).unwrap();
    let b = build_most_frequent_sets(&scrambled, 40, (3, 6), 5).unwrap();
    let s = spec(PretrainMethod::FacileFsp);
    assert_eq!(pretrain_coarse(&s, &a).unwrap().encoder, pretrain_coarse(&s, &b).unwrap().encoder);
}

#[test]
fn incompatible_setups_are_config_errors() {
    let (train, _) = data();
    let mf = build_most_frequent_sets(&train, 10, (2, 4), 0).unwrap();
    let mut s = spec(PretrainMethod::FacileFsp);
    s.loss = LossKind::L1;
    assert!(pretrain_coarse(&s, &mf).unwrap_err().is_config());
    let mut s = spec(PretrainMethod::Simclr);
    s.loss = LossKind::Ce;
    assert!(pretrain_coarse(&s, &mf).unwrap_err().is_config());
    let mut s = spec(PretrainMethod::FacileFsp);
    s.encoder.input_dim = 3;
    assert!(pretrain_coarse(&s, &mf).unwrap_err().is_config());
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let (train, _) = data();
    let mf = build_most_frequent_sets(&train, 32, (2, 4), 0).unwrap();
    let mut s = spec(PretrainMethod::FacileFsp);
    s.optim.lr0 = 1e12;
    s.epochs = 20;
    match pretrain_coarse(&s, &mf) {
        Err(Error::Divergence { step, loss }) => assert!(step > 0 && !loss.is_finite()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn embeddings_are_unit_norm_and_row_independent() {
    let (train, _) = data();
    let params = encoder().init(&mut rng(1));
    let rows: Vec<Vec<f64>> = train.iter().take(30).map(|i| i.features.clone()).collect();
    let z = embed_fine(&encoder(), &params, &rows).unwrap();
    for r in 0..z.rows() {
        let n = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-10);
    }
    let mut perm: Vec<usize> = (0..rows.len()).collect();
    perm.shuffle(&mut rng(2));
    let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
    let zp = embed_fine(&encoder(), &params, &permuted).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(zp.row(k), z.row(i));
    }
    assert_eq!(embed_fine(&encoder(), &params, &rows).unwrap(), z);
}

#[test]
fn prediction_is_the_composition_of_its_parts() {
    let (_, test) = data();
    let enc = encoder();
    let params = enc.init(&mut rng(3));
    for task_seed in 0..20 {
        let task = sample_meta_task(&test, 5, 3, 4, task_seed).unwrap();
        let support: Vec<&[f64]> = task.support.iter().map(|i| test[i.index].features.as_slice()).collect();
        let labels: Vec<usize> = task.support.iter().map(|i| i.label).collect();
        let queries: Vec<&[f64]> = task.query.iter().map(|i| test[i.index].features.as_slice()).collect();
        for kind in [ClassifierKind::NearestCentroid, ClassifierKind::LogisticRegression, ClassifierKind::Ridge] {
            let zs = embed_fine(&enc, &params, &support).unwrap();
            let fine = fit_fine(&FinePredictorSpec::new(kind), &zs, &labels, 5, None, 0).unwrap();
            let got = predict(&fine, &enc, &params, &queries).unwrap();

            let manual_support = manual_embed(&enc, &params, &support);
            let manual_queries = manual_embed(&enc, &params, &queries);
            let clf = Classifier::fit(kind, &manual_support, &labels, 5, &ClassifierParams::default()).unwrap();
            assert_eq!(got, clf.predict(&manual_queries), "task {task_seed} {kind:?}");

            let one_by_one: Vec<usize> = queries
                .iter()
                .map(|q| predict(&fine, &enc, &params, &[*q]).unwrap()[0])
                .collect();
            assert_eq!(got, one_by_one);
        }
    }
}

/// Per-row forward pass and explicit normalization.
fn manual_embed(enc: &EncoderConfig, params: &facile::tensor::Params, rows: &[&[f64]]) -> Tensor {
    let out: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let x = Tensor::from_rows(&[*r]).unwrap();
            let h = eval_frozen(params, |tape, bound| {
                let xv = tape.constant(x);
                enc.forward(tape, bound, xv)
            })
            .unwrap();
            let n = h.data().iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            h.data().iter().map(|v| v / n).collect()
        })
        .collect();
    Tensor::from_rows(&out).unwrap()
}

#[test]
fn single_shot_centroids_are_the_supports() {
    let (_, test) = data();
    let params = encoder().init(&mut rng(5));
    let task = sample_meta_task(&test, 4, 1, 2, 8).unwrap();
    let support: Vec<&[f64]> = task.support.iter().map(|i| test[i.index].features.as_slice()).collect();
    let labels: Vec<usize> = task.support.iter().map(|i| i.label).collect();
    let zs = embed_fine(&encoder(), &params, &support).unwrap();
    let fine = fit_fine(&FinePredictorSpec::new(ClassifierKind::NearestCentroid), &zs, &labels, 4, None, 0).unwrap();
    let Classifier::NearestCentroid(nc) = &fine.classifier else {
        panic!("expected nearest centroid");
    };
    for (r, &y) in labels.iter().enumerate() {
        assert_eq!(nc.centroids[y].as_slice(), zs.row(r));
    }
    assert_eq!(fine.classifier.predict(&zs), labels);
}
