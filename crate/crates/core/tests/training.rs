mod common;

use common::*;
use dformer_core::block::{BlockConfig, InitScheme};
use dformer_core::data::{DataConfig, Patch};
use dformer_core::model::{Model, ModelConfig, StageConfig};
use dformer_core::nn::ParamStore;
use dformer_core::train::{
    cross_entropy, decode_checkpoint, encode_checkpoint, evaluate, evaluate_metrics, load_checkpoint,
    save_checkpoint, train_on, AdamConfig, AdamW, ConfusionMatrix, TrainConfig,
};
use dformer_core::{Error, Exec, FormatError, Tensor};
use proptest::prelude::*;

#[test]
fn cross_entropy_examples() {
    let uniform = Tensor::new(vec![4], vec![0.3; 4]).unwrap();
    assert!((cross_entropy(&uniform, 2).unwrap() - 4f64.ln()).abs() < 1e-12);

    let confident = Tensor::new(vec![3], vec![0.0, 30.0, 0.0]).unwrap();
    assert!(cross_entropy(&confident, 2).unwrap() < 1e-10);

    let l = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let lse = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
    assert!((cross_entropy(&l, 3).unwrap() - (lse - 3.0)).abs() < 1e-12);

    let huge = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap();
    assert!((cross_entropy(&huge, 2).unwrap() - 1000.0).abs() < 1e-9);

    assert!(cross_entropy(&l, 0).is_err());
    assert!(cross_entropy(&l, 4).is_err());
}

fn scalar_store(v: f64) -> ParamStore {
    let mut s = ParamStore::new();
    s.push("theta", Tensor::new(vec![1], vec![v]).unwrap());
    s
}

fn adam(lr: f64, wd: f64) -> AdamConfig {
    AdamConfig {
        lr,
        betas: (0.9, 0.999),
        eps: 1e-8,
        weight_decay: wd,
    }
}

#[test]
fn zero_gradient_leaves_parameters() {
    let mut s = scalar_store(1.5);
    let mut opt = AdamW::new(&s);
    for _ in 0..3 {
        opt.step(&mut s, &[vec![0.0]], &adam(0.1, 0.0)).unwrap();
    }
    assert_eq!(s.tensors()[0].data(), &[1.5]);
    assert_eq!(opt.steps(), 3);
}

#[test]
fn first_step_moves_by_lr_against_the_gradient_sign() {
    for g in [3.0, -0.02, 250.0] {
        let mut s = scalar_store(0.0);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, &[vec![g]], &adam(0.01, 0.0)).unwrap();
        let moved = s.tensors()[0].data()[0];
        assert!((moved + 0.01 * f64::signum(g)).abs() < 1e-8, "{g}: {moved}");
    }
}

#[test]
fn two_steps_on_a_quadratic_match_hand_stepping() {
    // f(θ) = (θ − 3)², ∇ = 2(θ − 3).
    let cfg = adam(0.1, 0.01);
    let mut s = scalar_store(1.0);
    let mut opt = AdamW::new(&s);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=2 {
        let g = 2.0 * (s.tensors()[0].data()[0] - 3.0);
        opt.step(&mut s, &[vec![g]], &cfg).unwrap();

        let g = 2.0 * (theta - 3.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        theta -= 0.1 * (mh / (vh.sqrt() + 1e-8) + 0.01 * theta);
        assert!((s.tensors()[0].data()[0] - theta).abs() < 1e-12);
    }
}

#[test]
fn optimizer_rejects_misaligned_gradients() {
    let mut s = scalar_store(0.0);
    let mut opt = AdamW::new(&s);
    assert!(opt.step(&mut s, &[vec![0.0, 1.0]], &adam(0.1, 0.0)).is_err());
    assert!(opt.step(&mut s, &[], &adam(0.1, 0.0)).is_err());
}

fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn metrics_on_diagonal_and_chance_matrices() {
    let m = evaluate_metrics(&cm(&[&[50, 0], &[0, 50]])).unwrap();
    assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));

    let m = evaluate_metrics(&cm(&[&[50, 0], &[50, 0]])).unwrap();
    assert_eq!((m.oa, m.aa, m.kappa), (0.5, 0.5, 0.0));

    // Rows proportional to the column marginals: predictions independent of truth.
    let m = evaluate_metrics(&cm(&[&[10, 20], &[5, 10]])).unwrap();
    assert!(m.kappa.abs() < 1e-15);

    assert!(evaluate_metrics(&ConfusionMatrix::new(3)).is_err());
}

#[test]
fn metrics_match_the_hand_oracle() {
    let m = evaluate_metrics(&cm(&[&[30, 5, 5], &[4, 40, 6], &[2, 3, 55]])).unwrap();
    let oa = 125.0 / 150.0;
    let aa = (30.0 / 40.0 + 40.0 / 50.0 + 55.0 / 60.0) / 3.0;
    let pe = (40.0 * 36.0 + 50.0 * 48.0 + 60.0 * 66.0) / (150.0f64 * 150.0);
    let kappa = (oa - pe) / (1.0 - pe);
    assert!((m.oa - oa).abs() < 1e-12);
    assert!((m.aa - aa).abs() < 1e-12);
    assert!((m.kappa - kappa).abs() < 1e-12);
    assert_eq!(m.absent_classes, 0);
}

#[test]
fn average_accuracy_skips_absent_classes() {
    let m = evaluate_metrics(&cm(&[&[8, 2, 0], &[0, 0, 0], &[1, 0, 9]])).unwrap();
    assert_eq!(m.absent_classes, 1);
    assert!((m.aa - (0.8 + 0.9) / 2.0).abs() < 1e-12);
}

#[test]
fn single_class_matrix_has_unit_kappa_only_when_perfect() {
    let m = evaluate_metrics(&cm(&[&[7, 0], &[0, 0]])).unwrap();
    assert_eq!(m.kappa, 1.0);
}

proptest! {
    #[test]
    fn metrics_stay_in_range(k in 2usize..6, cells in prop::collection::vec(0u64..40, 36)) {
        let rows: Vec<Vec<u64>> = (0..k).map(|i| cells[i * 6..i * 6 + k].to_vec()).collect();
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        prop_assume!(m.total() > 0);
        let r = evaluate_metrics(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.oa));
        prop_assert!((0.0..=1.0).contains(&r.aa));
        prop_assert!((-1.0..=1.0).contains(&r.kappa));
        let diagonal = (0..k).all(|i| (0..k).all(|j| i == j || m.get(i, j) == 0));
        prop_assert_eq!(r.kappa == 1.0, diagonal);
    }
}

fn tiny_model(seed: u64) -> Model {
    let stage = |dim, heads| StageConfig {
        depth: 1,
        block: BlockConfig {
            dim,
            window: 2,
            heads,
            ..BlockConfig::default()
        },
    };
    Model::new(&ModelConfig {
        in_channels: 3,
        input_size: 4,
        patch_size: 1,
        embed_dim: 4,
        stages: vec![stage(4, 1), stage(8, 2)],
        merge_between_stages: true,
        num_classes: 3,
        seed,
        init: InitScheme::Standard,
    })
    .unwrap()
}

fn toy_patches(n: usize) -> Vec<Patch> {
    (0..n)
        .map(|i| {
            let class = i % 3;
            let mut data = randn(&[3, 4, 4], 40 + i as u64);
            for v in &mut data.data_mut()[class * 16..(class + 1) * 16] {
                *v += 2.0;
            }
            Patch { data, class, coord: (i, 0) }
        })
        .collect()
}

#[test]
fn one_epoch_on_one_sample_reduces_its_loss() {
    let mut model = tiny_model(1);
    let p = toy_patches(1);
    let before = model.loss_and_grads(&p[0].data, p[0].class).unwrap().loss;
    let cfg = TrainConfig {
        epochs: 1,
        lr: 1e-3,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    train_on(&mut model, &p, &cfg, Exec::Sequential).unwrap();
    let after = model.loss_and_grads(&p[0].data, p[0].class).unwrap().loss;
    assert!(after < before, "{before} → {after}");
}

#[test]
fn training_is_deterministic_and_executor_independent() {
    let data = toy_patches(12);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        lr: 5e-3,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = |exec| {
        let mut m = tiny_model(2);
        let report = train_on(&mut m, &data, &cfg, exec).unwrap();
        (m.params().clone(), report)
    };
    let (pa, ra) = run(Exec::Sequential);
    let (pb, rb) = run(Exec::Sequential);
    let (pc, rc) = run(Exec::Parallel);
    assert_eq!(pa, pb);
    assert_eq!(ra, rb);
    assert_eq!(pa, pc);
    assert_eq!(ra.to_csv(), rc.to_csv());
    assert_eq!(ra.log.len(), 3);
    assert!(ra.log.iter().all(|e| e.loss.is_finite()));
    assert!(ra.to_csv().starts_with("epoch,loss,oa\n1,"));

    let (pd, _) = {
        let mut m = tiny_model(2);
        let cfg = TrainConfig { seed: 5, ..cfg.clone() };
        let r = train_on(&mut m, &data, &cfg, Exec::Sequential).unwrap();
        (m.params().clone(), r)
    };
    assert_ne!(pa, pd);
}

#[test]
fn log_every_keeps_the_last_epoch() {
    let mut model = tiny_model(3);
    let cfg = TrainConfig {
        epochs: 5,
        log_every: 2,
        ..TrainConfig::default()
    };
    let r = train_on(&mut model, &toy_patches(3), &cfg, Exec::Sequential).unwrap();
    let epochs: Vec<usize> = r.log.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, [2, 4, 5]);
}

#[test]
fn nan_parameters_abort_with_divergence() {
    let mut model = tiny_model(3);
    let id = model.head.fc.weight;
    model.params_mut().get_mut(id).data_mut()[0] = f64::NAN;
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let err = train_on(&mut model, &toy_patches(3), &cfg, Exec::Sequential).unwrap_err();
    assert!(matches!(err, Error::Divergence { epoch: 1, batch: 0, .. }), "{err}");
}

#[test]
fn train_config_validation() {
    for cfg in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { betas: (1.0, 0.9), ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(cfg.validate().is_err());
    }
    let mut m = tiny_model(0);
    assert!(train_on(&mut m, &[], &TrainConfig::default(), Exec::Sequential).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut model = tiny_model(6);
    model.params_mut().randomize(7, 0.3);
    let data = DataConfig {
        train_fraction: 0.3,
        ..DataConfig::default()
    };
    let bytes = encode_checkpoint(&model, Some(&data)).unwrap();
    assert_eq!(&bytes[..4], b"DFCK");
    let (back, meta) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(&meta.model, model.config());
    assert_eq!(meta.data, Some(data));
    assert_eq!(encode_checkpoint(&back, meta.data.as_ref()).unwrap(), bytes);

    let patches = toy_patches(9);
    for p in &patches {
        assert_eq!(back.logits(&p.data).unwrap(), model.logits(&p.data).unwrap());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dfck");
    save_checkpoint(&model, None, &path).unwrap();
    let (loaded, meta) = load_checkpoint(&path).unwrap();
    assert!(meta.data.is_none());
    let before = evaluate_metrics(&evaluate(&model, &patches, Exec::Sequential).unwrap()).unwrap();
    let after = evaluate_metrics(&evaluate(&loaded, &patches, Exec::Parallel).unwrap()).unwrap();
    assert_eq!(before, after);
}

#[test]
fn tampered_checkpoints_are_rejected() {
    let model = tiny_model(6);
    let bytes = encode_checkpoint(&model, None).unwrap();
    let fmt = |b: &[u8]| match decode_checkpoint(b) {
        Err(Error::Format(f)) => f,
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("tampered checkpoint accepted"),
    };

    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(fmt(&bad), FormatError::BadMagic { .. }));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&9u32.to_le_bytes());
    assert!(matches!(fmt(&bad), FormatError::Version { found: 9, .. }));

    assert!(matches!(fmt(&bytes[..bytes.len() - 1]), FormatError::Truncated { .. }));

    // A checkpoint whose tensors do not fit a different config.
    let other = tiny_model(6);
    let mut cfg = other.config().clone();
    cfg.num_classes = 4;
    let json = serde_json::to_vec(&serde_json::json!({ "model": cfg, "data": null })).unwrap();
    let old_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut swapped = bytes[..8].to_vec();
    swapped.extend_from_slice(&(json.len() as u32).to_le_bytes());
    swapped.extend_from_slice(&json);
    swapped.extend_from_slice(&bytes[12 + old_len..]);
    assert!(matches!(fmt(&swapped), FormatError::ShapeMismatch { .. }));
}
