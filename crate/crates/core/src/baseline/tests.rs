use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataspec::{SampleMeta, Units};

fn small() -> BaselineConfig {
    BaselineConfig {
        latent_dim: 8,
        hidden: 16,
        conv_channels: [2, 3, 4],
        time_scale: 10.0,
        batch: 10,
        seed: 0,
    }
}

fn specs() -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::image("object", 8, 8),
        ChannelSpec::trajectory("effect", 1, Units::Newtons, None),
        ChannelSpec::trajectory("arm", 2, Units::Radians, Some("arm")),
    ]
}

fn meta() -> SampleMeta {
    SampleMeta {
        scenario: "unit".into(),
        object: "o".into(),
        object_param: 0.0,
        outcome: "x".into(),
        split: Split::Train,
        action: None,
    }
}

fn ramp_sample() -> AffordanceSample {
    AffordanceSample {
        channels: vec![
            Some(Tensor::from_fn(&[8, 8], |i| 0.4 + 0.02 * (i % 8) as f64)),
            Some(Tensor::from_fn(&[100, 1], |i| i as f64 / 99.0)),
            Some(Tensor::from_fn(&[100, 2], |i| if i % 2 == 0 { 0.3 } else { -(i as f64) / 198.0 })),
        ],
        meta: meta(),
    }
}

fn dataset() -> Dataset {
    Dataset::new(specs(), vec![ramp_sample()]).unwrap()
}

fn variant(loss: Loss, with_time: bool) -> BaselineVariant {
    BaselineVariant { loss, with_time }
}

#[test]
fn variant_names_round_trip() {
    for v in BaselineVariant::ALL {
        assert_eq!(v.to_string().parse::<BaselineVariant>().unwrap(), v);
    }
    assert_eq!("nll-with-time".parse::<BaselineVariant>().unwrap(), variant(Loss::Nll, true));
    let err = "nll".parse::<BaselineVariant>().unwrap_err().to_string();
    assert!(err.contains("mse-without-time"), "{err}");
}

#[test]
fn dropout_never_hides_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut all_kept = 0;
    for _ in 0..2000 {
        let keep = dropout_mask(4, &[0, 2, 3], &mut rng).unwrap();
        assert!(keep.iter().any(|&k| k));
        assert!(!keep[1]);
        all_kept += usize::from(keep.iter().filter(|&&k| k).count() == 3);
    }
    // 1/7 of the redrawn distribution keeps all three
    assert!((200..380).contains(&all_kept), "{all_kept}");
    assert!(dropout_mask(4, &[], &mut rng).is_err());
}

#[test]
fn mse_of_exact_prediction_is_zero() {
    let m = BaselineModel::for_dataset(&dataset(), variant(Loss::Mse, true), small()).unwrap();
    let mut tape = Tape::new(&m.params);
    let x = tape.input(Tensor::from_fn(&[3, 2], |i| i as f64)).unwrap();
    let l = tape.mse(x, Tensor::from_fn(&[3, 2], |i| i as f64)).unwrap();
    assert_eq!(tape.value(l).data()[0], 0.0);
}

#[test]
fn rollout_emits_full_grid() {
    let m = BaselineModel::for_dataset(&dataset(), variant(Loss::Nll, true), small()).unwrap();
    let s = ramp_sample();
    let out = m
        .rollout(&[(1, Tensor::new(vec![1], vec![0.0]).unwrap()), (0, s.channels[0].clone().unwrap())])
        .unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out[1].mean.shape(), &[100, 1]);
    assert_eq!(out[2].mean.shape(), &[100, 2]);
    assert_eq!(out[2].times.len(), 100);
    assert_eq!(out[0].mean, s.channels[0].clone().unwrap());
    assert!(out.iter().all(|p| p.sigma.data().iter().all(|&v| v >= SIGMA_FLOOR)));
}

#[test]
fn unobserved_image_is_generated() {
    let m = BaselineModel::for_dataset(&dataset(), variant(Loss::Mse, false), small()).unwrap();
    let out = m.rollout(&[(1, Tensor::new(vec![1], vec![0.2]).unwrap())]).unwrap();
    assert_eq!(out[0].mean.shape(), &[8, 8]);
    assert!(m.rollout(&[]).is_ok());
    assert!(m.rollout(&[(1, Tensor::zeros(&[2]))]).is_err());
}

#[test]
fn time_input_changes_rollouts() {
    let init = [(2, Tensor::new(vec![2], vec![0.3, 0.0]).unwrap())];
    let with = BaselineModel::for_dataset(&dataset(), variant(Loss::Nll, true), small()).unwrap();
    let without = BaselineModel::for_dataset(&dataset(), variant(Loss::Nll, false), small()).unwrap();
    assert_ne!(with.rollout(&init).unwrap()[1].mean, without.rollout(&init).unwrap()[1].mean);
}

fn quick(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        snapshot_every: 0,
        learning_rate: 3e-3,
        ..Default::default()
    }
}

#[test]
fn training_is_deterministic() {
    let run = || baseline_train(&dataset(), variant(Loss::Nll, true), &small(), &quick(5), &mut |_, _| Ok(())).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn constant_trajectories_roll_out_flat() {
    let specs = vec![
        ChannelSpec::trajectory("effect", 1, Units::Meters, None),
        ChannelSpec::trajectory("arm", 2, Units::Radians, Some("arm")),
    ];
    let s = AffordanceSample {
        channels: vec![
            Some(Tensor::from_fn(&[100, 1], |_| 0.25)),
            Some(Tensor::from_fn(&[100, 2], |i| if i % 2 == 0 { -0.4 } else { 0.7 })),
        ],
        meta: meta(),
    };
    let data = Dataset::new(specs, vec![s]).unwrap();
    let (m, _) = baseline_train(&data, variant(Loss::Mse, true), &small(), &quick(600), &mut |_, _| Ok(())).unwrap();
    let out = m
        .rollout(&[(0, Tensor::new(vec![1], vec![0.25]).unwrap()), (1, Tensor::new(vec![2], vec![-0.4, 0.7]).unwrap())])
        .unwrap();
    let mut drift: f64 = 0.0;
    for p in &out {
        let first = p.mean.row_slice(0).to_vec();
        for r in 0..100 {
            for (a, b) in p.mean.row_slice(r).iter().zip(&first) {
                drift = drift.max((a - b).abs());
            }
        }
    }
    assert!(drift <= 1e-2, "drift {drift}");
}

#[test]
fn file_round_trip() {
    let m = BaselineModel::for_dataset(&dataset(), variant(Loss::Mse, true), small()).unwrap();
    let mut buf = Vec::new();
    write_baseline_to(&m, &mut buf).unwrap();
    assert_eq!(&buf[..4], b"AFFB");
    let back = read_baseline_from(&mut buf.as_slice()).unwrap();
    assert_eq!(back, m);
    assert!(crate::model::read_model_from(&mut buf.as_slice()).is_err());
}

#[test]
fn generate_uses_earliest_point() {
    let m = BaselineModel::for_dataset(&dataset(), variant(Loss::Nll, false), small()).unwrap();
    let s = ramp_sample();
    let mut req = GenerationRequest::new(vec!["arm".into()]);
    req.observe_rows("effect", s.channels[1].as_ref().unwrap(), &[40, 0, 70]);
    let out = m.generate(&req).unwrap();
    assert_eq!(out.len(), 1);
    let direct = m.rollout(&[(1, Tensor::new(vec![1], vec![0.0]).unwrap())]).unwrap();
    assert_eq!(out[0], direct[2]);
    req.times = Some(vec![0.5]);
    assert!(m.generate(&req).is_err());
}
