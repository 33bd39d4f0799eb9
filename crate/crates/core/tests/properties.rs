use affspace::dataspec::{
    read_arrays, read_dataset_from, resample_trajectory, write_arrays, write_dataset_to, AffordanceSample,
    ChannelSpec, Dataset, GenerationRequest, SampleMeta, Split, Units,
};
use affspace::eval::{classify_push, pca_2d, silhouette, InputConfiguration};
use affspace::model::{blend, AffordanceModel, BlendWeights, ChannelNorm, ModelConfig, Observation};
use affspace::numerics::{ParamSet, Tensor};
use affspace::synthgen::{push_effect, Direction};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, k).prop_filter_map("degenerate", |raw| {
        let total: f64 = raw.iter().sum();
        (total > 1e-6).then(|| raw.iter().map(|v| v / total).collect())
    })
}

fn specs() -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::image("object", 8, 8),
        ChannelSpec::trajectory("effect", 2, Units::Meters, None),
        ChannelSpec::trajectory("arm", 3, Units::Radians, Some("arm")),
    ]
}

fn small_model() -> AffordanceModel {
    let norms = specs().iter().map(|s| ChannelNorm::identity(if s.is_image() { 1 } else { s.dim })).collect();
    let config = ModelConfig {
        latent_dim: 6,
        hidden: 8,
        conv_channels: [2, 2, 2],
        ..ModelConfig::default()
    };
    AffordanceModel::new(specs(), norms, config).unwrap()
}

fn observations() -> Vec<(usize, Observation)> {
    let s = specs();
    vec![
        (0, Observation::full(&s[0], &Tensor::from_fn(&[8, 8], |i| (i % 5) as f64 / 4.0))),
        (1, Observation::full(&s[1], &Tensor::from_fn(&[100, 2], |i| (i as f64 * 0.01).sin()))),
        (2, Observation::full(&s[2], &Tensor::from_fn(&[100, 3], |i| (i % 3) as f64 * 0.1))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn blend_stays_in_convex_hull(w in simplex(3)) {
        let latents: Vec<Option<Vec<f64>>> = vec![
            Some(vec![1.0, -2.0, 0.5, 3.0]),
            Some(vec![-1.0, 0.0, 0.25, 2.0]),
            Some(vec![0.0, 4.0, -0.5, 2.5]),
        ];
        let z = blend(&latents, &BlendWeights::new(w).unwrap()).unwrap();
        for (d, v) in z.iter().enumerate() {
            let col = latents.iter().map(|l| l.as_ref().unwrap()[d]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model_latent_is_convex_combination(w in simplex(3)) {
        let m = small_model();
        let obs = observations();
        let per: Vec<Vec<f64>> = obs.iter().map(|(c, o)| m.channel_latent(*c, o).unwrap()).collect();
        let z = m.latent(&obs, &BlendWeights::new(w.clone()).unwrap()).unwrap();
        for d in 0..z.len() {
            let expected: f64 = per.iter().zip(&w).map(|(l, w)| w * l[d]).sum();
            prop_assert!((z[d] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn dirichlet_weights_live_on_selected_simplex(seed in any::<u64>(), mask in 1u8..8) {
        let selected: Vec<usize> = (0..3).filter(|c| mask >> c & 1 == 1).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = BlendWeights::hierarchical_dirichlet(&specs(), &selected, &mut rng).unwrap();
        let total: f64 = w.as_slice().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
        for (c, v) in w.as_slice().iter().enumerate() {
            prop_assert!(*v >= 0.0);
            if !selected.contains(&c) {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn norm_round_trip(mean in prop::collection::vec(-5.0..5.0f64, 3), scale in 1.0..10.0f64,
                       values in prop::collection::vec(-100.0..100.0f64, 12)) {
        let norm = ChannelNorm { mean, scale };
        let back = norm.inverse(&norm.forward(&values));
        for (a, b) in back.iter().zip(&values) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn resampling_preserves_affine_trajectories(a in -3.0..3.0f64, b in -3.0..3.0f64, src in 2usize..200, dst in 2usize..200) {
        let t = Tensor::from_fn(&[src, 1], |i| a + b * i as f64 / (src - 1) as f64);
        let r = resample_trajectory(&t, dst).unwrap();
        prop_assert_eq!(r.shape(), &[dst, 1]);
        for (i, v) in r.data().iter().enumerate() {
            let expected = a + b * i as f64 / (dst - 1) as f64;
            prop_assert!((v - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn arrays_round_trip(values in prop::collection::vec(-1e6..1e6f64, 1..40), note in "[a-z]{0,12}") {
        let mut p = ParamSet::new();
        p.insert("a/w", Tensor::row(&values)).unwrap();
        p.insert("b", Tensor::scalar(values[0])).unwrap();
        let header = serde_json::json!({ "note": note });
        let mut buf = Vec::new();
        write_arrays(&mut buf, *b"TEST", &header, &p).unwrap();
        let (h, back) = read_arrays(&mut buf.as_slice(), *b"TEST").unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(back.tensors(), p.tensors());
        prop_assert_eq!(back.names(), p.names());
    }

    #[test]
    fn truncated_array_files_are_rejected(cut in 0usize..64) {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::row(&[1.0, 2.0, 3.0])).unwrap();
        let mut buf = Vec::new();
        write_arrays(&mut buf, *b"TEST", &serde_json::json!({}), &p).unwrap();
        let keep = buf.len().saturating_sub(cut + 1);
        prop_assert!(read_arrays(&mut &buf[..keep], *b"TEST").is_err());
    }

    #[test]
    fn dataset_round_trip(seed in any::<u64>(), mask in prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 1..5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = specs();
        let samples = mask
            .iter()
            .enumerate()
            .filter(|(_, m)| m.iter().any(|&b| b))
            .map(|(i, m)| {
                let chans = sp.iter().map(|s| {
                    Tensor::from_fn(&s.payload_shape(), |_| rand::Rng::random_range(&mut rng, -1.0..1.0))
                });
                AffordanceSample {
                    channels: chans.zip(m).map(|(t, &keep)| keep.then_some(t)).collect(),
                    meta: SampleMeta {
                        scenario: "prop".into(),
                        object: format!("o{i}"),
                        object_param: i as f64,
                        outcome: "x".into(),
                        split: if i % 2 == 0 { Split::Train } else { Split::Test },
                        action: None,
                    },
                }
            })
            .collect();
        let ds = Dataset::new(specs(), samples).unwrap();
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        prop_assert_eq!(read_dataset_from(&mut buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn request_json_round_trip(rows in prop::collection::vec(0usize..100, 1..10), with_image in any::<bool>()) {
        let traj = Tensor::from_fn(&[100, 2], |i| i as f64 * 0.5);
        let mut req = GenerationRequest::new(vec!["arm".into()]);
        req.observe_rows("effect", &traj, &rows);
        if with_image {
            req.observe_image("object", &Tensor::filled(&[8, 8], 0.25));
        }
        req.validate(&specs()).unwrap();
        let text = serde_json::to_string(&req).unwrap();
        let back: GenerationRequest = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, req);
    }

    #[test]
    fn configurations_are_canonical(chans in prop::collection::vec(0usize..4, 1..8)) {
        let c = InputConfiguration::new(chans.clone()).unwrap();
        let mut expected = chans;
        expected.sort_unstable();
        expected.dedup();
        prop_assert_eq!(c.channels(), expected.as_slice());
    }

    #[test]
    fn noise_free_pushes_classify_correctly(d in 0usize..3, rolled in any::<bool>()) {
        let dir = Direction::ALL[d];
        let (got, _) = classify_push(&push_effect(dir, rolled), dir).unwrap();
        prop_assert_eq!(got, rolled);
    }

    #[test]
    fn pca_preserves_planar_geometry(angle in 0.0..std::f64::consts::TAU,
                                     pts in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 3..12)) {
        // embed the plane in 5D with a rotation and an offset
        let (s, c) = angle.sin_cos();
        let lifted: Vec<Vec<f64>> = pts.iter().map(|&(x, y)| {
            vec![c * x - s * y + 1.0, 0.3, s * x + c * y - 2.0, 0.3, 0.0]
        }).collect();
        let proj = pca_2d(&lifted).unwrap();
        prop_assume!(!proj.degenerate);
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d0 = ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt();
                let p = &proj.points;
                let d1 = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt();
                prop_assert!((d0 - d1).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn silhouette_is_bounded(pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 4..16), seed in any::<u64>()) {
        let points: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let mut labels: Vec<usize> = (0..points.len()).map(|i| ((seed >> (i % 64)) & 1) as usize).collect();
        labels[0] = 0;
        labels[1] = 1;
        let s = silhouette(&points, &labels);
        prop_assert!((-1.0..=1.0).contains(&s), "{}", s);
    }
}
