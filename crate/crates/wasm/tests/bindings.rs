use affspace::dataspec::{GenerationRequest, Split};
use affspace::model::{write_model_to, AffordanceModel, ModelConfig};
use affspace::synthgen::{gen_insertability, InsertabilityConfig};
use affspace_wasm::{insertion_preview_json, shape_preview_json, LoadedModel};
use serde_json::Value;

#[test]
fn sphere_rolls_every_way_and_cuboid_never() {
    let sphere: Value = serde_json::from_str(&shape_preview_json("sphere").unwrap()).unwrap();
    let cuboid: Value = serde_json::from_str(&shape_preview_json("cuboid").unwrap()).unwrap();
    for i in 0..3 {
        assert_eq!(sphere["pushes"][i]["rolls"], true);
        assert_eq!(cuboid["pushes"][i]["rolls"], false);
    }
    assert_eq!(sphere["image"]["pixels"].as_array().unwrap().len(), 32 * 32);
    assert!(sphere["image"]["curvature"].as_f64().unwrap() > cuboid["image"]["curvature"].as_f64().unwrap());
}

#[test]
fn unknown_shape_is_an_error() {
    let err = shape_preview_json("pyramid").unwrap_err();
    assert!(err.contains("pyramid"));
}

#[test]
fn insertion_preview_matches_threshold() {
    let wide: Value = serde_json::from_str(&insertion_preview_json(0.15).unwrap()).unwrap();
    let narrow: Value = serde_json::from_str(&insertion_preview_json(0.05).unwrap()).unwrap();
    assert_eq!(wide["insertable"], true);
    assert_eq!(narrow["insertable"], false);
    assert_eq!(wide["force"].as_array().unwrap().len(), 100);
    assert_eq!(wide["action"][0].as_array().unwrap().len(), 6);
    // blocked insertion pushes back early, a clean one only at the very end
    assert_eq!(wide["force"][60].as_f64().unwrap(), 0.0);
    assert!(narrow["force"][60].as_f64().unwrap() > 0.0);
    assert!(insertion_preview_json(-1.0).is_err());
}

#[test]
fn loaded_model_generates_like_the_native_one() {
    let data = gen_insertability(&InsertabilityConfig::default()).unwrap();
    let config = ModelConfig {
        latent_dim: 8,
        hidden: 8,
        conv_channels: [2, 2, 2],
        ..ModelConfig::default()
    };
    let model = AffordanceModel::for_dataset(&data.split(Split::Train), config).unwrap();
    let mut bytes = Vec::new();
    write_model_to(&model, &mut bytes).unwrap();
    let loaded = LoadedModel::from_bytes(&bytes).unwrap();

    let channels: Value = serde_json::from_str(&loaded.channels_json()).unwrap();
    assert_eq!(channels[0]["kind"], "image");
    assert_eq!(channels[1]["name"], "effect");

    let s = &data.samples[0];
    let mut req = GenerationRequest::new(vec!["effect".into()]);
    req.observe_image("object", s.channels[0].as_ref().unwrap());
    let out: Value = serde_json::from_str(&loaded.generate_json(&serde_json::to_string(&req).unwrap()).unwrap()).unwrap();
    let native = model.generate(&req).unwrap();
    let mean: Vec<f64> = out[0]["mean"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(mean, native[0].mean.data());
    assert_eq!(out[0]["shape"], serde_json::json!([100, 1]));

    assert!(loaded.generate_json("{}").is_err());
    assert!(LoadedModel::from_bytes(b"nope").is_err());
}
