//! Browser bindings. Every operation returns JSON text so the page needs no
//! extra glue beyond what wasm-bindgen emits.

use affspace::dataspec::GenerationRequest;
use affspace::eval::mean_curvature;
use affspace::model::{read_model_from, AffordanceModel};
use affspace::numerics::Tensor;
use affspace::synthgen::render::{render_opening, IMAGE_SIZE};
use affspace::synthgen::{insertion_action, insertion_force, is_insertable, push_effect, rolls, Direction, Shape};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const GRID: usize = 100;

#[derive(Serialize)]
struct Image {
    size: usize,
    pixels: Vec<f64>,
    curvature: f64,
}

impl Image {
    fn from(t: &Tensor) -> Image {
        Image {
            size: IMAGE_SIZE,
            pixels: t.data().to_vec(),
            curvature: mean_curvature(t),
        }
    }
}

#[derive(Serialize)]
struct Push {
    direction: &'static str,
    rolls: bool,
    /// Final planar displacement in meters.
    displacement: [f64; 2],
}

#[derive(Serialize)]
struct ShapePreview {
    shape: String,
    image: Image,
    pushes: Vec<Push>,
}

fn times() -> Vec<f64> {
    (0..GRID).map(|i| i as f64 / (GRID - 1) as f64).collect()
}

/// Height map, curvature and push outcomes of a rollability shape.
pub fn shape_preview_json(shape: &str) -> Result<String, String> {
    let shape: Shape = shape.parse().map_err(|e| format!("{e}"))?;
    let pushes = Direction::ALL
        .into_iter()
        .map(|d| {
            let rolled = rolls(shape, d, false);
            let e = push_effect(d, rolled);
            let last = e.row_slice(e.shape()[0] - 1);
            Push {
                direction: d.as_str(),
                rolls: rolled,
                displacement: [last[0], last[1]],
            }
        })
        .collect();
    let preview = ShapePreview {
        shape: shape.to_string(),
        image: Image::from(&shape.render()),
        pushes,
    };
    serde_json::to_string(&preview).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct InsertionPreview {
    half_width: f64,
    insertable: bool,
    image: Image,
    times: Vec<f64>,
    force: Vec<f64>,
    /// Six joint angles per time step.
    action: Vec<Vec<f64>>,
}

/// Opening render plus the wrist force and joint trajectory of an insertion
/// attempt.
pub fn insertion_preview_json(half_width: f64) -> Result<String, String> {
    if !(0.0..=0.5).contains(&half_width) {
        return Err(format!("half-width {half_width} outside [0, 0.5]"));
    }
    let t = times();
    let preview = InsertionPreview {
        half_width,
        insertable: is_insertable(half_width),
        image: Image::from(&render_opening(half_width)),
        force: t.iter().map(|&t| insertion_force(half_width, t)).collect(),
        action: t.iter().map(|&t| insertion_action(half_width, t)).collect(),
        times: t,
    };
    serde_json::to_string(&preview).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ChannelInfo<'a> {
    name: &'a str,
    kind: &'static str,
    dim: usize,
    units: &'static str,
}

#[derive(Serialize)]
struct Prediction<'a> {
    channel: &'a str,
    times: &'a [f64],
    shape: &'a [usize],
    mean: &'a [f64],
    sigma: &'a [f64],
}

/// A trained model held in browser memory.
#[wasm_bindgen]
pub struct LoadedModel {
    model: AffordanceModel,
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8]) -> Result<LoadedModel, String> {
        let model = read_model_from(&mut &bytes[..]).map_err(|e| e.to_string())?;
        Ok(LoadedModel { model })
    }

    pub fn channels_json(&self) -> String {
        let info: Vec<ChannelInfo> = self
            .model
            .specs
            .iter()
            .map(|s| ChannelInfo {
                name: &s.name,
                kind: if s.is_image() { "image" } else { "trajectory" },
                dim: s.dim,
                units: s.units.as_str(),
            })
            .collect();
        serde_json::to_string(&info).expect("channel info serializes")
    }

    /// Runs a generation request (the CLI's request JSON format).
    pub fn generate_json(&self, request: &str) -> Result<String, String> {
        let request: GenerationRequest = serde_json::from_str(request).map_err(|e| format!("request: {e}"))?;
        let preds = self.model.generate(&request).map_err(|e| e.to_string())?;
        let out: Vec<Prediction> = preds
            .iter()
            .map(|p| Prediction {
                channel: &p.channel,
                times: &p.times,
                shape: p.mean.shape(),
                mean: p.mean.data(),
                sigma: p.sigma.data(),
            })
            .collect();
        serde_json::to_string(&out).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
impl LoadedModel {
    #[wasm_bindgen(constructor)]
    pub fn new(bytes: &[u8]) -> Result<LoadedModel, JsError> {
        LoadedModel::from_bytes(bytes).map_err(|e| JsError::new(&e))
    }

    pub fn channels(&self) -> String {
        self.channels_json()
    }

    pub fn generate(&self, request: &str) -> Result<String, JsError> {
        self.generate_json(request).map_err(|e| JsError::new(&e))
    }
}

#[wasm_bindgen(js_name = shapePreview)]
pub fn shape_preview(shape: &str) -> Result<String, JsError> {
    shape_preview_json(shape).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = insertionPreview)]
pub fn insertion_preview(half_width: f64) -> Result<String, JsError> {
    insertion_preview_json(half_width).map_err(|e| JsError::new(&e))
}
