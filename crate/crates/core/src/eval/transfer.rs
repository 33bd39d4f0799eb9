use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::rms::{rms_table, InputConfiguration};
use crate::dataspec::Dataset;
use crate::error::{Error, Result};
use crate::model::{continue_training, train, AffordanceModel, ModelConfig, Observation, TrainConfig};
use crate::numerics::Tensor;
use crate::synthgen::{gen_rollability, push_displacement, rolls, Direction, GenCommon, Pusher, RollabilityConfig, Shape, UrStyle};

pub const TRANSFER_VERSION: u32 = 1;

/// One agent push: `kuka/<dir>` or `ur10/<fingers|palm>/<dir>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DemoSpec {
    pub pusher: Pusher,
    pub direction: Direction,
}

impl fmt::Display for DemoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pusher.tag(self.direction))
    }
}

impl FromStr for DemoSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let (pusher, dir) = match parts.as_slice() {
            ["kuka", dir] => (Pusher::Kuka, dir),
            ["ur10", "fingers", dir] => (Pusher::Ur10(UrStyle::Fingers), dir),
            ["ur10", "palm", dir] => (Pusher::Ur10(UrStyle::Palm), dir),
            _ => return Err(Error::invalid(format!("bad push `{s}` (expected kuka/<dir> or ur10/<fingers|palm>/<dir>)"))),
        };
        Ok(DemoSpec {
            pusher,
            direction: dir.parse()?,
        })
    }
}

impl TryFrom<String> for DemoSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DemoSpec> for String {
    fn from(d: DemoSpec) -> String {
        d.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferProtocol {
    pub label: String,
    pub initial: Vec<Shape>,
    pub new: Shape,
    pub demo: DemoSpec,
}

impl TransferProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.initial.is_empty() {
            return Err(Error::invalid(format!("protocol `{}`: no initial objects", self.label)));
        }
        if self.initial.contains(&self.new) {
            return Err(Error::invalid(format!("protocol `{}`: `{}` is already in the initial set", self.label, self.new)));
        }
        Ok(())
    }
}

fn default_version() -> u32 {
    TRANSFER_VERSION
}

fn default_continuation() -> TrainConfig {
    TrainConfig {
        iterations: 5_000,
        learning_rate: 3e-4,
        ..TrainConfig::default()
    }
}

/// A transfer experiment file: shared data/model/training settings plus the
/// protocols to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSuite {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub data: GenCommon,
    #[serde(default)]
    pub cone_rolls: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: TrainConfig,
    #[serde(default = "default_continuation", rename = "continue")]
    pub continuation: TrainConfig,
    pub protocols: Vec<TransferProtocol>,
}

impl TransferSuite {
    /// The six initial-set / new-object pairings, each demonstrated by a
    /// straight Kuka push.
    pub fn standard() -> Self {
        use Shape::*;
        let all_but_cone: Vec<Shape> = Shape::default_set().into_iter().filter(|s| *s != Cone).collect();
        let demo = DemoSpec {
            pusher: Pusher::Kuka,
            direction: Direction::Straight,
        };
        let p = |label: &str, initial: Vec<Shape>, new: Shape| TransferProtocol {
            label: label.into(),
            initial,
            new,
            demo,
        };
        TransferSuite {
            version: TRANSFER_VERSION,
            data: GenCommon::default(),
            cone_rolls: false,
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            continuation: default_continuation(),
            protocols: vec![
                p("all-but-cone/cone", all_but_cone, Cone),
                p("cuboid+cylinder/cone", vec![Cuboid, UprightCylinder], Cone),
                p("cuboid+cylinder/sphere", vec![Cuboid, UprightCylinder], Sphere),
                p("cuboid+cylinder+sphere/cone", vec![Cuboid, UprightCylinder, Sphere], Cone),
                p("cuboid+sphere/cylinder", vec![Cuboid, Sphere], UprightCylinder),
                p("sphere/cone", vec![Sphere], Cone),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != TRANSFER_VERSION {
            return Err(Error::Version(self.version));
        }
        if self.protocols.is_empty() {
            return Err(Error::invalid("transfer suite has no protocols"));
        }
        self.data.validate()?;
        self.protocols.iter().try_for_each(TransferProtocol::validate)
    }

    /// Noise-bearing training data for `shapes`.
    pub fn training_data(&self, shapes: &[Shape]) -> Result<Dataset> {
        gen_rollability(&RollabilityConfig {
            common: self.data.clone(),
            shapes: shapes.to_vec(),
            cone_rolls: self.cone_rolls,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushCheck {
    pub push: String,
    pub expected: String,
    pub predicted: String,
    pub final_displacement: [f64; 2],
}

impl PushCheck {
    pub fn correct(&self) -> bool {
        self.expected == self.predicted
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub label: String,
    pub initial: Vec<Shape>,
    pub new: Shape,
    pub demo: DemoSpec,
    pub transfer: bool,
    pub direction: bool,
    pub transfer_checks: Vec<PushCheck>,
    pub direction_checks: Vec<PushCheck>,
    /// Old-object effect RMS before and after the continued training.
    pub retention_before: f64,
    pub retention_after: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub runs: Vec<ProtocolRun>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    label: &'a str,
    initial: String,
    new: String,
    demo: String,
    transfer: &'static str,
    direction: &'static str,
    retention_before: f64,
    retention_after: f64,
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "yes"
    } else {
        "no"
    }
}

impl TransferReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.runs {
            out.serialize(CsvRow {
                label: &r.label,
                initial: r.initial.iter().map(Shape::to_string).collect::<Vec<_>>().join("+"),
                new: r.new.to_string(),
                demo: r.demo.to_string(),
                transfer: mark(r.transfer),
                direction: mark(r.direction),
                retention_before: r.retention_before,
                retention_after: r.retention_after,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

fn class_name(rolled: bool) -> &'static str {
    if rolled {
        "rolled"
    } else {
        "not-rolled"
    }
}

/// Nearest-class decision on the final planar displacement of a `[T, ≥2]`
/// effect trajectory: `(rolled, [x, y])`.
pub fn classify_push(effect: &Tensor, dir: Direction) -> Result<(bool, [f64; 2])> {
    let (rows, dim) = effect.dims2("classify_push")?;
    if rows == 0 || dim < 2 {
        return Err(Error::shape("classify_push", format!("effect {:?}", effect.shape())));
    }
    let last = effect.row_slice(rows - 1);
    let fin = [last[0], last[1]];
    let d = |rolled: bool| {
        let p = push_displacement(dir, rolled, 1.0);
        ((p[0] - fin[0]).powi(2) + (p[1] - fin[1]).powi(2)).sqrt()
    };
    Ok((d(true) < d(false), fin))
}

/// Sorted, comma-joined shape names; identifies a pretraining run.
pub fn pretrain_key(initial: &[Shape]) -> String {
    let mut names: Vec<String> = initial.iter().map(Shape::to_string).collect();
    names.sort();
    names.join(",")
}

/// Pretrained models by [`pretrain_key`], reused across protocols.
pub type PretrainCache = BTreeMap<String, AffordanceModel>;

fn check_push(model: &AffordanceModel, shape: Shape, pusher: Pusher, dir: Direction, cone_rolls: bool) -> Result<PushCheck> {
    let image = shape.render();
    let observed = vec![
        (0, Observation::Image(image)),
        (pusher.channel(), Observation::full(&model.specs[pusher.channel()], &pusher.action(dir))),
    ];
    let t_len = model.specs[1].length;
    let times: Vec<f64> = (0..t_len).map(|i| crate::dataspec::grid_time(i, t_len)).collect();
    let pred = model.predict(&observed, &[1], &times)?;
    let (rolled, fin) = classify_push(&pred[0].mean, dir)?;
    Ok(PushCheck {
        push: pusher.tag(dir),
        expected: class_name(rolls(shape, dir, cone_rolls)).into(),
        predicted: class_name(rolled).into(),
        final_displacement: fin,
    })
}

/// Mean effect RMS over noise-free pushes of `shapes`, conditioned on the
/// object and the pushing agent's action.
fn effect_rms(model: &AffordanceModel, suite: &TransferSuite, shapes: &[Shape]) -> Result<f64> {
    let truth = gen_rollability(&RollabilityConfig {
        common: GenCommon::ground_truth(),
        shapes: shapes.to_vec(),
        cone_rolls: suite.cone_rolls,
    })?;
    let configs = [InputConfiguration::new(vec![0, 2])?, InputConfiguration::new(vec![0, 3])?];
    let report = rms_table(model, &truth, &configs)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for row in report.rows.iter().filter(|r| r.channel == "effect") {
        sum += row.rms * row.samples as f64;
        n += row.samples;
    }
    Ok(sum / n.max(1) as f64)
}

/// Runs every protocol: pretraining on the initial objects (cached),
/// replay training with the single demonstration, then the cross-agent and
/// unseen-direction checks on the new object.
pub fn run_transfer(suite: &TransferSuite, cache: &mut PretrainCache, progress: &mut dyn FnMut(&str)) -> Result<TransferReport> {
    suite.validate()?;
    let mut report = TransferReport::default();
    for proto in &suite.protocols {
        let key = pretrain_key(&proto.initial);
        let old = suite.training_data(&proto.initial)?;
        if !cache.contains_key(&key) {
            progress(&format!("pretraining on {key}"));
            let mut model = AffordanceModel::for_dataset(&old, suite.model.clone())?;
            train(&mut model, &old, &suite.pretrain, &mut |_, _| Ok(()))?;
            cache.insert(key.clone(), model);
        }
        let mut model = cache[&key].clone();
        let tag = proto.demo.to_string();
        let new = suite
            .training_data(&[proto.new])?
            .filter(|s| s.meta.action.as_deref() == Some(tag.as_str()));
        let retention_before = effect_rms(&model, suite, &proto.initial)?;
        progress(&format!("{}: continuing with {} {}", proto.label, proto.new, tag));
        continue_training(&mut model, &old, &new, &suite.continuation, &mut |_, _| Ok(()))?;
        let retention_after = effect_rms(&model, suite, &proto.initial)?;

        let demo_agent = proto.demo.pusher.channel();
        let mut transfer_checks = Vec::new();
        for pusher in Pusher::ALL.into_iter().filter(|p| p.channel() != demo_agent) {
            transfer_checks.push(check_push(&model, proto.new, pusher, proto.demo.direction, suite.cone_rolls)?);
        }
        let mut direction_checks = Vec::new();
        for dir in Direction::ALL.into_iter().filter(|d| *d != proto.demo.direction) {
            direction_checks.push(check_push(&model, proto.new, proto.demo.pusher, dir, suite.cone_rolls)?);
        }
        report.runs.push(ProtocolRun {
            label: proto.label.clone(),
            initial: proto.initial.clone(),
            new: proto.new,
            demo: proto.demo,
            transfer: transfer_checks.iter().all(PushCheck::correct),
            direction: direction_checks.iter().all(PushCheck::correct),
            transfer_checks,
            direction_checks,
            retention_before,
            retention_after,
        });
    }
    Ok(report)
}
