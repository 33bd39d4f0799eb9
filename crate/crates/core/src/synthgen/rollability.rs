use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::render::{render_box, render_cone, render_disk, render_hemisphere, render_ridge, IMAGE_SIZE};
use super::{add_noise, fixed_pose, joint_trajectory, min_jerk, sample_grid, GenCommon};
use crate::dataspec::{AffordanceSample, ChannelSpec, Dataset, SampleMeta, Split, Units};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SLID_DISPLACEMENT: f64 = 0.1;
pub const ROLLED_DISPLACEMENT: f64 = 0.4;
const PUSH_START: f64 = 0.2;
const PUSH_END: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Shape {
    Cuboid,
    UprightCylinder,
    Sphere,
    Cone,
    /// Cylinder lying on its side, axis at the given angle (degrees) from +x.
    SideCylinder(u16),
}

impl Shape {
    pub fn default_set() -> Vec<Shape> {
        vec![
            Shape::Cuboid,
            Shape::UprightCylinder,
            Shape::Sphere,
            Shape::Cone,
            Shape::SideCylinder(0),
            Shape::SideCylinder(45),
            Shape::SideCylinder(90),
            Shape::SideCylinder(135),
        ]
    }

    pub fn render(self) -> Tensor {
        match self {
            Shape::Cuboid => render_box(0.2, 0.12),
            Shape::UprightCylinder => render_disk(0.2, 0.12),
            Shape::Sphere => render_hemisphere(0.2, 0.3),
            Shape::Cone => render_cone(0.22, 0.3),
            Shape::SideCylinder(theta) => render_ridge(theta as f64, 0.15, 0.3, 0.3),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Cuboid => f.write_str("cuboid"),
            Shape::UprightCylinder => f.write_str("upright-cylinder"),
            Shape::Sphere => f.write_str("sphere"),
            Shape::Cone => f.write_str("cone"),
            Shape::SideCylinder(t) => write!(f, "side-cylinder-{t}"),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let shape = match s {
            "cuboid" => Shape::Cuboid,
            "upright-cylinder" | "cylinder" => Shape::UprightCylinder,
            "sphere" => Shape::Sphere,
            "cone" => Shape::Cone,
            _ => match s.strip_prefix("side-cylinder-").and_then(|t| t.parse::<u16>().ok()) {
                Some(t @ (0 | 45 | 90 | 135)) => Shape::SideCylinder(t),
                _ => {
                    return Err(Error::invalid(format!(
                        "unknown shape {s:?}; expected cuboid, upright-cylinder, sphere, cone \
                         or side-cylinder-{{0,45,90,135}}"
                    )))
                }
            },
        };
        Ok(shape)
    }
}

impl TryFrom<String> for Shape {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Shape> for String {
    fn from(s: Shape) -> String {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Straight,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Straight, Direction::Left, Direction::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Straight => "straight",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    /// Unit push vector in the table plane.
    pub fn unit(self) -> [f64; 2] {
        match self {
            Direction::Straight => [0.0, 1.0],
            Direction::Left => [-1.0, 0.0],
            Direction::Right => [1.0, 0.0],
        }
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown direction {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UrStyle {
    Fingers,
    Palm,
}

impl UrStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            UrStyle::Fingers => "fingers",
            UrStyle::Palm => "palm",
        }
    }
}

/// Which agent performs a push.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pusher {
    Kuka,
    Ur10(UrStyle),
}

impl Pusher {
    pub const ALL: [Pusher; 3] = [Pusher::Kuka, Pusher::Ur10(UrStyle::Fingers), Pusher::Ur10(UrStyle::Palm)];

    /// Channel index of this pusher's action in [`rollability_specs`].
    pub fn channel(self) -> usize {
        match self {
            Pusher::Kuka => 2,
            Pusher::Ur10(_) => 3,
        }
    }

    pub fn tag(self, dir: Direction) -> String {
        match self {
            Pusher::Kuka => format!("kuka/{}", dir.as_str()),
            Pusher::Ur10(s) => format!("ur10/{}/{}", s.as_str(), dir.as_str()),
        }
    }

    /// Joint trajectory: reach over [0, 0.6], then hold.
    pub fn action(self, dir: Direction) -> Tensor {
        let (agent, dim) = match self {
            Pusher::Kuka => ("kuka", 7),
            Pusher::Ur10(_) => ("ur10", 6),
        };
        let style = match self {
            Pusher::Kuka => "",
            Pusher::Ur10(s) => s.as_str(),
        };
        let start = fixed_pose(&format!("{agent}/push/{style}/start"), dim);
        let end = fixed_pose(&format!("{agent}/push/{style}/{}", dir.as_str()), dim);
        joint_trajectory(&start, &end, |t| min_jerk(t / PUSH_END))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollabilityConfig {
    #[serde(default)]
    pub common: GenCommon,
    pub shapes: Vec<Shape>,
    /// Whether the cone rolls. Off by default: a cone pushed on a table
    /// pivots about its apex rather than rolling away.
    #[serde(default)]
    pub cone_rolls: bool,
}

impl Default for RollabilityConfig {
    fn default() -> Self {
        RollabilityConfig {
            common: GenCommon::default(),
            shapes: Shape::default_set(),
            cone_rolls: false,
        }
    }
}

pub fn rolls(shape: Shape, dir: Direction, cone_rolls: bool) -> bool {
    match shape {
        Shape::Cuboid | Shape::UprightCylinder => false,
        Shape::Sphere => true,
        Shape::Cone => cone_rolls,
        Shape::SideCylinder(theta) => {
            let (s, c) = (theta as f64).to_radians().sin_cos();
            let [dx, dy] = dir.unit();
            (c * dx + s * dy).abs() < 1e-9
        }
    }
}

/// Planar displacement magnitude along the push direction.
fn displacement_magnitude(rolled: bool, t: f64) -> f64 {
    let push = SLID_DISPLACEMENT * min_jerk((t - PUSH_START) / (PUSH_END - PUSH_START));
    if rolled && t > PUSH_END {
        push + (ROLLED_DISPLACEMENT - SLID_DISPLACEMENT) * (t - PUSH_END) / (1.0 - PUSH_END)
    } else {
        push
    }
}

/// Object displacement `(x, y, z)` at time `t`.
pub fn push_displacement(dir: Direction, rolled: bool, t: f64) -> [f64; 3] {
    let m = displacement_magnitude(rolled, t);
    let [dx, dy] = dir.unit();
    [m * dx, m * dy, 0.0]
}

pub fn push_effect(dir: Direction, rolled: bool) -> Tensor {
    sample_grid(3, |t| push_displacement(dir, rolled, t).to_vec())
}

pub fn rollability_specs() -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::image("object", IMAGE_SIZE, IMAGE_SIZE),
        ChannelSpec::trajectory("effect", 3, Units::Meters, None),
        ChannelSpec::trajectory("kuka", 7, Units::Radians, Some("kuka")),
        ChannelSpec::trajectory("ur10", 6, Units::Radians, Some("ur10")),
    ]
}

/// Builds one sample per (shape, direction, pusher) noise realization; each
/// sample carries the object, the effect and exactly one agent's action.
pub fn gen_rollability(config: &RollabilityConfig) -> Result<Dataset> {
    config.common.validate()?;
    if config.shapes.is_empty() {
        return Err(Error::invalid("rollability needs at least one shape"));
    }
    let mut samples = Vec::new();
    for &shape in &config.shapes {
        let image = shape.render();
        for dir in Direction::ALL {
            let rolled = rolls(shape, dir, config.cone_rolls);
            let effect = push_effect(dir, rolled);
            for pusher in Pusher::ALL {
                let action = pusher.action(dir);
                for _ in 0..config.common.samples_per_object {
                    let mut rng = config.common.sample_rng(samples.len());
                    let mut e = effect.clone();
                    let mut a = action.clone();
                    add_noise(&mut e, config.common.noise, &mut rng);
                    add_noise(&mut a, config.common.noise, &mut rng);
                    let mut channels = vec![Some(image.clone()), Some(e), None, None];
                    channels[pusher.channel()] = Some(a);
                    samples.push(AffordanceSample {
                        channels,
                        meta: SampleMeta {
                            scenario: "rollability".into(),
                            object: shape.to_string(),
                            object_param: match shape {
                                Shape::SideCylinder(t) => t as f64,
                                _ => 0.0,
                            },
                            outcome: if rolled { "rolled" } else { "not-rolled" }.into(),
                            split: Split::Train,
                            action: Some(pusher.tag(dir)),
                        },
                    });
                }
            }
        }
    }
    let mut ds = Dataset::new(rollability_specs(), samples)?;
    ds.scenario = serde_json::json!({ "scenario": "rollability", "config": config });
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_always_rolls() {
        for d in Direction::ALL {
            assert!(rolls(Shape::Sphere, d, false));
        }
    }

    #[test]
    fn side_cylinder_rolls_across_its_axis() {
        assert!(!rolls(Shape::SideCylinder(90), Direction::Straight, false));
        assert!(rolls(Shape::SideCylinder(90), Direction::Left, false));
        assert!(rolls(Shape::SideCylinder(0), Direction::Straight, false));
        assert!(!rolls(Shape::SideCylinder(0), Direction::Right, false));
        for d in Direction::ALL {
            assert!(!rolls(Shape::SideCylinder(45), d, false));
            assert!(!rolls(Shape::SideCylinder(135), d, false));
        }
    }

    #[test]
    fn displacement_profile() {
        assert_eq!(push_displacement(Direction::Straight, true, 0.1), [0.0, 0.0, 0.0]);
        let slid = push_displacement(Direction::Left, false, 1.0);
        assert!((slid[0] + SLID_DISPLACEMENT).abs() < 1e-15);
        let rolled = push_displacement(Direction::Right, true, 1.0);
        assert!((rolled[0] - ROLLED_DISPLACEMENT).abs() < 1e-15);
        // identical until the push ends
        assert_eq!(
            push_displacement(Direction::Right, true, 0.6),
            push_displacement(Direction::Right, false, 0.6)
        );
    }

    fn rolled_objects(cone_rolls: bool) -> Vec<(String, String)> {
        let ds = gen_rollability(&RollabilityConfig {
            common: GenCommon::ground_truth(),
            cone_rolls,
            ..Default::default()
        })
        .unwrap();
        let mut out = Vec::new();
        for s in &ds.samples {
            // outcome label must match the emitted effect
            let end = s.channels[1].as_ref().unwrap().row_slice(99);
            let dist = (end[0] * end[0] + end[1] * end[1]).sqrt();
            assert_eq!(s.meta.outcome == "rolled", (dist - ROLLED_DISPLACEMENT).abs() < 1e-12);
            if s.meta.outcome == "rolled" && s.meta.action.as_deref().unwrap().starts_with("kuka") {
                out.push((s.meta.object.clone(), s.meta.action.clone().unwrap()));
            }
        }
        out
    }

    #[test]
    fn rolled_set_by_enumeration() {
        let expect = |with_cone: bool| {
            let mut v: Vec<(String, String)> = ["straight", "left", "right"]
                .iter()
                .map(|d| ("sphere".to_string(), format!("kuka/{d}")))
                .collect();
            if with_cone {
                v.extend(["straight", "left", "right"].iter().map(|d| ("cone".to_string(), format!("kuka/{d}"))));
            }
            v.push(("side-cylinder-0".into(), "kuka/straight".into()));
            v.push(("side-cylinder-90".into(), "kuka/left".into()));
            v.push(("side-cylinder-90".into(), "kuka/right".into()));
            v.sort();
            v
        };
        let mut got = rolled_objects(false);
        got.sort();
        assert_eq!(got, expect(false));
        let mut got = rolled_objects(true);
        got.sort();
        assert_eq!(got, expect(true));
    }

    #[test]
    fn ur10_styles_share_effects() {
        let ds = gen_rollability(&RollabilityConfig::default()).unwrap();
        let per = ds.samples.len() / (8 * 3);
        assert_eq!(per, 3 * 20);
        // within one (shape, direction) block, fingers and palm noise-free
        // effects coincide while their actions differ
        let gt = gen_rollability(&RollabilityConfig {
            common: GenCommon::ground_truth(),
            ..Default::default()
        })
        .unwrap();
        for block in gt.samples.chunks(3) {
            assert_eq!(block[1].channels[1], block[2].channels[1]);
            assert_ne!(block[1].channels[3], block[2].channels[3]);
        }
    }

    #[test]
    fn shape_names_round_trip() {
        for s in Shape::default_set() {
            assert_eq!(s.to_string().parse::<Shape>().unwrap(), s);
        }
        assert!("side-cylinder-30".parse::<Shape>().is_err());
        assert!("pyramid".parse::<Shape>().is_err());
        let json = serde_json::to_string(&Shape::SideCylinder(45)).unwrap();
        assert_eq!(json, "\"side-cylinder-45\"");
    }
}
