//! Synthetic straight-road highway scenarios for the seven manoeuvre classes.
//!
//! World frame: origin at the ego position at `t_0`, `x` forward, `y` to the
//! left. The road has three lanes; lane changes follow a logistic lateral ramp.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::grid::{build_grid_frame, GridConfig, Rect, SceneFrame, Visibility};
use super::{ScenarioDataset, ScenarioTensor};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

/// The seven highway manoeuvres, in catalogue order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManeuverClass {
    EgoLaneChangeRight,
    EgoLaneChangeLeft,
    CutInFromLeft,
    LeaderCutOutLeft,
    CutInFromRight,
    Following,
    LeaderCutOutRight,
}

impl ManeuverClass {
    pub const ALL: [ManeuverClass; 7] = [
        ManeuverClass::EgoLaneChangeRight,
        ManeuverClass::EgoLaneChangeLeft,
        ManeuverClass::CutInFromLeft,
        ManeuverClass::LeaderCutOutLeft,
        ManeuverClass::CutInFromRight,
        ManeuverClass::Following,
        ManeuverClass::LeaderCutOutRight,
    ];

    /// Position in [`ManeuverClass::ALL`].
    pub fn id(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ManeuverClass::EgoLaneChangeRight => "ego-lane-change-right",
            ManeuverClass::EgoLaneChangeLeft => "ego-lane-change-left",
            ManeuverClass::CutInFromLeft => "cut-in-from-left",
            ManeuverClass::LeaderCutOutLeft => "leader-cut-out-left",
            ManeuverClass::CutInFromRight => "cut-in-from-right",
            ManeuverClass::Following => "following",
            ManeuverClass::LeaderCutOutRight => "leader-cut-out-right",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    /// Lane offsets (in lane widths, relative to the ego's lane at `t_0`)
    /// of the ego at start, the leader at start and the leader at the end.
    fn lane_plan(self) -> (f64, f64, f64) {
        match self {
            ManeuverClass::EgoLaneChangeRight => (1.0, 1.0, 1.0),
            ManeuverClass::EgoLaneChangeLeft => (-1.0, -1.0, -1.0),
            ManeuverClass::CutInFromLeft => (0.0, 1.0, 0.0),
            ManeuverClass::LeaderCutOutLeft => (0.0, 0.0, 1.0),
            ManeuverClass::CutInFromRight => (0.0, -1.0, 0.0),
            ManeuverClass::Following => (0.0, 0.0, 0.0),
            ManeuverClass::LeaderCutOutRight => (0.0, 0.0, -1.0),
        }
    }
}

/// Constant-speed longitudinal motion with an optional logistic lane change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub x0: f64,
    pub speed: f64,
    pub y_from: f64,
    pub y_to: f64,
    /// Midpoint of the lateral ramp, seconds relative to `t_0`.
    pub ramp_center: f64,
    /// Logistic time scale of the lateral ramp.
    pub ramp_scale: f64,
    pub length: f64,
    pub width: f64,
}

impl Track {
    pub fn position(&self, t: f64) -> (f64, f64) {
        let x = self.x0 + self.speed * t;
        let s = 1.0 / (1.0 + (-(t - self.ramp_center) / self.ramp_scale).exp());
        (x, self.y_from + (self.y_to - self.y_from) * s)
    }

    pub fn rect_at(&self, t: f64) -> Rect {
        let (x, y) = self.position(t);
        Rect::new(x, y, self.length, self.width)
    }
}

/// One generated scene before rasterisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub class: ManeuverClass,
    pub lane_width: f64,
    pub ego: Track,
    pub leader: Track,
    pub others: Vec<Track>,
    pub visibility: Visibility,
}

impl SyntheticScene {
    pub fn frame_at(&self, t: f64) -> SceneFrame {
        let mut objects = vec![self.leader.rect_at(t)];
        objects.extend(self.others.iter().map(|o| o.rect_at(t)));
        SceneFrame {
            ego: self.ego.rect_at(t),
            objects,
            visibility: self.visibility,
        }
    }

    pub fn render(&self, id: u64, grid: &GridConfig) -> Result<ScenarioTensor> {
        let frames = grid
            .frame_times()
            .into_iter()
            .map(|t| build_grid_frame(&self.frame_at(t), grid))
            .collect::<Result<Vec<_>>>()?;
        ScenarioTensor::new(id, frames)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_per_class: usize,
    pub grid: GridConfig,
    pub classes: Vec<ManeuverClass>,
}

fn jitter(rng: &mut Rng, base: f64, rel: f64) -> f64 {
    base * (1.0 + rng.random_range(-rel..=rel))
}

fn vehicle(rng: &mut Rng) -> (f64, f64) {
    (rng.random_range(4.2..4.9), rng.random_range(1.7..1.95))
}

/// Draws one scene of `class`.
pub fn synthesize_scene(class: ManeuverClass, rng: &mut Rng) -> SyntheticScene {
    let w = rng.random_range(3.5..4.0);
    let (ego_from, lead_from, lead_to) = class.lane_plan();

    // Lanes 0 (right), 1, 2 (left); pick the ego's t_0 lane so every lane the
    // manoeuvre touches exists.
    let lanes_used = [0.0, ego_from, lead_from, lead_to];
    let lo = lanes_used.iter().cloned().fold(0.0, f64::min);
    let hi = lanes_used.iter().cloned().fold(0.0, f64::max);
    let candidates: Vec<i32> = (0..3)
        .filter(|&l| l as f64 + lo >= 0.0 && l as f64 + hi <= 2.0)
        .collect();
    let ego_lane = candidates[rng.random_range(0..candidates.len())];

    let ramp = |rng: &mut Rng| (rng.random_range(-0.85..-0.65), rng.random_range(0.1..0.16));

    let ego_speed = jitter(rng, 22.0, 0.2);
    let (len, wid) = vehicle(rng);
    let (rc, rs) = ramp(rng);
    let ego = Track {
        x0: 0.0,
        speed: ego_speed,
        y_from: ego_from * w,
        y_to: 0.0,
        ramp_center: rc,
        ramp_scale: rs,
        length: len,
        width: wid,
    };

    let gap = jitter(rng, 30.0, 0.5);
    let (len, wid) = vehicle(rng);
    let (rc, rs) = ramp(rng);
    let leader = Track {
        x0: gap,
        speed: ego_speed * (1.0 + rng.random_range(-0.1..0.1)),
        y_from: lead_from * w,
        y_to: lead_to * w,
        ramp_center: rc,
        ramp_scale: rs,
        length: len,
        width: wid,
    };

    let mut others = Vec::new();
    let free: Vec<i32> = (0..3)
        .filter(|&l| {
            !lanes_used
                .iter()
                .any(|&u| (ego_lane as f64 + u) as i32 == l)
        })
        .collect();
    if !free.is_empty() && rng.random_bool(0.5) {
        let lane = free[rng.random_range(0..free.len())];
        let y = (lane - ego_lane) as f64 * w;
        let (len, wid) = vehicle(rng);
        others.push(Track {
            x0: rng.random_range(-40.0..50.0),
            speed: jitter(rng, ego_speed, 0.15),
            y_from: y,
            y_to: y,
            ramp_center: 0.0,
            ramp_scale: 1.0,
            length: len,
            width: wid,
        });
    }

    let right_edge = (-(ego_lane as f64) - 0.5) * w;
    let left_edge = ((2 - ego_lane) as f64 + 0.5) * w;
    SyntheticScene {
        class,
        lane_width: w,
        ego,
        leader,
        others,
        visibility: Visibility {
            x_min: f64::NEG_INFINITY,
            x_max: f64::INFINITY,
            y_min: right_edge,
            y_max: left_edge,
        },
    }
}

/// Generates `n_per_class` scenes of each class, all unlabelled with ground
/// truth attached. Use [`ScenarioDataset::with_label_split`] to pick labelled
/// classes.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<ScenarioDataset> {
    if config.classes.is_empty() {
        return Err(Error::Config("class list is empty".into()));
    }
    config.grid.validate()?;
    let mut unlabeled = Vec::with_capacity(config.classes.len() * config.n_per_class);
    let mut truth = Vec::with_capacity(unlabeled.capacity());
    for &class in &config.classes {
        for n in 0..config.n_per_class {
            let mut rng = rng_from(config.seed, &[class.id() as u64, n as u64]);
            let scene = synthesize_scene(class, &mut rng);
            let id = (class.id() * config.n_per_class + n) as u64;
            unlabeled.push(scene.render(id, &config.grid)?);
            truth.push(class.id());
        }
    }
    Ok(ScenarioDataset {
        grid: config.grid,
        class_names: ManeuverClass::ALL
            .iter()
            .map(|c| c.name().to_string())
            .collect(),
        labeled_classes: vec![],
        labeled: vec![],
        unlabeled,
        unlabeled_truth: Some(truth),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::OCCUPIED;

    fn config(seed: u64, n: usize) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            n_per_class: n,
            grid: GridConfig::desk(),
            classes: ManeuverClass::ALL.to_vec(),
        }
    }

    /// Occupied rows of a single rectangle rasterised alone.
    fn rows_of(rect: Rect, grid: &GridConfig) -> Vec<usize> {
        let frame = SceneFrame {
            ego: Rect::new(1e6, 1e6, 1.0, 1.0),
            objects: vec![rect],
            visibility: Visibility::everywhere(),
        };
        let g = build_grid_frame(&frame, grid).unwrap();
        (0..grid.rows)
            .filter(|&i| (0..grid.cols).any(|j| g.get(i, j) == OCCUPIED))
            .collect()
    }

    fn mean_row(rect: Rect, grid: &GridConfig) -> f64 {
        let rows = rows_of(rect, grid);
        rows.iter().sum::<usize>() as f64 / rows.len() as f64
    }

    #[test]
    fn seventy_tensors_reproducible() {
        let a = generate_synthetic(&config(1, 10)).unwrap();
        let b = generate_synthetic(&config(1, 10)).unwrap();
        assert_eq!(a.unlabeled.len(), 70);
        let truth = a.unlabeled_truth.clone().unwrap();
        for c in 0..7 {
            assert_eq!(truth.iter().filter(|&&t| t == c).count(), 10);
        }
        let bits = |d: &ScenarioDataset| -> Vec<u32> {
            d.unlabeled
                .iter()
                .flat_map(|t| t.values().map(f32::to_bits).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert!(a.unlabeled.iter().all(|t| t.is_three_valued()));
        let c = generate_synthetic(&config(2, 10)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn empty_class_list_is_config_error() {
        let mut cfg = config(1, 1);
        cfg.classes.clear();
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn following_leader_keeps_its_rows() {
        let grid = GridConfig::desk();
        for n in 0..50 {
            let mut rng = rng_from(11, &[n]);
            let scene = synthesize_scene(ManeuverClass::Following, &mut rng);
            let rows: Vec<_> = grid
                .frame_times()
                .into_iter()
                .map(|t| rows_of(scene.leader.rect_at(t), &grid))
                .collect();
            assert!(!rows[0].is_empty());
            assert!(rows.windows(2).all(|w| w[0] == w[1]), "scene {n}: {rows:?}");
            // the leader is actually drawn in the full tensor
            let tensor = scene.render(0, &grid).unwrap();
            let r = scene.leader.rect_at(0.0);
            let j = ((r.center_x + grid.longitudinal_offset) / grid.cell_length) as usize;
            let i = rows[3][0];
            assert_eq!(tensor.frames[3].get(i, j), OCCUPIED);
        }
    }

    #[test]
    fn ego_lane_change_left_shifts_former_leader_by_a_lane() {
        let grid = GridConfig::desk();
        let t_start = grid.frame_times()[0];
        for n in 0..50 {
            let mut rng = rng_from(12, &[n]);
            let scene = synthesize_scene(ManeuverClass::EgoLaneChangeLeft, &mut rng);
            // leader row relative to the ego row, in cells; rows grow to the right
            let rel = |t: f64| {
                mean_row(scene.leader.rect_at(t), &grid) - mean_row(scene.ego.rect_at(t), &grid)
            };
            let shift = (rel(0.0) - rel(t_start)) * grid.cell_width;
            assert!(
                (shift - scene.lane_width).abs() <= grid.cell_width,
                "scene {n}: shift {shift} vs lane {}",
                scene.lane_width
            );
        }
    }

    #[test]
    fn class_names_round_trip() {
        for c in ManeuverClass::ALL {
            assert_eq!(ManeuverClass::from_name(c.name()), Some(c));
            assert_eq!(ManeuverClass::from_id(c.id()), Some(c));
        }
    }
}
