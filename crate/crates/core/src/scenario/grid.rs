//! Grid geometry and rasterisation of axis-aligned objects into occupancy grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FREE: f32 = 0.0;
pub const UNKNOWN: f32 = 0.5;
pub const OCCUPIED: f32 = 1.0;

/// Geometry of one scenario tensor.
///
/// Rows run laterally (row 0 is the leftmost strip, `+y`), columns run
/// longitudinally (column 0 is the rearmost strip). The ego origin sits on the
/// lateral centre line, `longitudinal_offset` metres in front of the rear edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    /// Longitudinal cell size in metres.
    pub cell_length: f64,
    /// Lateral cell size in metres.
    pub cell_width: f64,
    pub n_timesteps: usize,
    /// Time between consecutive frames in seconds.
    pub dt: f64,
    pub span_lateral: f64,
    pub span_longitudinal: f64,
    /// Distance from the rear edge of the grid to the ego origin.
    pub longitudinal_offset: f64,
}

impl GridConfig {
    /// 16 x 64 x 4 grid over 16 m x 128 m, used for synthetic experiments.
    pub fn desk() -> Self {
        GridConfig {
            rows: 16,
            cols: 64,
            cell_length: 2.0,
            cell_width: 1.0,
            n_timesteps: 4,
            dt: 0.5,
            span_lateral: 16.0,
            span_longitudinal: 128.0,
            longitudinal_offset: 64.0,
        }
    }

    /// 30 x 200 x 4 grid over 15 m x 200 m at 0.5 m x 1 m, used for highD.
    pub fn highd() -> Self {
        GridConfig {
            rows: 30,
            cols: 200,
            cell_length: 1.0,
            cell_width: 0.5,
            n_timesteps: 4,
            dt: 0.5,
            span_lateral: 15.0,
            span_longitudinal: 200.0,
            longitudinal_offset: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(
                "grid must have at least one row and column".into(),
            ));
        }
        if !(positive(self.cell_length)
            && positive(self.cell_width)
            && positive(self.dt)
            && positive(self.span_lateral)
            && positive(self.span_longitudinal))
        {
            return Err(Error::Config(
                "grid sizes and dt must be positive and finite".into(),
            ));
        }
        if (self.rows as f64 * self.cell_width - self.span_lateral).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "rows x cell_width = {} does not match span_lateral {}",
                self.rows as f64 * self.cell_width,
                self.span_lateral
            )));
        }
        if (self.cols as f64 * self.cell_length - self.span_longitudinal).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "cols x cell_length = {} does not match span_longitudinal {}",
                self.cols as f64 * self.cell_length,
                self.span_longitudinal
            )));
        }
        if self.n_timesteps < 2 {
            return Err(Error::Config("n_timesteps must be at least 2".into()));
        }
        if !self.longitudinal_offset.is_finite() {
            return Err(Error::Config("longitudinal_offset must be finite".into()));
        }
        Ok(())
    }

    /// `t_0 - t_{-(N_ts - 1)}`: `N_ts = 1 + span / dt`.
    pub fn history_span(&self) -> f64 {
        (self.n_timesteps - 1) as f64 * self.dt
    }

    /// Frame times relative to `t_0`, oldest first.
    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.n_timesteps)
            .map(|k| -((self.n_timesteps - 1 - k) as f64) * self.dt)
            .collect()
    }

    pub fn cells_per_frame(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cells_per_tensor(&self) -> usize {
        self.rows * self.cols * self.n_timesteps
    }

    /// Longitudinal coordinate of the centre of column `j`.
    pub fn col_center(&self, j: usize) -> f64 {
        -self.longitudinal_offset + (j as f64 + 0.5) * self.cell_length
    }

    /// Lateral coordinate of the centre of row `i`.
    pub fn row_center(&self, i: usize) -> f64 {
        self.span_lateral / 2.0 - (i as f64 + 0.5) * self.cell_width
    }
}

/// Axis-aligned rectangle in the ego frame fixed at `t_0`.
///
/// `x` is longitudinal (forward), `y` lateral (positive to the left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub center_x: f64,
    pub center_y: f64,
    pub length: f64,
    pub width: f64,
}

impl Rect {
    pub fn new(center_x: f64, center_y: f64, length: f64, width: f64) -> Self {
        Rect {
            center_x,
            center_y,
            length,
            width,
        }
    }

    fn is_finite(&self) -> bool {
        self.center_x.is_finite()
            && self.center_y.is_finite()
            && self.length.is_finite()
            && self.width.is_finite()
    }

    /// Half-open containment test used for cell centres.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, x1) = (
            self.center_x - self.length / 2.0,
            self.center_x + self.length / 2.0,
        );
        let (y0, y1) = (
            self.center_y - self.width / 2.0,
            self.center_y + self.width / 2.0,
        );
        x >= x0 && x < x1 && y > y0 && y <= y1
    }
}

/// Region the sensor covers; cells whose centre lies outside are unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Visibility {
    pub fn everywhere() -> Self {
        Visibility {
            x_min: f64::NEG_INFINITY,
            x_max: f64::INFINITY,
            y_min: f64::NEG_INFINITY,
            y_max: f64::INFINITY,
        }
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// One time instant: the ego footprint, surrounding objects and sensor span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub ego: Rect,
    pub objects: Vec<Rect>,
    pub visibility: Visibility,
}

/// A single `I x J` occupancy grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl OccupancyGrid {
    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        OccupancyGrid {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.values[i * self.cols + j] = v;
    }

    pub fn is_three_valued(&self) -> bool {
        self.values
            .iter()
            .all(|&v| v == FREE || v == UNKNOWN || v == OCCUPIED)
    }

    pub fn count(&self, value: f32) -> usize {
        self.values.iter().filter(|&&v| v == value).count()
    }
}

/// Column indices whose centres fall in `[x0, x1)`.
fn col_range(config: &GridConfig, x0: f64, x1: f64) -> std::ops::Range<usize> {
    let origin = -config.longitudinal_offset;
    let lo = ((x0 - origin) / config.cell_length - 0.5).ceil();
    let hi = ((x1 - origin) / config.cell_length - 0.5).ceil();
    clamp_range(lo, hi, config.cols)
}

/// Row indices whose centres fall in `(y0, y1]`.
fn row_range(config: &GridConfig, y0: f64, y1: f64) -> std::ops::Range<usize> {
    // Rows grow towards -y; u = span/2 - y grows with the row index.
    let half = config.span_lateral / 2.0;
    let (u_lo, u_hi) = (half - y1, half - y0);
    let lo = (u_lo / config.cell_width - 0.5).ceil();
    let hi = (u_hi / config.cell_width - 0.5).ceil();
    clamp_range(lo, hi, config.rows)
}

fn clamp_range(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let lo = lo.max(0.0).min(n as f64) as usize;
    let hi = hi.max(0.0).min(n as f64) as usize;
    lo..hi.max(lo)
}

/// Rasterises one frame: occupied where a cell centre lies inside the ego or
/// any object, unknown outside the sensor span, free elsewhere.
pub fn build_grid_frame(frame: &SceneFrame, config: &GridConfig) -> Result<OccupancyGrid> {
    config.validate()?;
    if !frame.ego.is_finite() {
        return Err(Error::InvalidInput("ego pose is not finite".into()));
    }
    if let Some(bad) = frame.objects.iter().position(|r| !r.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "object {bad} has a non-finite pose"
        )));
    }
    let vis = &frame.visibility;
    if [vis.x_min, vis.x_max, vis.y_min, vis.y_max]
        .iter()
        .any(|v| v.is_nan())
    {
        return Err(Error::InvalidInput("visibility bounds are NaN".into()));
    }

    let mut grid = OccupancyGrid::filled(config.rows, config.cols, FREE);
    for i in 0..config.rows {
        let y = config.row_center(i);
        for j in 0..config.cols {
            if !vis.covers(config.col_center(j), y) {
                grid.set(i, j, UNKNOWN);
            }
        }
    }
    for rect in std::iter::once(&frame.ego).chain(frame.objects.iter()) {
        let cols = col_range(
            config,
            rect.center_x - rect.length / 2.0,
            rect.center_x + rect.length / 2.0,
        );
        let rows = row_range(
            config,
            rect.center_y - rect.width / 2.0,
            rect.center_y + rect.width / 2.0,
        );
        for i in rows {
            for j in cols.clone() {
                grid.set(i, j, OCCUPIED);
            }
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_frame(ego: Rect) -> SceneFrame {
        SceneFrame {
            ego,
            objects: vec![],
            visibility: Visibility::everywhere(),
        }
    }

    /// Ego parked far outside the grid so only `objects` are drawn.
    fn offgrid_ego() -> Rect {
        Rect::new(1e6, 1e6, 4.0, 2.0)
    }

    fn brute_force(objects: &[Rect], config: &GridConfig) -> Vec<f32> {
        let mut out = vec![FREE; config.rows * config.cols];
        for i in 0..config.rows {
            for j in 0..config.cols {
                let (x, y) = (config.col_center(j), config.row_center(i));
                if objects.iter().any(|r| r.contains(x, y)) {
                    out[i * config.cols + j] = OCCUPIED;
                }
            }
        }
        out
    }

    #[test]
    fn presets_are_valid() {
        GridConfig::desk().validate().unwrap();
        GridConfig::highd().validate().unwrap();
        assert_eq!(GridConfig::highd().history_span(), 1.5);
        assert_eq!(
            GridConfig::desk().frame_times(),
            vec![-1.5, -1.0, -0.5, 0.0]
        );
    }

    #[test]
    fn span_mismatch_is_rejected() {
        let mut c = GridConfig::desk();
        c.span_lateral = 15.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = GridConfig::desk();
        c.n_timesteps = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_scene_is_all_free() {
        let g = build_grid_frame(&empty_frame(offgrid_ego()), &GridConfig::desk()).unwrap();
        assert_eq!(g.count(FREE), 16 * 64);
    }

    #[test]
    fn centred_object_matches_brute_force() {
        let config = GridConfig::desk();
        let car = Rect::new(0.0, 0.0, 4.0, 2.0);
        let mut frame = empty_frame(offgrid_ego());
        frame.objects.push(car);
        let g = build_grid_frame(&frame, &config).unwrap();
        assert_eq!(g.values, brute_force(&[car], &config));
        // 2 columns (centres at -1, 1) x 2 rows (centres at +-0.5).
        assert_eq!(g.count(OCCUPIED), 4);
    }

    #[test]
    fn random_objects_match_brute_force() {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from(3, &[]);
        for config in [GridConfig::desk(), GridConfig::highd()] {
            for _ in 0..200 {
                let objects: Vec<Rect> = (0..3)
                    .map(|_| {
                        Rect::new(
                            rng.random_range(-120.0..120.0),
                            rng.random_range(-10.0..10.0),
                            rng.random_range(0.3..12.0),
                            rng.random_range(0.3..4.0),
                        )
                    })
                    .collect();
                let frame = SceneFrame {
                    ego: offgrid_ego(),
                    objects: objects.clone(),
                    visibility: Visibility::everywhere(),
                };
                let g = build_grid_frame(&frame, &config).unwrap();
                assert_eq!(g.values, brute_force(&objects, &config));
            }
        }
    }

    #[test]
    fn object_outside_span_leaves_grid_empty() {
        let config = GridConfig::desk();
        let mut frame = empty_frame(offgrid_ego());
        frame.objects.push(Rect::new(300.0, 0.0, 4.0, 2.0));
        frame.objects.push(Rect::new(0.0, -40.0, 4.0, 2.0));
        let g = build_grid_frame(&frame, &config).unwrap();
        let empty = build_grid_frame(&empty_frame(offgrid_ego()), &config).unwrap();
        assert_eq!(g, empty);
    }

    #[test]
    fn cells_outside_visibility_are_unknown() {
        let config = GridConfig::desk();
        let mut frame = empty_frame(Rect::new(0.0, 0.0, 4.0, 2.0));
        frame.visibility = Visibility {
            x_min: f64::NEG_INFINITY,
            x_max: f64::INFINITY,
            y_min: -4.0,
            y_max: 4.0,
        };
        let g = build_grid_frame(&frame, &config).unwrap();
        // rows with centres in [-4, 4]: 8 rows visible, 8 unknown.
        assert_eq!(g.count(UNKNOWN), 8 * 64);
        assert_eq!(g.count(OCCUPIED), 4);
        assert!(g.is_three_valued());
    }

    #[test]
    fn non_finite_pose_is_rejected() {
        let config = GridConfig::desk();
        let frame = empty_frame(Rect::new(f64::NAN, 0.0, 4.0, 2.0));
        assert!(matches!(
            build_grid_frame(&frame, &config),
            Err(Error::InvalidInput(_))
        ));
        let mut frame = empty_frame(offgrid_ego());
        frame.objects.push(Rect::new(0.0, f64::INFINITY, 4.0, 2.0));
        assert!(build_grid_frame(&frame, &config).is_err());
    }

    #[test]
    fn occupied_count_is_translation_invariant() {
        let config = GridConfig::desk();
        let base = [
            Rect::new(-10.3, 0.2, 4.4, 1.9),
            Rect::new(12.1, -3.7, 5.0, 2.1),
        ];
        let count = |shift: f64| {
            let frame = SceneFrame {
                ego: offgrid_ego(),
                objects: base
                    .iter()
                    .map(|r| Rect::new(r.center_x + shift, r.center_y, r.length, r.width))
                    .collect(),
                visibility: Visibility::everywhere(),
            };
            build_grid_frame(&frame, &config).unwrap().count(OCCUPIED)
        };
        let reference = count(0.0);
        for k in -10i32..=10 {
            assert_eq!(count(k as f64 * config.cell_length), reference, "shift {k}");
        }
    }
}
