use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::UNKNOWN;
use super::ScenarioTensor;
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Fraction of all cells covered by the erased spatio-temporal box.
    pub erase_patch_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            erase_patch_fraction: 0.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Box extents `(frames, rows, cols)` covering roughly `fraction` of the tensor.
fn patch_extent(fraction: f64, dims: (usize, usize, usize)) -> (usize, usize, usize) {
    let (t, i, j) = dims;
    let side = fraction.cbrt();
    let nt = ((t as f64 * side).round() as usize).clamp(1, t);
    let ni = ((i as f64 * side).round() as usize).clamp(1, i);
    let nj = ((fraction * (t * i * j) as f64) / (nt * ni) as f64).round() as usize;
    (nt, ni, nj.clamp(1, j))
}

/// Erases one random box to the unknown value and adds Gaussian noise,
/// returning values before clipping (frames outermost, row-major).
pub fn augment_unclipped(tensor: &ScenarioTensor, params: &AugmentParams) -> Vec<f32> {
    let mut values: Vec<f32> = tensor.values().collect();
    let (t, i, j) = (tensor.n_frames(), tensor.rows(), tensor.cols());
    let mut rng = rng_from(params.seed, &[tensor.id]);

    if params.erase_patch_fraction > 0.0 {
        let (nt, ni, nj) = patch_extent(params.erase_patch_fraction, (t, i, j));
        let t0 = rng.random_range(0..=t - nt);
        let i0 = rng.random_range(0..=i - ni);
        let j0 = rng.random_range(0..=j - nj);
        for tt in t0..t0 + nt {
            for ii in i0..i0 + ni {
                let row = (tt * i + ii) * j;
                values[row + j0..row + j0 + nj].fill(UNKNOWN);
            }
        }
    }
    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).expect("sigma is positive and finite");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    values
}

/// Random erasing plus additive noise, clipped to `[0, 1]`.
///
/// Deterministic in `(params.seed, tensor.id)`.
pub fn augment(tensor: &ScenarioTensor, params: &AugmentParams) -> ScenarioTensor {
    let values = augment_unclipped(tensor, params);
    let mut out = tensor.clone();
    let cells = tensor.rows() * tensor.cols();
    for (frame, chunk) in out.frames.iter_mut().zip(values.chunks(cells)) {
        for (dst, &v) in frame.values.iter_mut().zip(chunk) {
            *dst = v.clamp(0.0, 1.0);
        }
    }
    out
}
