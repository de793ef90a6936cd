//! Temporal-order permutations for the 24-way pretext task.

use serde::{Deserialize, Serialize};

use super::ScenarioTensor;
use crate::error::{Error, Result};

pub const PRETEXT_CLASSES: usize = 24;

/// One of the 24 orderings of four frames.
///
/// Index `c` in `1..=24` enumerates the orderings lexicographically, so
/// `c = 1` is `(1,2,3,4)` and `c = 24` is `(4,3,2,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PermutationLabel {
    index: usize,
    order: [u8; 4],
}

fn all_orders() -> [[u8; 4]; PRETEXT_CLASSES] {
    let mut out = [[0u8; 4]; PRETEXT_CLASSES];
    let mut n = 0;
    for a in 1..=4u8 {
        for b in (1..=4u8).filter(|&b| b != a) {
            for c in (1..=4u8).filter(|&c| c != a && c != b) {
                let d = 10 - a - b - c;
                out[n] = [a, b, c, d];
                n += 1;
            }
        }
    }
    out
}

impl PermutationLabel {
    pub fn identity() -> Self {
        PermutationLabel {
            index: 1,
            order: [1, 2, 3, 4],
        }
    }

    /// `index` is 1-based.
    pub fn from_index(index: usize) -> Result<Self> {
        if !(1..=PRETEXT_CLASSES).contains(&index) {
            return Err(Error::InvalidInput(format!(
                "permutation index {index} outside 1..=24"
            )));
        }
        Ok(PermutationLabel {
            index,
            order: all_orders()[index - 1],
        })
    }

    /// `order` lists 1-based source frames for each output position.
    pub fn from_order(order: [u8; 4]) -> Result<Self> {
        all_orders()
            .iter()
            .position(|o| *o == order)
            .map(|p| PermutationLabel {
                index: p + 1,
                order,
            })
            .ok_or_else(|| Error::InvalidInput(format!("{order:?} is not a permutation of 1..=4")))
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Zero-based class index for the pretext head.
    pub fn class(&self) -> usize {
        self.index - 1
    }

    pub fn order(&self) -> [u8; 4] {
        self.order
    }

    pub fn inverse(&self) -> Self {
        let mut inv = [0u8; 4];
        for (pos, &src) in self.order.iter().enumerate() {
            inv[src as usize - 1] = pos as u8 + 1;
        }
        Self::from_order(inv).expect("inverse of a permutation is a permutation")
    }

    /// Permutation equivalent to applying `self` and then `then`.
    pub fn then(&self, then: &Self) -> Self {
        let mut out = [0u8; 4];
        for (pos, &k) in then.order.iter().enumerate() {
            out[pos] = self.order[k as usize - 1];
        }
        Self::from_order(out).expect("composition of permutations is a permutation")
    }
}

/// Reorders frames so output position `k` holds input frame `order[k]`.
pub fn shuffle_temporal(
    tensor: &ScenarioTensor,
    perm: &PermutationLabel,
) -> Result<ScenarioTensor> {
    if tensor.n_frames() != 4 {
        return Err(Error::Unsupported(format!(
            "temporal shuffling needs exactly 4 frames, got {}",
            tensor.n_frames()
        )));
    }
    let frames = perm
        .order
        .iter()
        .map(|&src| tensor.frames[src as usize - 1].clone())
        .collect();
    let frame_order = perm
        .order
        .iter()
        .map(|&src| tensor.frame_order[src as usize - 1])
        .collect();
    Ok(ScenarioTensor {
        id: tensor.id,
        frames,
        frame_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::OccupancyGrid;
    use proptest::prelude::*;

    fn tensor(n: usize) -> ScenarioTensor {
        let frames = (0..n)
            .map(|k| OccupancyGrid::filled(2, 2, k as f32 / 4.0))
            .collect();
        ScenarioTensor::new(9, frames).unwrap()
    }

    #[test]
    fn enumeration_is_lexicographic_and_bijective() {
        let orders = all_orders();
        assert_eq!(orders[0], [1, 2, 3, 4]);
        assert_eq!(orders[23], [4, 3, 2, 1]);
        assert!(orders.windows(2).all(|w| w[0] < w[1]));
        for c in 1..=24 {
            let p = PermutationLabel::from_index(c).unwrap();
            assert_eq!(PermutationLabel::from_order(p.order()).unwrap().index(), c);
        }
        assert!(PermutationLabel::from_index(0).is_err());
        assert!(PermutationLabel::from_index(25).is_err());
        assert!(PermutationLabel::from_order([1, 1, 2, 3]).is_err());
    }

    #[test]
    fn identity_leaves_tensor_unchanged() {
        let t = tensor(4);
        assert_eq!(
            shuffle_temporal(&t, &PermutationLabel::identity()).unwrap(),
            t
        );
    }

    #[test]
    fn first_output_frame_of_4231_is_last_input_frame() {
        let t = tensor(4);
        let p = PermutationLabel::from_order([4, 2, 3, 1]).unwrap();
        let s = shuffle_temporal(&t, &p).unwrap();
        assert_eq!(s.frames[0], t.frames[3]);
        assert_eq!(s.frames[3], t.frames[0]);
        assert_eq!(s.frame_order, vec![3, 1, 2, 0]);
    }

    #[test]
    fn inverse_restores_original() {
        let t = tensor(4);
        let p = PermutationLabel::from_order([3, 1, 4, 2]).unwrap();
        let back = shuffle_temporal(&shuffle_temporal(&t, &p).unwrap(), &p.inverse()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn wrong_length_is_unsupported() {
        assert!(matches!(
            shuffle_temporal(&tensor(3), &PermutationLabel::identity()),
            Err(Error::Unsupported(_))
        ));
    }

    proptest! {
        #[test]
        fn shuffling_is_a_group_action(a in 1usize..=24, b in 1usize..=24) {
            let t = tensor(4);
            let p = PermutationLabel::from_index(a).unwrap();
            let q = PermutationLabel::from_index(b).unwrap();
            let twice = shuffle_temporal(&shuffle_temporal(&t, &p).unwrap(), &q).unwrap();
            let once = shuffle_temporal(&t, &p.then(&q)).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
