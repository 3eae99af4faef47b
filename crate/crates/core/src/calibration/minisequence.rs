use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames adjacent to the annotated one that targets are drawn from.
pub const WINDOW: usize = 7;
/// Targets per mini-sequence.
pub const TARGETS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// An annotated frame and four targets on one side of it, ordered by
/// distance from the annotated frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniSequence {
    pub annotated: usize,
    pub targets: [usize; TARGETS],
    pub direction: Direction,
}

/// The annotated index is uniform over frames with a full window on at
/// least one side; the side is uniform over the valid ones; the targets
/// are a uniform 4-subset of that side's window.
pub fn sample_minisequence<R: Rng + ?Sized>(
    sequence_length: usize,
    rng: &mut R,
) -> Result<MiniSequence> {
    if sequence_length < WINDOW + 1 {
        return Err(Error::Input(format!(
            "sequence of {sequence_length} frames is shorter than {}",
            WINDOW + 1
        )));
    }
    let forward_ok = |a: usize| a + WINDOW < sequence_length;
    let backward_ok = |a: usize| a >= WINDOW;
    let valid: Vec<usize> = (0..sequence_length)
        .filter(|&a| forward_ok(a) || backward_ok(a))
        .collect();
    let annotated = valid[rng.random_range(0..valid.len())];
    let direction = match (forward_ok(annotated), backward_ok(annotated)) {
        (true, true) => {
            if rng.random_bool(0.5) {
                Direction::Forward
            } else {
                Direction::Backward
            }
        }
        (true, false) => Direction::Forward,
        _ => Direction::Backward,
    };
    let mut offsets: Vec<usize> = index::sample(rng, WINDOW, TARGETS)
        .into_iter()
        .map(|k| k + 1)
        .collect();
    offsets.sort_unstable();
    let targets = std::array::from_fn(|i| match direction {
        Direction::Forward => annotated + offsets[i],
        Direction::Backward => annotated - offsets[i],
    });
    Ok(MiniSequence {
        annotated,
        targets,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn length_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let m = sample_minisequence(8, &mut rng).unwrap();
            if m.annotated == 0 {
                assert_eq!(m.direction, Direction::Forward);
                assert!(m.targets.iter().all(|t| (1..=7).contains(t)));
            } else {
                assert_eq!((m.annotated, m.direction), (7, Direction::Backward));
            }
        }
        assert!(sample_minisequence(7, &mut rng).is_err());
    }

    #[test]
    fn window_and_distinctness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let m = sample_minisequence(12, &mut rng).unwrap();
            let mut all = m.targets.to_vec();
            all.push(m.annotated);
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 5);
            for &t in &m.targets {
                assert!(t < 12 && t.abs_diff(m.annotated) <= WINDOW);
                assert_eq!(t > m.annotated, m.direction == Direction::Forward);
            }
        }
    }
}
