use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_points, sample_rate, synthesize_error_scribbles};
use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::workflow::{RoundResult, Session};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    /// Total rounds, including the first.
    pub rounds: usize,
    pub seed: u64,
    /// First annotated frame; defaults to the frame showing the most
    /// objects, then the most object pixels.
    pub first_frame: Option<usize>,
    /// Object pixels per first-round point; sampled per object when unset.
    pub point_rate: Option<usize>,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            rounds: 8,
            seed: 0,
            first_frame: None,
            point_rate: None,
        }
    }
}

fn default_first_frame(gt: &[LabelMap], objects: usize) -> usize {
    let key = |g: &LabelMap| {
        let present = (1..=objects as u8).filter(|&k| g.area(k) > 0).count();
        let area = g.labels().iter().filter(|&&l| l > 0).count();
        (present, area)
    };
    // max_by_key keeps the last maximum; iterate in reverse for the lowest index.
    (0..gt.len())
        .rev()
        .max_by_key(|&t| key(&gt[t]))
        .unwrap_or(0)
}

/// Plays the user for up to `config.rounds` rounds against `gt`: points on
/// the first frame, then corrective scribbles on the worst frame. Stops
/// early once every frame has been annotated.
pub fn robot_interact(
    session: &mut Session,
    gt: &[LabelMap],
    config: &RobotConfig,
) -> Result<Vec<RoundResult>> {
    if gt.len() != session.frame_count() {
        return Err(Error::Input(format!(
            "robot needs ground truth for all {} frames, got {}",
            session.frame_count(),
            gt.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let objects = session.object_count();
    let mut results = Vec::new();
    while session.round() < config.rounds {
        let (frame, scribbles) = if session.round() == 0 {
            let frame = config
                .first_frame
                .unwrap_or_else(|| default_first_frame(gt, objects));
            let mut sets = Vec::new();
            for k in 1..=objects as u8 {
                if gt[frame].area(k) == 0 {
                    continue;
                }
                let rate = config.point_rate.unwrap_or_else(|| sample_rate(&mut rng));
                sets.push(generate_points(&gt[frame], frame, k, rate, &mut rng)?);
            }
            (frame, sets)
        } else {
            let Some(frame) = session.select_worst_frame(gt)? else {
                break;
            };
            let pred = &session.latest_labels().expect("a round has completed")[frame];
            let mut sets = Vec::new();
            for k in 1..=objects as u8 {
                let set = synthesize_error_scribbles(pred, &gt[frame], frame, k)?;
                if !set.is_empty() {
                    sets.push(set);
                }
            }
            (frame, sets)
        };
        results.push(session.run_round(frame, &scribbles)?);
    }
    Ok(results)
}
