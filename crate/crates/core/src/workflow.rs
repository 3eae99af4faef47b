//! Round-based annotate-then-propagate protocol.
//!
//! Each round annotates one new frame, segments it from scribbles, then
//! propagates frame by frame forward and backward. A ray stops just before
//! the nearest previously annotated frame. Propagated frames are blended
//! with the previous round's masks according to their distance from the
//! new annotation and from that stopping frame.

use std::thread;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{LabelMap, ProbabilityMap};
use crate::metrics::jaccard;
use crate::scribble_robot::ScribbleSet;
use crate::segmenter::{FrameFeatures, Segmenter};

/// Blend weights `(w_curr, w_prev)` for frame `t` propagated from the new
/// annotation `t_r`, with `t_b` the nearest earlier annotation on the ray.
pub fn superposition_weights(t: usize, t_r: usize, t_b: usize) -> Result<(f64, f64)> {
    if t_r == t_b {
        return Err(Error::DegenerateSpan(t_r));
    }
    let (t, t_r, t_b) = (t as f64, t_r as f64, t_b as f64);
    let span = t_r - t_b;
    Ok((0.5 * (1.0 + (t - t_b) / span), (t_r - t) / (2.0 * span)))
}

/// `w_curr·P^r + w_prev·P^{r−1}`. Pixels where both rounds agree are copied
/// unchanged, so identical inputs give an identical output.
pub fn superpose(
    p_curr: &ProbabilityMap,
    p_prev: &ProbabilityMap,
    t: usize,
    t_r: usize,
    t_b: usize,
) -> Result<ProbabilityMap> {
    let (a, b) = superposition_weights(t, t_r, t_b)?;
    if p_curr.grid().shape() != p_prev.grid().shape() {
        return Err(Error::dim("superposed maps differ in shape"));
    }
    let mut out = p_curr.clone();
    for (c, &p) in out.data_mut().iter_mut().zip(p_prev.grid().data()) {
        if *c != p {
            *c = (a * *c + b * p).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Picks the lowest-scoring frame not in `excluded`; ties go to the lowest
/// index. `None` when every frame is excluded.
pub fn worst_frame(scores: &[f64], excluded: &[usize]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(t, _)| !excluded.contains(t))
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(t, _)| t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub round: usize,
    pub frame: usize,
}

/// How a frame suggestion was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuggestionBasis {
    /// Lowest J against ground truth.
    GroundTruth,
    /// Largest label change between the last two rounds (heuristic).
    Instability,
    /// Farthest from every annotated frame (heuristic, first round only).
    Distance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub frame: usize,
    pub basis: SuggestionBasis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub annotated_frame: usize,
    pub labels: Vec<LabelMap>,
    /// Mean J over objects per frame, when ground truth is attached.
    pub frame_j: Option<Vec<f64>>,
    pub suggestion: Option<Suggestion>,
}

impl RoundResult {
    pub fn mean_j(&self) -> Option<f64> {
        self.frame_j
            .as_ref()
            .map(|j| j.iter().sum::<f64>() / j.len() as f64)
    }
}

/// One video under interactive segmentation.
#[derive(Clone, Debug)]
pub struct Session {
    id: String,
    frames: Vec<RgbImage>,
    features: Vec<FrameFeatures>,
    object_count: usize,
    segmenter: Segmenter,
    gt: Option<Vec<LabelMap>>,
    registry: Vec<Annotation>,
    /// Latest per-frame probabilities; empty before round 1.
    current: Vec<ProbabilityMap>,
    /// Resolved labels of every completed round.
    history: Vec<Vec<LabelMap>>,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        frames: Vec<RgbImage>,
        object_count: usize,
        segmenter: Segmenter,
    ) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Input("a session needs at least one frame".into()));
        };
        if object_count == 0 || object_count > u8::MAX as usize {
            return Err(Error::Input(format!(
                "object count {object_count} not in 1..=255"
            )));
        }
        let size = first.dimensions();
        if let Some(t) = frames.iter().position(|f| f.dimensions() != size) {
            return Err(Error::dim(format!(
                "frame {t} is {:?}, frame 0 is {size:?}",
                frames[t].dimensions()
            )));
        }
        let features = frames
            .iter()
            .map(|f| segmenter.features(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: id.into(),
            frames,
            features,
            object_count,
            segmenter,
            gt: None,
            registry: Vec::new(),
            current: Vec::new(),
            history: Vec::new(),
        })
    }

    /// Attaches per-frame ground truth for scoring and robot mode.
    pub fn with_ground_truth(mut self, gt: Vec<LabelMap>) -> Result<Self> {
        if gt.len() != self.frames.len() {
            return Err(Error::Input(format!(
                "{} ground-truth masks for {} frames",
                gt.len(),
                self.frames.len()
            )));
        }
        let (w, h) = self.frames[0].dimensions();
        for (t, g) in gt.iter().enumerate() {
            if (g.height(), g.width()) != (h as usize, w as usize) {
                return Err(Error::dim(format!(
                    "ground truth {t} does not match frame size"
                )));
            }
            if g.max_label() as usize > self.object_count {
                return Err(Error::Input(format!(
                    "ground truth {t} has label {} beyond object count {}",
                    g.max_label(),
                    self.object_count
                )));
            }
        }
        self.gt = Some(gt);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn object_count(&self) -> usize {
        self.object_count
    }

    /// `(height, width)` of every frame.
    pub fn frame_size(&self) -> (usize, usize) {
        let (w, h) = self.frames[0].dimensions();
        (h as usize, w as usize)
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn segmenter(&self) -> &Segmenter {
        &self.segmenter
    }

    pub fn ground_truth(&self) -> Option<&[LabelMap]> {
        self.gt.as_deref()
    }

    /// Completed rounds.
    pub fn round(&self) -> usize {
        self.history.len()
    }

    pub fn registry(&self) -> &[Annotation] {
        &self.registry
    }

    pub fn annotated_frames(&self) -> Vec<usize> {
        self.registry.iter().map(|a| a.frame).collect()
    }

    pub fn is_annotated(&self, frame: usize) -> bool {
        self.registry.iter().any(|a| a.frame == frame)
    }

    /// Latest probabilities; empty before the first round.
    pub fn probabilities(&self) -> &[ProbabilityMap] {
        &self.current
    }

    /// Labels after round `round` (1-based).
    pub fn labels(&self, round: usize) -> Option<&[LabelMap]> {
        round
            .checked_sub(1)
            .and_then(|r| self.history.get(r))
            .map(Vec::as_slice)
    }

    pub fn latest_labels(&self) -> Option<&[LabelMap]> {
        self.history.last().map(Vec::as_slice)
    }

    pub fn history(&self) -> &[Vec<LabelMap>] {
        &self.history
    }

    /// Rebuilds a session from persisted state. The caller supplies the
    /// frames; probabilities and label history must be consistent with them.
    pub fn restore(
        mut self,
        registry: Vec<Annotation>,
        current: Vec<ProbabilityMap>,
        history: Vec<Vec<LabelMap>>,
    ) -> Result<Self> {
        let t = self.frame_count();
        let rounds_ok = registry.len() == history.len()
            && registry
                .iter()
                .enumerate()
                .all(|(i, a)| a.round == i + 1 && a.frame < t);
        let mut frames: Vec<usize> = registry.iter().map(|a| a.frame).collect();
        frames.sort_unstable();
        frames.dedup();
        if !rounds_ok || frames.len() != registry.len() {
            return Err(Error::Protocol("inconsistent annotation registry".into()));
        }
        let (h, w) = self.frame_size();
        let shapes_ok = (history.is_empty() && current.is_empty())
            || (current.len() == t
                && current.iter().all(|p| {
                    (p.height(), p.width(), p.object_count()) == (h, w, self.object_count)
                })
                && history
                    .iter()
                    .all(|r| r.len() == t && r.iter().all(|l| (l.height(), l.width()) == (h, w))));
        if !shapes_ok {
            return Err(Error::dim("restored masks do not match the sequence"));
        }
        self.registry = registry;
        self.current = current;
        self.history = history;
        Ok(self)
    }

    /// Runs one round: annotate `frame` from `scribbles`, propagate both
    /// ways, blend with the previous round, and record the result.
    pub fn run_round(&mut self, frame: usize, scribbles: &[ScribbleSet]) -> Result<RoundResult> {
        let t_count = self.frame_count();
        if frame >= t_count {
            return Err(Error::Input(format!(
                "frame {frame} out of range 0..{t_count}"
            )));
        }
        if let Some(s) = scribbles.iter().find(|s| s.frame != frame) {
            return Err(Error::Input(format!(
                "scribbles for frame {} submitted to frame {frame}",
                s.frame
            )));
        }
        if self.is_annotated(frame) {
            return Err(Error::Protocol(format!(
                "frame {frame} is already annotated"
            )));
        }

        let prior = self.current.get(frame);
        let annotated_mask = self.segmenter.astep_with_features(
            &self.features[frame],
            scribbles,
            prior,
            self.object_count,
        )?;

        let previous: &[usize] = &self.annotated_frames();
        let forward_stop = previous.iter().copied().filter(|&a| a > frame).min();
        let backward_stop = previous.iter().copied().filter(|&a| a < frame).max();
        let forward: Vec<usize> = (frame + 1..forward_stop.unwrap_or(t_count)).collect();
        let backward: Vec<usize> = (backward_stop.map_or(0, |b| b + 1)..frame).rev().collect();

        let mut sources: Vec<(&FrameFeatures, &ProbabilityMap)> = previous
            .iter()
            .map(|&a| (&self.features[a], &self.current[a]))
            .collect();
        sources.push((&self.features[frame], &annotated_mask));

        let (fwd, bwd) = thread::scope(|s| {
            let f = s
                .spawn(|| self.propagate(frame, &annotated_mask, &forward, forward_stop, &sources));
            let b = self.propagate(frame, &annotated_mask, &backward, backward_stop, &sources);
            (f.join().expect("propagation thread panicked"), b)
        });
        let (fwd, bwd) = (fwd?, bwd?);

        let mut next = if self.current.is_empty() {
            let (h, w) = self.frame_size();
            vec![ProbabilityMap::filled(h, w, self.object_count, 0.0); t_count]
        } else {
            self.current.clone()
        };
        next[frame] = annotated_mask;
        for (t, p) in forward.iter().zip(fwd).chain(backward.iter().zip(bwd)) {
            next[*t] = p;
        }

        let labels: Vec<LabelMap> = next.iter().map(|p| self.segmenter.resolve(p)).collect();
        self.current = next;
        self.history.push(labels.clone());
        self.registry.push(Annotation {
            round: self.history.len(),
            frame,
        });

        let frame_j = self
            .gt
            .as_ref()
            .map(|gt| self.frame_scores(&labels, gt))
            .transpose()?;
        Ok(RoundResult {
            round: self.round(),
            annotated_frame: frame,
            labels,
            frame_j,
            suggestion: self.suggest_frame()?,
        })
    }

    /// Chains transfer steps along `ray`, starting next to `t_r`.
    fn propagate(
        &self,
        t_r: usize,
        start: &ProbabilityMap,
        ray: &[usize],
        t_b: Option<usize>,
        sources: &[(&FrameFeatures, &ProbabilityMap)],
    ) -> Result<Vec<ProbabilityMap>> {
        let mut out: Vec<ProbabilityMap> = Vec::with_capacity(ray.len());
        let mut prev_t = t_r;
        for &t in ray {
            let prev_mask = out.last().unwrap_or(start);
            let step = self.segmenter.tstep(
                &self.features[t],
                &self.features[prev_t],
                prev_mask,
                sources,
            )?;
            let p = match (t_b, self.current.get(t)) {
                (Some(t_b), Some(prev_round)) => {
                    superpose(&step.probability, prev_round, t, t_r, t_b)?
                }
                _ => step.probability,
            };
            out.push(p);
            prev_t = t;
        }
        Ok(out)
    }

    fn frame_scores(&self, labels: &[LabelMap], gt: &[LabelMap]) -> Result<Vec<f64>> {
        labels
            .iter()
            .zip(gt)
            .map(|(p, g)| {
                let sum = (1..=self.object_count as u8)
                    .map(|k| jaccard(p, g, k))
                    .sum::<Result<f64>>()?;
                Ok(sum / self.object_count as f64)
            })
            .collect()
    }

    /// Lowest-J frame against `gt`, excluding annotated frames; `None` once
    /// every frame has been annotated.
    pub fn select_worst_frame(&self, gt: &[LabelMap]) -> Result<Option<usize>> {
        let labels = self
            .latest_labels()
            .ok_or_else(|| Error::Protocol("no completed round to choose from".into()))?;
        if gt.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} ground-truth masks for {} frames",
                gt.len(),
                labels.len()
            )));
        }
        Ok(worst_frame(
            &self.frame_scores(labels, gt)?,
            &self.annotated_frames(),
        ))
    }

    /// Next frame to annotate: by ground truth when attached, otherwise by
    /// label instability between the last two rounds, or by distance from
    /// annotated frames after a single round.
    pub fn suggest_frame(&self) -> Result<Option<Suggestion>> {
        if let Some(gt) = &self.gt {
            return Ok(self.select_worst_frame(gt)?.map(|frame| Suggestion {
                frame,
                basis: SuggestionBasis::GroundTruth,
            }));
        }
        let Some(last) = self.history.last() else {
            return Err(Error::Protocol("no completed round to choose from".into()));
        };
        let annotated = self.annotated_frames();
        let (scores, basis): (Vec<f64>, _) = if self.history.len() >= 2 {
            let before = &self.history[self.history.len() - 2];
            let changes = last
                .iter()
                .zip(before)
                .map(|(a, b)| {
                    -(a.labels()
                        .iter()
                        .zip(b.labels())
                        .filter(|(x, y)| x != y)
                        .count() as f64)
                })
                .collect();
            (changes, SuggestionBasis::Instability)
        } else {
            let distance = (0..last.len())
                .map(|t| -(annotated.iter().map(|&a| t.abs_diff(a)).min().unwrap_or(0) as f64))
                .collect();
            (distance, SuggestionBasis::Distance)
        };
        Ok(worst_frame(&scores, &annotated).map(|frame| Suggestion { frame, basis }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(v: f64) -> ProbabilityMap {
        ProbabilityMap::filled(2, 2, 1, v)
    }

    #[test]
    fn weight_endpoints() {
        assert_eq!(superposition_weights(6, 6, 0).unwrap(), (1.0, 0.0));
        assert_eq!(superposition_weights(0, 6, 0).unwrap(), (0.5, 0.5));
        assert_eq!(superposition_weights(3, 6, 0).unwrap(), (0.75, 0.25));
        assert_eq!(superposition_weights(5, 3, 7).unwrap(), (0.75, 0.25));
        assert!(matches!(
            superposition_weights(1, 4, 4),
            Err(Error::DegenerateSpan(4))
        ));
    }

    #[test]
    fn superpose_mixes() {
        let out = superpose(&uniform(1.0), &uniform(0.0), 0, 6, 0).unwrap();
        assert!(out.grid().data().iter().all(|&v| v == 0.5));
        let same = uniform(0.3);
        assert_eq!(superpose(&same, &same, 2, 6, 0).unwrap(), same);
    }

    #[test]
    fn worst_frame_rules() {
        assert_eq!(worst_frame(&[0.9, 0.3, 0.8], &[]), Some(1));
        assert_eq!(worst_frame(&[0.9, 0.3, 0.8], &[1]), Some(2));
        assert_eq!(worst_frame(&[0.5, 0.5], &[]), Some(0));
        assert_eq!(worst_frame(&[0.9, 0.3], &[0, 1]), None);
    }
}
