use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{class_balanced_ce, combined_loss, DEFAULT_LAMBDA};
use super::minisequence::{sample_minisequence, MiniSequence};
use crate::data_io::VideoSequence;
use crate::error::{Error, Result};
use crate::maps::ProbabilityMap;
use crate::scribble_robot::{
    deform_mask, generate_points, sample_rate, synthesize_error_scribbles, AffineJitter,
    ScribbleSet,
};
use crate::segmenter::{HeadParams, Segmenter, SegmenterConfig};

/// Lower and upper bounds of `[κ, γ, α, β]` during the search.
pub const BOUNDS: [(f64, f64); 4] = [(0.1, 100.0), (0.0, 5.0), (0.0, 1.0), (0.0, 1.0)];
const INITIAL_STEPS: [f64; 4] = [2.0, 0.1, 0.1, 0.1];
const MAX_HALVINGS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub iterations: usize,
    /// Mini-sequences drawn once and reused at every evaluation.
    pub minisequences: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Relative central-difference step.
    pub fd_step: f64,
    pub jitter: AffineJitter,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            minisequences: 8,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            fd_step: 1e-3,
            jitter: AffineJitter::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub params: HeadParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Objective after each iteration.
    pub history: Vec<f64>,
}

pub fn params_to_vec(p: &HeadParams) -> [f64; 4] {
    [p.kappa, p.gamma, p.alpha, p.beta]
}

pub fn params_from_vec(base: &HeadParams, v: [f64; 4]) -> HeadParams {
    HeadParams {
        kappa: v[0],
        gamma: v[1],
        alpha: v[2],
        beta: v[3],
        ..*base
    }
}

struct Sample {
    sequence: usize,
    mini: MiniSequence,
    points: Vec<ScribbleSet>,
    prior: ProbabilityMap,
    corrections: Vec<ScribbleSet>,
}

/// Mean loss over a fixed set of mini-sequences. Each sample scores a
/// first-round annotation from points, a later-round annotation from a
/// deformed prior plus corrective scribbles, and the transfer chain over
/// the four targets.
pub struct Objective<'a> {
    sequences: &'a [VideoSequence],
    samples: Vec<Sample>,
    lambda: f64,
    base: SegmenterConfig,
}

impl<'a> Objective<'a> {
    pub fn new(
        sequences: &'a [VideoSequence],
        base: SegmenterConfig,
        config: &CalibrationConfig,
    ) -> Result<Self> {
        let usable: Vec<usize> = (0..sequences.len())
            .filter(|&i| {
                sequences[i].gt.is_some() && sequences[i].len() > super::minisequence::WINDOW
            })
            .collect();
        if usable.is_empty() {
            return Err(Error::Input(
                "calibration needs a sequence with ground truth and at least 8 frames".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut samples = Vec::with_capacity(config.minisequences);
        let mut attempts = 0;
        while samples.len() < config.minisequences {
            attempts += 1;
            if attempts > 100 * config.minisequences.max(1) {
                return Err(Error::Input(
                    "no annotated frame with a visible object found".into(),
                ));
            }
            let sequence = usable[samples.len() % usable.len()];
            let seq = &sequences[sequence];
            let gt = seq.ground_truth()?;
            let mini = sample_minisequence(seq.len(), &mut rng)?;
            let g = &gt[mini.annotated];
            let present: Vec<u8> = (1..=seq.object_count as u8)
                .filter(|&k| g.area(k) > 0)
                .collect();
            if present.is_empty() {
                continue;
            }
            let points = present
                .iter()
                .map(|&k| {
                    let rate = sample_rate(&mut rng);
                    generate_points(g, mini.annotated, k, rate, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let jitter = AffineJitter {
                seed: rand::Rng::random(&mut rng),
                ..config.jitter.clone()
            };
            let deformed = deform_mask(g, &jitter);
            let corrections = present
                .iter()
                .map(|&k| synthesize_error_scribbles(&deformed, g, mini.annotated, k))
                .filter(|s| s.as_ref().map_or(true, |s| !s.is_empty()))
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                sequence,
                mini,
                points,
                prior: deformed.to_probability(seq.object_count),
                corrections,
            });
        }
        Ok(Self {
            sequences,
            samples,
            lambda: config.lambda,
            base,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn evaluate(&self, params: &HeadParams) -> Result<f64> {
        let seg = Segmenter::new(SegmenterConfig {
            head: *params,
            ..self.base.clone()
        })?;
        let mut total = 0.0;
        for s in &self.samples {
            total += self.sample_loss(&seg, s)?;
        }
        let mean = total / self.samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Calibration {
                params: format!("{params:?}"),
            });
        }
        Ok(mean)
    }

    fn sample_loss(&self, seg: &Segmenter, s: &Sample) -> Result<f64> {
        let seq = &self.sequences[s.sequence];
        let gt = seq.ground_truth()?;
        let k = seq.object_count;
        let a = s.mini.annotated;
        let fa = seg.features(&seq.frames[a])?;

        let first = seg.astep_with_features(&fa, &s.points, None, k)?;
        let mut terms = vec![class_balanced_ce(&first, &gt[a])?];
        let corrected = seg.astep_with_features(&fa, &s.corrections, Some(&s.prior), k)?;
        terms.push(class_balanced_ce(&corrected, &gt[a])?);

        let mut prev_f = fa.clone();
        let mut prev_mask = first.clone();
        for &t in &s.mini.targets {
            let ft = seg.features(&seq.frames[t])?;
            let out = seg.tstep(&ft, &prev_f, &prev_mask, &[(&fa, &first)])?;
            terms.push(
                combined_loss(&out.probability, &out.local_estimate, &gt[t], self.lambda)?.total,
            );
            prev_mask = out.probability;
            prev_f = ft;
        }
        Ok(terms.iter().sum::<f64>() / terms.len() as f64)
    }

    /// Central differences with step `rel · max(1, |θᵢ|)`, shifted inward
    /// when the point sits within one step of a bound.
    pub fn gradient(&self, params: &HeadParams, rel: f64) -> Result<[f64; 4]> {
        let theta = params_to_vec(params);
        let mut g = [0.0; 4];
        for i in 0..4 {
            let h = rel * theta[i].abs().max(1.0);
            let (lo, hi) = BOUNDS[i];
            let centre = theta[i].clamp(lo + h, hi - h);
            let mut plus = theta;
            plus[i] = centre + h;
            let mut minus = theta;
            minus[i] = centre - h;
            let fp = self.evaluate(&params_from_vec(params, plus))?;
            let fm = self.evaluate(&params_from_vec(params, minus))?;
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }
}

/// Coordinate descent on `[κ, γ, α, β]`: each iteration takes a finite
/// difference gradient, then tries a signed step on each coordinate in
/// turn, halving it until the objective improves. Only improvements are
/// accepted, so the final loss never exceeds the initial one.
pub fn calibrate(
    params0: &HeadParams,
    sequences: &[VideoSequence],
    base: &SegmenterConfig,
    config: &CalibrationConfig,
) -> Result<CalibrationReport> {
    params0.validate()?;
    let objective = Objective::new(sequences, base.clone(), config)?;
    let mut theta = params_to_vec(params0);
    let mut loss = objective.evaluate(params0)?;
    let initial_loss = loss;
    let mut steps = INITIAL_STEPS;
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let g = objective.gradient(&params_from_vec(params0, theta), config.fd_step)?;
        for i in 0..4 {
            if g[i] == 0.0 {
                continue;
            }
            let mut s = steps[i];
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let mut cand = theta;
                cand[i] = (theta[i] - g[i].signum() * s).clamp(BOUNDS[i].0, BOUNDS[i].1);
                if cand[i] == theta[i] {
                    break;
                }
                let l = objective.evaluate(&params_from_vec(params0, cand))?;
                if l < loss {
                    theta = cand;
                    loss = l;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            steps[i] = if accepted {
                s * 1.5
            } else {
                (s * 0.5).max(1e-4)
            };
        }
        history.push(loss);
    }
    Ok(CalibrationReport {
        params: params_from_vec(params0, theta),
        initial_loss,
        final_loss: loss,
        history,
    })
}
