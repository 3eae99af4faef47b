use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{LabelMap, ProbabilityMap};
use crate::numerics::{resample, Grid, ResampleMode};

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-6;
/// Default weight of the auxiliary term.
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_c: f64,
    pub l_aux: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(l_c: f64, l_aux: f64, lambda: f64) -> Self {
        Self {
            l_c,
            l_aux,
            lambda,
            total: l_c + lambda * l_aux,
        }
    }
}

/// Class-balanced binary cross-entropy, averaged over object channels.
/// Foreground pixels weigh `|bg|/HW` and background pixels `|fg|/HW`; a
/// frame with only one class weighs that class by 1.
pub fn class_balanced_ce(pred: &ProbabilityMap, gt: &LabelMap) -> Result<f64> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::dim(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let k = pred.object_count();
    let hw = gt.labels().len() as f64;
    let mut total = 0.0;
    for object in 0..k {
        let label = (object + 1) as u8;
        let fg = gt.area(label) as f64;
        let bg = hw - fg;
        let (w_fg, w_bg) = if fg == 0.0 || bg == 0.0 {
            (1.0, 1.0)
        } else {
            (bg / hw, fg / hw)
        };
        let mut sum = 0.0;
        for (px, &l) in pred.grid().data().chunks_exact(k).zip(gt.labels()) {
            let p = px[object].clamp(EPS, 1.0 - EPS);
            sum -= if l == label {
                w_fg * p.ln()
            } else {
                w_bg * (1.0 - p).ln()
            };
        }
        total += sum / hw;
    }
    Ok(total / k as f64)
}

/// Mean squared difference between a local-grid estimate and the
/// area-downsampled one-hot ground truth.
pub fn aux_mse(local: &Grid, gt: &LabelMap) -> Result<f64> {
    if local.height() > gt.height() || local.width() > gt.width() || local.channels() == 0 {
        return Err(Error::dim(format!(
            "local estimate {:?} cannot come from a {}x{} frame",
            local.shape(),
            gt.height(),
            gt.width()
        )));
    }
    let target = resample(
        gt.to_probability(local.channels()).grid(),
        local.height(),
        local.width(),
        ResampleMode::Area,
    )?;
    let n = local.data().len() as f64;
    Ok(local
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

pub fn combined_loss(
    pred: &ProbabilityMap,
    local: &Grid,
    gt: &LabelMap,
    lambda: f64,
) -> Result<LossReport> {
    Ok(LossReport::new(
        class_balanced_ce(pred, gt)?,
        aux_mse(local, gt)?,
        lambda,
    ))
}
