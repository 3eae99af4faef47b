//! Training losses and a small parameter fit that minimizes them on
//! synthetic mini-sequences.

mod fit;
mod loss;
mod minisequence;

use std::fs;
use std::path::Path;

pub use fit::{
    calibrate, params_from_vec, params_to_vec, CalibrationConfig, CalibrationReport, Objective,
    BOUNDS,
};
pub use loss::{aux_mse, class_balanced_ce, combined_loss, LossReport, DEFAULT_LAMBDA, EPS};
pub use minisequence::{sample_minisequence, Direction, MiniSequence, TARGETS, WINDOW};

use crate::error::{Error, Result};
use crate::segmenter::HeadParams;

/// Writes head parameters as a TOML document.
pub fn write_params_file(path: &Path, params: &HeadParams) -> Result<()> {
    fs::write(
        path,
        toml::to_string_pretty(params).expect("params always serialize"),
    )?;
    Ok(())
}

pub fn read_params_file(path: &Path) -> Result<HeadParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let params: HeadParams = toml::from_str(&text).map_err(|e| Error::load(path, e.to_string()))?;
    params
        .validate()
        .map_err(|e| Error::load(path, e.to_string()))?;
    Ok(params)
}
