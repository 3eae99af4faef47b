//! Sequences, synthetic generation, on-disk masks, configuration, and
//! session snapshots.

mod config;
mod davis;
mod persist;
mod synthetic;

use image::RgbImage;

pub use config::{AppConfig, MetricsConfig};
pub use davis::{
    decode_label_png, encode_label_png, load_sequence, palette, read_label_png, save_round_masks,
    write_label_png, write_metrics_table,
};
pub use persist::{
    load_session, read_probability_file, save_session, write_probability_file, SessionSnapshot,
};
pub use synthetic::{
    benchmark_suite, generate_synthetic, ObjectSpec, OccluderSpec, Shape, SyntheticSpec,
};

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Frames plus optional per-frame ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub id: String,
    pub frames: Vec<RgbImage>,
    pub gt: Option<Vec<LabelMap>>,
    pub object_count: usize,
}

impl VideoSequence {
    pub fn new(
        id: impl Into<String>,
        frames: Vec<RgbImage>,
        gt: Option<Vec<LabelMap>>,
        object_count: usize,
    ) -> Result<Self> {
        let seq = Self {
            id: id.into(),
            frames,
            gt,
            object_count,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::Input(format!("sequence {} has no frames", self.id)));
        };
        let (w, h) = first.dimensions();
        if let Some(t) = self.frames.iter().position(|f| f.dimensions() != (w, h)) {
            return Err(Error::dim(format!(
                "frame {t} differs in size from frame 0"
            )));
        }
        if let Some(gt) = &self.gt {
            if gt.len() != self.frames.len() {
                return Err(Error::Input(format!(
                    "{} masks for {} frames",
                    gt.len(),
                    self.frames.len()
                )));
            }
            if let Some(t) = gt
                .iter()
                .position(|g| (g.width(), g.height()) != (w as usize, h as usize))
            {
                return Err(Error::dim(format!(
                    "mask {t} differs in size from the frames"
                )));
            }
            if let Some(t) = gt
                .iter()
                .position(|g| g.max_label() as usize > self.object_count)
            {
                return Err(Error::Input(format!(
                    "mask {t} has labels beyond {}",
                    self.object_count
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height() as usize
    }

    pub fn width(&self) -> usize {
        self.frames[0].width() as usize
    }

    pub fn ground_truth(&self) -> Result<&[LabelMap]> {
        self.gt
            .as_deref()
            .ok_or_else(|| Error::Input(format!("sequence {} has no ground truth", self.id)))
    }
}
