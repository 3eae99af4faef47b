//! Interactive video object segmentation engine.
//!
//! A user (or the scribble robot) annotates one frame per round. The
//! annotation step turns scribbles into a probability map for that frame;
//! the transfer step then carries the result to every other frame, mixing
//! a global estimate (matched against all annotated frames) with a local
//! one (matched against the adjacent, already segmented frame). Rounds
//! repeat until the result is good enough.

pub mod calibration;
pub mod data_io;
mod error;
pub mod features;
pub mod maps;
pub mod metrics;
pub mod numerics;
pub mod scribble_robot;
pub mod segmenter;
pub mod transfer;
pub mod workflow;

pub use error::{Error, Result};
pub use features::{ExtractorConfig, FeatureGrid, Level};
pub use maps::{LabelMap, ProbabilityMap};
pub use scribble_robot::{ScribbleDocument, ScribbleSet};
pub use segmenter::{HeadParams, Segmenter};
pub use workflow::{RoundResult, Session};
