//! Emulated user: first-round points, corrective scribbles from error
//! regions, mask deformation, and the automatic multi-round driver.

mod corrective;
mod deform;
mod interact;
mod points;
mod scribbles;

pub use corrective::{
    connected_components, longest_skeleton_path, skeletonize, synthesize_error_scribbles,
    MIN_COMPONENT_AREA,
};
pub use deform::{deform_mask, warp_labels, Affine, AffineJitter};
pub use interact::{robot_interact, RobotConfig};
pub use points::{generate_points, sample_rate, MAX_RATE, MIN_RATE};
pub use scribbles::{
    Point, Polarity, ScribbleDocument, ScribbleRaster, ScribbleSet, Stroke, StrokeRecord,
};
