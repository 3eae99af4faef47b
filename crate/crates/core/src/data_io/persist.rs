//! Session snapshots: a JSON document plus per-round label PNGs and raw
//! probability files, so a resumed session continues bit-for-bit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::davis::{read_label_png, write_label_png};
use crate::error::{Error, Result};
use crate::maps::{LabelMap, ProbabilityMap};
use crate::numerics::Grid;
use crate::segmenter::{Segmenter, SegmenterConfig};
use crate::workflow::{Annotation, Session};

const SNAPSHOT_FILE: &str = "session.json";
const PROB_MAGIC: &[u8; 4] = b"IVPM";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub version: u32,
    pub id: String,
    /// Where the frames came from, if known.
    pub sequence: Option<String>,
    pub frame_count: usize,
    pub object_count: usize,
    pub height: usize,
    pub width: usize,
    pub round: usize,
    pub registry: Vec<Annotation>,
    pub config: SegmenterConfig,
    /// Relative paths, `[round - 1][frame]`.
    pub label_files: Vec<Vec<String>>,
    /// Relative paths of the latest probabilities, one per frame.
    pub probability_files: Vec<String>,
}

/// Little-endian `IVPM`, then `u32` height, width, channels, then the
/// `f64` values in row-major HWC order.
pub fn write_probability_file(path: &Path, map: &ProbabilityMap) -> Result<()> {
    let g = map.grid();
    let mut bytes = Vec::with_capacity(16 + g.data().len() * 8);
    bytes.extend_from_slice(PROB_MAGIC);
    for d in [g.height(), g.width(), g.channels()] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in g.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_probability_file(path: &Path) -> Result<ProbabilityMap> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::load(path, e.to_string()))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != PROB_MAGIC {
        return Err(Error::load(path, "not a probability file"));
    }
    let dim = |i: usize| {
        u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
    };
    let (h, w, c) = (dim(0), dim(1), dim(2));
    if bytes.len() != 16 + h * w * c * 8 {
        return Err(Error::load(
            path,
            format!("{h}x{w}x{c} map has the wrong byte length"),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let grid = Grid::from_vec(h, w, c, data).map_err(|e| Error::load(path, e.to_string()))?;
    ProbabilityMap::from_grid(grid).map_err(|e| Error::load(path, e.to_string()))
}

/// Writes the session under `dir` and returns the snapshot document.
pub fn save_session(
    session: &Session,
    dir: &Path,
    sequence: Option<&str>,
) -> Result<SessionSnapshot> {
    fs::create_dir_all(dir.join("probabilities"))?;
    let mut label_files = Vec::new();
    for (r, labels) in session.history().iter().enumerate() {
        let rel_dir = format!("labels/round_{:02}", r + 1);
        fs::create_dir_all(dir.join(&rel_dir))?;
        let mut names = Vec::with_capacity(labels.len());
        for (t, l) in labels.iter().enumerate() {
            let rel = format!("{rel_dir}/{t:05}.png");
            write_label_png(&dir.join(&rel), l)?;
            names.push(rel);
        }
        label_files.push(names);
    }
    let mut probability_files = Vec::new();
    for (t, p) in session.probabilities().iter().enumerate() {
        let rel = format!("probabilities/{t:05}.bin");
        write_probability_file(&dir.join(&rel), p)?;
        probability_files.push(rel);
    }
    let (height, width) = session.frame_size();
    let snapshot = SessionSnapshot {
        version: SNAPSHOT_VERSION,
        id: session.id().to_string(),
        sequence: sequence.map(str::to_string),
        frame_count: session.frame_count(),
        object_count: session.object_count(),
        height,
        width,
        round: session.round(),
        registry: session.registry().to_vec(),
        config: session.segmenter().config().clone(),
        label_files,
        probability_files,
    };
    let text = serde_json::to_string_pretty(&snapshot).expect("snapshots always serialize");
    fs::write(dir.join(SNAPSHOT_FILE), text)?;
    Ok(snapshot)
}

/// Rebuilds a session from `dir` over the given frames (and ground truth).
pub fn load_session(
    dir: &Path,
    frames: Vec<RgbImage>,
    gt: Option<Vec<LabelMap>>,
) -> Result<Session> {
    let path = dir.join(SNAPSHOT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
    let snap: SessionSnapshot =
        serde_json::from_str(&text).map_err(|e| Error::load(&path, e.to_string()))?;
    if snap.version != SNAPSHOT_VERSION {
        return Err(Error::load(
            &path,
            format!("unsupported snapshot version {}", snap.version),
        ));
    }
    if frames.len() != snap.frame_count {
        return Err(Error::load(
            &path,
            format!(
                "snapshot has {} frames, {} supplied",
                snap.frame_count,
                frames.len()
            ),
        ));
    }
    if snap.round != snap.registry.len() || snap.round != snap.label_files.len() {
        return Err(Error::load(
            &path,
            "round count disagrees with registry or label files",
        ));
    }
    let mut session = Session::new(
        snap.id.clone(),
        frames,
        snap.object_count,
        Segmenter::new(snap.config.clone())?,
    )?;
    if session.frame_size() != (snap.height, snap.width) {
        return Err(Error::load(&path, "frame size differs from snapshot"));
    }
    if let Some(gt) = gt {
        session = session.with_ground_truth(gt)?;
    }
    let history = snap
        .label_files
        .iter()
        .map(|round| {
            round
                .iter()
                .map(|rel| read_label_png(&dir.join(rel)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let current = snap
        .probability_files
        .iter()
        .map(|rel| read_probability_file(&dir.join(rel)))
        .collect::<Result<Vec<_>>>()?;
    session.restore(snap.registry, current, history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid =
            Grid::from_vec(2, 3, 2, (0..12).map(|i| i as f64 / 11.0 + 1e-17).collect()).unwrap();
        let map = ProbabilityMap::from_grid(grid).unwrap();
        let p = dir.path().join("m.bin");
        write_probability_file(&p, &map).unwrap();
        assert_eq!(read_probability_file(&p).unwrap(), map);
        fs::write(&p, b"IVPM\x01\0\0\0").unwrap();
        assert!(read_probability_file(&p).is_err());
    }
}
