//! DAVIS-style directory layout:
//!
//! ```text
//! <sequence>/JPEGImages/00000.jpg ...
//! <sequence>/Annotations/00000.png ...   (optional, 8-bit indexed)
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Seek, Write};
use std::path::{Path, PathBuf};

use super::VideoSequence;
use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::metrics::{boundary_f_default, jaccard};
use crate::workflow::Session;

const FRAME_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// The 256-entry PASCAL VOC colormap used by DAVIS masks, as RGB triples.
pub fn palette() -> [[u8; 3]; 256] {
    let mut out = [[0u8; 3]; 256];
    for (i, entry) in out.iter_mut().enumerate() {
        let mut c = i;
        for j in 0..8 {
            for (ch, v) in entry.iter_mut().enumerate() {
                *v |= (((c >> ch) & 1) as u8) << (7 - j);
            }
            c >>= 3;
        }
    }
    out
}

/// Numbered files in `dir` whose extension is in `exts`, sorted by number.
fn numbered_files(dir: &Path, exts: &[&str]) -> Result<Vec<(u64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::load(dir, e.to_string()))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::load(&path, "file name is not a frame number"));
        }
        let n = stem
            .parse()
            .map_err(|_| Error::load(&path, "frame number too large"))?;
        out.push((n, path));
    }
    out.sort();
    Ok(out)
}

/// Loads frames and, when an `Annotations` directory exists, one mask per
/// frame. Any gap, duplicate, size mismatch, or missing mask is an error
/// naming the offending file.
pub fn load_sequence(path: &Path) -> Result<VideoSequence> {
    let frame_dir = path.join("JPEGImages");
    if !frame_dir.is_dir() {
        return Err(Error::load(&frame_dir, "frame directory not found"));
    }
    let files = numbered_files(&frame_dir, &FRAME_EXTENSIONS)?;
    if files.is_empty() {
        return Err(Error::load(&frame_dir, "no frame images"));
    }
    let first = files[0].0;
    for (i, (n, p)) in files.iter().enumerate() {
        if *n != first + i as u64 {
            return Err(Error::load(
                p,
                format!("expected frame number {}", first + i as u64),
            ));
        }
    }

    let mut frames = Vec::with_capacity(files.len());
    for (_, p) in &files {
        let img = image::open(p)
            .map_err(|e| Error::load(p, e.to_string()))?
            .to_rgb8();
        if let Some(f0) = frames.first().map(image::RgbImage::dimensions) {
            if img.dimensions() != f0 {
                return Err(Error::load(
                    p,
                    format!(
                        "size {:?} differs from first frame {f0:?}",
                        img.dimensions()
                    ),
                ));
            }
        }
        frames.push(img);
    }

    let mask_dir = path.join("Annotations");
    let gt = if mask_dir.is_dir() {
        let (w, h) = frames[0].dimensions();
        let mut masks = Vec::with_capacity(files.len());
        for (_, p) in &files {
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .expect("numbered above");
            let mp = mask_dir.join(format!("{stem}.png"));
            if !mp.is_file() {
                return Err(Error::load(&mp, "mask missing for frame"));
            }
            let m = read_label_png(&mp)?;
            if (m.width(), m.height()) != (w as usize, h as usize) {
                return Err(Error::load(&mp, "mask size differs from frame size"));
            }
            masks.push(m);
        }
        Some(masks)
    } else {
        None
    };

    let object_count = gt
        .as_ref()
        .map(|g| g.iter().map(LabelMap::max_label).max().unwrap_or(0))
        .unwrap_or(0)
        .max(1) as usize;
    let id = path
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("sequence")
        .to_string();
    VideoSequence::new(id, frames, gt, object_count)
}

/// Decodes an 8-bit (or packed 1/2/4-bit) indexed or grayscale PNG into
/// labels; the index is the label.
pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let file = File::open(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_label_png(BufReader::new(file)).map_err(|e| Error::load(path, e.to_string()))
}

/// [`read_label_png`] over any seekable reader.
pub fn decode_label_png<R: BufRead + Seek>(input: R) -> Result<LabelMap> {
    let bad = |reason: String| Error::Document(reason);
    let mut decoder = png::Decoder::new(input);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(e.to_string()))?;
    if !matches!(
        info.color_type,
        png::ColorType::Indexed | png::ColorType::Grayscale
    ) {
        return Err(bad(format!(
            "expected an indexed mask, found {:?}",
            info.color_type
        )));
    }
    let bits = match info.bit_depth {
        png::BitDepth::One => 1,
        png::BitDepth::Two => 2,
        png::BitDepth::Four => 4,
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => return Err(bad("16-bit masks are not supported".into())),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut labels = Vec::with_capacity(w * h);
    for row in buf[..info.line_size * h].chunks_exact(info.line_size) {
        for x in 0..w {
            let bit = x * bits;
            let byte = row[bit / 8];
            let shift = 8 - bits - bit % 8;
            labels.push((byte >> shift) & ((1u16 << bits) - 1) as u8);
        }
    }
    LabelMap::from_vec(h, w, labels)
}

/// Writes labels as an 8-bit indexed PNG with the VOC palette.
pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    encode_label_png(BufWriter::new(File::create(path)?), labels)
}

/// Encodes labels as an 8-bit indexed PNG into any writer.
pub fn encode_label_png<W: Write>(out: W, labels: &LabelMap) -> Result<()> {
    let mut encoder = png::Encoder::new(out, labels.width() as u32, labels.height() as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(palette().concat());
    let to_err = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(to_err)?;
    writer.write_image_data(labels.labels()).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Per-frame `frame,object,j,f` rows.
pub fn write_metrics_table(
    path: &Path,
    preds: &[LabelMap],
    gt: &[LabelMap],
    objects: usize,
) -> Result<()> {
    if preds.len() != gt.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} masks",
            preds.len(),
            gt.len()
        )));
    }
    let to_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(["frame", "object", "j", "f"])
        .map_err(to_err)?;
    for (t, (p, g)) in preds.iter().zip(gt).enumerate() {
        for k in 1..=objects as u8 {
            let j = jaccard(p, g, k)?;
            let f = boundary_f_default(p, g, k)?;
            w.write_record([
                t.to_string(),
                k.to_string(),
                format!("{j:.6}"),
                format!("{f:.6}"),
            ])
            .map_err(to_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `round_NN/00000.png ...` under `dir`, plus `round_NN/metrics.csv`
/// when the session has ground truth. Returns the written paths.
pub fn save_round_masks(session: &Session, round: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    let labels = session
        .labels(round)
        .ok_or_else(|| Error::Input(format!("round {round} has not been completed")))?;
    let out = dir.join(format!("round_{round:02}"));
    fs::create_dir_all(&out)?;
    let mut written = Vec::with_capacity(labels.len() + 1);
    for (t, l) in labels.iter().enumerate() {
        let p = out.join(format!("{t:05}.png"));
        write_label_png(&p, l)?;
        written.push(p);
    }
    if let Some(gt) = session.ground_truth() {
        let p = out.join("metrics.csv");
        write_metrics_table(&p, labels, gt, session.object_count())?;
        written.push(p);
    }
    Ok(written)
}
