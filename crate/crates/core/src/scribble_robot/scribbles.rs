use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image-space point; serialized as `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }
}

impl From<[i64; 2]> for Point {
    fn from([x, y]: [i64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [i64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A 1-px polyline. A single point is a valid (degenerate) stroke.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<Point>,
}

impl Stroke {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn point(p: Point) -> Self {
        Self { points: vec![p] }
    }

    /// Pixels covered by the polyline, Bresenham between consecutive points.
    pub fn pixels(&self) -> Vec<Point> {
        let mut out = Vec::new();
        match self.points.as_slice() {
            [] => {}
            [p] => out.push(*p),
            pts => {
                for pair in pts.windows(2) {
                    let seg = bresenham(pair[0], pair[1]);
                    // Skip the shared joint so it is not emitted twice.
                    let skip = usize::from(!out.is_empty());
                    out.extend(seg.into_iter().skip(skip));
                }
            }
        }
        out
    }
}

fn bresenham(a: Point, b: Point) -> Vec<Point> {
    let (mut x, mut y) = (a.x, a.y);
    let dx = (b.x - a.x).abs();
    let dy = -(b.y - a.y).abs();
    let sx = if a.x < b.x { 1 } else { -1 };
    let sy = if a.y < b.y { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push(Point::new(x, y));
        if x == b.x && y == b.y {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Positive and negative strokes for one object on one frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScribbleSet {
    pub frame: usize,
    pub object: u8,
    pub positive: Vec<Stroke>,
    pub negative: Vec<Stroke>,
}

impl ScribbleSet {
    pub fn new(frame: usize, object: u8) -> Self {
        Self {
            frame,
            object,
            positive: Vec::new(),
            negative: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positive.iter().all(|s| s.points.is_empty())
            && self.negative.iter().all(|s| s.points.is_empty())
    }

    pub fn has_positive(&self) -> bool {
        self.positive.iter().any(|s| !s.points.is_empty())
    }

    /// Rasterizes both polarities at image resolution. Fails when a point
    /// falls outside the image or a pixel is claimed by both polarities.
    pub fn rasterize(&self, height: usize, width: usize) -> Result<ScribbleRaster> {
        let mut raster = ScribbleRaster {
            height,
            width,
            positive: vec![false; height * width],
            negative: vec![false; height * width],
        };
        for (strokes, polarity) in [
            (&self.positive, Polarity::Positive),
            (&self.negative, Polarity::Negative),
        ] {
            for stroke in strokes {
                for p in stroke.pixels() {
                    if p.x < 0 || p.y < 0 || p.x as usize >= width || p.y as usize >= height {
                        return Err(Error::Annotation(format!(
                            "object {}: {polarity:?} stroke point ({}, {}) outside {width}x{height} frame",
                            self.object, p.x, p.y
                        )));
                    }
                    let i = p.y as usize * width + p.x as usize;
                    match polarity {
                        Polarity::Positive => raster.positive[i] = true,
                        Polarity::Negative => raster.negative[i] = true,
                    }
                }
            }
        }
        if let Some(i) = (0..height * width).find(|&i| raster.positive[i] && raster.negative[i]) {
            return Err(Error::Annotation(format!(
                "object {}: pixel ({}, {}) is both positive and negative",
                self.object,
                i % width,
                i / width
            )));
        }
        Ok(raster)
    }
}

/// Boolean scribble maps aligned with the image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScribbleRaster {
    pub height: usize,
    pub width: usize,
    pub positive: Vec<bool>,
    pub negative: Vec<bool>,
}

impl ScribbleRaster {
    pub fn positive_pixels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.positive.len()).filter(|&i| self.positive[i])
    }

    pub fn negative_pixels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.negative.len()).filter(|&i| self.negative[i])
    }
}

/// One stroke as it travels over the wire or sits on disk.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrokeRecord {
    pub object: u8,
    pub polarity: Polarity,
    pub points: Vec<Point>,
}

/// Scribbles for one frame, any number of objects.
///
/// ```json
/// {"frame": 3, "strokes": [{"object": 1, "polarity": "positive", "points": [[10, 12], [14, 12]]}]}
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScribbleDocument {
    pub frame: usize,
    pub strokes: Vec<StrokeRecord>,
}

impl ScribbleDocument {
    pub fn from_sets(frame: usize, sets: &[ScribbleSet]) -> Self {
        let mut strokes = Vec::new();
        for set in sets {
            for (list, polarity) in [
                (&set.positive, Polarity::Positive),
                (&set.negative, Polarity::Negative),
            ] {
                strokes.extend(list.iter().map(|s| StrokeRecord {
                    object: set.object,
                    polarity,
                    points: s.points.clone(),
                }));
            }
        }
        Self { frame, strokes }
    }

    /// Groups strokes by object, in ascending object order. Object ids must
    /// lie in `1..=object_count`; strokes must be nonempty.
    pub fn to_sets(&self, object_count: usize) -> Result<Vec<ScribbleSet>> {
        let mut sets: Vec<ScribbleSet> = Vec::new();
        for (n, rec) in self.strokes.iter().enumerate() {
            if rec.object == 0 || rec.object as usize > object_count {
                return Err(Error::Document(format!(
                    "strokes[{n}].object: {} not in 1..={object_count}",
                    rec.object
                )));
            }
            if rec.points.is_empty() {
                return Err(Error::Document(format!(
                    "strokes[{n}].points: empty stroke"
                )));
            }
            let set = match sets.iter_mut().position(|s| s.object == rec.object) {
                Some(i) => &mut sets[i],
                None => {
                    sets.push(ScribbleSet::new(self.frame, rec.object));
                    sets.last_mut().expect("just pushed")
                }
            };
            let stroke = Stroke::new(rec.points.clone());
            match rec.polarity {
                Polarity::Positive => set.positive.push(stroke),
                Polarity::Negative => set.negative.push(stroke),
            }
        }
        sets.sort_by_key(|s| s.object);
        Ok(sets)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scribble documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }
}
