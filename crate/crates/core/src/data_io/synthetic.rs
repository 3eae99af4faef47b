use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoSequence;
use crate::error::{Error, Result};
use crate::maps::LabelMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Ellipse,
    /// Isosceles, apex up.
    Triangle,
}

/// A labeled moving shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Half extents `[x, y]` in pixels at scale 1.
    pub half_size: [f64; 2],
    pub color: [u8; 3],
    /// Center keypoints `[x, y]`, spread evenly over the sequence and joined
    /// by a Catmull–Rom spline.
    pub trajectory: Vec<[f64; 2]>,
    /// Scale keypoints, piecewise linear over the sequence; empty means 1.
    #[serde(default)]
    pub scale: Vec<f64>,
    /// Layers with larger depth are painted on top.
    #[serde(default)]
    pub depth: i32,
}

/// An unlabeled shape that hides whatever lies beneath it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccluderSpec {
    pub shape: Shape,
    pub half_size: [f64; 2],
    pub color: [u8; 3],
    pub trajectory: Vec<[f64; 2]>,
    #[serde(default)]
    pub depth: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub frame_count: usize,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub occluders: Vec<OccluderSpec>,
    /// Amplitude of per-frame uniform pixel noise, in intensity levels.
    #[serde(default)]
    pub noise: f64,
    /// Amplitude of the static blocky background texture.
    #[serde(default)]
    pub texture: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Spec("at least one object is required".into()));
        }
        if self.objects.len() > u8::MAX as usize {
            return Err(Error::Spec("at most 255 objects".into()));
        }
        if self.frame_count < 2 {
            return Err(Error::Spec(format!("frame count {} < 2", self.frame_count)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Spec("canvas must be nonempty".into()));
        }
        if !(self.noise >= 0.0
            && self.texture >= 0.0
            && self.noise.is_finite()
            && self.texture.is_finite())
        {
            return Err(Error::Spec(
                "noise and texture must be finite and >= 0".into(),
            ));
        }
        let layers = self
            .objects
            .iter()
            .map(|o| (o.half_size, &o.trajectory, o.scale.as_slice()))
            .chain(
                self.occluders
                    .iter()
                    .map(|o| (o.half_size, &o.trajectory, &[][..])),
            );
        for (n, (half, path, scale)) in layers.enumerate() {
            if path.is_empty() {
                return Err(Error::Spec(format!("layer {n} has an empty trajectory")));
            }
            let finite = half
                .iter()
                .chain(path.iter().flatten())
                .chain(scale)
                .all(|v| v.is_finite());
            if !finite || half.iter().any(|&h| h <= 0.0) || scale.iter().any(|&s| s <= 0.0) {
                return Err(Error::Spec(format!(
                    "layer {n} has non-finite or non-positive geometry"
                )));
            }
            let max_scale = scale.iter().copied().fold(1.0f64, f64::max);
            if 2.0 * half[0] * max_scale > self.width as f64
                || 2.0 * half[1] * max_scale > self.height as f64
            {
                return Err(Error::Spec(format!(
                    "layer {n} ({:.1}x{:.1} at scale {max_scale}) does not fit a {}x{} canvas",
                    2.0 * half[0],
                    2.0 * half[1],
                    self.width,
                    self.height
                )));
            }
        }
        Ok(())
    }
}

/// Catmull–Rom through evenly spaced keypoints; the ends use reflected
/// phantom points so two keypoints give a straight, uniform-speed path.
fn spline(points: &[[f64; 2]], u: f64) -> [f64; 2] {
    let n = points.len();
    if n == 1 {
        return points[0];
    }
    let s = u.clamp(0.0, 1.0) * (n - 1) as f64;
    let seg = (s.floor() as usize).min(n - 2);
    let t = s - seg as f64;
    let p = |i: isize| -> [f64; 2] {
        if i < 0 {
            [
                2.0 * points[0][0] - points[1][0],
                2.0 * points[0][1] - points[1][1],
            ]
        } else if i as usize >= n {
            let (a, b) = (points[n - 1], points[n - 2]);
            [2.0 * a[0] - b[0], 2.0 * a[1] - b[1]]
        } else {
            points[i as usize]
        }
    };
    let i = seg as isize;
    let (p0, p1, p2, p3) = (p(i - 1), p(i), p(i + 1), p(i + 2));
    let (t2, t3) = (t * t, t * t * t);
    let mut out = [0.0; 2];
    for d in 0..2 {
        out[d] = 0.5
            * (2.0 * p1[d]
                + (p2[d] - p0[d]) * t
                + (2.0 * p0[d] - 5.0 * p1[d] + 4.0 * p2[d] - p3[d]) * t2
                + (3.0 * p1[d] - p0[d] - 3.0 * p2[d] + p3[d]) * t3);
    }
    out
}

fn piecewise_linear(values: &[f64], u: f64) -> f64 {
    match values {
        [] => 1.0,
        [v] => *v,
        _ => {
            let s = u.clamp(0.0, 1.0) * (values.len() - 1) as f64;
            let seg = (s.floor() as usize).min(values.len() - 2);
            let t = s - seg as f64;
            values[seg] * (1.0 - t) + values[seg + 1] * t
        }
    }
}

fn inside(shape: Shape, dx: f64, dy: f64, a: f64, b: f64) -> bool {
    match shape {
        Shape::Rectangle => dx.abs() < a && dy.abs() < b,
        Shape::Ellipse => (dx / a).powi(2) + (dy / b).powi(2) < 1.0,
        Shape::Triangle => dy > -b && dy < b && dx.abs() < a * (dy + b) / (2.0 * b),
    }
}

struct Layer {
    shape: Shape,
    half: [f64; 2],
    center: [f64; 2],
    color: [u8; 3],
    label: u8,
    depth: i32,
}

/// A low-saturation backdrop: grey with a slight tint, two lightness
/// waves, a weak color wave per channel, and blocky texture.
fn background(spec: &SyntheticSpec) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let grey = rng.random_range(70.0..150.0);
    let base: [f64; 3] = std::array::from_fn(|_| grey + rng.random_range(-10.0..10.0));
    let mut wave = |amp: std::ops::Range<f64>| {
        [
            rng.random_range(0.02..0.12),
            rng.random_range(0.02..0.12),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(amp),
        ]
    };
    let light = [wave(8.0..20.0), wave(8.0..20.0)];
    let tint: [[f64; 4]; 3] = std::array::from_fn(|_| wave(2.0..6.0));
    let block = 4;
    let (bh, bw) = (spec.height.div_ceil(block), spec.width.div_ceil(block));
    let blocks: Vec<f64> = (0..bh * bw)
        .map(|_| rng.random_range(-1.0..=1.0) * spec.texture)
        .collect();
    let at = |[fx, fy, phase, amp]: [f64; 4], x: f64, y: f64| amp * (fx * x + fy * y + phase).sin();
    let mut out = Vec::with_capacity(spec.height * spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (xf, yf) = (x as f64, y as f64);
            let shade =
                at(light[0], xf, yf) + at(light[1], xf, -yf) + blocks[(y / block) * bw + x / block];
            out.push(std::array::from_fn(|c| {
                base[c] + shade + at(tint[c], xf, yf)
            }));
        }
    }
    out
}

/// Renders the spec: a static textured background, then objects and
/// occluders painted in depth order (ties keep declaration order, objects
/// before occluders). Ground truth comes from the same painter pass, so
/// it is exact.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<VideoSequence> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let bg = background(spec);
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut masks = Vec::with_capacity(spec.frame_count);
    for t in 0..spec.frame_count {
        let u = t as f64 / (spec.frame_count - 1) as f64;
        let mut layers: Vec<Layer> = spec
            .objects
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let s = piecewise_linear(&o.scale, u);
                Layer {
                    shape: o.shape,
                    half: [o.half_size[0] * s, o.half_size[1] * s],
                    center: spline(&o.trajectory, u),
                    color: o.color,
                    label: (k + 1) as u8,
                    depth: o.depth,
                }
            })
            .chain(spec.occluders.iter().map(|o| Layer {
                shape: o.shape,
                half: o.half_size,
                center: spline(&o.trajectory, u),
                color: o.color,
                label: 0,
                depth: o.depth,
            }))
            .collect();
        layers.sort_by_key(|l| l.depth);

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(t as u64 + 1);
        let mut img = RgbImage::new(w as u32, h as u32);
        let mut mask = LabelMap::background(h, w);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut color = bg[y * w + x];
                for l in &layers {
                    if inside(
                        l.shape,
                        px - l.center[0],
                        py - l.center[1],
                        l.half[0],
                        l.half[1],
                    ) {
                        color = l.color.map(f64::from);
                        mask.set(y, x, l.label);
                    }
                }
                let pixel = color.map(|c| {
                    let n = if spec.noise > 0.0 {
                        rng.random_range(-spec.noise..=spec.noise)
                    } else {
                        0.0
                    };
                    (c + n).round().clamp(0.0, 255.0) as u8
                });
                img.put_pixel(x as u32, y as u32, Rgb(pixel));
            }
        }
        frames.push(img);
        masks.push(mask);
    }
    VideoSequence::new(spec.id.clone(), frames, Some(masks), spec.objects.len())
}

const OBJECT_COLORS: [[u8; 3]; 6] = [
    [220, 40, 40],
    [40, 190, 60],
    [240, 200, 30],
    [190, 50, 210],
    [30, 190, 230],
    [250, 120, 20],
];

/// Ten seeded 64×64, 10-frame sequences with one or two objects. Odd
/// sequences have two objects on crossing paths; even ones have a single
/// object passing behind a static pole.
pub fn benchmark_suite() -> Vec<SyntheticSpec> {
    (0..10u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
            let (h, w) = (64usize, 64usize);
            let shapes = [Shape::Rectangle, Shape::Ellipse, Shape::Triangle];
            let mut colors = OBJECT_COLORS.to_vec();
            let mut object = |rng: &mut ChaCha8Rng, from_left: bool| {
                let half = [rng.random_range(8.0..13.0), rng.random_range(8.0..13.0)];
                let y0: f64 = rng.random_range(20.0..44.0);
                let y1 = (y0 + rng.random_range(-8.0..8.0)).clamp(16.0, 48.0);
                let (x0, x1) = if from_left {
                    (16.0, 46.0)
                } else {
                    (48.0, 18.0)
                };
                let mid = [
                    (x0 + x1) / 2.0 + rng.random_range(-3.0..3.0),
                    (y0 + y1) / 2.0 + rng.random_range(-4.0..4.0),
                ];
                let color = colors.remove(rng.random_range(0..colors.len()));
                ObjectSpec {
                    shape: shapes[rng.random_range(0..shapes.len())],
                    half_size: half,
                    color,
                    trajectory: vec![[x0, y0], mid, [x1, y1]],
                    scale: vec![1.0, rng.random_range(0.85..1.15)],
                    depth: 0,
                }
            };
            let mut objects = vec![object(&mut rng, true)];
            let mut occluders = Vec::new();
            if i % 2 == 1 {
                let mut second = object(&mut rng, false);
                second.depth = if rng.random_bool(0.5) { 1 } else { -1 };
                objects.push(second);
            } else {
                let x = rng.random_range(26.0..38.0);
                occluders.push(OccluderSpec {
                    shape: Shape::Rectangle,
                    half_size: [2.5, 32.0],
                    color: [235, 235, 235],
                    trajectory: vec![[x, 32.0]],
                    depth: 2,
                });
            }
            SyntheticSpec {
                id: format!("synthetic-{i:02}"),
                height: h,
                width: w,
                frame_count: 10,
                objects,
                occluders,
                noise: 6.0,
                texture: 12.0,
                seed: 7000 + i,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_spec(path: Vec<[f64; 2]>, frames: usize) -> SyntheticSpec {
        SyntheticSpec {
            id: "sq".into(),
            height: 48,
            width: 64,
            frame_count: frames,
            objects: vec![ObjectSpec {
                shape: Shape::Rectangle,
                half_size: [6.0, 6.0],
                color: [220, 30, 30],
                trajectory: path,
                scale: vec![],
                depth: 0,
            }],
            occluders: vec![],
            noise: 0.0,
            texture: 10.0,
            seed: 3,
        }
    }

    fn centroid_x(m: &LabelMap) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(y, x) == 1 {
                    s += x as f64;
                    n += 1.0;
                }
            }
        }
        s / n
    }

    #[test]
    fn static_square_is_constant() {
        let seq = generate_synthetic(&square_spec(vec![[30.0, 24.0]], 5)).unwrap();
        let gt = seq.gt.unwrap();
        assert!(seq.frames.windows(2).all(|f| f[0] == f[1]));
        assert!(gt.windows(2).all(|g| g[0] == g[1]));
        assert_eq!(gt[0].area(1), 144);
    }

    #[test]
    fn translation_moves_centroid_exactly() {
        let seq = generate_synthetic(&square_spec(vec![[20.0, 24.0], [38.0, 24.0]], 10)).unwrap();
        let gt = seq.gt.unwrap();
        for t in 1..10 {
            assert!((centroid_x(&gt[t]) - centroid_x(&gt[t - 1]) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_order_decides_occlusion() {
        let mut spec = square_spec(vec![[32.0, 24.0]], 2);
        let mut other = spec.objects[0].clone();
        other.color = [30, 200, 30];
        other.trajectory = vec![[36.0, 24.0]];
        other.depth = -1;
        spec.objects.push(other);
        let gt = generate_synthetic(&spec).unwrap().gt.unwrap();
        assert_eq!(gt[0].get(24, 34), 1);
        spec.objects[1].depth = 1;
        let gt = generate_synthetic(&spec).unwrap().gt.unwrap();
        assert_eq!(gt[0].get(24, 34), 2);
    }

    #[test]
    fn oversized_object_is_rejected() {
        let mut spec = square_spec(vec![[30.0, 24.0]], 3);
        spec.objects[0].half_size = [40.0, 6.0];
        assert!(matches!(generate_synthetic(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn suite_is_deterministic_and_labeled() {
        let suite = benchmark_suite();
        assert_eq!(suite.len(), 10);
        for spec in &suite {
            let a = generate_synthetic(spec).unwrap();
            let b = generate_synthetic(spec).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.height(), a.width(), a.len()), (64, 64, 10));
            let gt = a.gt.as_ref().unwrap();
            for k in 1..=a.object_count as u8 {
                assert!(gt.iter().any(|g| g.area(k) > 100), "{} object {k}", spec.id);
            }
        }
    }
}
