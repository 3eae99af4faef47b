use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// `p ↦ M·(p − c) + c + t` with `c` the image center `((w−1)/2, (h−1)/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    /// Row-major 2×2 linear part acting on `(x, y)`.
    pub m: [[f64; 2]; 2],
    /// Translation in pixels, `(x, y)`.
    pub t: [f64; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0], [0.0, 1.0]],
            t: [0.0, 0.0],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            t: [dx, dy],
            ..Self::identity()
        }
    }

    pub fn rotation(degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        Self {
            m: [[c, -s], [s, c]],
            t: [0.0, 0.0],
        }
    }

    fn inverse_linear(&self) -> Option<[[f64; 2]; 2]> {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        (det.abs() > 1e-12).then(|| [[d / det, -b / det], [-c / det, a / det]])
    }
}

/// Ranges for random affine jitter. Every range is symmetric about the
/// identity: rotation in `±rotation_deg`, scale in `1 ± scale`, shear in
/// `±shear`, translation in `±translation·size`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffineJitter {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translation: f64,
    pub shear: f64,
    pub seed: u64,
}

impl Default for AffineJitter {
    fn default() -> Self {
        Self {
            rotation_deg: 10.0,
            scale: 0.1,
            translation: 0.05,
            shear: 0.05,
            seed: 0,
        }
    }
}

impl AffineJitter {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: 0.0,
            translation: 0.0,
            shear: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.rotation_deg, self.scale, self.translation, self.shear];
        if ranges.iter().all(|r| r.is_finite() && *r >= 0.0) && self.scale < 1.0 {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid jitter ranges: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, height: usize, width: usize) -> Affine {
        let mut sym = |r: f64| {
            if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            }
        };
        let theta = sym(self.rotation_deg);
        let s = 1.0 + sym(self.scale);
        let sh = sym(self.shear);
        let tx = sym(self.translation) * width as f64;
        let ty = sym(self.translation) * height as f64;
        let r = Affine::rotation(theta).m;
        // R · Shear · S
        let shear_scale = [[s, sh * s], [0.0, s]];
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = r[i][0] * shear_scale[0][j] + r[i][1] * shear_scale[1][j];
            }
        }
        Affine { m, t: [tx, ty] }
    }
}

/// Nearest-neighbour inverse warp; pixels mapping outside the frame become
/// background. A singular transform yields an all-background map.
pub fn warp_labels(mask: &LabelMap, affine: &Affine) -> LabelMap {
    let (h, w) = (mask.height(), mask.width());
    let mut out = LabelMap::background(h, w);
    let Some(inv) = affine.inverse_linear() else {
        return out;
    };
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx - affine.t[0];
            let dy = y as f64 - cy - affine.t[1];
            let sx = (inv[0][0] * dx + inv[0][1] * dy + cx).round();
            let sy = (inv[1][0] * dx + inv[1][1] * dy + cy).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out.set(y, x, mask.get(sy as usize, sx as usize));
            }
        }
    }
    out
}

/// Warps the mask by an affine map drawn from `jitter` (seeded by its
/// `seed` field).
pub fn deform_mask(gt: &LabelMap, jitter: &AffineJitter) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(jitter.seed);
    let affine = jitter.sample(&mut rng, gt.height(), gt.width());
    warp_labels(gt, &affine)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asymmetric() -> LabelMap {
        let mut m = LabelMap::background(20, 30);
        for y in 3..9 {
            for x in 4..15 {
                m.set(y, x, 1);
            }
        }
        m.set(12, 25, 2);
        m
    }

    #[test]
    fn identity_is_exact() {
        let m = asymmetric();
        assert_eq!(deform_mask(&m, &AffineJitter::identity()), m);
        assert_eq!(warp_labels(&m, &Affine::identity()), m);
    }

    #[test]
    fn translation_shifts_right() {
        let mut sq = LabelMap::background(32, 32);
        for y in 12..20 {
            for x in 12..20 {
                sq.set(y, x, 1);
            }
        }
        let out = warp_labels(&sq, &Affine::translation(5.0, 0.0));
        for y in 0..32 {
            for x in 0..32 {
                let expected = if x >= 5 { sq.get(y, x - 5) } else { 0 };
                assert_eq!(out.get(y, x), expected);
            }
        }
    }

    #[test]
    fn half_turn_reflects_through_center() {
        let m = asymmetric();
        let out = warp_labels(&m, &Affine::rotation(180.0));
        for y in 0..20 {
            for x in 0..30 {
                assert_eq!(out.get(y, x), m.get(19 - y, 29 - x));
            }
        }
    }

    #[test]
    fn small_scale_preserves_area() {
        let mut sq = LabelMap::background(64, 64);
        for y in 16..48 {
            for x in 16..48 {
                sq.set(y, x, 1);
            }
        }
        for seed in 0..50 {
            let jitter = AffineJitter {
                seed,
                ..Default::default()
            };
            let area = deform_mask(&sq, &jitter).area(1) as f64;
            assert!((area / 1024.0 - 1.0).abs() <= 0.2, "seed {seed}: {area}");
        }
    }
}
