use rand::seq::index;
use rand::Rng;

use super::{Point, ScribbleSet, Stroke};
use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Object pixels per sampled point, lower and upper bound.
pub const MIN_RATE: usize = 100;
pub const MAX_RATE: usize = 3000;

pub fn sample_rate<R: Rng + ?Sized>(rng: &mut R) -> usize {
    rng.random_range(MIN_RATE..=MAX_RATE)
}

/// `ceil(|object| / rate)` points (at least one) drawn without replacement
/// from the object's pixels, each as a single-point positive stroke.
pub fn generate_points<R: Rng + ?Sized>(
    gt: &LabelMap,
    frame: usize,
    object: u8,
    rate: usize,
    rng: &mut R,
) -> Result<ScribbleSet> {
    if rate == 0 {
        return Err(Error::Input("point rate must be positive".into()));
    }
    let pixels: Vec<usize> = (0..gt.labels().len())
        .filter(|&i| gt.labels()[i] == object)
        .collect();
    if pixels.is_empty() {
        return Err(Error::Annotation(format!(
            "object {object} has no pixels on frame {frame}"
        )));
    }
    let count = pixels.len().div_ceil(rate).max(1);
    let w = gt.width();
    let mut set = ScribbleSet::new(frame, object);
    for k in index::sample(rng, pixels.len(), count) {
        let i = pixels[k];
        set.positive
            .push(Stroke::point(Point::new((i % w) as i64, (i / w) as i64)));
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn blob(area: usize) -> LabelMap {
        let mut m = LabelMap::background(100, 100);
        for i in 0..area {
            m.labels_mut()[i] = 1;
        }
        m
    }

    #[test]
    fn counts_follow_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = blob(3000);
        assert_eq!(
            generate_points(&gt, 0, 1, 3000, &mut rng)
                .unwrap()
                .positive
                .len(),
            1
        );
        let set = generate_points(&gt, 0, 1, 100, &mut rng).unwrap();
        assert_eq!(set.positive.len(), 30);
        let mut seen: Vec<_> = set.positive.iter().map(|s| s.points[0]).collect();
        seen.sort_by_key(|p| (p.y, p.x));
        seen.dedup();
        assert_eq!(seen.len(), 30);
        for p in seen {
            assert_eq!(gt.get(p.y as usize, p.x as usize), 1);
        }
        assert_eq!(
            generate_points(&blob(50), 0, 1, 100, &mut rng)
                .unwrap()
                .positive
                .len(),
            1
        );
        assert!(set.negative.is_empty());
    }

    #[test]
    fn empty_object_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            generate_points(&blob(10), 0, 2, 100, &mut rng),
            Err(Error::Annotation(_))
        ));
    }

    #[test]
    fn rate_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            assert!((MIN_RATE..=MAX_RATE).contains(&sample_rate(&mut rng)));
        }
    }
}
