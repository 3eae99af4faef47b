use std::collections::VecDeque;

use super::{Point, ScribbleSet, Stroke};
use crate::error::Result;
use crate::maps::LabelMap;

/// Error components smaller than this many pixels get no scribble.
pub const MIN_COMPONENT_AREA: usize = 30;

const NEIGHBOURS_8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn neighbours(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = ((i / w) as isize, (i % w) as isize);
    NEIGHBOURS_8.iter().filter_map(move |&(dy, dx)| {
        let (ny, nx) = (y + dy, x + dx);
        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w)
            .then(|| ny as usize * w + nx as usize)
    })
}

/// 8-connected components in raster order of their first pixel. Each
/// component lists its pixels in BFS order.
pub fn connected_components(mask: &[bool], height: usize, width: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let i = comp[head];
            head += 1;
            for n in neighbours(i, height, width) {
                if mask[n] && !seen[n] {
                    seen[n] = true;
                    comp.push(n);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Zhang–Suen thinning.
pub fn skeletonize(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut img = mask.to_vec();
    let at = |img: &[bool], y: isize, x: isize| -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < height
            && (x as usize) < width
            && img[y as usize * width + x as usize]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..height as isize {
                for x in 0..width as isize {
                    if !img[y as usize * width + x as usize] {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&img, y - 1, x),
                        at(&img, y - 1, x + 1),
                        at(&img, y, x + 1),
                        at(&img, y + 1, x + 1),
                        at(&img, y + 1, x),
                        at(&img, y + 1, x - 1),
                        at(&img, y, x - 1),
                        at(&img, y - 1, x - 1),
                    ];
                    let b = p.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                    let (c, d) = if pass == 0 {
                        (!(p[0] && p[2] && p[4]), !(p[2] && p[4] && p[6]))
                    } else {
                        (!(p[0] && p[2] && p[6]), !(p[0] && p[4] && p[6]))
                    };
                    if (2..=6).contains(&b) && a == 1 && c && d {
                        remove.push(y as usize * width + x as usize);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                img[i] = false;
            }
        }
        if !changed {
            return img;
        }
    }
}

fn bfs_far(set: &[bool], start: usize, h: usize, w: usize) -> (usize, Vec<usize>) {
    let mut parent = vec![usize::MAX; set.len()];
    parent[start] = start;
    let mut queue = VecDeque::from([start]);
    let mut last = start;
    while let Some(i) = queue.pop_front() {
        last = i;
        for n in neighbours(i, h, w) {
            if set[n] && parent[n] == usize::MAX {
                parent[n] = i;
                queue.push_back(n);
            }
        }
    }
    (last, parent)
}

/// Longest path (in BFS hops) through the largest 8-connected piece of
/// `skeleton`, found by two breadth-first sweeps. Empty input → empty path.
pub fn longest_skeleton_path(skeleton: &[bool], height: usize, width: usize) -> Vec<usize> {
    let Some(piece) = connected_components(skeleton, height, width)
        .into_iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
    else {
        return Vec::new();
    };
    let mut set = vec![false; skeleton.len()];
    for &i in &piece {
        set[i] = true;
    }
    let (a, _) = bfs_far(&set, piece[0], height, width);
    let (b, parent) = bfs_far(&set, a, height, width);
    let mut path = vec![b];
    let mut cur = b;
    while cur != a {
        cur = parent[cur];
        path.push(cur);
    }
    path
}

/// One stroke tracing a component's skeleton. Components whose skeleton
/// vanishes fall back to the member pixel nearest the centroid.
fn component_stroke(comp: &[usize], height: usize, width: usize) -> Stroke {
    let mut mask = vec![false; height * width];
    for &i in comp {
        mask[i] = true;
    }
    let path = longest_skeleton_path(&skeletonize(&mask, height, width), height, width);
    let to_point = |i: usize| Point::new((i % width) as i64, (i / width) as i64);
    if path.is_empty() {
        let n = comp.len() as f64;
        let cy = comp.iter().map(|&i| (i / width) as f64).sum::<f64>() / n;
        let cx = comp.iter().map(|&i| (i % width) as f64).sum::<f64>() / n;
        let nearest = comp
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let d = |i: usize| {
                    ((i / width) as f64 - cy).powi(2) + ((i % width) as f64 - cx).powi(2)
                };
                d(a).total_cmp(&d(b)).then(a.cmp(&b))
            })
            .expect("components are nonempty");
        return Stroke::point(to_point(nearest));
    }
    Stroke::new(path.into_iter().map(to_point).collect())
}

/// Positive strokes on the missed part of `object`, negative strokes on the
/// spurious part; one stroke per error component of at least
/// [`MIN_COMPONENT_AREA`] pixels.
pub fn synthesize_error_scribbles(
    pred: &LabelMap,
    gt: &LabelMap,
    frame: usize,
    object: u8,
) -> Result<ScribbleSet> {
    pred.same_size(gt)?;
    let (h, w) = (gt.height(), gt.width());
    let false_neg: Vec<bool> = gt
        .labels()
        .iter()
        .zip(pred.labels())
        .map(|(&g, &p)| g == object && p != object)
        .collect();
    let false_pos: Vec<bool> = gt
        .labels()
        .iter()
        .zip(pred.labels())
        .map(|(&g, &p)| p == object && g != object)
        .collect();
    let strokes = |region: &[bool]| -> Vec<Stroke> {
        connected_components(region, h, w)
            .iter()
            .filter(|c| c.len() >= MIN_COMPONENT_AREA)
            .map(|c| component_stroke(c, h, w))
            .collect()
    };
    let mut set = ScribbleSet::new(frame, object);
    set.positive = strokes(&false_neg);
    set.negative = strokes(&false_pos);
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(m: &mut LabelMap, y0: usize, y1: usize, x0: usize, x1: usize, l: u8) {
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(y, x, l);
            }
        }
    }

    fn stroke_pixels(set: &[Stroke], w: usize) -> Vec<usize> {
        set.iter()
            .flat_map(|s| s.pixels())
            .map(|p| p.y as usize * w + p.x as usize)
            .collect()
    }

    #[test]
    fn identical_masks_need_no_scribbles() {
        let mut gt = LabelMap::background(40, 40);
        rect(&mut gt, 10, 30, 10, 30, 1);
        let set = synthesize_error_scribbles(&gt, &gt, 0, 1).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn missing_half_gets_positive_strokes_inside() {
        let mut gt = LabelMap::background(40, 40);
        rect(&mut gt, 10, 30, 10, 30, 1);
        let mut pred = LabelMap::background(40, 40);
        rect(&mut pred, 10, 30, 10, 20, 1);
        let set = synthesize_error_scribbles(&pred, &gt, 0, 1).unwrap();
        assert!(!set.positive.is_empty());
        assert!(set.negative.is_empty());
        for i in stroke_pixels(&set.positive, 40) {
            assert!(gt.labels()[i] == 1 && pred.labels()[i] != 1);
        }
        // A path on a 20×10 region's skeleton should be more than a dot.
        assert!(set.positive[0].points.len() > 3);
    }

    #[test]
    fn spurious_blob_gets_negative_stroke() {
        let mut gt = LabelMap::background(40, 40);
        rect(&mut gt, 5, 15, 5, 15, 1);
        let mut pred = gt.clone();
        rect(&mut pred, 25, 33, 25, 33, 1);
        let set = synthesize_error_scribbles(&pred, &gt, 0, 1).unwrap();
        assert!(set.positive.is_empty());
        assert_eq!(set.negative.len(), 1);
        for i in stroke_pixels(&set.negative, 40) {
            assert!((25..33).contains(&(i / 40)) && (25..33).contains(&(i % 40)));
        }
    }

    #[test]
    fn small_components_are_ignored() {
        let mut gt = LabelMap::background(40, 40);
        rect(&mut gt, 5, 15, 5, 15, 1);
        let mut pred = gt.clone();
        rect(&mut pred, 25, 30, 25, 30, 1);
        assert!(synthesize_error_scribbles(&pred, &gt, 0, 1)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn thin_component_falls_back_to_a_point() {
        // A 2-px-thick bar thins to nothing under Zhang–Suen on some shapes;
        // either way every stroke pixel must stay in the region.
        let mut gt = LabelMap::background(20, 40);
        rect(&mut gt, 5, 7, 2, 38, 1);
        let set = synthesize_error_scribbles(&LabelMap::background(20, 40), &gt, 0, 1).unwrap();
        assert_eq!(set.positive.len(), 1);
        for i in stroke_pixels(&set.positive, 40) {
            assert_eq!(gt.labels()[i], 1);
        }
    }

    #[test]
    fn components_are_eight_connected() {
        let mask = [true, false, false, true];
        assert_eq!(connected_components(&mask, 2, 2).len(), 1);
        let mask = [true, false, false, false, false, true];
        assert_eq!(connected_components(&mask, 2, 3).len(), 2);
    }
}
