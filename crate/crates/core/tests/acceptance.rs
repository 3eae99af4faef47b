//! Acceptance checks. Runs every check, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ivos_core::calibration::{
    combined_loss, params_to_vec, CalibrationConfig, Objective, DEFAULT_LAMBDA,
};
use ivos_core::data_io::{
    benchmark_suite, generate_synthetic, ObjectSpec, Shape, SyntheticSpec, VideoSequence,
};
use ivos_core::maps::{LabelMap, ProbabilityMap};
use ivos_core::metrics::{auc, boundary_f_default, jaccard};
use ivos_core::numerics::{Grid, Matrix};
use ivos_core::scribble_robot::{
    deform_mask, generate_points, robot_interact, synthesize_error_scribbles, AffineJitter,
    RobotConfig,
};
use ivos_core::segmenter::{HeadParams, SegmenterConfig, TransferMode};
use ivos_core::transfer::{
    global_transition, local_affinity, local_transition, transfer_global, LocalWindow,
};
use ivos_core::workflow::{superpose, superposition_weights};
use ivos_core::{FeatureGrid, Segmenter, Session};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {took:.1?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

fn random_features(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    c: usize,
    stride: usize,
) -> FeatureGrid {
    let data = (0..h * w * c)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    FeatureGrid::from_grid(Grid::from_vec(h, w, c, data).unwrap(), stride).unwrap()
}

fn random_field(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Grid {
    Grid::from_vec(h, w, c, (0..h * w * c).map(|_| rng.random()).collect()).unwrap()
}

fn in_window(i: usize, j: usize, w: usize, radius: usize) -> bool {
    let (dy, dx) = (
        (j / w) as isize - (i / w) as isize,
        (j % w) as isize - (i % w) as isize,
    );
    let r = radius as isize;
    dy.abs() <= r && dx.abs() <= r && dy % 2 == 0 && dx % 2 == 0
}

fn transition_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let window = LocalWindow::new(4);
    let (mut worst_col, mut worst_mass, mut leaks) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..500 {
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let (ha, wa) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let c = rng.random_range(3..=8);
        let f_t = random_features(&mut rng, h, w, c, 8);
        let f_a = random_features(&mut rng, ha, wa, c, 8);
        let global = global_transition(&f_t, &f_a).map_err(|e| e.to_string())?;
        for s in global.matrix().column_sums() {
            worst_col = worst_col.max((s - 1.0).abs());
        }
        let p = Matrix::from_fn(ha * wa, 1, |_, _| rng.random());
        let moved = transfer_global(&f_t, &f_a, &p).map_err(|e| e.to_string())?;
        worst_mass = worst_mass
            .max((moved.values().iter().sum::<f64>() - p.values().iter().sum::<f64>()).abs());

        let f_p = random_features(&mut rng, h, w, c, 4);
        let f_l = random_features(&mut rng, h, w, c, 4);
        let local =
            local_transition(&local_affinity(&f_l, &f_p, &window).map_err(|e| e.to_string())?);
        for s in local.matrix.column_sums() {
            worst_col = worst_col.max((s - 1.0).abs());
        }
        let (dense, _) = local.matrix.to_dense();
        for i in 0..h * w {
            for j in 0..h * w {
                if !in_window(i, j, w, 4) && dense.get(i, j) != 0.0 {
                    leaks += 1;
                }
            }
        }
        let field = random_field(&mut rng, h, w, 1);
        let out = local.apply(&field).map_err(|e| e.to_string())?;
        worst_mass = worst_mass.max((out.sum() - field.sum()).abs());
    }
    within(Duration::from_secs(30), start)?;
    check(
        worst_col <= 1e-6 && worst_mass <= 1e-6 && leaks == 0,
        format!(
            "1000 matrices: max |colsum-1| {worst_col:.1e}, max mass error {worst_mass:.1e}, \
             {leaks} nonzero entries outside windows, {:.1?}",
            start.elapsed()
        ),
    )
}

/// Dense masked column softmax, computed from scratch.
fn dense_local_oracle(f_t: &FeatureGrid, f_p: &FeatureGrid, field: &Grid) -> Grid {
    let (h, w) = (f_t.height(), f_t.width());
    let n = h * w;
    let mut a = vec![0.0; n * n];
    for j in 0..n {
        let eligible: Vec<usize> = (0..n).filter(|&i| in_window(i, j, w, 4)).collect();
        let scores: Vec<f64> = eligible
            .iter()
            .map(|&i| {
                f_t.cell(i)
                    .iter()
                    .zip(f_p.cell(j))
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for (&i, s) in eligible.iter().zip(&scores) {
            a[i * n + j] = (s - m).exp() / z;
        }
    }
    let c = field.channels();
    let mut out = Grid::zeros(h, w, c);
    for i in 0..n {
        for j in 0..n {
            for k in 0..c {
                out.pixel_mut(i)[k] += a[i * n + j] * field.pixel(j)[k];
            }
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let window = LocalWindow::new(4);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..100 {
        for h in 1..=16 {
            for w in 1..=16 {
                let c = rng.random_range(3..=8);
                let f_t = random_features(&mut rng, h, w, c, 4);
                let f_p = random_features(&mut rng, h, w, c, 4);
                let field = random_field(&mut rng, h, w, 2);
                let fast = local_transition(
                    &local_affinity(&f_t, &f_p, &window).map_err(|e| e.to_string())?,
                )
                .apply(&field)
                .map_err(|e| e.to_string())?;
                let slow = dense_local_oracle(&f_t, &f_p, &field);
                for (a, b) in fast.data().iter().zip(slow.data()) {
                    worst = worst.max((a - b).abs());
                }
                cases += 1;
            }
        }
    }
    within(Duration::from_secs(60), start)?;
    check(
        worst < 1e-9,
        format!(
            "{cases} grids up to 16x16 over 100 draws: max abs error {worst:.1e}, {:.1?}",
            start.elapsed()
        ),
    )
}

fn superposition_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (h, w, k) = (6, 5, 2);
    let map = |rng: &mut ChaCha8Rng| ProbabilityMap::from_grid(random_field(rng, h, w, k)).unwrap();
    let mut failures = Vec::new();
    let mut worst_sum = 0.0f64;
    for case in 0..1000 {
        let t_b = rng.random_range(0..40usize);
        let mut t_r = rng.random_range(0..40usize);
        while t_r == t_b {
            t_r = rng.random_range(0..40usize);
        }
        let t = rng.random_range(t_r.min(t_b)..=t_r.max(t_b));
        let (a, b) = superposition_weights(t, t_r, t_b).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((a + b - 1.0).abs());

        let (cur, prev) = (map(&mut rng), map(&mut rng));
        if superpose(&cur, &prev, t_r, t_r, t_b).unwrap() != cur {
            failures.push(format!("case {case}: t = t_r did not return P^r"));
        }
        let mid = superpose(&cur, &prev, t_b, t_r, t_b).unwrap();
        let half = cur
            .grid()
            .data()
            .iter()
            .zip(prev.grid().data())
            .zip(mid.grid().data())
            .all(|((c, p), m)| (m - 0.5 * (c + p)).abs() < 1e-12);
        if !half {
            failures.push(format!("case {case}: t = t_b is not an even mix"));
        }
        if superpose(&cur, &cur, t, t_r, t_b).unwrap() != cur {
            failures.push(format!("case {case}: equal rounds changed the map"));
        }
    }
    if worst_sum > 1e-12 {
        failures.push(format!("weight sum off by {worst_sum:.1e}"));
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("1000 triples: endpoints exact, max |a+b-1| {worst_sum:.1e}, equal rounds unchanged")
        } else {
            failures[..failures.len().min(3)].join("; ")
        },
    )
}

fn gradient_sequences() -> Vec<VideoSequence> {
    let spec = SyntheticSpec {
        id: "grad".into(),
        height: 32,
        width: 32,
        frame_count: 9,
        objects: vec![ObjectSpec {
            shape: Shape::Ellipse,
            half_size: [7.0, 6.0],
            color: [220, 40, 40],
            trajectory: vec![[9.0, 12.0], [22.0, 18.0]],
            scale: vec![1.0, 1.1],
            depth: 0,
        }],
        occluders: Vec::new(),
        noise: 4.0,
        texture: 8.0,
        seed: 5,
    };
    vec![generate_synthetic(&spec).unwrap()]
}

fn loss_gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst_total = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(4..24), rng.random_range(4..24));
        let gt =
            LabelMap::from_vec(h, w, (0..h * w).map(|_| rng.random_range(0..3)).collect()).unwrap();
        let pred = ProbabilityMap::from_grid(random_field(&mut rng, h, w, 2)).unwrap();
        let local = random_field(&mut rng, h.div_ceil(4), w.div_ceil(4), 2);
        let r = combined_loss(&pred, &local, &gt, DEFAULT_LAMBDA).map_err(|e| e.to_string())?;
        worst_total = worst_total.max((r.total - (r.l_c + 0.1 * r.l_aux)).abs());
    }

    let sequences = gradient_sequences();
    let config = CalibrationConfig {
        minisequences: 2,
        seed: 3,
        ..Default::default()
    };
    let objective = Objective::new(&sequences, SegmenterConfig::default(), &config)
        .map_err(|e| e.to_string())?;
    let mut worst_rel = 0.0f64;
    for _ in 0..20 {
        let params = HeadParams {
            kappa: rng.random_range(3.0..30.0),
            gamma: rng.random_range(0.05..1.0),
            alpha: rng.random_range(0.2..0.9),
            beta: rng.random_range(0.1..0.9),
            ..HeadParams::default()
        };
        let g1 = objective
            .gradient(&params, 1e-3)
            .map_err(|e| e.to_string())?;
        let g2 = objective
            .gradient(&params, 5e-4)
            .map_err(|e| e.to_string())?;
        let diff = g1
            .iter()
            .zip(&g2)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = g2.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let rel = diff / norm;
        if rel > worst_rel {
            worst_rel = rel;
        }
        if rel >= 1e-3 {
            return Err(format!(
                "gradient at {:?} changed by {rel:.2e} under step halving: {g1:?} vs {g2:?}",
                params_to_vec(&params)
            ));
        }
    }
    check(
        worst_total <= 1e-12,
        format!(
            "total - (L_c + 0.1 L_aux) max {worst_total:.1e}; 20 points, max relative gradient change {worst_rel:.1e}, {:.1?}",
            start.elapsed()
        ),
    )
}

fn robot_session(seq: &VideoSequence, config: SegmenterConfig) -> Session {
    let gt = seq.ground_truth().unwrap().to_vec();
    Session::new(
        seq.id.clone(),
        seq.frames.clone(),
        seq.object_count,
        Segmenter::new(config).unwrap(),
    )
    .unwrap()
    .with_ground_truth(gt)
    .unwrap()
}

fn protocol_suite() -> Outcome {
    let seq = generate_synthetic(&benchmark_suite()[1]).map_err(|e| e.to_string())?;
    let gt = seq.ground_truth().unwrap().to_vec();
    let mut session = robot_session(&seq, SegmenterConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let first = |frame: usize, rng: &mut ChaCha8Rng| -> Vec<_> {
        (1..=seq.object_count as u8)
            .filter(|&k| gt[frame].area(k) > 0)
            .map(|k| generate_points(&gt[frame], frame, k, 200, rng).unwrap())
            .collect()
    };
    session
        .run_round(3, &first(3, &mut rng))
        .map_err(|e| e.to_string())?;
    let before = session.probabilities().to_vec();
    let prior_labels = session.latest_labels().unwrap().to_vec();
    let corrections: Vec<_> = (1..=seq.object_count as u8)
        .map(|k| synthesize_error_scribbles(&prior_labels[7], &gt[7], 7, k).unwrap())
        .filter(|s| !s.is_empty())
        .collect();
    let scribbles = if corrections.is_empty() {
        first(7, &mut rng)
    } else {
        corrections
    };
    session
        .run_round(7, &scribbles)
        .map_err(|e| e.to_string())?;
    let after = session.probabilities();
    let untouched = (0..=3).all(|t| before[t] == after[t]);
    let moved = (4..10).any(|t| before[t] != after[t]);

    let run = |seed: u64| {
        let mut s = robot_session(&seq, SegmenterConfig::default());
        let results = robot_interact(
            &mut s,
            &gt,
            &RobotConfig {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        (s, results)
    };
    let (s1, r1) = run(21);
    let (s2, r2) = run(21);
    let mut frames: Vec<usize> = s1.annotated_frames();
    frames.sort_unstable();
    frames.dedup();
    let distinct = r1.len() == 8 && frames.len() == 8;
    let identical =
        r1 == r2 && s1.probabilities() == s2.probabilities() && s1.history() == s2.history();
    check(
        untouched && moved && distinct && identical,
        format!(
            "frames 0..=3 unchanged by round 2 at frame 7: {untouched} (later frames updated: {moved}); \
             8 rounds annotate {} distinct frames; repeat run bit-identical: {identical}",
            frames.len()
        ),
    )
}

fn random_scene(rng: &mut ChaCha8Rng) -> LabelMap {
    let (h, w) = (rng.random_range(32..64), rng.random_range(32..64));
    let mut m = LabelMap::background(h, w);
    for k in 1..=rng.random_range(1..=2u8) {
        let (cy, cx) = (
            rng.random_range(8.0..h as f64 - 8.0),
            rng.random_range(8.0..w as f64 - 8.0),
        );
        let (ry, rx) = (rng.random_range(4.0..12.0), rng.random_range(4.0..12.0));
        let ellipse = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if ellipse {
                    dy * dy + dx * dx < 1.0
                } else {
                    dy.abs() < 1.0 && dx.abs() < 1.0
                };
                if inside {
                    m.set(y, x, k);
                }
            }
        }
    }
    m
}

fn scribble_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (mut violations, mut positives, mut negatives) = (0usize, 0usize, 0usize);
    for case in 0..200 {
        let gt = random_scene(&mut rng);
        let (h, w) = (gt.height(), gt.width());
        let jitter = AffineJitter {
            rotation_deg: 15.0,
            scale: 0.2,
            translation: 0.1,
            seed: case,
            ..Default::default()
        };
        let pred = deform_mask(&gt, &jitter);
        for k in 1..=gt.max_label() {
            if gt.area(k) > 0 {
                let rate = rng.random_range(100..=3000);
                let points =
                    generate_points(&gt, 0, k, rate, &mut rng).map_err(|e| e.to_string())?;
                let r = points.rasterize(h, w).map_err(|e| e.to_string())?;
                for i in r.positive_pixels() {
                    positives += 1;
                    violations += usize::from(gt.labels()[i] != k);
                }
            }
            let set = synthesize_error_scribbles(&pred, &gt, 0, k).map_err(|e| e.to_string())?;
            let r = set.rasterize(h, w).map_err(|e| e.to_string())?;
            for i in r.positive_pixels() {
                positives += 1;
                violations += usize::from(!(gt.labels()[i] == k && pred.labels()[i] != k));
            }
            for i in r.negative_pixels() {
                negatives += 1;
                violations += usize::from(!(pred.labels()[i] == k && gt.labels()[i] != k));
            }
        }
    }
    check(
        violations == 0 && negatives > 0,
        format!("200 cases, {positives} positive and {negatives} negative pixels, {violations} violations"),
    )
}

fn metrics_suite() -> Outcome {
    let square = |y0: usize, x0: usize, size: usize| {
        let mut m = LabelMap::background(16, 16);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                m.set(y, x, 1);
            }
        }
        m
    };
    let a = square(3, 3, 6);
    let empty = LabelMap::background(16, 16);
    let j_shift = jaccard(&square(2, 2, 2), &square(2, 3, 2), 1).map_err(|e| e.to_string())?;
    let lin: Vec<f64> = (0..8).map(|r| r as f64 / 7.0).collect();
    let results = [
        ("J identical", jaccard(&a, &a, 1).unwrap() == 1.0),
        ("F identical", boundary_f_default(&a, &a, 1).unwrap() == 1.0),
        (
            "J disjoint",
            jaccard(&a, &square(11, 11, 4), 1).unwrap() == 0.0,
        ),
        (
            "F disjoint",
            boundary_f_default(&a, &square(11, 11, 4), 1).unwrap() == 0.0,
        ),
        ("J one-sided empty", jaccard(&empty, &a, 1).unwrap() == 0.0),
        (
            "F one-sided empty",
            boundary_f_default(&a, &empty, 1).unwrap() == 0.0,
        ),
        ("J shifted 2x2 = 1/3", j_shift == 1.0 / 3.0),
        ("AUC constant", auc(&[0.5; 8]).unwrap() == 0.5),
        ("AUC linear", (auc(&lin).unwrap() - 0.5).abs() <= 1e-12),
    ];
    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    check(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} cases exact", results.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

const ROBOT_SEEDS: [u64; 3] = [0, 1, 2];

/// Mean J per round over the suite and robot seeds.
fn suite_curve(suite: &[VideoSequence], mode: TransferMode, rounds: usize) -> Vec<f64> {
    let mut curve = vec![0.0; rounds];
    let runs = (suite.len() * ROBOT_SEEDS.len()) as f64;
    for seq in suite {
        let gt = seq.ground_truth().unwrap();
        for seed in ROBOT_SEEDS {
            let config = SegmenterConfig {
                transfer_mode: mode,
                ..Default::default()
            };
            let mut session = robot_session(seq, config);
            let results = robot_interact(
                &mut session,
                gt,
                &RobotConfig {
                    rounds,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            for (c, r) in curve.iter_mut().zip(&results) {
                *c += r.mean_j().unwrap() / runs;
            }
        }
    }
    curve
}

fn end_to_end(suite: &[VideoSequence]) -> (Outcome, f64) {
    let start = Instant::now();
    let curve = suite_curve(suite, TransferMode::Both, 5);
    let mut failures = Vec::new();
    if curve[0] < 0.5 {
        failures.push(format!("round 1 J {:.3} < 0.50", curve[0]));
    }
    for r in 1..5 {
        if curve[r] < curve[r - 1] - 0.02 {
            failures.push(format!(
                "round {} J {:.3} drops below round {} J {:.3}",
                r + 1,
                curve[r],
                r,
                curve[r - 1]
            ));
        }
    }
    if curve[2] - curve[0] < 0.05 {
        failures.push(format!(
            "round 3 gains only {:.3} over round 1",
            curve[2] - curve[0]
        ));
    }
    if let Err(e) = within(Duration::from_secs(300), start) {
        failures.push(e);
    }
    let shown: Vec<String> = curve.iter().map(|v| format!("{v:.3}")).collect();
    let detail = format!(
        "mean J rounds 1-5 [{}], {:.1?}",
        shown.join(", "),
        start.elapsed()
    );
    let outcome = if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {}", failures.join("; ")))
    };
    (outcome, curve[0])
}

fn ablation(suite: &[VideoSequence], full_round1: f64) -> Outcome {
    let global_only = suite_curve(suite, TransferMode::GlobalOnly, 1)[0];
    check(
        full_round1 - global_only > 0.0,
        format!("round 1 J with local transfer {full_round1:.3}, global only {global_only:.3}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let suite: Vec<VideoSequence> = benchmark_suite()
        .iter()
        .map(|s| generate_synthetic(s).unwrap())
        .collect();
    let mut outcomes: Vec<(&str, Outcome)> = vec![
        ("transition matrices", transition_suite()),
        ("local oracle equivalence", oracle_equivalence()),
        ("superposition", superposition_suite()),
        ("loss and gradient", loss_gradient_suite()),
        ("round protocol", protocol_suite()),
        ("scribble robot", scribble_suite()),
        ("metrics", metrics_suite()),
    ];
    let (e2e, round1) = end_to_end(&suite);
    outcomes.push(("end-to-end rounds", e2e));
    outcomes.push(("ablation without local transfer", ablation(&suite, round1)));

    let mut failed = 0;
    for (name, outcome) in &outcomes {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} checks passed in {:.1?}",
        outcomes.len() - failed,
        outcomes.len(),
        start.elapsed()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
