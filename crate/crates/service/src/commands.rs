//! The work behind the `eval`, `synth` and `calibrate` verbs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ivos_core::calibration::{calibrate, read_params_file, write_params_file, CalibrationReport};
use ivos_core::data_io::{
    benchmark_suite, generate_synthetic, load_sequence, save_round_masks, write_label_png,
    AppConfig, VideoSequence,
};
use ivos_core::metrics::{auc, boundary_tolerance, score_frame};
use ivos_core::scribble_robot::{robot_interact, RobotConfig};
use ivos_core::{Segmenter, Session};

use crate::render::{round_curve_svg, Series};

/// Reads `--config` and applies a `--params` file on top.
pub fn load_config(config: Option<&Path>, params: Option<&Path>) -> Result<AppConfig> {
    let mut cfg = match config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(p) = params {
        cfg.segmenter.head = read_params_file(p)?;
    }
    Ok(cfg)
}

/// A sequence directory with ground truth, or the built-in synthetic suite.
pub fn evaluation_sequences(path: Option<&Path>) -> Result<Vec<VideoSequence>> {
    match path {
        Some(p) => {
            let seq = load_sequence(p)?;
            if seq.gt.is_none() {
                bail!(
                    "{}: ground-truth directory not found",
                    p.join("Annotations").display()
                );
            }
            Ok(vec![seq])
        }
        None => benchmark_suite()
            .iter()
            .map(|spec| generate_synthetic(spec).map_err(Into::into))
            .collect(),
    }
}

/// Scores of one robot run.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub sequence: String,
    pub seed: u64,
    pub annotated_frames: Vec<usize>,
    pub j: Vec<f64>,
    pub f: Vec<f64>,
    pub auc_j: f64,
    pub auc_jf: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub rounds: usize,
    pub runs: Vec<RunRecord>,
    /// Per-round means over runs. A run that stopped early (every frame
    /// annotated) contributes its last value to later rounds.
    pub mean_j: Vec<f64>,
    pub mean_f: Vec<f64>,
    pub auc_j: f64,
    pub auc_jf: f64,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>5} {:>7} {:>7} {:>8}\n",
            "sequence", "seed", "AUC-J", "AUC-JF", "final J"
        );
        for r in &self.runs {
            s += &format!(
                "{:<16} {:>5} {:>7.3} {:>7.3} {:>8.3}\n",
                r.sequence,
                r.seed,
                r.auc_j,
                r.auc_jf,
                r.j.last().copied().unwrap_or(f64::NAN)
            );
        }
        s += &format!(
            "{:<16} {:>5} {:>7.3} {:>7.3} {:>8.3}\n",
            "mean",
            "",
            self.auc_j,
            self.auc_jf,
            self.mean_j.last().copied().unwrap_or(f64::NAN)
        );
        s += "mean J per round:";
        for v in &self.mean_j {
            s += &format!(" {v:.3}");
        }
        s.push('\n');
        s
    }
}

fn padded_mean(curves: &[&[f64]], rounds: usize) -> Vec<f64> {
    (0..rounds)
        .map(|r| {
            let vals: Vec<f64> = curves
                .iter()
                .filter_map(|c| c.get(r).or(c.last()).copied())
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect()
}

/// Runs the robot `seeds` times per sequence for `rounds` rounds, writing
/// masks, per-frame metrics, per-round tables, a JSON summary and SVG
/// plots under `out`.
pub fn run_eval(
    sequences: &[VideoSequence],
    config: &AppConfig,
    rounds: usize,
    seeds: u64,
    out: &Path,
) -> Result<EvalReport> {
    if rounds == 0 || seeds == 0 {
        bail!("--rounds and --seeds must be at least 1");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut runs = Vec::new();
    let mut rows = csv_writer(&out.join("rounds.csv"))?;
    rows.write_record(["sequence", "seed", "round", "annotated_frame", "j", "f"])?;
    for seq in sequences {
        let gt = seq.ground_truth()?.to_vec();
        let tol = boundary_tolerance(seq.height(), seq.width(), config.metrics.boundary_fraction);
        for s in 0..seeds {
            let seed = config.robot.seed + s;
            let segmenter = Segmenter::new(config.segmenter.clone())?;
            let mut session = Session::new(
                seq.id.clone(),
                seq.frames.clone(),
                seq.object_count,
                segmenter,
            )?
            .with_ground_truth(gt.clone())?;
            let robot = RobotConfig {
                rounds,
                seed,
                ..config.robot.clone()
            };
            let results = robot_interact(&mut session, &gt, &robot)
                .with_context(|| format!("robot run on {} with seed {seed}", seq.id))?;

            let run_dir = out.join(&seq.id).join(format!("seed_{seed}"));
            let (mut j, mut f) = (Vec::new(), Vec::new());
            for res in &results {
                save_round_masks(&session, res.round, &run_dir)?;
                let scores = res
                    .labels
                    .iter()
                    .zip(&gt)
                    .map(|(p, g)| score_frame(p, g, seq.object_count, tol))
                    .collect::<ivos_core::Result<Vec<_>>>()?;
                let n = scores.len() as f64;
                j.push(scores.iter().map(|x| x.j).sum::<f64>() / n);
                f.push(scores.iter().map(|x| x.f).sum::<f64>() / n);
                rows.write_record([
                    seq.id.clone(),
                    seed.to_string(),
                    res.round.to_string(),
                    res.annotated_frame.to_string(),
                    format!("{:.6}", j[j.len() - 1]),
                    format!("{:.6}", f[f.len() - 1]),
                ])?;
            }
            let jf: Vec<f64> = j.iter().zip(&f).map(|(a, b)| 0.5 * (a + b)).collect();
            runs.push(RunRecord {
                sequence: seq.id.clone(),
                seed,
                annotated_frames: results.iter().map(|r| r.annotated_frame).collect(),
                auc_j: auc(&j)?,
                auc_jf: auc(&jf)?,
                j,
                f,
            });
        }
    }
    rows.flush()?;

    let longest = runs.iter().map(|r| r.j.len()).max().unwrap_or(0);
    let mean_j = padded_mean(
        &runs.iter().map(|r| r.j.as_slice()).collect::<Vec<_>>(),
        longest,
    );
    let mean_f = padded_mean(
        &runs.iter().map(|r| r.f.as_slice()).collect::<Vec<_>>(),
        longest,
    );
    let mean_jf: Vec<f64> = mean_j
        .iter()
        .zip(&mean_f)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let report = EvalReport {
        rounds,
        auc_j: auc(&mean_j)?,
        auc_jf: auc(&mean_jf)?,
        mean_j,
        mean_f,
        runs,
    };

    let mut summary = csv_writer(&out.join("summary.csv"))?;
    summary.write_record(["sequence", "seed", "auc_j", "auc_jf", "final_j"])?;
    for r in &report.runs {
        summary.write_record([
            r.sequence.clone(),
            r.seed.to_string(),
            format!("{:.6}", r.auc_j),
            format!("{:.6}", r.auc_jf),
            format!("{:.6}", r.j.last().copied().unwrap_or(f64::NAN)),
        ])?;
    }
    summary.flush()?;
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    let labels: Vec<String> = report
        .runs
        .iter()
        .map(|r| format!("{} s{}", r.sequence, r.seed))
        .collect();
    for (name, pick, mean) in [
        (
            "J",
            (|r: &RunRecord| r.j.as_slice()) as fn(&RunRecord) -> &[f64],
            &report.mean_j,
        ),
        ("F", |r: &RunRecord| r.f.as_slice(), &report.mean_f),
    ] {
        // Individual runs only while the legend stays readable.
        let mut series: Vec<Series> = if report.runs.len() <= 12 {
            report
                .runs
                .iter()
                .zip(&labels)
                .map(|(r, l)| Series {
                    label: l,
                    values: pick(r),
                    emphasis: false,
                })
                .collect()
        } else {
            Vec::new()
        };
        series.push(Series {
            label: "mean",
            values: mean,
            emphasis: true,
        });
        let svg = round_curve_svg(&format!("mean {name} per round"), &series);
        fs::write(out.join(format!("curve_{}.svg", name.to_lowercase())), svg)?;
    }
    Ok(report)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Writes suite sequences in the on-disk sequence layout, with lossless
/// PNG frames. Returns the sequence directories.
pub fn write_synthetic(out: &Path, index: Option<usize>) -> Result<Vec<PathBuf>> {
    let suite = benchmark_suite();
    let picked: Vec<_> = match index {
        Some(i) => vec![suite
            .get(i)
            .with_context(|| format!("suite index {i} not in 0..{}", suite.len()))?
            .clone()],
        None => suite,
    };
    let mut dirs = Vec::new();
    for spec in &picked {
        let seq = generate_synthetic(spec)?;
        let dir = out.join(&seq.id);
        let (frames, masks) = (dir.join("JPEGImages"), dir.join("Annotations"));
        fs::create_dir_all(&frames)?;
        fs::create_dir_all(&masks)?;
        for (t, (img, gt)) in seq.frames.iter().zip(seq.ground_truth()?).enumerate() {
            img.save(frames.join(format!("{t:05}.png")))?;
            write_label_png(&masks.join(format!("{t:05}.png")), gt)?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Fits the head parameters on `sequences` (the synthetic suite when
/// empty) and writes them to `out`.
pub fn run_calibration(
    sequences: &[PathBuf],
    config: &AppConfig,
    out: &Path,
) -> Result<CalibrationReport> {
    let data: Vec<VideoSequence> = if sequences.is_empty() {
        evaluation_sequences(None)?
    } else {
        sequences
            .iter()
            .map(|p| evaluation_sequences(Some(p)).map(|mut v| v.remove(0)))
            .collect::<Result<_>>()?
    };
    let report = calibrate(
        &config.segmenter.head,
        &data,
        &config.segmenter,
        &config.calibration,
    )?;
    write_params_file(out, &report.params)?;
    Ok(report)
}
