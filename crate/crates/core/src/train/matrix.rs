use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{train_on, RunRecord};
use super::{Arm, TrainingConfig};
use crate::data::Splits;
use crate::error::{Error, Result};
use crate::mixup::MixupConfig;

/// One table row: an arm, optionally with its own λ distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub label: String,
    pub arm: Arm,
    pub mixup: Option<MixupConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSpec {
    pub base: TrainingConfig,
    pub rows: Vec<RowSpec>,
    pub seeds: Vec<u64>,
}

impl MatrixSpec {
    /// The four arms with the base config's λ distribution.
    pub fn four_arms(base: TrainingConfig, seeds: Vec<u64>) -> Self {
        let rows = Arm::ALL
            .into_iter()
            .map(|arm| RowSpec {
                label: arm.as_str().to_string(),
                arm,
                mixup: None,
            })
            .collect();
        Self { base, rows, seeds }
    }

    /// Mixup rows with λ ~ Beta(α, α + 1) for each α.
    pub fn beta_sweep(base: TrainingConfig, alphas: &[f64], seeds: Vec<u64>) -> Self {
        let rows = alphas
            .iter()
            .map(|&alpha| {
                let m = MixupConfig::Beta { alpha };
                RowSpec {
                    label: format!("mixup {}", m.label()),
                    arm: Arm::Mixup,
                    mixup: Some(m),
                }
            })
            .collect();
        Self { base, rows, seeds }
    }

    fn run_config(&self, row: &RowSpec, seed: u64) -> TrainingConfig {
        let mut cfg = self.base.clone();
        cfg.arm = row.arm;
        cfg.seed = seed;
        if let Some(m) = row.mixup {
            cfg.mixup = m;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub label: String,
    pub arm: Arm,
    pub mixup: Option<String>,
    pub seeds: Vec<u64>,
    pub image_test_ap: Vec<f64>,
    pub video_test_ap: Vec<f64>,
    pub image_mean: f64,
    pub image_std: f64,
    pub video_mean: f64,
    pub video_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub rows: Vec<ArmSummary>,
    pub wall_clock_seconds: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// Train every row for every seed and tabulate final AP on both test splits.
pub fn run_experiment_matrix(splits: &Splits, spec: &MatrixSpec, out: Option<&Path>) -> Result<MatrixReport> {
    if spec.rows.is_empty() {
        return Err(Error::arg("experiment matrix needs at least one arm"));
    }
    if spec.seeds.is_empty() {
        return Err(Error::arg("experiment matrix needs at least one seed"));
    }
    let started = std::time::Instant::now();
    let jobs: Vec<(usize, u64)> = (0..spec.rows.len())
        .flat_map(|r| spec.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(r, seed)| {
            let row = &spec.rows[r];
            let dir = out.map(|o| o.join(slug(&row.label)).join(format!("seed_{seed}")));
            let record = train_on(spec.run_config(row, seed), splits, dir.as_deref())?;
            if let Some(dir) = &dir {
                if let Some(rep) = &record.image_test_report {
                    rep.save_curve_csv(&dir.join("pr_image_test.csv"))?;
                }
                if let Some(rep) = &record.video_test_report {
                    rep.save_curve_csv(&dir.join("pr_video_test.csv"))?;
                }
            }
            Ok(record)
        })
        .collect::<Result<_>>()?;

    let n_seeds = spec.seeds.len();
    let rows = spec
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let recs = &records[r * n_seeds..(r + 1) * n_seeds];
            let image: Vec<f64> = recs.iter().map(|x| x.final_image_ap().unwrap_or(0.0)).collect();
            let video: Vec<f64> = recs.iter().map(|x| x.final_video_ap().unwrap_or(0.0)).collect();
            let (image_mean, image_std) = mean_std(&image);
            let (video_mean, video_std) = mean_std(&video);
            ArmSummary {
                label: row.label.clone(),
                arm: row.arm,
                mixup: row
                    .arm
                    .uses_mixup()
                    .then(|| row.mixup.unwrap_or(spec.base.mixup).label()),
                seeds: spec.seeds.clone(),
                image_test_ap: image,
                video_test_ap: video,
                image_mean,
                image_std,
                video_mean,
                video_std,
            }
        })
        .collect();
    let report = MatrixReport {
        rows,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("table.md", report.markdown())?;
        write("table.csv", report.csv())?;
        write(
            "matrix.json",
            serde_json::to_string_pretty(&report).map_err(|e| Error::Serde(e.to_string()))?,
        )?;
    }
    Ok(report)
}

impl MatrixReport {
    pub fn row(&self, label: &str) -> Option<&ArmSummary> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn markdown(&self) -> String {
        let mut s = String::from("| Method | Mixup | AP on image-test | AP on video-test |\n|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} ± {:.3} | {:.3} ± {:.3} |",
                r.label,
                r.mixup.as_deref().unwrap_or("-"),
                r.image_mean,
                r.image_std,
                r.video_mean,
                r.video_std
            );
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("label,arm,mixup,seed,image_test_ap,video_test_ap\n");
        for r in &self.rows {
            for (i, seed) in r.seeds.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.label,
                    r.arm.as_str(),
                    r.mixup.as_deref().unwrap_or(""),
                    seed,
                    r.image_test_ap[i],
                    r.video_test_ap[i]
                );
            }
        }
        s
    }
}
