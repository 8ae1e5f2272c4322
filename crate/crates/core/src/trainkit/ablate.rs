use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::Augmentation;
use super::eval::{evaluate, similarity_audit};
use super::train::{start_state, train_stage1, train_stage2};
use crate::error::{Error, Result};
use crate::synthgen::Dataset;
use crate::textcf::TextVariant;
use crate::videocf::VideoVariant;

/// Outcome of one (text variant, video variant) stage-2 run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub text_variant: TextVariant,
    pub video_variant: VideoVariant,
    pub accuracy_all: f64,
    pub accuracy_open: Option<f64>,
    pub accuracy_binary: Option<f64>,
    pub audit_fraction: f64,
    pub final_l_con: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline_accuracy: f64,
    pub rows: Vec<AblationRow>,
}

/// Train one stage-1 baseline from `stage1`, then a stage-2 run of
/// `stage2_epochs` for every variant pairing. Each stage-2 run starts from
/// the same baseline and uses `stage1` for all other settings. Per-run
/// metrics go to `out_dir/<text>_<video>/` when a directory is given.
pub fn run_ablation(
    train: &Dataset,
    test: &Dataset,
    stage1: &TrainConfig,
    stage2_epochs: usize,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if stage1.stage != 1 {
        return Err(Error::Config("the ablation template must be a stage-1 configuration".into()));
    }
    let mut cfg1 = stage1.clone();
    cfg1.paths.checkpoint_in = None;
    cfg1.paths.checkpoint_out = out_dir.map(|d| d.join("stage1.ckpt"));
    cfg1.paths.metrics_dir = out_dir.map(|d| d.join("stage1"));
    let mut base = start_state(train, &cfg1)?;
    train_stage1(train, &mut base, &cfg1)?;
    let baseline_accuracy = evaluate(test, &base)?.accuracy_all;

    let mut rows = Vec::new();
    for tv in TextVariant::ALL {
        for vv in VideoVariant::ALL {
            let mut cfg2 = stage1.clone();
            cfg2.stage = 2;
            cfg2.epochs = stage2_epochs;
            cfg2.text_variant = tv;
            cfg2.video_variant = vv;
            // Satisfies validation; the baseline is handed over in memory.
            cfg2.paths.checkpoint_in = Some("stage1.ckpt".into());
            let run_dir = out_dir.map(|d| d.join(format!("{}_{}", tv.as_str(), vv.as_str())));
            cfg2.paths.checkpoint_out = run_dir.as_ref().map(|d| d.join("stage2.ckpt"));
            cfg2.paths.metrics_dir = run_dir;
            if let Some(d) = &cfg2.paths.metrics_dir {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            let mut state = base.clone();
            let report = train_stage2(train, &mut state, &cfg2)?;
            let metrics = evaluate(test, &state)?;
            let audit = similarity_audit(train, &state, &Augmentation::new(train, &cfg2)?, cfg2.seed)?;
            rows.push(AblationRow {
                text_variant: tv,
                video_variant: vv,
                accuracy_all: metrics.accuracy_all,
                accuracy_open: metrics.accuracy_open,
                accuracy_binary: metrics.accuracy_binary,
                audit_fraction: audit.positive_fraction,
                final_l_con: report.epochs.last().map_or(f64::NAN, |e| e.l_con),
            });
        }
    }
    let report = AblationReport { baseline_accuracy, rows };
    if let Some(d) = out_dir {
        let json = d.join("ablation.json");
        std::fs::write(&json, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&json, e))?;
        let tsv = d.join("ablation.tsv");
        std::fs::write(&tsv, format_table(&report)).map_err(|e| Error::io(&tsv, e))?;
    }
    Ok(report)
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

/// Tab-separated comparison table, one row per pairing plus the baseline.
pub fn format_table(r: &AblationReport) -> String {
    let mut s = String::from("text\tvideo\tacc_all\tacc_open\tacc_binary\tdelta_vs_baseline\taudit_fraction\tfinal_l_con\n");
    let _ = writeln!(s, "-\t-\t{}\t-\t-\t0.00\t-\t-", pct(Some(r.baseline_accuracy)));
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:+.2}\t{:.4}\t{:.6}",
            row.text_variant.as_str(),
            row.video_variant.as_str(),
            pct(Some(row.accuracy_all)),
            pct(row.accuracy_open),
            pct(row.accuracy_binary),
            100.0 * (row.accuracy_all - r.baseline_accuracy),
            row.audit_fraction,
            row.final_l_con
        );
    }
    s
}
