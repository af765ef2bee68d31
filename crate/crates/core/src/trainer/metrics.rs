use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{invalid, Error, Result};

/// One line of the per-epoch log. Accuracies are percentages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_total_loss: f64,
    pub train_cls_loss: f64,
    pub train_ssl_loss: f64,
    pub test_top1: f64,
    pub test_top2: f64,
    pub lr: f64,
}

pub const CSV_HEADER: &str = "epoch,train_total_loss,train_cls_loss,train_ssl_loss,test_top1,test_top2,lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_top1: f64,
    pub best_top2: f64,
    pub final_epoch: usize,
    pub final_top1: f64,
    pub final_top2: f64,
    pub config: TrainConfig,
}

impl Summary {
    pub fn from_history(history: &[MetricsRow], config: &TrainConfig) -> Result<Self> {
        let last = history.last().ok_or_else(|| Error::InvalidArgument("empty metrics history".into()))?;
        Ok(Self {
            best_top1: history.iter().map(|r| r.test_top1).fold(f64::NEG_INFINITY, f64::max),
            best_top2: history.iter().map(|r| r.test_top2).fold(f64::NEG_INFINITY, f64::max),
            final_epoch: last.epoch,
            final_top1: last.test_top1,
            final_top2: last.test_top2,
            config: config.clone(),
        })
    }
}

/// Values are written in shortest round-trip form.
pub fn metrics_csv(history: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.train_total_loss, r.train_cls_loss, r.train_ssl_loss, r.test_top1, r.test_top2, r.lr
        ));
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return invalid("metrics csv has an unexpected header");
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return invalid(format!("metrics row has {} fields: {line}", f.len()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{s}: {e}")));
            Ok(MetricsRow {
                epoch: f[0].parse().map_err(|e| Error::InvalidArgument(format!("{}: {e}", f[0])))?,
                train_total_loss: num(f[1])?,
                train_cls_loss: num(f[2])?,
                train_ssl_loss: num(f[3])?,
                test_top1: num(f[4])?,
                test_top2: num(f[5])?,
                lr: num(f[6])?,
            })
        })
        .collect()
}

pub fn write_metrics(history: &[MetricsRow], config: &TrainConfig, csv_path: &Path, json_path: &Path) -> Result<()> {
    let summary = Summary::from_history(history, config)?;
    fs::write(csv_path, metrics_csv(history))?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(json_path, json + "\n")?;
    Ok(())
}
