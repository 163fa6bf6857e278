use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};

/// One row of the training log. Validation is scored with EMA weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub stage: u8,
    /// 1-based within the stage.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub backbone_lr: f64,
    pub head_lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    NoEpochs,
    Completed,
    EarlyStopped,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::NoEpochs => "no-epochs",
            StopReason::Completed => "completed",
            StopReason::EarlyStopped => "early-stopped",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the best validation accuracy.
    pub best: Option<usize>,
    pub stop_reason: StopReason,
}

pub const REPORT_HEADER: [&str; 8] = [
    "stage",
    "epoch",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
    "backbone_lr",
    "head_lr",
];

impl TrainReport {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best.map(|i| &self.records[i])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let fail = |e: csv::Error| Error::Format(format!("writing report: {e}"));
        w.write_record(REPORT_HEADER).map_err(fail)?;
        for r in &self.records {
            w.write_record([
                r.stage.to_string(),
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_acc.to_string(),
                r.val_loss.to_string(),
                r.val_acc.to_string(),
                r.backbone_lr.to_string(),
                r.head_lr.to_string(),
            ])
            .map_err(fail)?;
        }
        w.flush().map_err(|e| Error::Format(format!("writing report: {e}")))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let per_stage = |st: u8| self.records.iter().filter(|r| r.stage == st).count();
        let _ = writeln!(s, "stage 1 epochs: {}", per_stage(1));
        let _ = writeln!(s, "stage 2 epochs: {}", per_stage(2));
        match self.best_record() {
            Some(b) => {
                let _ = writeln!(s, "best epoch: stage {} epoch {}", b.stage, b.epoch);
                let _ = writeln!(s, "best val accuracy: {:.2}%", 100.0 * b.val_acc);
            }
            None => {
                let _ = writeln!(s, "best epoch: none");
            }
        }
        let _ = writeln!(s, "stopping reason: {}", self.stop_reason.name());
        s
    }
}
