use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub encoder: String,
    pub classifier: String,
    pub embedding_dims: (usize, usize),
    pub transform: String,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Maximum test accuracy over epoch-end evaluations.
    pub best_accuracy: f64,
    pub final_theta: Option<Vec<f64>>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.test_accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Learning curve, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,test_accuracy,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.6},{:.6},{:.3}", e.epoch, e.train_loss, e.test_accuracy, e.seconds);
        }
        s
    }

    /// Write `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (ext, body) in [("json", self.to_json()), ("csv", self.to_csv())] {
            let p = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Table of results with a fixed column order.
pub fn summary_csv(reports: &[RunReport]) -> String {
    let mut s = String::from("name,encoder,classifier,embedding,transform,best_accuracy,final_accuracy\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{}x{},{},{:.4},{:.4}",
            r.name,
            r.encoder,
            r.classifier,
            r.embedding_dims.0,
            r.embedding_dims.1,
            r.transform,
            r.best_accuracy,
            r.final_accuracy()
        );
    }
    s
}
