use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 9] = ["split", "precision", "recall", "accuracy", "f1", "tp", "fp", "tn", "fn"];

/// Binary classification scores with class 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Set when some score had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let n = tp + fp + tn + fn_;
        if n == 0 {
            return Err(Error::Data("cannot score an empty dataset".into()));
        }
        let mut degenerate = false;
        let mut ratio = |num: usize, den: usize| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let accuracy = ratio(tp + tn, n);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            degenerate = true;
            0.0
        };
        Ok(Self {
            precision,
            accuracy,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
            degenerate,
        })
    }

    /// Scores predictions against labels; any label other than 1 is negative.
    pub fn from_predictions(labels: &[usize], predictions: &[usize]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::Data(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&y, &p) in labels.iter().zip(predictions) {
            match (y == 1, p == 1) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
                (true, false) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Header plus one row per named entry, columns [`METRICS_COLUMNS`].
    pub fn table_csv(rows: &[(&str, Metrics)]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(METRICS_COLUMNS)?;
        for (name, m) in rows {
            w.write_record([
                name.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.accuracy.to_string(),
                m.f1.to_string(),
                m.tp.to_string(),
                m.fp.to_string(),
                m.tn.to_string(),
                m.fn_.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// `P=0.75 R=0.75 Acc=0.8 F1=0.75`, with at most four decimals.
    pub fn summary(&self) -> String {
        format!(
            "P={} R={} Acc={} F1={}",
            short(self.precision),
            short(self.recall),
            short(self.accuracy),
            short(self.f1)
        )
    }
}

fn short(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0');
    s.strip_suffix('.').unwrap_or(s).to_string()
}
