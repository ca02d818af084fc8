//! Per-iteration training metrics, one JSON object per line.

use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grpo::{Channel, PerChannel};

/// Mean score of each reward channel over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelMeans {
    pub rot: f64,
    pub trans: f64,
    pub vis: f64,
    pub mot: f64,
    pub hps: f64,
}

impl From<&PerChannel<f64>> for ChannelMeans {
    fn from(v: &PerChannel<f64>) -> Self {
        ChannelMeans {
            rot: v[Channel::Rot],
            trans: v[Channel::Trans],
            vis: v[Channel::Vis],
            mot: v[Channel::Mot],
            hps: v[Channel::Hps],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub mean_rewards: ChannelMeans,
    pub mean_advantage: f64,
    pub mean_abs_advantage: f64,
    pub surrogate: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub window_start: usize,
    pub window_end: usize,
    /// Mean true (noise-free) translation error of the batch's rollouts, meters.
    pub mean_d_trans: f64,
    pub mean_d_rot: f64,
    /// `None` when wall-clock recording is disabled, which keeps streams byte-reproducible.
    pub wall_seconds: Option<f64>,
}

/// One self-delimiting line (no trailing newline).
pub fn emit_metrics(record: &MetricsRecord) -> String {
    serde_json::to_string(record).expect("metrics records always serialize")
}

pub fn parse_metrics_line(line: &str) -> std::result::Result<MetricsRecord, serde_json::Error> {
    serde_json::from_str(line)
}

/// Serializes concurrent writers onto one output.
pub struct MetricsSink {
    out: Mutex<Box<dyn Write + Send>>,
}

impl MetricsSink {
    pub fn new<W: Write + Send + 'static>(out: W) -> Self {
        MetricsSink { out: Mutex::new(Box::new(out)) }
    }

    pub fn discard() -> Self {
        MetricsSink::new(std::io::sink())
    }

    pub fn emit(&self, record: &MetricsRecord) -> Result<()> {
        let line = emit_metrics(record);
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(out, "{line}")?;
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }

        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    fn record(i: usize) -> MetricsRecord {
        MetricsRecord {
            iteration: i,
            mean_rewards: ChannelMeans { rot: -0.1, trans: -0.25, vis: 0.0, mot: -0.01, hps: -0.05 },
            mean_advantage: 0.0,
            mean_abs_advantage: 1.2,
            surrogate: 0.0,
            clip_fraction: 0.0,
            grad_norm: 3.0,
            window_start: 20,
            window_end: 25,
            mean_d_trans: 0.25,
            mean_d_rot: 0.1,
            wall_seconds: None,
        }
    }

    #[test]
    fn lines_are_single_json_objects() {
        let line = emit_metrics(&record(3));
        assert!(!line.contains('\n'));
        assert!(line.starts_with("{\"iteration\":3,"));
        assert_eq!(parse_metrics_line(&line).unwrap(), record(3));
    }

    #[test]
    fn sink_writes_one_line_per_record() {
        let buf = Shared::default();
        let sink = MetricsSink::new(buf.clone());
        for i in 0..5 {
            sink.emit(&record(i)).unwrap();
        }
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(parse_metrics_line(lines[4]).unwrap().iteration, 4);
    }
}
