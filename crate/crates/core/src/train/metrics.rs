use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::loss::LossBreakdown;

/// One line of the metrics stream. Per-step records carry the global step
/// number; the per-epoch summary has `step: null` and averages the epoch's
/// steps. Non-finite losses are written as `null` and read back as NaN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub epoch: u64,
    pub step: Option<u64>,
    #[serde(deserialize_with = "nullable_f64")]
    pub l_cl: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub l_kl_1: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub l_kl_2: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub l_re_1: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub l_re_2: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub l_total: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub grad_norm: f64,
    pub wall_ms: u64,
    pub seed: u64,
}

fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl MetricsRecord {
    pub fn losses(&self) -> LossBreakdown {
        LossBreakdown {
            l_cl: self.l_cl,
            l_kl_1: self.l_kl_1,
            l_kl_2: self.l_kl_2,
            l_re_1: self.l_re_1,
            l_re_2: self.l_re_2,
            l_total: self.l_total,
        }
    }

    pub fn is_epoch_summary(&self) -> bool {
        self.step.is_none()
    }
}

/// Receives records from the training thread.
pub trait MetricsSink {
    fn record(&mut self, r: &MetricsRecord) -> std::io::Result<()>;

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<MetricsRecord> {
    fn record(&mut self, r: &MetricsRecord) -> std::io::Result<()> {
        self.push(r.clone());
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _: &MetricsRecord) -> std::io::Result<()> {
        Ok(())
    }
}

/// Writes JSON Lines.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricsSink for JsonlSink<W> {
    fn record(&mut self, r: &MetricsRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, r)?;
        self.out.write_all(b"\n")
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

/// Parses a JSON Lines metrics stream, skipping blank lines.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
