//! Metrics rows and their CSV form. The column set is part of the external
//! interface; downstream plotting scripts key on the exact header.

use crate::config::Paradigm;
use crate::learning::MetricKind;
use std::io::{self, Write};
use std::path::Path;

pub const CSV_HEADER: &str = "paradigm,seed,global_epoch,gradients,sim_time,metric_kind,metric_value,loss";

/// One evaluation point. `gradients` is the cumulative count of device
/// local epochs spent so far, the cross-paradigm computation axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub paradigm: Paradigm,
    pub seed: u64,
    pub global_epoch: u32,
    pub gradients: u64,
    pub sim_time: u64,
    pub metric_kind: MetricKind,
    pub metric_value: f64,
    pub loss: f64,
}

impl MetricsRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.paradigm,
            self.seed,
            self.global_epoch,
            self.gradients,
            self.sim_time,
            self.metric_kind,
            self.metric_value,
            self.loss
        )
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}

pub fn write_csv(rows: &[MetricsRow], path: &Path) -> io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_csv(rows).as_bytes())
}
