//! Evaluation reports in JSON and TSV.
//!
//! Both layouts carry the same numbers at full precision: JSON through
//! serde_json, TSV through Rust's shortest round-trip float formatting.

use serde::Serialize;
use serde_json::{Map, Value};
use vsematch::{HubSummary, RetrievalReport};

/// Column order of the TSV layout, also the key order of the JSON layout.
pub const COLUMNS: [&str; 8] = [
    "direction",
    "r_at_1",
    "r_at_5",
    "r_at_10",
    "med_r",
    "mean_r",
    "strategy",
    "params",
];

/// One direction of an evaluation. Under Hungarian matching only R@1 is
/// defined; the other metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub direction: String,
    pub r_at_1: f64,
    pub r_at_5: Option<f64>,
    pub r_at_10: Option<f64>,
    pub med_r: Option<f64>,
    pub mean_r: Option<f64>,
    pub strategy: String,
    pub params: Map<String, Value>,
}

impl ReportRow {
    pub fn from_report(r: &RetrievalReport, strategy: &str, params: Map<String, Value>) -> Self {
        Self {
            direction: r.direction.as_str().to_string(),
            r_at_1: r.r_at(1),
            r_at_5: Some(r.r_at(5)),
            r_at_10: Some(r.r_at(10)),
            med_r: Some(r.med_r),
            mean_r: Some(r.mean_r),
            strategy: strategy.to_string(),
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HubRow {
    pub direction: String,
    #[serde(flatten)]
    pub summary: HubSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub reports: Vec<ReportRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hubs: Option<Vec<HubRow>>,
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// The report table, then (with diagnostics) a blank line and the hub
    /// table `direction bucket count percentage`.
    pub fn to_tsv(&self) -> String {
        let mut out = COLUMNS.join("\t");
        out.push('\n');
        for r in &self.reports {
            let params = serde_json::to_string(&r.params).expect("params serialize");
            let cells = [
                r.direction.clone(),
                num(r.r_at_1),
                opt(r.r_at_5),
                opt(r.r_at_10),
                opt(r.med_r),
                opt(r.mean_r),
                r.strategy.clone(),
                params,
            ];
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        if let Some(hubs) = &self.hubs {
            out.push_str("\ndirection\tbucket\tcount\tpercentage\n");
            for h in hubs {
                let s = &h.summary;
                let mut rows = vec![
                    ("exactly_0".to_string(), s.exactly_0),
                    ("exactly_1".to_string(), s.exactly_1),
                ];
                rows.extend(s.at_least.iter().map(|&(t, b)| (format!("at_least_{t}"), b)));
                for (name, b) in rows {
                    out.push_str(&format!(
                        "{}\t{name}\t{}\t{}\n",
                        h.direction,
                        b.count,
                        num(b.percentage)
                    ));
                }
                out.push_str(&format!("{}\tmax_hub\t{}\tNA\n", h.direction, s.max_hub));
            }
        }
        out
    }

    /// One-decimal summary for the terminal.
    pub fn human(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
            out.push_str(&format!(
                "{:<14} R@1 {:>5.1}  R@5 {:>5}  R@10 {:>5}  Med r {:>5}  Mean r {:>6}\n",
                r.direction,
                r.r_at_1,
                f(r.r_at_5),
                f(r.r_at_10),
                f(r.med_r),
                f(r.mean_r)
            ));
        }
        if let Some(hubs) = &self.hubs {
            for h in hubs {
                let s = &h.summary;
                let at = |t: usize| s.at_least(t).map_or(0.0, |b| b.percentage);
                out.push_str(&format!(
                    "{:<14} NN to 0: {:.1}%  1: {:.1}%  >=2: {:.1}%  >=5: {:.1}%  >=10: {:.1}%  max {}\n",
                    h.direction,
                    s.exactly_0.percentage,
                    s.exactly_1.percentage,
                    at(2),
                    at(5),
                    at(10),
                    s.max_hub
                ));
            }
        }
        out
    }
}
