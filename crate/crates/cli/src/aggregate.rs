//! Mean and standard deviation over per-trial reports.

use std::fmt::Write as _;

use unlearn_core::evaluation::{mean_std, UnlearnReport};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub trials: usize,
    pub metrics: Vec<MetricSummary>,
}

impl MethodSummary {
    pub fn get(&self, metric: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

type Pick = fn(&UnlearnReport) -> Option<f64>;

const METRICS: [(&str, Pick); 9] = [
    ("ua", |r| Some(r.ua)),
    ("mia_efficacy", |r| Some(r.mia_efficacy)),
    ("ra", |r| Some(r.ra)),
    ("ta", |r| Some(r.ta)),
    ("gap_ua", |r| r.gaps.map(|g| g.ua)),
    ("gap_mia_efficacy", |r| r.gaps.map(|g| g.mia_efficacy)),
    ("gap_ra", |r| r.gaps.map(|g| g.ra)),
    ("gap_ta", |r| r.gaps.map(|g| g.ta)),
    ("avg_gap", |r| r.avg_gap),
];

/// Groups reports by method in order of first appearance. Gap metrics are
/// summarized only when every report of the method carries them.
pub fn summarize(reports: &[UnlearnReport]) -> Vec<MethodSummary> {
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let group: Vec<&UnlearnReport> =
                reports.iter().filter(|r| r.method == method).collect();
            let metrics = METRICS
                .iter()
                .filter_map(|(name, pick)| {
                    let values: Option<Vec<f64>> = group.iter().map(|r| pick(r)).collect();
                    values.map(|v| {
                        let (mean, std) = mean_std(&v);
                        MetricSummary {
                            metric: name,
                            mean,
                            std,
                        }
                    })
                })
                .collect();
            MethodSummary {
                method: method.to_string(),
                trials: group.len(),
                metrics,
            }
        })
        .collect()
}

fn r6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// `method,trials,metric,mean,std`, one row per summarized metric.
pub fn to_csv(summary: &[MethodSummary]) -> String {
    let mut out = String::from("method,trials,metric,mean,std\n");
    for s in summary {
        for m in &s.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.method,
                s.trials,
                m.metric,
                r6(m.mean),
                r6(m.std)
            );
        }
    }
    out
}

/// Aligned `mean±std` table in the layout of the usual results table.
pub fn to_text(summary: &[MethodSummary]) -> String {
    let cols = ["ua", "mia_efficacy", "ra", "ta", "avg_gap"];
    let heads = ["UA", "MIA-Efficacy", "RA", "TA", "Avg. Gap"];
    let width = summary
        .iter()
        .map(|s| s.method.len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = format!("{:<width$}  {:>3}", "Method", "n");
    for h in heads {
        let _ = write!(out, "  {h:>14}");
    }
    out.push('\n');
    for s in summary {
        let _ = write!(out, "{:<width$}  {:>3}", s.method, s.trials);
        for c in cols {
            let cell = match s.get(c) {
                Some(m) => format!("{:.2}±{:.2}", m.mean, m.std),
                None => "-".to_string(),
            };
            let _ = write!(out, "  {cell:>14}");
        }
        out.push('\n');
    }
    out
}
