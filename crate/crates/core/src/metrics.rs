//! Evaluation metrics over graded samples: question quality on continue
//! turns (WA, WA-GH), stop/continue accuracy (WC, WS, AA), format
//! correctness (FC), and mean total reward (TR). Every metric is reported
//! with its denominator; an empty denominator reads as undefined, never 0.

use serde::{Deserialize, Serialize};

use crate::hindsight::{HindsightTarget, StopLabel};
use crate::reward::{Assessment, RewardBreakdown, RewardRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedSample {
    pub target: HindsightTarget,
    pub breakdown: RewardBreakdown,
    pub predicted: Assessment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: Option<f64>,
    pub count: usize,
}

impl MetricValue {
    fn from_sum(sum: f64, count: usize) -> Self {
        MetricValue { value: (count > 0).then(|| sum / count as f64), count }
    }

    /// The value when defined; panics otherwise (test convenience).
    pub fn expect(&self, what: &str) -> f64 {
        self.value.unwrap_or_else(|| panic!("{what} is undefined (denominator 0)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub wa: MetricValue,
    pub wa_gh: MetricValue,
    pub wc: MetricValue,
    pub ws: MetricValue,
    pub aa: MetricValue,
    pub fc: MetricValue,
    pub tr: MetricValue,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricsOptions {
    /// Average WA over every target-CONTINUE sample instead of only those
    /// where the policy also chose to continue.
    pub wa_over_all_continue: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("metrics require at least one graded sample")]
    Empty,
}

/// The slice of a graded sample the metrics actually consume.
struct Row {
    target_continue: bool,
    predicted_continue: bool,
    r_a: f64,
    r_s: f64,
    omega: f64,
    total: f64,
}

impl From<&GradedSample> for Row {
    fn from(s: &GradedSample) -> Self {
        Row {
            target_continue: s.target.stop_label == StopLabel::Continue,
            predicted_continue: s.predicted == Assessment::Continue,
            r_a: s.breakdown.r_a,
            r_s: s.breakdown.r_s,
            omega: s.breakdown.omega,
            total: s.breakdown.total,
        }
    }
}

impl From<&RewardRecord> for Row {
    fn from(r: &RewardRecord) -> Self {
        Row {
            target_continue: r.target_label == StopLabel::Continue,
            predicted_continue: r.predicted == Assessment::Continue,
            r_a: r.r_a,
            r_s: r.r_s,
            omega: r.omega,
            total: r.total,
        }
    }
}

pub fn compute(samples: &[GradedSample]) -> Result<MetricsReport, MetricsError> {
    compute_with(samples, MetricsOptions::default())
}

pub fn compute_with(samples: &[GradedSample], opts: MetricsOptions) -> Result<MetricsReport, MetricsError> {
    compute_rows(samples.iter().map(Row::from), opts)
}

/// Metrics straight from persisted reward records (one candidate per sample
/// expected; callers pre-filter multi-candidate files).
pub fn compute_from_records(records: &[RewardRecord], opts: MetricsOptions) -> Result<MetricsReport, MetricsError> {
    compute_rows(records.iter().map(Row::from), opts)
}

fn compute_rows(rows: impl Iterator<Item = Row>, opts: MetricsOptions) -> Result<MetricsReport, MetricsError> {
    let mut wa_sum = 0.0;
    let mut wa_hits = 0usize;
    let mut wa_n = 0usize;
    let mut wc_sum = 0.0;
    let mut wc_n = 0usize;
    let mut ws_sum = 0.0;
    let mut ws_n = 0usize;
    let mut rs_sum = 0.0;
    let mut omega_sum = 0.0;
    let mut total_sum = 0.0;
    let mut n = 0usize;

    for row in rows {
        n += 1;
        rs_sum += row.r_s;
        omega_sum += row.omega;
        total_sum += row.total;
        if row.target_continue {
            wc_sum += row.r_s;
            wc_n += 1;
            if opts.wa_over_all_continue || row.predicted_continue {
                wa_sum += row.r_a;
                wa_hits += (row.r_a == 1.0) as usize;
                wa_n += 1;
            }
        } else {
            ws_sum += row.r_s;
            ws_n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::Empty);
    }

    Ok(MetricsReport {
        wa: MetricValue::from_sum(wa_sum, wa_n),
        wa_gh: MetricValue::from_sum(wa_hits as f64, wa_n),
        wc: MetricValue::from_sum(wc_sum, wc_n),
        ws: MetricValue::from_sum(ws_sum, ws_n),
        aa: MetricValue::from_sum(rs_sum, n),
        fc: MetricValue::from_sum(omega_sum, n),
        tr: MetricValue::from_sum(total_sum, n),
    })
}

impl MetricsReport {
    pub fn rows(&self) -> [(&'static str, MetricValue); 7] {
        [
            ("WA", self.wa),
            ("WA-GH", self.wa_gh),
            ("WC", self.wc),
            ("WS", self.ws),
            ("AA", self.aa),
            ("FC", self.fc),
            ("TR", self.tr),
        ]
    }

    /// Aligned plain-text table for terminal output.
    pub fn to_table(&self) -> String {
        let mut out = String::from("metric  value      n\n");
        for (name, m) in self.rows() {
            let value = match m.value {
                Some(v) => format!("{v:.4}"),
                None => "undefined".to_string(),
            };
            out.push_str(&format!("{name:<7} {value:<10} {}\n", m.count));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hindsight::InfoItem;
    use crate::reward::FusionMode;
    use std::collections::BTreeSet;

    fn sample(target_label: StopLabel, predicted: Assessment, r_a: f64, r_s: f64, omega: f64, total: f64) -> GradedSample {
        let info: BTreeSet<InfoItem> = match target_label {
            StopLabel::Continue => [InfoItem::new("x").unwrap()].into(),
            StopLabel::Stop => BTreeSet::new(),
        };
        GradedSample {
            target: HindsightTarget {
                trajectory_id: "t".into(),
                turn_index: 1,
                info_set: info,
                stop_label: target_label,
                removed_generic: BTreeSet::new(),
                terminal: target_label == StopLabel::Stop,
            },
            breakdown: RewardBreakdown { r_a, r_s, omega, beta: 1.0, mode: FusionMode::Multiplicative, total },
            predicted,
        }
    }

    fn fixture() -> Vec<GradedSample> {
        vec![
            sample(StopLabel::Continue, Assessment::Continue, 1.0, 1.0, 1.0, 3.0),
            sample(StopLabel::Continue, Assessment::Stop, 0.0, 0.0, 0.0, 0.0),
            sample(StopLabel::Stop, Assessment::Stop, 0.0, 1.0, 1.0, 2.0),
            sample(StopLabel::Continue, Assessment::Continue, 0.5, 1.0, 0.5, 2.0),
        ]
    }

    #[test]
    fn four_sample_fixture_matches_hand_computation() {
        let report = compute(&fixture()).unwrap();
        assert_eq!(report.wa.expect("wa"), 0.75);
        assert_eq!(report.wa_gh.expect("wa_gh"), 0.5);
        assert!((report.wc.expect("wc") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.ws.expect("ws"), 1.0);
        assert_eq!(report.aa.expect("aa"), 0.75);
        assert_eq!(report.fc.expect("fc"), 0.625);
        assert_eq!(report.tr.expect("tr"), 1.75);
        assert_eq!((report.wa.count, report.wc.count, report.ws.count, report.aa.count), (2, 3, 1, 4));
    }

    #[test]
    fn perfect_singleton_maxes_everything() {
        let report = compute(&[sample(StopLabel::Continue, Assessment::Continue, 1.0, 1.0, 1.0, 3.0)]).unwrap();
        assert_eq!(report.wa.expect("wa"), 1.0);
        assert_eq!(report.aa.expect("aa"), 1.0);
        assert_eq!(report.tr.expect("tr"), 3.0);
        assert_eq!(report.ws.value, None);
    }

    #[test]
    fn empty_denominators_stay_undefined() {
        let all_continue = vec![sample(StopLabel::Continue, Assessment::Stop, 0.0, 0.0, 0.0, 0.0)];
        let report = compute(&all_continue).unwrap();
        assert_eq!(report.ws.value, None);
        assert_eq!(report.ws.count, 0);
        assert_eq!(report.wa.value, None, "no continue-continue pairs");
        let json = serde_json::to_value(&report).unwrap();
        assert!(json["ws"]["value"].is_null());
    }

    #[test]
    fn empty_input_is_a_domain_error() {
        assert_eq!(compute(&[]).unwrap_err(), MetricsError::Empty);
    }

    #[test]
    fn wa_flag_widens_the_denominator() {
        let report = compute_with(&fixture(), MetricsOptions { wa_over_all_continue: true }).unwrap();
        assert_eq!(report.wa.count, 3);
        assert_eq!(report.wa.expect("wa"), 0.5);
    }

    #[test]
    fn aa_is_the_weighted_mean_of_wc_and_ws() {
        let report = compute(&fixture()).unwrap();
        let blended = (report.wc.expect("wc") * report.wc.count as f64
            + report.ws.expect("ws") * report.ws.count as f64)
            / (report.wc.count + report.ws.count) as f64;
        assert!((report.aa.expect("aa") - blended).abs() < 1e-12);
    }

    #[test]
    fn order_of_samples_does_not_matter() {
        let mut shuffled = fixture();
        shuffled.reverse();
        assert_eq!(compute(&fixture()).unwrap(), compute(&shuffled).unwrap());
    }

    #[test]
    fn record_rows_feed_the_same_computation() {
        use crate::reward::{CandidateAction, RewardRecord};
        let samples = fixture();
        let records: Vec<RewardRecord> = samples
            .iter()
            .map(|s| {
                let raw = match s.predicted {
                    Assessment::Continue => "ASK(x)",
                    Assessment::Stop => "<stop />",
                };
                RewardRecord::new(&s.target, 0, &CandidateAction::parse(raw), &s.breakdown)
            })
            .collect();
        let a = compute(&samples).unwrap();
        let b = compute_from_records(&records, MetricsOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_lists_all_seven_metrics() {
        let table = compute(&fixture()).unwrap().to_table();
        for name in ["WA", "WA-GH", "WC", "WS", "AA", "FC", "TR"] {
            assert!(table.lines().any(|l| l.starts_with(name)), "missing {name} in:\n{table}");
        }
        let undefined = compute(&[sample(StopLabel::Continue, Assessment::Stop, 0.0, 0.0, 0.0, 0.0)]).unwrap();
        assert!(undefined.to_table().contains("undefined"));
    }
}
