//! Mean improvement rates grouped by method, scenario or morphology.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::manifest::MorphologyBucket;
use super::process::{Method, MethodResult, MetricRates};
use crate::prompt::ScenarioId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Method,
    Scenario,
    Morphology,
}

impl GroupBy {
    pub const ALL: [GroupBy; 3] = [GroupBy::Method, GroupBy::Scenario, GroupBy::Morphology];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::Method => "method",
            GroupBy::Scenario => "scenario",
            GroupBy::Morphology => "morphology",
        }
    }
}

impl FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "method" => Ok(GroupBy::Method),
            "scenario" => Ok(GroupBy::Scenario),
            "morphology" => Ok(GroupBy::Morphology),
            _ => Err(format!("unknown grouping {s:?}; expected method, scenario or morphology")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub group: String,
    pub method: String,
    pub count: usize,
    /// `None` for an empty group.
    pub mean_rates: Option<MetricRates>,
}

/// Built-in methods first, in fixed order, then external labels sorted.
fn method_order(results: &[MethodResult]) -> Vec<String> {
    let mut builtin: BTreeSet<Method> = BTreeSet::new();
    let mut external: BTreeSet<String> = BTreeSet::new();
    for r in results {
        match r.method {
            Method::EXTERNAL => {
                external.insert(r.method_name());
            }
            m => {
                builtin.insert(m);
            }
        }
    }
    builtin.into_iter().map(|m| m.to_string()).chain(external).collect()
}

fn mean_row<'a>(group: String, method: &str, rows: impl Iterator<Item = &'a MethodResult>) -> AggregateRow {
    let mut sum = [0.0; 3];
    let mut count = 0;
    for r in rows.filter(|r| r.method_name() == method) {
        for (s, v) in sum.iter_mut().zip(r.improvement_rates.as_array()) {
            *s += v;
        }
        count += 1;
    }
    let mean_rates = (count > 0).then(|| MetricRates::from(sum.map(|s| s / count as f64)));
    AggregateRow { group, method: method.to_string(), count, mean_rates }
}

/// Groups results. Methods present in `results` define the method rows; for
/// scenario and morphology every bucket appears, with count 0 when empty.
pub fn aggregate(results: &[MethodResult], by: GroupBy) -> Vec<AggregateRow> {
    let methods = method_order(results);
    let mut out = Vec::new();
    match by {
        GroupBy::Method => {
            for m in &methods {
                out.push(mean_row(m.clone(), m, results.iter()));
            }
        }
        GroupBy::Scenario => {
            for s in ScenarioId::ALL {
                for m in &methods {
                    out.push(mean_row(s.to_string(), m, results.iter().filter(|r| r.scenario == s)));
                }
            }
        }
        GroupBy::Morphology => {
            for b in MorphologyBucket::ALL {
                for m in &methods {
                    out.push(mean_row(b.to_string(), m, results.iter().filter(|r| r.morphology == b)));
                }
            }
        }
    }
    out
}

/// `0.1` renders as `10.00%`.
pub fn format_rate(rate: f64) -> String {
    format!("{:.2}%", rate * 100.0)
}

fn cells(row: &AggregateRow) -> [String; 3] {
    match &row.mean_rates {
        Some(r) => r.as_array().map(format_rate),
        None => [String::new(), String::new(), String::new()],
    }
}

pub fn render_csv(rows: &[AggregateRow], by: GroupBy) -> String {
    let mut s = format!("{},method,count,safe,beauty,lively\n", by.as_str());
    for row in rows {
        let [a, b, c] = cells(row);
        let _ = writeln!(s, "{},{},{},{a},{b},{c}", csv_field(&row.group), csv_field(&row.method), row.count);
    }
    s
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}

pub fn render_markdown(rows: &[AggregateRow], by: GroupBy) -> String {
    let mut s = format!("| {} | method | count | safe | beauty | lively |\n", by.as_str());
    s.push_str("|---|---|---:|---:|---:|---:|\n");
    for row in rows {
        let [a, b, c] = cells(row);
        let _ = writeln!(s, "| {} | {} | {} | {a} | {b} | {c} |", row.group, row.method, row.count);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PerceptionScores;

    fn result(method: Method, label: Option<&str>, scenario: ScenarioId, hw: f64, rates: [f64; 3]) -> MethodResult {
        MethodResult {
            method,
            label: label.map(str::to_string),
            record_id: "r".into(),
            scenario,
            hw_ratio: hw,
            morphology: super::super::bucket_morphology(hw).unwrap(),
            trigger: None,
            raw_scores: PerceptionScores::uniform(5.0),
            edited_scores: PerceptionScores::uniform(5.0),
            improvement_rates: rates.into(),
            reward: 0.0,
        }
    }

    #[test]
    fn method_means_and_order() {
        let rs = vec![
            result(Method::EXTERNAL, Some("Zeta"), ScenarioId::NI, 0.2, [0.0; 3]),
            result(Method::BO, None, ScenarioId::NI, 0.2, [0.2, 0.0, 0.0]),
            result(Method::BO, None, ScenarioId::BR, 2.0, [0.4, 0.0, -0.2]),
            result(Method::MP, None, ScenarioId::BR, 2.0, [0.1, 0.1, 0.1]),
        ];
        let rows = aggregate(&rs, GroupBy::Method);
        let names: Vec<_> = rows.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["MP", "BO", "Zeta"]);
        let bo = &rows[1];
        assert_eq!(bo.count, 2);
        let m = bo.mean_rates.unwrap();
        assert!((m.safe - 0.3).abs() < 1e-12 && (m.lively + 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_buckets_are_listed() {
        let rs = vec![result(Method::MP, None, ScenarioId::CG, 1.0, [0.1, 0.2, 0.3])];
        let rows = aggregate(&rs, GroupBy::Morphology);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].count, 0);
        assert!(rows[0].mean_rates.is_none());
        assert_eq!(rows[1].count, 1);
        let csv = render_csv(&rows, GroupBy::Morphology);
        assert!(csv.contains("BarelyPopulated,MP,0,,,\n"));
        assert!(csv.contains("LivingSpaces,MP,1,10.00%,20.00%,30.00%\n"));
        let md = render_markdown(&aggregate(&rs, GroupBy::Scenario), GroupBy::Scenario);
        assert_eq!(md.lines().count(), 2 + 4);
    }

    #[test]
    fn rate_format() {
        assert_eq!(format_rate(0.1), "10.00%");
        assert_eq!(format_rate(-0.05), "-5.00%");
        assert_eq!(format_rate(0.0), "0.00%");
    }
}
