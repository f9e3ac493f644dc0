//! Experiment reports: comparison rows plus run metadata.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// How a row's estimate is compared with its reference value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// Upper bound: passes when the lower CI end is at most the bound.
    AtMost,
    /// Lower bound: passes when the upper CI end is at least the bound.
    AtLeast,
    /// Passes when the reference lies inside the interval.
    Within,
    /// Reported only.
    Info,
}

impl Relation {
    pub fn name(&self) -> &'static str {
        match self {
            Self::AtMost => "at_most",
            Self::AtLeast => "at_least",
            Self::Within => "within",
            Self::Info => "info",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    /// The point estimate is on the wrong side but the interval overlaps
    /// the reference; counted as passing.
    Inconclusive,
    Fail,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub check: String,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub estimate: f64,
    pub estimator: String,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bound: Option<f64>,
    pub relation: Relation,
    pub pass: bool,
    pub status: Status,
}

impl Row {
    fn new(
        check: &str,
        estimator: &str,
        estimate: f64,
        ci: (f64, f64),
        bound: Option<f64>,
        relation: Relation,
    ) -> Self {
        let (ci_low, ci_high) = ci;
        let (pass, status) = match (relation, bound) {
            (Relation::Info, _) | (_, None) => (true, Status::Info),
            (Relation::AtMost, Some(b)) => graded(ci_low <= b, estimate <= b),
            (Relation::AtLeast, Some(b)) => graded(ci_high >= b, estimate >= b),
            (Relation::Within, Some(b)) => {
                let ok = ci_low <= b && b <= ci_high;
                (ok, if ok { Status::Pass } else { Status::Fail })
            }
        };
        Self {
            check: check.to_string(),
            t: None,
            p: None,
            estimate,
            estimator: estimator.to_string(),
            ci_low,
            ci_high,
            bound,
            relation,
            pass,
            status,
        }
    }

    pub fn at_most(check: &str, estimator: &str, estimate: f64, ci: (f64, f64), bound: f64) -> Self {
        Self::new(check, estimator, estimate, ci, Some(bound), Relation::AtMost)
    }

    pub fn at_least(check: &str, estimator: &str, estimate: f64, ci: (f64, f64), bound: f64) -> Self {
        Self::new(check, estimator, estimate, ci, Some(bound), Relation::AtLeast)
    }

    /// Passes when `target ∈ [estimate − tol, estimate + tol]`.
    pub fn within(check: &str, estimator: &str, estimate: f64, tol: f64, target: f64) -> Self {
        Self::new(check, estimator, estimate, (estimate - tol, estimate + tol), Some(target), Relation::Within)
    }

    pub fn info(check: &str, estimator: &str, estimate: f64) -> Self {
        Self::new(check, estimator, estimate, (estimate, estimate), None, Relation::Info)
    }

    pub fn at(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = Some(p);
        self
    }
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Inconclusive => "inconclusive",
            Self::Fail => "fail",
            Self::Info => "info",
        }
    }
}

fn graded(pass: bool, point: bool) -> (bool, Status) {
    match (pass, point) {
        (true, true) => (true, Status::Pass),
        (true, false) => (true, Status::Inconclusive),
        _ => (false, Status::Fail),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub kind: String,
    pub seed: u64,
    pub dt: f64,
    pub n_paths: usize,
    pub version: String,
    pub certificate: Option<serde_json::Value>,
    /// Derived quantities worth keeping (λ, prefactors, burn-in, ...).
    pub derived: BTreeMap<String, f64>,
    /// The experiment specification, echoed back.
    pub spec: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub metadata: Metadata,
    pub rows: Vec<Row>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn rows_for<'a>(&'a self, check: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.check == check)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "check",
            "t",
            "p",
            "estimate",
            "estimator",
            "ci_low",
            "ci_high",
            "bound",
            "relation",
            "pass",
            "status",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.check.clone(),
                opt(r.t),
                opt(r.p),
                r.estimate.to_string(),
                r.estimator.clone(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                opt(r.bound),
                r.relation.name().to_string(),
                r.pass.to_string(),
                r.status.name().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
