use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::sim::format_shortest;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Slack, in Wilson half-widths, allowed above a bound before it counts as violated.
pub const BOUND_MARGIN: f64 = 3.0;

/// Slack, in standard errors, for mean checks.
pub const MEAN_MARGIN: f64 = 4.0;

/// Wilson score interval for `k` successes out of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilson {
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
    pub half_width: f64,
}

pub fn wilson(k: u64, n: u64) -> Wilson {
    if n == 0 {
        return Wilson { p_hat: 0.0, lo: 0.0, hi: 1.0, half_width: 0.5 };
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Wilson { p_hat: p, lo: (center - half).max(0.0).min(p), hi: (center + half).min(1.0).max(p), half_width: half }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Respected,
    Violated,
    /// No usable paths (all censored) or no samples.
    Inconclusive,
}

/// Empirical exceedance frequency against a theoretical upper bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityCheck {
    pub label: String,
    pub exceedances: u64,
    pub n: u64,
    /// Truncated paths, already included in `exceedances`.
    pub censored: u64,
    pub wilson: Wilson,
    pub bound: f64,
    pub bound_vacuous: bool,
    pub verdict: Verdict,
}

impl ProbabilityCheck {
    pub fn new(label: impl Into<String>, exceedances: u64, n: u64, censored: u64, bound: f64, vacuous: bool) -> Self {
        let w = wilson(exceedances, n);
        let verdict = if n == 0 || censored == n {
            Verdict::Inconclusive
        } else if w.p_hat <= bound + BOUND_MARGIN * w.half_width {
            Verdict::Respected
        } else {
            Verdict::Violated
        };
        Self { label: label.into(), exceedances, n, censored, wilson: w, bound, bound_vacuous: vacuous, verdict }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanKind {
    /// `|mean − target| ≤ 4·stderr + tol`.
    TwoSided,
    /// `mean ≤ target + 4·stderr + tol`.
    AtMost,
}

/// Sample mean of a per-path statistic against a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCheck {
    pub label: String,
    pub n: u64,
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub kind: MeanKind,
    /// Absolute slack for statistics that are exact up to integrator error.
    pub abs_tol: f64,
    /// Non-finite per-path values, excluded from the mean.
    pub non_finite: u64,
    pub verdict: Verdict,
}

impl MeanCheck {
    pub fn from_samples(label: impl Into<String>, values: &[f64], target: f64, kind: MeanKind, abs_tol: f64) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let n = finite.len();
        let mean = if n == 0 { 0.0 } else { finite.iter().sum::<f64>() / n as f64 };
        let var = if n < 2 { 0.0 } else { finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64 };
        let stderr = if n == 0 { 0.0 } else { (var / n as f64).sqrt() };
        let slack = MEAN_MARGIN * stderr + abs_tol;
        let verdict = if n == 0 {
            Verdict::Inconclusive
        } else {
            let ok = match kind {
                MeanKind::TwoSided => (mean - target).abs() <= slack,
                MeanKind::AtMost => mean <= target + slack,
            };
            if ok {
                Verdict::Respected
            } else {
                Verdict::Violated
            }
        };
        Self {
            label: label.into(),
            n: n as u64,
            mean,
            stderr,
            target,
            kind,
            abs_tol,
            non_finite: (values.len() - n) as u64,
            verdict,
        }
    }
}

/// Outcome of one Monte Carlo verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub schema_version: u32,
    pub check: String,
    pub model: String,
    pub seed: u64,
    pub n_paths: u64,
    pub probabilities: Vec<ProbabilityCheck>,
    pub means: Vec<MeanCheck>,
    pub censored: u64,
    pub censored_fraction: f64,
    /// Samples at which a stated hypothesis failed.
    pub audit_failures: u64,
    /// Set when any hypothesis audit failed; the verdicts are then not meaningful.
    pub invalid: bool,
    pub notes: Vec<String>,
    pub extras: BTreeMap<String, f64>,
    /// Wall-clock time; excluded from [`McReport::canonical`].
    pub runtime_secs: f64,
}

impl McReport {
    pub fn new(check: &str, model: &str, seed: u64, n_paths: u64) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            check: check.into(),
            model: model.into(),
            seed,
            n_paths,
            probabilities: Vec::new(),
            means: Vec::new(),
            censored: 0,
            censored_fraction: 0.0,
            audit_failures: 0,
            invalid: false,
            notes: Vec::new(),
            extras: BTreeMap::new(),
            runtime_secs: 0.0,
        }
    }

    pub(crate) fn set_censored(&mut self, censored: u64) {
        self.censored = censored;
        self.censored_fraction = if self.n_paths == 0 { 0.0 } else { censored as f64 / self.n_paths as f64 };
    }

    pub(crate) fn set_audit(&mut self, failures: u64) {
        self.audit_failures = failures;
        self.invalid = failures > 0;
        if failures > 0 {
            self.notes.push(format!("hypothesis audit failed at {failures} samples"));
        }
    }

    /// True when the report is valid and every check is respected.
    pub fn all_respected(&self) -> bool {
        !self.invalid
            && self.probabilities.iter().all(|p| p.verdict == Verdict::Respected)
            && self.means.iter().all(|m| m.verdict == Verdict::Respected)
    }

    pub fn violations(&self) -> Vec<&str> {
        let p = self.probabilities.iter().filter(|p| p.verdict != Verdict::Respected).map(|p| p.label.as_str());
        let m = self.means.iter().filter(|m| m.verdict != Verdict::Respected).map(|m| m.label.as_str());
        p.chain(m).collect()
    }

    /// Copy with timing removed, for determinism comparisons.
    pub fn canonical(&self) -> Self {
        Self { runtime_secs: 0.0, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub const CSV_HEADER: &'static str = "check,label,kind,n,estimate,lo,hi,target,verdict";

    /// One row per probability and mean check, without header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        let verdict = |v: Verdict| match v {
            Verdict::Respected => "respected",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        };
        for p in &self.probabilities {
            let _ = writeln!(
                out,
                "{},{},probability,{},{},{},{},{},{}",
                self.check,
                p.label,
                p.n,
                format_shortest(p.wilson.p_hat),
                format_shortest(p.wilson.lo),
                format_shortest(p.wilson.hi),
                format_shortest(p.bound),
                verdict(p.verdict)
            );
        }
        for m in &self.means {
            let _ = writeln!(
                out,
                "{},{},mean,{},{},{},{},{},{}",
                self.check,
                m.label,
                m.n,
                format_shortest(m.mean),
                format_shortest(m.mean - MEAN_MARGIN * m.stderr),
                format_shortest(m.mean + MEAN_MARGIN * m.stderr),
                format_shortest(m.target),
                verdict(m.verdict)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_estimate_and_shrinks() {
        for (k, n) in [(0, 10), (3, 10), (10, 10), (50, 1000), (500, 1000)] {
            let w = wilson(k, n);
            assert!(w.lo <= w.p_hat && w.p_hat <= w.hi);
            assert!(w.lo >= 0.0 && w.hi <= 1.0);
        }
        let a = wilson(100, 1000).half_width;
        let b = wilson(200, 2000).half_width;
        assert!((b / a - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.1 * std::f64::consts::FRAC_1_SQRT_2);
        // Textbook value: 5/50 gives [0.0435, 0.2136].
        let w = wilson(5, 50);
        assert!((w.lo - 0.043_475).abs() < 1e-5 && (w.hi - 0.213_605).abs() < 1e-5);
    }

    #[test]
    fn verdicts() {
        assert_eq!(ProbabilityCheck::new("a", 5, 100, 0, 0.05, false).verdict, Verdict::Respected);
        assert_eq!(ProbabilityCheck::new("a", 50, 100, 0, 0.05, false).verdict, Verdict::Violated);
        assert_eq!(ProbabilityCheck::new("a", 10, 10, 10, 0.05, false).verdict, Verdict::Inconclusive);
        let m = MeanCheck::from_samples("m", &[1.0, 1.0, 1.0], 1.0, MeanKind::TwoSided, 0.0);
        assert_eq!(m.verdict, Verdict::Respected);
        let m = MeanCheck::from_samples("m", &[2.0, 2.1, 1.9, f64::INFINITY], 1.0, MeanKind::AtMost, 0.0);
        assert_eq!((m.verdict, m.non_finite), (Verdict::Violated, 1));
    }

    #[test]
    fn json_round_trip() {
        let mut r = McReport::new("demo", "poisson", 7, 100);
        r.probabilities.push(ProbabilityCheck::new("p", 1, 100, 0, 0.1, false));
        r.means.push(MeanCheck::from_samples("m", &[0.5, 1.5], 1.0, MeanKind::TwoSided, 0.0));
        r.extras.insert("kappa".into(), 1.5);
        r.runtime_secs = 0.25;
        let back = McReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.canonical().runtime_secs, 0.0);
        assert_eq!(r.csv_rows().lines().count(), 2);
    }
}
