//! Outcome tests on a matched sample.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Total discordant count up to which McNemar uses the exact binomial tail.
pub const MCNEMAR_EXACT_MAX: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TestKind {
    #[serde(rename = "ztest")]
    ZTest,
    #[default]
    #[serde(rename = "mcnemar")]
    McNemar,
    #[serde(rename = "paired-t")]
    PairedT,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::ZTest => "ztest",
            TestKind::McNemar => "mcnemar",
            TestKind::PairedT => "paired-t",
        }
    }
}

impl std::str::FromStr for TestKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ztest" => Ok(TestKind::ZTest),
            "mcnemar" => Ok(TestKind::McNemar),
            "paired-t" => Ok(TestKind::PairedT),
            other => Err(format!("unknown test '{other}' (expected ztest, mcnemar or paired-t)")),
        }
    }
}

/// Conditions under which a test reports P = 1 instead of a statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeFlag {
    DegenerateCounts,
    NoDiscordantPairs,
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NormalApproximation,
    ExactBinomial,
    ChiSquare,
    StudentT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub test: TestKind,
    pub method: Method,
    pub n_pairs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events_treated: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events_control: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proportion_treated: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proportion_control: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_treated: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_control: Option<f64>,
    /// Risk difference for binary outcomes, mean paired difference otherwise.
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discordant: Option<(u64, u64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub continuity_correction: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<OutcomeFlag>,
}

impl OutcomeReport {
    fn base(test: TestKind, method: Method, n_pairs: u64) -> Self {
        OutcomeReport {
            test,
            method,
            n_pairs,
            events_treated: None,
            events_control: None,
            proportion_treated: None,
            proportion_control: None,
            mean_treated: None,
            mean_control: None,
            estimate: 0.0,
            discordant: None,
            df: None,
            statistic: 0.0,
            p_value: 1.0,
            continuity_correction: false,
            flag: None,
        }
    }

    /// Fixed-width console summary.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| s.push_str(&format!("{k:<22}{v}\n"));
        line("test", self.test.name().to_string());
        line("pairs", self.n_pairs.to_string());
        if let (Some(et), Some(ec)) = (self.events_treated, self.events_control) {
            line(
                "events exposed",
                format!("{et} ({:.2}%)", 100.0 * self.proportion_treated.unwrap_or(0.0)),
            );
            line(
                "events unexposed",
                format!("{ec} ({:.2}%)", 100.0 * self.proportion_control.unwrap_or(0.0)),
            );
        }
        if let (Some(mt), Some(mc)) = (self.mean_treated, self.mean_control) {
            line("mean exposed", format!("{mt:.6}"));
            line("mean unexposed", format!("{mc:.6}"));
        }
        if let Some((b, c)) = self.discordant {
            line("discordant (E+,U-)", b.to_string());
            line("discordant (E-,U+)", c.to_string());
        }
        line("estimate", format!("{:.6}", self.estimate));
        line("statistic", format!("{:.6}", self.statistic));
        if let Some(df) = self.df {
            line("df", format!("{df}"));
        }
        line("P-value", format!("{:.6}", self.p_value));
        if let Some(f) = self.flag {
            line("flag", format!("{f:?}"));
        }
        s
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

pub fn normal_sf(x: f64) -> f64 {
    standard_normal().sf(x)
}

/// Student t CDF with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("df > 0").cdf(x)
}

pub fn t_sf(x: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("df > 0").sf(x)
}

/// Pooled two-sample z-test for proportions with `n` units per group.
pub fn two_proportion_ztest(
    events_treated: u64,
    events_control: u64,
    n: u64,
    continuity_correction: bool,
) -> Result<OutcomeReport> {
    if n == 0 {
        return Err(Error::InsufficientData("z-test needs at least one pair".into()));
    }
    if events_treated > n || events_control > n {
        return Err(Error::InsufficientData(format!(
            "event counts ({events_treated}, {events_control}) exceed group size {n}"
        )));
    }
    let nf = n as f64;
    let p1 = events_treated as f64 / nf;
    let p2 = events_control as f64 / nf;
    let pooled = (events_treated + events_control) as f64 / (2.0 * nf);
    let mut r = OutcomeReport::base(TestKind::ZTest, Method::NormalApproximation, n);
    r.events_treated = Some(events_treated);
    r.events_control = Some(events_control);
    r.proportion_treated = Some(p1);
    r.proportion_control = Some(p2);
    r.estimate = p1 - p2;
    r.continuity_correction = continuity_correction;
    if pooled <= 0.0 || pooled >= 1.0 {
        r.flag = Some(OutcomeFlag::DegenerateCounts);
        return Ok(r);
    }
    let se = (pooled * (1.0 - pooled) * (2.0 / nf)).sqrt();
    let mut diff = p1 - p2;
    if continuity_correction {
        let shrunk = (diff.abs() - 1.0 / nf).max(0.0);
        diff = shrunk.copysign(diff);
    }
    let z = diff / se;
    r.statistic = z;
    r.p_value = (2.0 * normal_sf(z.abs())).min(1.0);
    Ok(r)
}

/// Two-sided exact binomial P on `b` and `c` discordant pairs under p = 1/2.
pub fn mcnemar_exact_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    // Recurrence on the pmf starting at 2^-n.
    let mut pmf = 0.5f64.powi(n as i32);
    let mut tail = pmf;
    for i in 0..k {
        pmf *= (n - i) as f64 / (i + 1) as f64;
        tail += pmf;
    }
    (2.0 * tail).min(1.0)
}

/// Chi-square McNemar P with one degree of freedom.
pub fn mcnemar_chi_square_p(b: u64, c: u64, continuity_correction: bool) -> (f64, f64) {
    let n = (b + c) as f64;
    if n == 0.0 {
        return (0.0, 1.0);
    }
    let mut d = (b as f64 - c as f64).abs();
    if continuity_correction {
        d = (d - 1.0).max(0.0);
    }
    let stat = d * d / n;
    let p = ChiSquared::new(1.0).expect("df > 0").sf(stat);
    (stat, p.min(1.0))
}

/// McNemar test on discordant counts: `b` pairs with only the exposed unit
/// having the event, `c` with only the unexposed one.
pub fn mcnemar_test(b: u64, c: u64, continuity_correction: bool) -> OutcomeReport {
    let total = b + c;
    let method = if total <= MCNEMAR_EXACT_MAX {
        Method::ExactBinomial
    } else {
        Method::ChiSquare
    };
    let mut r = OutcomeReport::base(TestKind::McNemar, method, total);
    r.discordant = Some((b, c));
    r.continuity_correction = continuity_correction;
    if total == 0 {
        r.flag = Some(OutcomeFlag::NoDiscordantPairs);
        return r;
    }
    match method {
        Method::ExactBinomial => {
            r.statistic = b.min(c) as f64;
            r.p_value = mcnemar_exact_p(b, c);
        }
        _ => {
            let (stat, p) = mcnemar_chi_square_p(b, c, continuity_correction);
            r.statistic = stat;
            r.p_value = p;
        }
    }
    r
}

/// Paired t-test on `(exposed, unexposed)` outcomes.
pub fn paired_mean_difference(pairs: &[(f64, f64)]) -> Result<OutcomeReport> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "paired t-test needs at least 2 pairs, got {n}"
        )));
    }
    let nf = n as f64;
    let diffs: Vec<f64> = pairs.iter().map(|(t, c)| t - c).collect();
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (nf - 1.0);
    let mut r = OutcomeReport::base(TestKind::PairedT, Method::StudentT, n as u64);
    r.mean_treated = Some(pairs.iter().map(|p| p.0).sum::<f64>() / nf);
    r.mean_control = Some(pairs.iter().map(|p| p.1).sum::<f64>() / nf);
    r.estimate = mean;
    r.df = Some(nf - 1.0);
    if var <= 0.0 {
        r.flag = Some(OutcomeFlag::ZeroVariance);
        return Ok(r);
    }
    let t = mean / (var / nf).sqrt();
    r.statistic = t;
    // The survival function keeps precision for large |t|, so tiny P-values do not round to 0 early.
    r.p_value = (2.0 * t_sf(t.abs(), nf - 1.0)).min(1.0);
    Ok(r)
}

fn binary(v: f64) -> Result<bool> {
    if v == 0.0 {
        Ok(false)
    } else if v == 1.0 {
        Ok(true)
    } else {
        Err(Error::InsufficientData(format!(
            "binary test requires 0/1 outcomes, found {v}"
        )))
    }
}

/// Runs the chosen test on per-pair `(exposed, unexposed)` outcomes.
pub fn analyze_pairs(
    outcomes: &[(f64, f64)],
    test: TestKind,
    continuity_correction: bool,
) -> Result<OutcomeReport> {
    match test {
        TestKind::PairedT => paired_mean_difference(outcomes),
        TestKind::ZTest | TestKind::McNemar => {
            if outcomes.is_empty() {
                return Err(Error::InsufficientData("no matched pairs".into()));
            }
            let (mut et, mut ec, mut b, mut c) = (0u64, 0u64, 0u64, 0u64);
            for &(t, u) in outcomes {
                let (t, u) = (binary(t)?, binary(u)?);
                et += t as u64;
                ec += u as u64;
                match (t, u) {
                    (true, false) => b += 1,
                    (false, true) => c += 1,
                    _ => {}
                }
            }
            let n = outcomes.len() as u64;
            if test == TestKind::ZTest {
                two_proportion_ztest(et, ec, n, continuity_correction)
            } else {
                let mut r = mcnemar_test(b, c, continuity_correction);
                r.n_pairs = n;
                r.events_treated = Some(et);
                r.events_control = Some(ec);
                r.proportion_treated = Some(et as f64 / n as f64);
                r.proportion_control = Some(ec as f64 / n as f64);
                r.estimate = (et as f64 - ec as f64) / n as f64;
                Ok(r)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ztest_reference_counts() {
        let r = two_proportion_ztest(25, 10, 197, false).unwrap();
        assert!((r.statistic - 2.656).abs() < 1e-3, "{}", r.statistic);
        assert!((0.006..=0.010).contains(&r.p_value));
        assert_eq!(r.proportion_treated, Some(25.0 / 197.0));
        let r = two_proportion_ztest(25, 22, 323, false).unwrap();
        assert!((0.63..=0.67).contains(&r.p_value), "{}", r.p_value);
    }

    #[test]
    fn ztest_equal_and_degenerate() {
        let r = two_proportion_ztest(7, 7, 40, false).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        for (a, b) in [(0, 0), (40, 40)] {
            let r = two_proportion_ztest(a, b, 40, false).unwrap();
            assert_eq!(r.flag, Some(OutcomeFlag::DegenerateCounts));
            assert_eq!(r.p_value, 1.0);
        }
        assert!(two_proportion_ztest(41, 0, 40, false).is_err());
        assert!(two_proportion_ztest(0, 0, 0, false).is_err());
    }

    #[test]
    fn continuity_correction_raises_p() {
        let plain = two_proportion_ztest(25, 10, 197, false).unwrap();
        let cc = two_proportion_ztest(25, 10, 197, true).unwrap();
        assert!(cc.p_value > plain.p_value);
        assert!(cc.statistic > 0.0);
    }

    #[test]
    fn mcnemar_examples() {
        let r = mcnemar_test(10, 10, false);
        assert_eq!(r.p_value, 1.0);
        let r = mcnemar_test(15, 0, false);
        assert_eq!(r.method, Method::ExactBinomial);
        assert!((r.p_value - 2.0 * 0.5f64.powi(15)).abs() < 1e-18);
        let r = mcnemar_test(0, 0, false);
        assert_eq!(r.flag, Some(OutcomeFlag::NoDiscordantPairs));
        assert_eq!(r.p_value, 1.0);
        let r = mcnemar_test(20, 10, false);
        assert_eq!(r.method, Method::ChiSquare);
        assert!((r.statistic - 100.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn paired_t_examples() {
        let r = paired_mean_difference(&[(1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = paired_mean_difference(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap();
        assert_eq!(r.flag, Some(OutcomeFlag::ZeroVariance));
        assert_eq!(r.estimate, 0.0);
        assert!(paired_mean_difference(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn analyze_binary_pairs() {
        let pairs = [(1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.0, 0.0)];
        let r = analyze_pairs(&pairs, TestKind::McNemar, false).unwrap();
        assert_eq!(r.discordant, Some((2, 1)));
        assert_eq!(r.events_treated, Some(3));
        assert_eq!(r.n_pairs, 5);
        assert!(analyze_pairs(&[(0.5, 0.0)], TestKind::ZTest, false).is_err());
    }
}
