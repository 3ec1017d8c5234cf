//! Balance diagnostics: standardized mean differences, target deviations,
//! retention, and their CSV, JSON and SVG renderings.
//!
//! Every SMD uses the pre-match pooled SD of the covariate as denominator, so
//! before and after values are on the same scale.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::problem::{BalanceSpec, TargetProfile, VERIFY_TOLERANCE};

/// Reference lines of the love plot, in |SMD| units.
pub const LOVE_REFERENCE_LINES: [f64; 2] = [0.1, 0.25];

/// Signed standardized mean difference.
pub fn smd(values_treated: &[f64], values_control: &[f64], pooled_sd: f64) -> f64 {
    (mean(values_treated) - mean(values_control)) / pooled_sd
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseBalance {
    pub mean_treated: f64,
    pub mean_control: f64,
    pub smd: f64,
    /// |mean - target| / pooled SD per group; present with a target profile.
    pub target_deviation_treated: Option<f64>,
    pub target_deviation_control: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateBalance {
    pub covariate: String,
    pub pooled_sd: f64,
    pub target_mean: Option<f64>,
    pub before: PhaseBalance,
    /// `None` when the matched sample is empty.
    pub after: Option<PhaseBalance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retention {
    pub exposed_total: usize,
    pub unexposed_total: usize,
    pub exposed_kept: usize,
    pub unexposed_kept: usize,
    pub exposed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub n_pairs: usize,
    pub covariates: Vec<CovariateBalance>,
    pub retention: Retention,
    /// Balance bounds found violated by the matched sample; empty for verified solutions.
    pub breaches: Vec<String>,
}

fn phase(
    dataset: &Dataset,
    k: usize,
    treated: &[usize],
    control: &[usize],
    target: Option<&TargetProfile>,
) -> PhaseBalance {
    let sd = dataset.schema.standardization[k].pooled_sd;
    let col = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| dataset.units[i].raw[k]).collect() };
    let (t, c) = (col(treated), col(control));
    let (mt, mc) = (mean(&t), mean(&c));
    let dev = |m: f64| target.map(|p| (m - p.raw[k]).abs() / sd);
    PhaseBalance {
        mean_treated: mt,
        mean_control: mc,
        smd: smd(&t, &c, sd),
        target_deviation_treated: dev(mt),
        target_deviation_control: dev(mc),
    }
}

/// Balance of a matched sample given by unit ids, against the full sample.
pub fn balance_report(
    dataset: &Dataset,
    treated_ids: &[String],
    control_ids: &[String],
    spec: Option<&BalanceSpec>,
    target: Option<&TargetProfile>,
) -> Result<BalanceReport> {
    let index: HashMap<&str, usize> = dataset
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| (u.id.as_str(), i))
        .collect();
    let lookup = |ids: &[String]| -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect()
    };
    let kept_t = lookup(treated_ids)?;
    let kept_c = lookup(control_ids)?;
    let all_t: Vec<usize> = (0..dataset.units.len()).filter(|&i| dataset.units[i].exposed).collect();
    let all_c: Vec<usize> = (0..dataset.units.len()).filter(|&i| !dataset.units[i].exposed).collect();
    let matched = !kept_t.is_empty() && !kept_c.is_empty();

    let mut covariates = Vec::with_capacity(dataset.n_balance());
    let mut breaches = Vec::new();
    for (k, name) in dataset.schema.balance.iter().enumerate() {
        let before = phase(dataset, k, &all_t, &all_c, target);
        let after = matched.then(|| phase(dataset, k, &kept_t, &kept_c, target));
        if let (Some(a), Some(spec)) = (&after, spec) {
            if let Some(delta) = spec.group_tolerance.as_ref().map(|v| v[k]) {
                if a.smd.abs() > delta + VERIFY_TOLERANCE {
                    breaches.push(format!("{name}: |SMD| {:.6} exceeds {delta}", a.smd.abs()));
                }
            }
            if let Some(eps) = spec.target_tolerance.as_ref().map(|v| v[k]) {
                for (label, dev) in [
                    ("exposed", a.target_deviation_treated),
                    ("unexposed", a.target_deviation_control),
                ] {
                    if let Some(d) = dev.filter(|d| *d > eps + VERIFY_TOLERANCE) {
                        breaches.push(format!("{name}: {label} target deviation {d:.6} exceeds {eps}"));
                    }
                }
            }
        }
        covariates.push(CovariateBalance {
            covariate: name.clone(),
            pooled_sd: dataset.schema.standardization[k].pooled_sd,
            target_mean: target.map(|p| p.raw[k]),
            before,
            after,
        });
    }
    for b in &breaches {
        log::error!("balance contract breach: {b}");
    }
    Ok(BalanceReport {
        n_pairs: kept_t.len().min(kept_c.len()),
        covariates,
        retention: Retention {
            exposed_total: all_t.len(),
            unexposed_total: all_c.len(),
            exposed_kept: kept_t.len(),
            unexposed_kept: kept_c.len(),
            exposed_fraction: if all_t.is_empty() {
                0.0
            } else {
                kept_t.len() as f64 / all_t.len() as f64
            },
        },
        breaches,
    })
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.9}")
    } else {
        "NA".to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

impl BalanceReport {
    pub fn max_abs_smd_after(&self) -> Option<f64> {
        self.covariates
            .iter()
            .filter_map(|c| c.after.as_ref().map(|a| a.smd.abs()))
            .reduce(f64::max)
    }

    /// One row per covariate and phase.
    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "covariate",
            "phase",
            "n_treated",
            "n_control",
            "mean_treated",
            "mean_control",
            "target_mean",
            "smd",
            "abs_smd",
            "target_dev_treated",
            "target_dev_control",
        ])?;
        let r = &self.retention;
        for c in &self.covariates {
            let rows = [
                ("before", Some(&c.before), r.exposed_total, r.unexposed_total),
                ("after", c.after.as_ref(), r.exposed_kept, r.unexposed_kept),
            ];
            for (label, p, nt, nc) in rows {
                let cells = match p {
                    Some(p) => [
                        num(p.mean_treated),
                        num(p.mean_control),
                        opt(c.target_mean),
                        num(p.smd),
                        num(p.smd.abs()),
                        opt(p.target_deviation_treated),
                        opt(p.target_deviation_control),
                    ],
                    None => std::array::from_fn(|i| if i == 2 { opt(c.target_mean) } else { "NA".into() }),
                };
                let mut rec = vec![c.covariate.clone(), label.to_string(), nt.to_string(), nc.to_string()];
                rec.extend(cells);
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io("balance.csv", e))?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_pretty() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Love plot: |SMD| per covariate before (hollow) and after (filled) matching.
    pub fn love_plot_svg(&self) -> String {
        const LEFT: f64 = 180.0;
        const PLOT_W: f64 = 400.0;
        const TOP: f64 = 40.0;
        const ROW_H: f64 = 24.0;
        let k = self.covariates.len();
        let width = LEFT + PLOT_W + 40.0;
        let height = TOP + ROW_H * k.max(1) as f64 + 50.0;
        let largest = self
            .covariates
            .iter()
            .flat_map(|c| std::iter::once(c.before.smd.abs()).chain(c.after.as_ref().map(|a| a.smd.abs())))
            .filter(|v| v.is_finite())
            .fold(0.3f64, f64::max);
        // Axis end rounded up to a multiple of 0.05.
        let x_max = (largest * 1.05 / 0.05).ceil() * 0.05;
        let sx = |v: f64| LEFT + PLOT_W * v / x_max;
        let bottom = TOP + ROW_H * k.max(1) as f64;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle">Absolute standardized mean difference</text>"#,
            LEFT + PLOT_W / 2.0
        );
        let _ = writeln!(
            s,
            r#"<line class="axis" x1="{LEFT:.1}" y1="{bottom:.1}" x2="{:.1}" y2="{bottom:.1}" stroke="black"/>"#,
            LEFT + PLOT_W
        );
        let ticks = (x_max / 0.05).round() as usize;
        let step = if ticks > 10 { ticks.div_ceil(10) } else { 1 };
        for t in (0..=ticks).step_by(step) {
            let v = t as f64 * 0.05;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
                sx(v),
                bottom + 16.0
            );
        }
        for (cls, v) in ["ref-line ref-0-10", "ref-line ref-0-25"].iter().zip(LOVE_REFERENCE_LINES) {
            let _ = writeln!(
                s,
                r#"<line class="{cls}" x1="{x:.1}" y1="{TOP:.1}" x2="{x:.1}" y2="{bottom:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
                x = sx(v)
            );
        }
        for (i, c) in self.covariates.iter().enumerate() {
            let y = TOP + ROW_H * (i as f64 + 0.5);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                y + 4.0,
                escape(&c.covariate)
            );
            let _ = writeln!(
                s,
                r#"<circle class="before" cx="{:.2}" cy="{y:.1}" r="4" fill="none" stroke="black"/>"#,
                sx(c.before.smd.abs())
            );
            if let Some(a) = &c.after {
                let _ = writeln!(
                    s,
                    r#"<circle class="after" cx="{:.2}" cy="{y:.1}" r="4" fill="black"/>"#,
                    sx(a.smd.abs())
                );
            }
        }
        let ly = bottom + 36.0;
        let _ = writeln!(
            s,
            r#"<text x="{LEFT:.1}" y="{ly:.1}">hollow: before matching   filled: after matching</text>"#
        );
        s.push_str("</svg>\n");
        s
    }

    pub fn write_love_plot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.love_plot_svg()).map_err(|e| Error::io(path, e))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UnitRecord;

    fn dataset() -> Dataset {
        let rows = [
            ("t1", true, [1.0, 0.0, 5.0]),
            ("t2", true, [2.0, 1.0, 7.0]),
            ("c1", false, [0.0, 1.0, 6.0]),
            ("c2", false, [1.0, 0.0, 2.0]),
            ("c3", false, [3.0, 1.0, 4.0]),
        ];
        let records = rows
            .iter()
            .map(|(id, e, x)| UnitRecord {
                id: id.to_string(),
                exposed: *e,
                raw: x.to_vec(),
                exact_keys: vec![],
                outcome: None,
            })
            .collect();
        Dataset::from_records(records, vec!["a".into(), "b".into(), "c<&>".into()], vec![]).unwrap()
    }

    #[test]
    fn smd_examples() {
        assert_eq!(smd(&[1.0, 3.0], &[2.0, 2.0], 1.0), 0.0);
        assert!((smd(&[3.0, 5.0], &[1.0, 3.0], 2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_and_outputs() {
        let ds = dataset();
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let r = balance_report(&ds, &ids(&["t1", "t2"]), &ids(&["c2", "c3"]), None, None).unwrap();
        assert_eq!(r.n_pairs, 2);
        assert_eq!(r.retention.exposed_fraction, 1.0);
        let a = r.covariates[0].after.as_ref().unwrap();
        assert!((a.mean_control - 2.0).abs() < 1e-15);
        let svg = r.love_plot_svg();
        assert_eq!(svg.matches("<circle").count(), 6);
        assert_eq!(svg.matches("class=\"ref-line").count(), 2);
        assert!(svg.contains("c&lt;&amp;&gt;"));
        assert_eq!(svg, r.love_plot_svg());
        let mut csv = Vec::new();
        r.write_csv_to(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 6);
    }

    #[test]
    fn empty_selection_marks_after_missing() {
        let ds = dataset();
        let r = balance_report(&ds, &[], &[], None, None).unwrap();
        assert_eq!(r.n_pairs, 0);
        assert!(r.covariates.iter().all(|c| c.after.is_none()));
        let mut csv = Vec::new();
        r.write_csv_to(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.lines().nth(2).unwrap().starts_with("a,after,0,0,NA"));
        assert_eq!(r.love_plot_svg().matches("<circle").count(), 3);
    }

    #[test]
    fn breach_is_flagged() {
        let ds = dataset();
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let spec = BalanceSpec::uniform(3, 0.1);
        let r = balance_report(&ds, &ids(&["t2"]), &ids(&["c1"]), Some(&spec), None).unwrap();
        assert!(!r.breaches.is_empty());
        assert!(balance_report(&ds, &ids(&["zz"]), &[], None, None).is_err());
    }
}
