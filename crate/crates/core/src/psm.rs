//! Propensity-score baseline: logistic regression by iteratively reweighted
//! least squares, then greedy nearest-neighbor matching on the logit score.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const RIDGE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOL: f64 = 1e-8;
/// Coefficient magnitude treated as divergence.
pub const SEPARATION_LIMIT: f64 = 30.0;
pub const DEFAULT_CALIPER: f64 = 0.2;
const SCORE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityModel {
    /// Intercept followed by one slope per standardized balance covariate.
    pub coefficients: Vec<f64>,
    pub covariates: Vec<String>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub separation: bool,
    /// Log-likelihood after every accepted step, starting from the initial point.
    pub log_likelihood: Vec<f64>,
    /// Linear predictor per unit, in dataset order.
    pub logits: Vec<f64>,
    /// Fitted score per unit, inside (0, 1).
    pub scores: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood of labels `y` under linear predictors `eta`.
pub fn log_likelihood(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

/// Logistic regression of exposure on a design matrix whose first column is the intercept.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64]) -> (DVector<f64>, FitInfo) {
    let (n, p) = x.shape();
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(p);
    let frac = y.iter().sum::<f64>() / n as f64;
    if frac > 0.0 && frac < 1.0 {
        beta[0] = (frac / (1.0 - frac)).ln();
    }
    let mut eta = x * &beta;
    let mut ll = log_likelihood(eta.as_slice(), y);
    let mut info = FitInfo {
        iterations: 0,
        gradient_norm: f64::INFINITY,
        converged: false,
        separation: false,
        log_likelihood: vec![ll],
    };
    for it in 0..=MAX_ITERATIONS {
        let prob = eta.map(sigmoid);
        let grad = x.transpose() * (&yv - &prob);
        info.gradient_norm = grad.norm();
        if info.gradient_norm <= GRADIENT_TOL {
            info.converged = true;
            break;
        }
        if it == MAX_ITERATIONS {
            break;
        }
        info.iterations = it + 1;
        let w = prob.map(|q| q * (1.0 - q));
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut h = x.transpose() * xw;
        for d in 0..p {
            h[(d, d)] += RIDGE;
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&grad)) else {
            break;
        };
        // Halve the Newton step until the likelihood does not decrease.
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let cand = &beta + &step * t;
            let cand_eta = x * &cand;
            let cand_ll = log_likelihood(cand_eta.as_slice(), y);
            if cand_ll >= ll {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        info.log_likelihood.push(ll);
        if beta.iter().any(|b| b.abs() > SEPARATION_LIMIT) {
            info.separation = true;
            let prob = eta.map(sigmoid);
            info.gradient_norm = (x.transpose() * (&yv - &prob)).norm();
            break;
        }
    }
    (beta, info)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitInfo {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub separation: bool,
    pub log_likelihood: Vec<f64>,
}

/// Fits exposure on the dataset's standardized balance covariates.
pub fn fit_logistic_propensity(dataset: &Dataset) -> Result<PropensityModel> {
    let k = dataset.n_balance();
    if k == 0 {
        return Err(Error::InsufficientData(
            "propensity model needs at least one balance covariate".into(),
        ));
    }
    if dataset.n_treated() == 0 || dataset.n_control() == 0 {
        return Err(Error::InsufficientData(
            "propensity model needs both exposed and unexposed units".into(),
        ));
    }
    let n = dataset.units.len();
    let x = DMatrix::from_fn(n, k + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            dataset.units[i].covariates[j - 1]
        }
    });
    let y: Vec<f64> = dataset.units.iter().map(|u| u.exposed as u8 as f64).collect();
    let (beta, info) = fit_logistic(&x, &y);
    if info.separation {
        log::warn!("propensity fit diverged (separation); matching proceeds on the diverged scores");
    } else if !info.converged {
        log::warn!(
            "propensity fit stopped after {} iterations with gradient norm {:.3e}",
            info.iterations,
            info.gradient_norm
        );
    }
    let logits: Vec<f64> = (&x * &beta).iter().copied().collect();
    let scores = logits
        .iter()
        .map(|&e| sigmoid(e).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP))
        .collect();
    Ok(PropensityModel {
        coefficients: beta.iter().copied().collect(),
        covariates: dataset.schema.balance.clone(),
        iterations: info.iterations,
        gradient_norm: info.gradient_norm,
        converged: info.converged,
        separation: info.separation,
        log_likelihood: info.log_likelihood,
        logits,
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyOptions {
    /// Caliper in SD-of-logit units; `None` matches without a caliper.
    pub caliper: Option<f64>,
    pub respect_strata: bool,
}

impl Default for GreedyOptions {
    fn default() -> Self {
        GreedyOptions {
            caliper: Some(DEFAULT_CALIPER),
            respect_strata: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedyPair {
    pub treated: usize,
    pub control: usize,
    pub logit_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedyMatch {
    pub pairs: Vec<GreedyPair>,
    /// Exposed units left unmatched, in processing order.
    pub excluded: Vec<usize>,
    /// Caliper in logit units, when one is used.
    pub caliper_width: Option<f64>,
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Greedy one-to-one matching without replacement, hardest-to-match exposed units first.
pub fn greedy_nn_match(dataset: &Dataset, model: &PropensityModel, opts: &GreedyOptions) -> GreedyMatch {
    let caliper_width = opts.caliper.map(|c| c * sample_sd(&model.logits));
    let mut treated: Vec<usize> = (0..dataset.units.len()).filter(|&i| dataset.units[i].exposed).collect();
    treated.sort_by(|&a, &b| {
        model.scores[b]
            .total_cmp(&model.scores[a])
            .then_with(|| dataset.units[a].id.cmp(&dataset.units[b].id))
    });
    let controls: Vec<usize> = (0..dataset.units.len()).filter(|&i| !dataset.units[i].exposed).collect();
    let mut used = vec![false; dataset.units.len()];
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for t in treated {
        let mut best: Option<(f64, usize)> = None;
        for &c in &controls {
            if used[c] || (opts.respect_strata && dataset.stratum_of[c] != dataset.stratum_of[t]) {
                continue;
            }
            let d = (model.logits[t] - model.logits[c]).abs();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        match best {
            Some((d, c)) if caliper_width.is_none_or(|w| d <= w) => {
                used[c] = true;
                pairs.push(GreedyPair {
                    treated: t,
                    control: c,
                    logit_distance: d,
                });
            }
            _ => excluded.push(t),
        }
    }
    GreedyMatch {
        pairs,
        excluded,
        caliper_width,
    }
}

impl GreedyMatch {
    pub fn treated_ids(&self, dataset: &Dataset) -> Vec<String> {
        self.pairs.iter().map(|p| dataset.units[p.treated].id.clone()).collect()
    }

    pub fn control_ids(&self, dataset: &Dataset) -> Vec<String> {
        self.pairs.iter().map(|p| dataset.units[p.control].id.clone()).collect()
    }

    pub fn write_pairs_csv_to<W: std::io::Write>(&self, dataset: &Dataset, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["pair_id", "treated_id", "control_id", "stratum", "distance"])?;
        for (k, p) in self.pairs.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                dataset.units[p.treated].id.clone(),
                dataset.units[p.control].id.clone(),
                dataset.strata[dataset.stratum_of[p.treated]].label(),
                format!("{:.9}", p.logit_distance),
            ])?;
        }
        w.flush().map_err(|e| Error::io("psm_pairs.csv", e))?;
        Ok(())
    }

    pub fn write_pairs_csv(&self, dataset: &Dataset, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_pairs_csv_to(dataset, file)
    }
}
