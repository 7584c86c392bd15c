//! Information, forecast and mixed rewards, each rescaled to roughly `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::ParameterBelief;

/// Jitter added to the diagonal of a covariance that fails to factorize.
pub const KL_JITTER: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlValue {
    pub value: f64,
    /// True when a covariance needed jitter before its log-determinant.
    pub regularized: bool,
}

fn chol_with_jitter(m: &DMatrix<f64>) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return Some((c, false));
    }
    let n = m.nrows();
    let mut jitter = KL_JITTER;
    for _ in 0..8 {
        if let Some(c) = (&sym + DMatrix::identity(n, n) * jitter).cholesky() {
            return Some((c, true));
        }
        jitter *= 10.0;
    }
    None
}

fn log_det(c: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    c.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// `KL(N(mu_k, sigma_k) || N(mu_0, sigma_0))`
/// `= 1/2 (ln det S0/det Sk + tr(S0^-1 Sk) + (mu_k-mu_0)^T S0^-1 (mu_k-mu_0) - n)`.
pub fn kl_gaussian(mu0: &DVector<f64>, sigma0: &DMatrix<f64>, muk: &DVector<f64>, sigmak: &DMatrix<f64>) -> Result<KlValue> {
    let n = mu0.len();
    if muk.len() != n || sigma0.shape() != (n, n) || sigmak.shape() != (n, n) {
        return Err(Error::Dimension("KL operands have mismatched shapes".into()));
    }
    let c0 = sigma0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("prior covariance is not positive definite".into()))?;
    let (ck, regularized) =
        chol_with_jitter(sigmak).ok_or_else(|| Error::NonFinite("posterior covariance".into()))?;
    let d = muk - mu0;
    let quad = d.dot(&c0.solve(&d));
    let trace = c0.solve(sigmak).trace();
    let value = 0.5 * (log_det(&c0) - log_det(&ck) + trace + quad - n as f64);
    if !value.is_finite() {
        return Err(Error::NonFinite("KL divergence".into()));
    }
    Ok(KlValue { value: value.max(0.0), regularized })
}

pub fn kl_between(prior: &ParameterBelief, posterior: &ParameterBelief) -> Result<KlValue> {
    kl_gaussian(&prior.mean, &prior.cov, &posterior.mean, &posterior.cov)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlTrace {
    /// KL of each step's belief against the prior.
    pub cumulative: Vec<f64>,
    pub increments: Vec<f64>,
    pub total: f64,
    pub regularized: bool,
}

/// Per-step information gain along a belief trajectory whose first entry is
/// the prior. The increments telescope to the final KL.
pub fn kl_reward(trajectory: &[ParameterBelief]) -> Result<KlTrace> {
    let Some(prior) = trajectory.first() else {
        return Ok(KlTrace { cumulative: vec![], increments: vec![], total: 0.0, regularized: false });
    };
    let mut cumulative = Vec::with_capacity(trajectory.len() - 1);
    let mut increments = Vec::with_capacity(trajectory.len() - 1);
    let mut regularized = false;
    let mut prev = 0.0;
    for b in &trajectory[1..] {
        let kl = kl_between(prior, b)?;
        regularized |= kl.regularized;
        increments.push(kl.value - prev);
        cumulative.push(kl.value);
        prev = kl.value;
    }
    Ok(KlTrace { total: prev, cumulative, increments, regularized })
}

/// Nash-Sutcliffe efficiency with absolute deviations:
/// `1 - sum|d - m| / sum|d - mean(d)|`.
pub fn nse(data: &[f64], model: &[f64]) -> Result<f64> {
    if data.len() != model.len() {
        return Err(Error::Dimension(format!("{} data points but {} predictions", data.len(), model.len())));
    }
    if data.len() < 2 {
        return Err(Error::DegenerateData("NSE needs at least two data points".into()));
    }
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let den: f64 = data.iter().map(|d| (d - mean).abs()).sum();
    if !(den > 0.0) {
        return Err(Error::DegenerateData("all data points are identical".into()));
    }
    let num: f64 = data.iter().zip(model).map(|(d, m)| (d - m).abs()).sum();
    Ok(1.0 - num / den)
}

/// Maps a raw reward component to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaling {
    /// `(x - lo) / (hi - lo)` clamped to `[0, 1]`.
    Affine { lo: f64, hi: f64 },
    /// 1 when `x >= threshold`, else 0.
    Binary { threshold: f64 },
    Identity,
}

impl Scaling {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Scaling::Affine { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Scaling::Binary { threshold } => {
                if x >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            Scaling::Identity => x,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Scaling::Affine { lo, hi } if !(hi > lo) || !lo.is_finite() || !hi.is_finite() => {
                Err(Error::Config(format!("affine scaling needs lo < hi, got ({lo}, {hi})")))
            }
            Scaling::Binary { threshold } if !threshold.is_finite() => Err(Error::Config("binary threshold".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Kl,
    Nse,
    Mixed,
}

impl std::str::FromStr for RewardKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(RewardKind::Kl),
            "nse" => Ok(RewardKind::Nse),
            "mixed" => Ok(RewardKind::Mixed),
            other => Err(Error::Config(format!("unknown reward `{other}` (expected kl|nse|mixed)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub kind: RewardKind,
    pub w_nse: f64,
    pub w_kl: f64,
    pub kl_scaling: Scaling,
    pub nse_scaling: Scaling,
}

impl RewardConfig {
    pub fn kl(scaling: Scaling) -> Self {
        Self { kind: RewardKind::Kl, w_nse: 0.0, w_kl: 1.0, kl_scaling: scaling, nse_scaling: Scaling::Identity }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| (0.0..=1.0).contains(&w);
        if !ok(self.w_nse) || !ok(self.w_kl) || (self.w_nse + self.w_kl - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "reward weights must lie in [0,1] and sum to 1, got w_nse={} w_kl={}",
                self.w_nse, self.w_kl
            )));
        }
        self.kl_scaling.validate()?;
        self.nse_scaling.validate()
    }

    /// Scaled reward in `[0, 1]` from the raw components; a component not
    /// used by `kind` may be `None`.
    pub fn score(&self, raw_kl: Option<f64>, raw_nse: Option<f64>) -> Result<f64> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Config(format!("{name} reward component missing")));
        Ok(match self.kind {
            RewardKind::Kl => self.kl_scaling.apply(need(raw_kl, "KL")?),
            RewardKind::Nse => self.nse_scaling.apply(need(raw_nse, "NSE")?),
            RewardKind::Mixed => mixed_reward(need(raw_nse, "NSE")?, need(raw_kl, "KL")?, self),
        })
    }
}

/// `w_nse * scale(nse) + w_kl * scale(kl)`.
pub fn mixed_reward(r_nse: f64, r_kl: f64, cfg: &RewardConfig) -> f64 {
    cfg.w_nse * cfg.nse_scaling.apply(r_nse) + cfg.w_kl * cfg.kl_scaling.apply(r_kl)
}
