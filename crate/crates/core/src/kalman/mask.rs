use nalgebra::DVector;
use std::collections::VecDeque;

use super::ParameterBelief;

/// Cauchy convergence rule: parameter `i` becomes masked when the spread of
/// its mean over the last `window` entries of `mu_history` is below
/// `tol * (1 + |mu_i|)` and its variance decreased at the latest step.
/// Already-masked parameters stay masked. `mask[i] == true` means masked.
pub fn update_mask(
    mask: &[bool],
    mu_history: &[DVector<f64>],
    sigma_diag_history: &[DVector<f64>],
    tol_cauchy: f64,
    window: usize,
) -> Vec<bool> {
    let window = window.max(2);
    let mut out = mask.to_vec();
    if mu_history.len() < window || sigma_diag_history.len() < 2 {
        return out;
    }
    let recent = &mu_history[mu_history.len() - window..];
    let latest = &mu_history[mu_history.len() - 1];
    let var_now = &sigma_diag_history[sigma_diag_history.len() - 1];
    let var_prev = &sigma_diag_history[sigma_diag_history.len() - 2];
    for (i, masked) in out.iter_mut().enumerate() {
        if *masked {
            continue;
        }
        let (lo, hi) = recent
            .iter()
            .map(|m| m[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let settled = hi - lo < tol_cauchy * (1.0 + latest[i].abs());
        let shrinking = var_now[i] < var_prev[i];
        if settled && shrinking {
            *masked = true;
        }
    }
    out
}

/// Convergence mask with its rolling history.
#[derive(Clone, Debug)]
pub struct ConvergenceMask {
    masked: Vec<bool>,
    means: VecDeque<DVector<f64>>,
    variances: VecDeque<DVector<f64>>,
    pub tol_cauchy: f64,
    pub window: usize,
}

impl ConvergenceMask {
    pub fn new(dim: usize, tol_cauchy: f64, window: usize) -> Self {
        Self {
            masked: vec![false; dim],
            means: VecDeque::new(),
            variances: VecDeque::new(),
            tol_cauchy,
            window: window.max(2),
        }
    }

    /// Appends a belief to the history and refreshes the mask.
    pub fn record(&mut self, belief: &ParameterBelief) {
        self.means.push_back(belief.mean.clone());
        self.variances.push_back(belief.cov.diagonal());
        while self.means.len() > self.window {
            self.means.pop_front();
        }
        while self.variances.len() > 2 {
            self.variances.pop_front();
        }
        let means: Vec<_> = self.means.iter().cloned().collect();
        let vars: Vec<_> = self.variances.iter().cloned().collect();
        self.masked = update_mask(&self.masked, &means, &vars, self.tol_cauchy, self.window);
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    /// `true` where the parameter is still being updated.
    pub fn active(&self) -> Vec<bool> {
        self.masked.iter().map(|m| !m).collect()
    }

    pub fn masked(&self) -> &[bool] {
        &self.masked
    }

    /// Diagonal entries of the mask matrix `M` (1 = active, 0 = converged).
    pub fn entries(&self) -> Vec<f64> {
        self.masked.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect()
    }
}
