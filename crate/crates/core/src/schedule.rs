//! Diffusion noise schedule and its cumulative coefficients.
//!
//! Besides the usual DDPM quantities (`beta`, `alpha`, `alpha_bar`) the
//! location-scale forward process needs two extra cumulative sums:
//!
//! ```text
//! alpha_tilde[t] = sum_{k=0}^{t-1} prod_{i=t-k}^{t} alpha_i
//! alpha_hat[t]   = sum_{k=0}^{t-1} (prod_{i=t-k}^{t} alpha_i) * alpha_{t-k}
//! ```
//!
//! Both are built with first-order recurrences, and the derived
//! `beta_bar = 1 - alpha_bar` and `beta_tilde = alpha_tilde - alpha_hat`
//! weight the endpoint variance and the data variance in the forward
//! marginal.
//!
//! All arrays are stored with a leading boundary slot at index 0
//! (`alpha_bar[0] = 1`, `beta_bar[0] = beta_tilde[0] = 0`), so the public
//! accessors take the 1-based step directly and `t - 1` is always valid.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    alpha_tilde: Vec<f64>,
    alpha_hat: Vec<f64>,
    beta_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

/// Coefficients needed by one forward or reverse step at `t`, plus the
/// cumulative values at `t - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub t: usize,
    pub beta: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub beta_tilde: f64,
    pub alpha_bar_prev: f64,
    pub beta_bar_prev: f64,
    pub beta_tilde_prev: f64,
}

impl NoiseSchedule {
    /// Linear schedule from `beta_start` at `t = 1` to `beta_end` at `t = steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule steps must be at least 1".into()));
        }
        if !(beta_start > 0.0) {
            return Err(Error::Config(format!(
                "beta_start must be > 0, got {beta_start}"
            )));
        }
        if !(beta_end < 1.0) {
            return Err(Error::Config(format!("beta_end must be < 1, got {beta_end}")));
        }
        if beta_start > beta_end {
            return Err(Error::Config(format!(
                "beta_start ({beta_start}) must not exceed beta_end ({beta_end})"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (beta_end - beta_start) / (steps - 1) as f64;
            (0..steps).map(|i| beta_start + span * i as f64).collect()
        };
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit per-step betas (index 0 is `t = 1`).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one beta".into()));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(**b > 0.0 && **b < 1.0))
        {
            return Err(Error::Config(format!(
                "beta at step {} must lie in (0, 1), got {b}",
                i + 1
            )));
        }

        let steps = betas.len();
        let mut beta = Vec::with_capacity(steps + 1);
        let mut alpha = Vec::with_capacity(steps + 1);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        let mut alpha_tilde = Vec::with_capacity(steps + 1);
        let mut alpha_hat = Vec::with_capacity(steps + 1);
        beta.push(0.0);
        alpha.push(1.0);
        alpha_bar.push(1.0);
        alpha_tilde.push(0.0);
        alpha_hat.push(0.0);

        for &b in &betas {
            let a = 1.0 - b;
            let prev = alpha_bar.len() - 1;
            beta.push(b);
            alpha.push(a);
            alpha_bar.push(alpha_bar[prev] * a);
            alpha_tilde.push(a * (1.0 + alpha_tilde[prev]));
            alpha_hat.push(a * a + a * alpha_hat[prev]);
        }

        let beta_bar: Vec<f64> = alpha_bar.iter().map(|ab| 1.0 - ab).collect();
        let beta_tilde: Vec<f64> = alpha_tilde
            .iter()
            .zip(&alpha_hat)
            .map(|(at, ah)| at - ah)
            .collect();

        let schedule = Self {
            steps,
            beta,
            alpha,
            alpha_bar,
            alpha_tilde,
            alpha_hat,
            beta_bar,
            beta_tilde,
        };
        schedule.check_invariants()?;
        Ok(schedule)
    }

    fn check_invariants(&self) -> Result<()> {
        for t in 1..=self.steps {
            let bt = self.beta_tilde[t];
            let gap = self.beta_bar[t] - bt;
            if !(bt > 0.0) || !(gap > 0.0) {
                return Err(Error::Config(format!(
                    "schedule coefficients not positive at step {t}: \
                     beta_tilde={bt:e}, beta_bar-beta_tilde={gap:e}"
                )));
            }
            if !(self.alpha_bar[t] < self.alpha_bar[t - 1]) {
                return Err(Error::Config(format!(
                    "alpha_bar not strictly decreasing at step {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            Err(Error::StepIndex {
                t,
                steps: self.steps,
            })
        } else {
            Ok(())
        }
    }

    pub fn coefficients_at(&self, t: usize) -> Result<StepCoefficients> {
        self.check(t)?;
        Ok(StepCoefficients {
            t,
            beta: self.beta[t],
            alpha: self.alpha[t],
            alpha_bar: self.alpha_bar[t],
            beta_bar: self.beta_bar[t],
            beta_tilde: self.beta_tilde[t],
            alpha_bar_prev: self.alpha_bar[t - 1],
            beta_bar_prev: self.beta_bar[t - 1],
            beta_tilde_prev: self.beta_tilde[t - 1],
        })
    }

    // Slice views without the boundary slot: index `t - 1` holds step `t`.

    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha[1..]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar[1..]
    }

    pub fn alpha_tildes(&self) -> &[f64] {
        &self.alpha_tilde[1..]
    }

    pub fn alpha_hats(&self) -> &[f64] {
        &self.alpha_hat[1..]
    }

    pub fn beta_bars(&self) -> &[f64] {
        &self.beta_bar[1..]
    }

    pub fn beta_tildes(&self) -> &[f64] {
        &self.beta_tilde[1..]
    }
}
