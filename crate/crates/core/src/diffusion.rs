//! Closed-form mathematics of the non-stationary diffusion: forward step,
//! forward marginal, reverse posterior, training loss, target-variance
//! solver and the two simplified variants.
//!
//! Everything is elementwise. Array arguments may have any 2-D shape as long
//! as they agree; a `horizon x features` window and a stacked
//! `(batch*features) x horizon` block are treated alike.

use std::fmt;
use std::str::FromStr;

use log::debug;
use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::VARIANCE_FLOOR;
use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, StepCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariantMode {
    #[default]
    FullNsdiff,
    /// Forward variance assumes a perfect variance estimator: `sigma_Y0 = g`.
    NoUans,
    /// Unit endpoint variance and unit forward variance scale.
    NoLsnm,
}

impl VariantMode {
    pub const ALL: [VariantMode; 3] = [VariantMode::FullNsdiff, VariantMode::NoUans, VariantMode::NoLsnm];

    /// Whether the denoiser predicts a variance; otherwise the posterior variance is analytic.
    pub fn learns_variance(self) -> bool {
        self == VariantMode::FullNsdiff
    }

    /// Endpoint variance actually used for a predicted `g`.
    pub fn effective_g(self, g: f64) -> f64 {
        match self {
            VariantMode::NoLsnm => 1.0,
            _ => g,
        }
    }

    /// `(g, sigma_Y0)` after the variant's substitutions.
    pub fn effective(self, g: f64, sigma_y0: f64) -> (f64, f64) {
        match self {
            VariantMode::FullNsdiff => (g, sigma_y0),
            VariantMode::NoUans => (g, g),
            VariantMode::NoLsnm => (1.0, 1.0),
        }
    }
}

impl fmt::Display for VariantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantMode::FullNsdiff => "full_nsdiff",
            VariantMode::NoUans => "no_uans",
            VariantMode::NoLsnm => "no_lsnm",
        })
    }
}

impl FromStr for VariantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_nsdiff" | "full" => Ok(VariantMode::FullNsdiff),
            "no_uans" => Ok(VariantMode::NoUans),
            "no_lsnm" => Ok(VariantMode::NoLsnm),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected full_nsdiff, no_uans or no_lsnm)"
            ))),
        }
    }
}

/// Noisy series at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub y_t: Array2<f64>,
    pub t: usize,
}

/// Scalar posterior coefficients for one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub sigma_tilde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub gamma0: Array2<f64>,
    pub gamma1: Array2<f64>,
    pub gamma2: Array2<f64>,
    pub mu_tilde: Array2<f64>,
    /// Zero at `t = 1`, where the posterior collapses onto `Y0`.
    pub sigma_tilde: Array2<f64>,
}

/// Forward transition `q(Y_t | Y_{t-1})`: mean `mean_coef * Y_{t-1} + prior_coef * f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardStep {
    pub mean_coef: f64,
    pub prior_coef: f64,
    pub sigma_t: Array2<f64>,
}

// ---- scalar forms ----

/// `sigma_t = beta_t^2 g + alpha_t beta_t sigma_Y0`.
pub fn step_variance(c: &StepCoefficients, g: f64, sigma_y0: f64) -> f64 {
    c.beta * c.beta * g + c.alpha * c.beta * sigma_y0
}

/// `sigmabar_t = (betabar_t - betatilde_t) g + betatilde_t sigma_Y0`.
pub fn marginal_variance(c: &StepCoefficients, g: f64, sigma_y0: f64) -> f64 {
    (c.beta_bar - c.beta_tilde) * g + c.beta_tilde * sigma_y0
}

/// `sigmabar_{t-1}`; zero at `t = 1`.
pub fn marginal_variance_prev(c: &StepCoefficients, g: f64, sigma_y0: f64) -> f64 {
    (c.beta_bar_prev - c.beta_tilde_prev) * g + c.beta_tilde_prev * sigma_y0
}

/// Posterior weights and variance of `q(Y_{t-1} | Y_t, Y0)` for one cell.
pub fn posterior_coefficients(c: &StepCoefficients, g: f64, sigma_y0: f64) -> PosteriorCoefficients {
    if c.t == 1 {
        return PosteriorCoefficients {
            gamma0: 1.0,
            gamma1: 0.0,
            gamma2: 0.0,
            sigma_tilde: 0.0,
        };
    }
    let sigma_t = step_variance(c, g, sigma_y0);
    let sigma_prev = marginal_variance_prev(c, g, sigma_y0);
    let delta = c.alpha * sigma_prev + sigma_t;
    let gamma0 = c.alpha_bar_prev.sqrt() * sigma_t / delta;
    let gamma1 = c.alpha.sqrt() * sigma_prev / delta;
    PosteriorCoefficients {
        gamma0,
        gamma1,
        gamma2: 1.0 - gamma0 - gamma1,
        sigma_tilde: sigma_t * sigma_prev / delta,
    }
}

/// Quadratic `lambda0 s^2 + lambda1 s + lambda2 = 0` whose positive root is `sigma_Y0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverQuadratic {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl SolverQuadratic {
    /// Requires `t >= 2`.
    pub fn new(c: &StepCoefficients, g: f64, sigma_theta: f64) -> Self {
        let (a, b) = (c.alpha, c.beta);
        let tilde = c.beta_tilde_prev;
        let gap = c.beta_bar_prev - c.beta_tilde_prev;
        Self {
            lambda0: a * b * tilde,
            lambda1: (b * b * tilde + a * b * gap) * g - sigma_theta * a * (tilde + b),
            lambda2: g * g * b * b * gap - sigma_theta * g * (a * gap + b * b),
        }
    }

    pub fn discriminant(&self) -> f64 {
        self.lambda1 * self.lambda1 - 4.0 * self.lambda0 * self.lambda2
    }
}

/// `g < sigma_theta (alpha_t / beta_t^2 + 1 / (betabar_{t-1} - betatilde_{t-1}))`,
/// equivalent to a strictly negative constant term and hence exactly one positive root.
pub fn solvable(c: &StepCoefficients, g: f64, sigma_theta: f64) -> bool {
    let gap = c.beta_bar_prev - c.beta_tilde_prev;
    g < sigma_theta * (c.alpha / (c.beta * c.beta) + 1.0 / gap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverOutcome {
    Root(f64),
    /// The solvability condition failed; the perfect-estimator value `g` is used.
    Fallback(f64),
}

impl SolverOutcome {
    pub fn value(self) -> f64 {
        match self {
            SolverOutcome::Root(v) | SolverOutcome::Fallback(v) => v,
        }
    }
}

/// Recovers `sigma_Y0` for one cell from the predicted posterior variance.
pub fn solve_sigma_y0_scalar(c: &StepCoefficients, g: f64, sigma_theta: f64) -> Result<SolverOutcome> {
    if c.t < 2 {
        return Err(Error::InvalidInput(format!(
            "the target-variance solver needs t >= 2, got t = {}",
            c.t
        )));
    }
    if !(g > 0.0) || !(sigma_theta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "solver inputs must be positive (g = {g}, sigma_theta = {sigma_theta})"
        )));
    }
    let q = SolverQuadratic::new(c, g, sigma_theta);
    if q.lambda2 >= 0.0 {
        debug!(
            "solvability violated at t = {} (g = {g}, sigma_theta = {sigma_theta}); using g",
            c.t
        );
        return Ok(SolverOutcome::Fallback(g.max(VARIANCE_FLOOR)));
    }
    let d = q.discriminant();
    if !(d >= 0.0) {
        return Err(Error::Solver {
            t: c.t,
            lambda0: q.lambda0,
            lambda1: q.lambda1,
            lambda2: q.lambda2,
        });
    }
    // cancellation-free form of (-lambda1 + sqrt(d)) / (2 lambda0)
    let root = if q.lambda1 >= 0.0 {
        -2.0 * q.lambda2 / (q.lambda1 + d.sqrt())
    } else {
        (-q.lambda1 + d.sqrt()) / (2.0 * q.lambda0)
    };
    Ok(SolverOutcome::Root(root.max(VARIANCE_FLOOR)))
}

/// Forward-step variance under `mode`.
pub fn variant_forward_variance(mode: VariantMode, s: &NoiseSchedule, t: usize, g: f64, sigma_y0: f64) -> Result<f64> {
    check_positive_scalar(g, "g")?;
    check_positive_scalar(sigma_y0, "sigma_y0")?;
    let c = s.coefficients_at(t)?;
    let (g, s0) = mode.effective(g, sigma_y0);
    Ok(step_variance(&c, g, s0))
}

// ---- array forms ----

fn check_positive_scalar(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} must be positive and finite, got {v}")))
    }
}

fn check_positive(a: &ArrayView2<'_, f64>, what: &str) -> Result<()> {
    match a.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        Some(v) => Err(Error::InvalidInput(format!("{what} must be positive and finite, found {v}"))),
        None => Ok(()),
    }
}

fn check_same(context: &'static str, a: &ArrayView2<'_, f64>, b: &ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            context,
            expected: vec![a.nrows(), a.ncols()],
            actual: vec![b.nrows(), b.ncols()],
        });
    }
    Ok(())
}

/// Checked `(g_eff, sigma_Y0_eff)` inputs shared by the array operations.
struct Inputs {
    g: Array2<f64>,
    s0: Array2<f64>,
}

fn inputs(
    mode: VariantMode,
    f: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    sigma_y0: ArrayView2<'_, f64>,
) -> Result<Inputs> {
    check_same("endpoint variance", &f, &g)?;
    check_same("target variance", &f, &sigma_y0)?;
    check_positive(&g, "endpoint variance")?;
    if mode == VariantMode::FullNsdiff {
        check_positive(&sigma_y0, "target variance")?;
    }
    let mut ge = Array2::zeros(g.raw_dim());
    let mut se = Array2::zeros(g.raw_dim());
    Zip::from(&mut ge)
        .and(&mut se)
        .and(&g)
        .and(&sigma_y0)
        .for_each(|ge, se, &g, &s| (*ge, *se) = mode.effective(g, s));
    Ok(Inputs { g: ge, s0: se })
}

/// Forward transition parameters at step `t`.
pub fn forward_step_params(
    mode: VariantMode,
    s: &NoiseSchedule,
    t: usize,
    f: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    sigma_y0: ArrayView2<'_, f64>,
) -> Result<ForwardStep> {
    let c = s.coefficients_at(t)?;
    let inp = inputs(mode, f, g, sigma_y0)?;
    let mut sigma_t = Array2::zeros(inp.g.raw_dim());
    Zip::from(&mut sigma_t)
        .and(&inp.g)
        .and(&inp.s0)
        .for_each(|o, &g, &s0| *o = step_variance(&c, g, s0));
    Ok(ForwardStep {
        mean_coef: c.alpha.sqrt(),
        prior_coef: 1.0 - c.alpha.sqrt(),
        sigma_t,
    })
}

/// Marginal variance `sigmabar_t` for every cell.
pub fn marginal_variance_array(
    mode: VariantMode,
    s: &NoiseSchedule,
    t: usize,
    g: ArrayView2<'_, f64>,
    sigma_y0: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let c = s.coefficients_at(t)?;
    let inp = inputs(mode, g, g, sigma_y0)?;
    let mut out = Array2::zeros(inp.g.raw_dim());
    Zip::from(&mut out)
        .and(&inp.g)
        .and(&inp.s0)
        .for_each(|o, &g, &s0| *o = marginal_variance(&c, g, s0));
    Ok(out)
}

/// Draws `Y_t = sqrt(abar_t) Y0 + (1 - sqrt(abar_t)) f + sqrt(sigmabar_t) eta` for caller-supplied `eta`.
#[allow(clippy::too_many_arguments)]
pub fn forward_marginal(
    mode: VariantMode,
    s: &NoiseSchedule,
    t: usize,
    y0: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    sigma_y0: ArrayView2<'_, f64>,
    eta: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let c = s.coefficients_at(t)?;
    check_same("forward marginal target", &f, &y0)?;
    check_same("forward marginal noise", &f, &eta)?;
    let inp = inputs(mode, f, g, sigma_y0)?;
    let root_ab = c.alpha_bar.sqrt();
    let mut out = Array2::zeros(y0.raw_dim());
    let mut bad = None;
    Zip::from(&mut out)
        .and(&y0)
        .and(&f)
        .and(&inp.g)
        .and(&inp.s0)
        .and(&eta)
        .for_each(|o, &y0, &f, &g, &s0, &e| {
            let var = marginal_variance(&c, g, s0);
            if !(var > 0.0) {
                bad = Some(var);
            }
            *o = root_ab * y0 + (1.0 - root_ab) * f + var.sqrt() * e;
        });
    if let Some(v) = bad {
        return Err(Error::Internal(format!("non-positive marginal variance {v} at t = {t}")));
    }
    Ok(out)
}

/// Estimate of `Y0` from `Y_t` and a predicted noise, inverting the forward marginal.
#[allow(clippy::too_many_arguments)]
pub fn invert_marginal(
    mode: VariantMode,
    s: &NoiseSchedule,
    t: usize,
    y_t: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    sigma_y0: ArrayView2<'_, f64>,
    eta: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    let c = s.coefficients_at(t)?;
    check_same("inverse marginal state", &f, &y_t)?;
    check_same("inverse marginal noise", &f, &eta)?;
    let inp = inputs(mode, f, g, sigma_y0)?;
    let root_ab = c.alpha_bar.sqrt();
    let mut out = Array2::zeros(y_t.raw_dim());
    Zip::from(&mut out)
        .and(&y_t)
        .and(&f)
        .and(&inp.g)
        .and(&inp.s0)
        .and(&eta)
        .for_each(|o, &y, &f, &g, &s0, &e| {
            let var = marginal_variance(&c, g, s0);
            *o = (y - (1.0 - root_ab) * f - var.sqrt() * e) / root_ab;
        });
    Ok(out)
}

/// Reverse posterior `q(Y_{t-1} | Y_t, Y0)`.
#[allow(clippy::too_many_arguments)]
pub fn posterior_params(
    mode: VariantMode,
    s: &NoiseSchedule,
    t: usize,
    y_t: ArrayView2<'_, f64>,
    y0: ArrayView2<'_, f64>,
    f: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    sigma_y0: ArrayView2<'_, f64>,
) -> Result<PosteriorParams> {
    let c = s.coefficients_at(t)?;
    check_same("posterior state", &f, &y_t)?;
    check_same("posterior target", &f, &y0)?;
    let inp = inputs(mode, f, g, sigma_y0)?;
    let dim = y0.raw_dim();
    let mut out = PosteriorParams {
        gamma0: Array2::zeros(dim),
        gamma1: Array2::zeros(dim),
        gamma2: Array2::zeros(dim),
        mu_tilde: Array2::zeros(dim),
        sigma_tilde: Array2::zeros(dim),
    };
    for (idx, &g) in inp.g.indexed_iter() {
        let p = posterior_coefficients(&c, g, inp.s0[idx]);
        out.gamma0[idx] = p.gamma0;
        out.gamma1[idx] = p.gamma1;
        out.gamma2[idx] = p.gamma2;
        out.sigma_tilde[idx] = p.sigma_tilde;
        out.mu_tilde[idx] = if t == 1 {
            y0[idx]
        } else {
            p.gamma0 * y0[idx] + p.gamma1 * y_t[idx] + p.gamma2 * f[idx]
        };
    }
    Ok(out)
}

/// Output of [`solve_sigma_y0`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolvedVariance {
    pub sigma_y0: Array2<f64>,
    /// Cells where the solvability condition failed and `g` was substituted.
    pub fallbacks: usize,
}

/// Elementwise [`solve_sigma_y0_scalar`].
pub fn solve_sigma_y0(
    s: &NoiseSchedule,
    t: usize,
    g: ArrayView2<'_, f64>,
    sigma_theta: ArrayView2<'_, f64>,
) -> Result<SolvedVariance> {
    check_same("solver input", &g, &sigma_theta)?;
    let c = s.coefficients_at(t)?;
    let mut out = Array2::zeros(g.raw_dim());
    let mut fallbacks = 0;
    for ((o, &g), &st) in out.iter_mut().zip(g.iter()).zip(sigma_theta.iter()) {
        match solve_sigma_y0_scalar(&c, g, st)? {
            SolverOutcome::Root(v) => *o = v,
            SolverOutcome::Fallback(v) => {
                fallbacks += 1;
                *o = v;
            }
        }
    }
    Ok(SolvedVariance {
        sigma_y0: out,
        fallbacks,
    })
}

/// Value and split of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub noise: f64,
    pub variance: f64,
}

/// Loss with its gradients with respect to the predicted noise and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub value: LossValue,
    pub d_eta_theta: Array2<f64>,
    pub d_sigma_theta: Array2<f64>,
}

/// `sum (eta - eta_theta)^2 + sum (r - ln r)` with `r = sigma_tilde / sigma_theta`,
/// divided by `batch`.
///
/// Cells with `sigma_tilde == 0` (step 1, where the posterior is a point mass)
/// contribute the constant 1 to the variance term and no gradient.
pub fn nsdiff_loss(
    eta: ArrayView2<'_, f64>,
    eta_theta: ArrayView2<'_, f64>,
    sigma_tilde: ArrayView2<'_, f64>,
    sigma_theta: ArrayView2<'_, f64>,
    batch: usize,
) -> Result<LossWithGrad> {
    check_same("loss noise", &eta, &eta_theta)?;
    check_same("loss variance", &eta, &sigma_tilde)?;
    check_same("loss variance", &eta, &sigma_theta)?;
    check_positive(&sigma_theta, "predicted variance")?;
    if let Some(v) = sigma_tilde.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "posterior variance must be non-negative and finite, found {v}"
        )));
    }
    if batch == 0 {
        return Err(Error::InvalidInput("loss batch size must be positive".into()));
    }
    let scale = 1.0 / batch as f64;
    let mut noise = 0.0;
    let mut variance = 0.0;
    let mut d_eta = Array2::zeros(eta.raw_dim());
    let mut d_sigma = Array2::zeros(eta.raw_dim());
    Zip::from(&mut d_eta)
        .and(&mut d_sigma)
        .and(&eta)
        .and(&eta_theta)
        .and(&sigma_tilde)
        .and(&sigma_theta)
        .for_each(|de, ds, &e, &et, &st, &sp| {
            let r = e - et;
            noise += r * r;
            *de = -2.0 * r * scale;
            if st > 0.0 {
                let ratio = st / sp;
                variance += ratio - ratio.ln();
                *ds = (1.0 - ratio) / sp * scale;
            } else {
                variance += 1.0;
            }
        });
    let value = LossValue {
        total: (noise + variance) * scale,
        noise: noise * scale,
        variance: variance * scale,
    };
    Ok(LossWithGrad {
        value,
        d_eta_theta: d_eta,
        d_sigma_theta: d_sigma,
    })
}
