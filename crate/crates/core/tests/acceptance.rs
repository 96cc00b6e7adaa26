//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the summary lines always
//! appear in `cargo test` output. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 1 4`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::{array, Array2, Array3};
use nsdiff::data::{load_csv, split_dataset, synth_ground_truth, synth_linear, SplitScheme, SynthKind};
use nsdiff::diffusion::{
    marginal_variance, nsdiff_loss, posterior_coefficients, solve_sigma_y0_scalar, step_variance, SolverOutcome,
    VariantMode,
};
use nsdiff::learner::{MlpSpec, OutputHead, ParameterStore, Mlp};
use nsdiff::metrics::{crps, EvalAccumulator};
use nsdiff::pipeline::{
    evaluate, fit_nsdiff, load_checkpoint, pretrain_estimators, prepare_data, save_checkpoint, train_nsdiff,
    Denoiser, DenoiserInput, Evaluation, TrainConfig,
};
use nsdiff::schedule::NoiseSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// pinned tolerances and thresholds
const C1_TOL: f64 = 1e-10;
const C1_WORKED_TOL: f64 = 1e-12;
const C1_BUDGET: Duration = Duration::from_secs(10);
const C2_IDENTITY_TOL: f64 = 1e-10;
const C2_TRIALS: usize = 200_000;
const C2_SE_MULTIPLE: f64 = 4.0;
const C2_BUDGET: Duration = Duration::from_secs(60);
const C3_INTEGRATION_TOL: f64 = 1e-6;
const C3_SUM_TOL: f64 = 1e-10;
const C3_DDPM_TOL: f64 = 1e-12;
const C4_REL_TOL: f64 = 1e-8;
const C4_DRAWS: usize = 10_000;
const C5_REL_TOL: f64 = 1e-3;
const C5_MAX_PARAMS: usize = 1000;
const C6_GRID_TOL: f64 = 1e-6;
const C6_WORST_QICE: f64 = 0.18;
const C6_CALIBRATED_QICE: f64 = 0.02;
const C7_QICE_X100: f64 = 2.5;
const C7_BUDGET: Duration = Duration::from_secs(30 * 60);
const C7_SEEDS: [u64; 3] = [1, 2, 3];
const C7_SYNTH_LEN: usize = 7588;
const C8_MIN_PEARSON: f64 = 0.8;
const C8_MIN_SEEDS: usize = 2;
const C9_ROWS: usize = 4000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- criterion 1

/// Direct O(T^2) sums of the product definitions.
fn direct_coefficients(betas: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let (mut bar, mut tilde, mut hat) = (Vec::new(), Vec::new(), Vec::new());
    for t in 1..=alphas.len() {
        bar.push(alphas[..t].iter().product());
        let (mut at, mut ah) = (0.0, 0.0);
        for k in 0..t {
            // prod_{i=t-k}^{t} alpha_i, 1-based
            let prod: f64 = alphas[t - k - 1..t].iter().product();
            at += prod;
            ah += prod * alphas[t - k - 1];
        }
        tilde.push(at);
        hat.push(ah);
    }
    let beta_tilde = tilde.iter().zip(&hat).map(|(a, b)| a - b).collect();
    (bar, tilde, hat, beta_tilde)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let steps = rng.gen_range(1..=100);
        let betas: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.0001..0.5)).collect();
        let s = NoiseSchedule::from_betas(betas.clone()).expect("valid schedule");
        let (bar, tilde, hat, bt) = direct_coefficients(&betas);
        worst = worst
            .max(max_abs_diff(s.alpha_bars(), &bar))
            .max(max_abs_diff(s.alpha_tildes(), &tilde))
            .max(max_abs_diff(s.alpha_hats(), &hat))
            .max(max_abs_diff(s.beta_tildes(), &bt));
    }
    let s = NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3, 0.4, 0.5]).expect("worked schedule");
    let c5 = s.coefficients_at(5).expect("t = 5");
    let worked_err = (c5.alpha_bar - 0.1512).abs().max((c5.beta_tilde - 0.48172).abs());
    let elapsed = start.elapsed();
    outcome(
        worst <= C1_TOL && worked_err <= C1_WORKED_TOL && elapsed < C1_BUDGET,
        format!(
            "max |recurrence - direct| = {worst:.2e} (tol {C1_TOL:e}); worked values off by {worked_err:.1e}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let s = NoiseSchedule::linear(20, 1e-4, 0.02).expect("default schedule");
    let mut identity_err: f64 = 0.0;
    for &(g, s0) in &[(1.0, 1.0), (2.5, 0.3), (0.05, 4.0), (10.0, 10.0)] {
        let mut composed = 0.0;
        for t in 1..=s.steps() {
            let c = s.coefficients_at(t).expect("step");
            // one forward step: variance sigma_t = beta^2 g + alpha beta sigma0
            let sigma_t = c.beta * c.beta * g + c.alpha * c.beta * s0;
            identity_err = identity_err.max((step_variance(&c, g, s0) - sigma_t).abs());
            composed = c.alpha * composed + sigma_t;
            identity_err = identity_err.max((composed - marginal_variance(&c, g, s0)).abs());
        }
    }

    let (y0, f, g, s0) = (3.0, 1.0, 2.0, 0.5);
    let checkpoints = [5usize, 10, 20];
    let mut sums = [(0.0f64, 0.0f64); 3];
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..C2_TRIALS {
        let mut y = y0;
        for t in 1..=20 {
            let c = s.coefficients_at(t).expect("step");
            let sigma_t = c.beta * c.beta * g + c.alpha * c.beta * s0;
            let z: f64 = StandardNormal.sample(&mut rng);
            y = c.alpha.sqrt() * y + (1.0 - c.alpha.sqrt()) * f + sigma_t.sqrt() * z;
            if let Some(k) = checkpoints.iter().position(|&p| p == t) {
                sums[k].0 += y;
                sums[k].1 += y * y;
            }
        }
    }
    let n = C2_TRIALS as f64;
    let mut worst_ratio: f64 = 0.0;
    for (k, &t) in checkpoints.iter().enumerate() {
        let c = s.coefficients_at(t).expect("step");
        let mean = c.alpha_bar.sqrt() * y0 + (1.0 - c.alpha_bar.sqrt()) * f;
        let var = marginal_variance(&c, g, s0);
        let mc_mean = sums[k].0 / n;
        let mc_var = (sums[k].1 - n * mc_mean * mc_mean) / (n - 1.0);
        let se_mean = (var / n).sqrt();
        let se_var = var * (2.0 / (n - 1.0)).sqrt();
        worst_ratio = worst_ratio
            .max((mc_mean - mean).abs() / se_mean)
            .max((mc_var - var).abs() / se_var);
    }
    let elapsed = start.elapsed();
    outcome(
        identity_err <= C2_IDENTITY_TOL && worst_ratio <= C2_SE_MULTIPLE && elapsed < C2_BUDGET,
        format!(
            "variance identity err {identity_err:.1e}; worst MC deviation {worst_ratio:.2} SE (limit {C2_SE_MULTIPLE}); {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

/// Mean and variance of `N(y; m1, v1) * N(y_t; sqrt(a) y + (1 - sqrt(a)) f, v2)`
/// over `y` by trapezoidal integration.
fn integrate_posterior(m1: f64, v1: f64, a: f64, f: f64, y_t: f64, v2: f64) -> (f64, f64) {
    let sd = v1.sqrt().min((v2 / a).sqrt());
    // cover both factors' centres with a wide margin
    let lik_centre = (y_t - (1.0 - a.sqrt()) * f) / a.sqrt();
    let margin = 15.0 * v1.sqrt().max((v2 / a).sqrt());
    let lo = m1.min(lik_centre) - margin;
    let h = sd / 200.0;
    let n = ((m1.max(lik_centre) + margin - lo) / h).ceil() as usize + 1;
    let log_p = |y: f64| {
        let r = y_t - a.sqrt() * y - (1.0 - a.sqrt()) * f;
        -(y - m1).powi(2) / (2.0 * v1) - r * r / (2.0 * v2)
    };
    let peak = (0..n).map(|i| log_p(lo + i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m, mut q) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let y = lo + i as f64 * h;
        let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 } * (log_p(y) - peak).exp();
        z += w;
        m += w * y;
        q += w * y * y;
    }
    let mean = m / z;
    (mean, q / z - mean * mean)
}

fn criterion_3() -> Outcome {
    let mut int_err: f64 = 0.0;
    let mut sum_err: f64 = 0.0;
    let schedules = [
        NoiseSchedule::linear(20, 1e-4, 0.02).expect("default"),
        NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3, 0.4, 0.5]).expect("worked"),
    ];
    let cases = [(2.0, 0.5, 1.3, -0.4), (0.2, 3.0, -2.0, 0.7), (1.0, 1.0, 0.0, 0.0), (5.0, 0.01, 4.0, 2.0)];
    for s in &schedules {
        for t in 2..=s.steps() {
            let c = s.coefficients_at(t).expect("step");
            for &(g, s0, y0, f) in &cases {
                let p = posterior_coefficients(&c, g, s0);
                sum_err = sum_err.max((p.gamma0 + p.gamma1 + p.gamma2 - 1.0).abs());
                let m1 = |y0: f64, f: f64| c.alpha_bar_prev.sqrt() * y0 + (1.0 - c.alpha_bar_prev.sqrt()) * f;
                // prior variance of Y_{t-1} given Y0, written out from the definitions
                let v1 = (c.beta_bar_prev - c.beta_tilde_prev) * g + c.beta_tilde_prev * s0;
                let v2 = c.beta * c.beta * g + c.alpha * c.beta * s0;
                let y_t = c.alpha_bar.sqrt() * y0 + (1.0 - c.alpha_bar.sqrt()) * f + marginal_variance(&c, g, s0).sqrt();
                let mu = |y0: f64, y_t: f64, f: f64| integrate_posterior(m1(y0, f), v1, c.alpha, f, y_t, v2);
                let (num_mean, num_var) = mu(y0, y_t, f);
                let closed_mean = p.gamma0 * y0 + p.gamma1 * y_t + p.gamma2 * f;
                // gammas are the partial derivatives of the (affine) posterior mean
                let g0 = mu(y0 + 1.0, y_t, f).0 - num_mean;
                let g1 = mu(y0, y_t + 1.0, f).0 - num_mean;
                let g2 = mu(y0, y_t, f + 1.0).0 - num_mean;
                int_err = int_err
                    .max((num_mean - closed_mean).abs())
                    .max((num_var - p.sigma_tilde).abs())
                    .max((g0 - p.gamma0).abs())
                    .max((g1 - p.gamma1).abs())
                    .max((g2 - p.gamma2).abs());
            }
        }
    }
    // with g = sigma0 = 1 and f = 0 the posterior is the standard one (gamma2 multiplies f = 0)
    let mut ddpm_err: f64 = 0.0;
    let s = &schedules[0];
    for t in 2..=s.steps() {
        let c = s.coefficients_at(t).expect("step");
        let p = posterior_coefficients(&c, 1.0, 1.0);
        let denom = 1.0 - c.alpha_bar;
        let coef_y0 = c.alpha_bar_prev.sqrt() * c.beta / denom;
        let coef_yt = c.alpha.sqrt() * (1.0 - c.alpha_bar_prev) / denom;
        let var = (1.0 - c.alpha_bar_prev) * c.beta / denom;
        ddpm_err = ddpm_err
            .max((p.gamma0 - coef_y0).abs())
            .max((p.gamma1 - coef_yt).abs())
            .max((p.sigma_tilde - var).abs());
    }
    outcome(
        int_err <= C3_INTEGRATION_TOL && sum_err <= C3_SUM_TOL && ddpm_err <= C3_DDPM_TOL,
        format!("vs numeric integration {int_err:.1e}; |sum gamma - 1| {sum_err:.1e}; vs DDPM {ddpm_err:.1e}"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let s = NoiseSchedule::linear(20, 1e-4, 0.02).expect("default schedule");
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let log_uniform = |rng: &mut ChaCha8Rng| 10f64.powf(rng.gen_range(-2.0..2.0));
    let (mut worst, mut unsolvable, mut fallbacks) = (0.0f64, 0usize, 0usize);
    for _ in 0..C4_DRAWS {
        let t = rng.gen_range(2..=s.steps());
        let (g, s0) = (log_uniform(&mut rng), log_uniform(&mut rng));
        let c = s.coefficients_at(t).expect("step");
        let sigma_theta = posterior_coefficients(&c, g, s0).sigma_tilde;
        let gap = c.beta_bar_prev - c.beta_tilde_prev;
        if !(g < sigma_theta * (c.alpha / (c.beta * c.beta) + 1.0 / gap)) {
            unsolvable += 1;
        }
        match solve_sigma_y0_scalar(&c, g, sigma_theta).expect("solver input") {
            SolverOutcome::Root(v) => worst = worst.max((v - s0).abs() / s0),
            SolverOutcome::Fallback(_) => fallbacks += 1,
        }
    }
    outcome(
        worst <= C4_REL_TOL && unsolvable == 0 && fallbacks == 0,
        format!("max relative error {worst:.2e} over {C4_DRAWS} draws; {unsolvable} unsolvable, {fallbacks} fallbacks"),
    )
}

// ---------------------------------------------------------------- criterion 5

/// Central differences over every scalar of every parameter.
fn fd_check(store: &mut ParameterStore, analytic: &ParameterStore, mut loss: impl FnMut(&ParameterStore) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).raw_dim();
        for idx in ndarray::indices(shape) {
            let w = store.value(id)[idx];
            let h = 1e-6 * w.abs().max(1.0);
            store.value_mut(id)[idx] = w + h;
            let up = loss(store);
            store.value_mut(id)[idx] = w - h;
            let down = loss(store);
            store.value_mut(id)[idx] = w;
            let numeric = (up - down) / (2.0 * h);
            let exact = analytic.grad(id)[idx];
            worst = worst.max((numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6));
        }
    }
    worst
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut largest = 0usize;

    // loss gradients with respect to its two inputs
    let eta = array![[0.3, -1.1, 0.8], [0.0, 0.5, -0.2]];
    let eta_theta = array![[0.1, -0.7, 1.0], [0.4, 0.2, 0.0]];
    let sigma_tilde = array![[0.5, 0.0, 2.0], [1.5, 0.3, 0.9]];
    let sigma_theta = array![[0.7, 1.3, 1.1], [2.0, 0.2, 0.9]];
    let lg = nsdiff_loss(eta.view(), eta_theta.view(), sigma_tilde.view(), sigma_theta.view(), 2).expect("loss");
    let total = |et: &Array2<f64>, st: &Array2<f64>| {
        nsdiff_loss(eta.view(), et.view(), sigma_tilde.view(), st.view(), 2).expect("loss").value.total
    };
    for idx in ndarray::indices(eta.raw_dim()) {
        let h = 1e-6;
        let (mut up, mut down) = (eta_theta.clone(), eta_theta.clone());
        up[idx] += h;
        down[idx] -= h;
        let n = (total(&up, &sigma_theta) - total(&down, &sigma_theta)) / (2.0 * h);
        worst = worst.max((n - lg.d_eta_theta[idx]).abs() / n.abs().max(1e-6));
        let (mut up, mut down) = (sigma_theta.clone(), sigma_theta.clone());
        up[idx] += h;
        down[idx] -= h;
        let n = (total(&eta_theta, &up) - total(&eta_theta, &down)) / (2.0 * h);
        worst = worst.max((n - lg.d_sigma_theta[idx]).abs() / n.abs().max(1e-6).max(lg.d_sigma_theta[idx].abs()));
    }

    // plain networks with both output heads
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    for head in [OutputHead::Identity, OutputHead::Softplus] {
        let mut store = ParameterStore::new();
        let spec = MlpSpec::three_layer(6, 12, 4, head).expect("spec");
        let mlp = Mlp::init(&mut store, "net", spec, &mut rng).expect("init");
        largest = largest.max(store.scalar_count());
        let x = Array2::from_shape_simple_fn((5, 6), || StandardNormal.sample(&mut rng));
        let target: Array2<f64> = Array2::from_shape_simple_fn((5, 4), || StandardNormal.sample(&mut rng));
        let loss = |s: &ParameterStore| {
            let out = mlp.predict(s, x.view()).expect("forward");
            (&out - &target).mapv(|v| v * v).sum()
        };
        let (out, cache) = mlp.forward(&store, x.view()).expect("forward");
        let grad = (&out - &target) * 2.0;
        let mut analytic = store.clone();
        analytic.zero_grad();
        mlp.backward(&mut analytic, &cache, grad.view()).expect("backward");
        worst = worst.max(fd_check(&mut store, &analytic, loss));
    }

    // the denoiser through the training loss, with and without a learned variance
    let s = NoiseSchedule::linear(5, 0.01, 0.2).expect("schedule");
    let m = 3;
    for mode in [VariantMode::FullNsdiff, VariantMode::NoLsnm] {
        let out_w = if mode.learns_variance() { 2 * m } else { m };
        let spec = MlpSpec::three_layer(3 * m + 4, 10, out_w, OutputHead::Identity).expect("spec");
        let mut den = Denoiser::init(spec, s.steps(), 4, mode, &mut rng).expect("denoiser");
        largest = largest.max(den.store().scalar_count());
        let rows = 4;
        let y_t = Array2::from_shape_simple_fn((rows, m), || StandardNormal.sample(&mut rng));
        let f = Array2::from_shape_simple_fn((rows, m), || StandardNormal.sample(&mut rng));
        let g = Array2::from_shape_simple_fn((rows, m), || rng.gen_range(0.2..2.0));
        let eta = Array2::from_shape_simple_fn((rows, m), || StandardNormal.sample(&mut rng));
        let sig_t = Array2::from_shape_simple_fn((rows, m), || rng.gen_range(0.001..0.05));
        let steps = [2usize, 5, 3, 4];
        let input = DenoiserInput {
            y_t: y_t.view(),
            f: f.view(),
            g: g.view(),
            steps: &steps,
        };
        let loss_of = |d: &Denoiser| {
            let out = d.forward(&s, input).expect("forward").0;
            let sigma = out.sigma.unwrap_or_else(|| sig_t.clone());
            nsdiff_loss(eta.view(), out.eta.view(), sig_t.view(), sigma.view(), rows).expect("loss").value.total
        };
        let (out, cache) = den.forward(&s, input).expect("forward");
        let sigma = out.sigma.clone().unwrap_or_else(|| sig_t.clone());
        let lg = nsdiff_loss(eta.view(), out.eta.view(), sig_t.view(), sigma.view(), rows).expect("loss");
        den.store_mut().zero_grad();
        let d_sigma = out.sigma.as_ref().map(|_| lg.d_sigma_theta.view());
        den.backward(&cache, lg.d_eta_theta.view(), d_sigma).expect("backward");
        let analytic = den.store().clone();
        let mut probe = den.clone();
        let mut store = probe.store().clone();
        worst = worst.max(fd_check(&mut store, &analytic, |st| {
            *probe.store_mut() = st.clone();
            loss_of(&probe)
        }));
    }
    outcome(
        worst <= C5_REL_TOL && largest <= C5_MAX_PARAMS,
        format!("max relative FD error {worst:.2e} (tol {C5_REL_TOL:e}); largest net {largest} params"),
    )
}

// ---------------------------------------------------------------- criterion 6

/// Exact integral of `(F(z) - 1{x <= z})^2` with `F` the empirical CDF,
/// summed over the intervals between consecutive breakpoints.
fn crps_grid(samples: &[f64], x: f64) -> f64 {
    let mut grid: Vec<f64> = samples.iter().copied().chain(std::iter::once(x)).collect();
    grid.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    grid.windows(2)
        .map(|w| {
            let z = 0.5 * (w[0] + w[1]);
            let cdf = samples.iter().filter(|&&s| s <= z).count() as f64 / n;
            let step = if x <= z { 1.0 } else { 0.0 };
            (cdf - step).powi(2) * (w[1] - w[0])
        })
        .sum()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut grid_err: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..60);
        let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let x = rng.gen_range(-4.0..4.0);
        grid_err = grid_err.max((crps(&samples, x).expect("crps") - crps_grid(&samples, x)).abs());
    }
    let point_ok = [(0.0, 1.5), (2.25, -3.5), (-1.0, -1.0)]
        .iter()
        .all(|&(c, x)| crps(&[c; 17], x).expect("crps") == (c - x).abs());

    // every observation above every sample: all mass in the top bin
    let mut acc = EvalAccumulator::new(1);
    let samples = Array3::from_shape_fn((100, 30, 1), |(s, _, _)| s as f64);
    acc.add(samples.view(), Array2::from_elem((30, 1), 1e6).view()).expect("add");
    let worst_qice = acc.finish(&["v".into()]).expect("finish").qice;

    let mut acc = EvalAccumulator::new(1);
    for _ in 0..4 {
        let samples = Array3::from_shape_simple_fn((1000, 500, 1), || StandardNormal.sample(&mut rng));
        let obs = Array2::from_shape_simple_fn((500, 1), || StandardNormal.sample(&mut rng));
        acc.add(samples.view(), obs.view()).expect("add");
    }
    let calibrated = acc.finish(&["v".into()]).expect("finish").qice;
    outcome(
        grid_err <= C6_GRID_TOL && point_ok && (worst_qice - C6_WORST_QICE).abs() < 1e-12 && calibrated < C6_CALIBRATED_QICE,
        format!(
            "CRPS vs grid {grid_err:.1e}; point mass exact: {point_ok}; one-bin QICE {worst_qice:.4}; calibrated QICE {calibrated:.4}"
        ),
    )
}

// ----------------------------------------------------------- criteria 7 and 8

struct SeedRun {
    seed: u64,
    full: Evaluation,
    no_lsnm: Evaluation,
}

/// Trains both variants per seed; the estimators are pretrained once per seed
/// because they do not depend on the variant.
fn synthetic_runs() -> nsdiff::Result<(Vec<SeedRun>, Duration)> {
    let start = Instant::now();
    let mut runs = Vec::new();
    for seed in C7_SEEDS {
        let ds = split_dataset(&synth_linear(C7_SYNTH_LEN, seed)?, SplitScheme::Ratio)?;
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let data = prepare_data(&ds, &cfg)?;
        let est = pretrain_estimators(&data, &cfg)?;
        let mut evals = Vec::new();
        for variant in [VariantMode::FullNsdiff, VariantMode::NoLsnm] {
            let cfg = TrainConfig { variant, ..cfg.clone() };
            let (model, _) = train_nsdiff(&cfg, &data.train, &data.val, est.mean.clone(), est.variance.clone(), data.scaler.clone())?;
            evals.push(evaluate(&model, &data.test, &data.feature_names, cfg.samples)?);
            eprintln!("  seed {seed} {variant}: QICE {:.5} CRPS {:.4} ({:.0}s elapsed)", evals.last().unwrap().report.qice, evals.last().unwrap().report.crps, start.elapsed().as_secs_f64());
        }
        let no_lsnm = evals.pop().expect("two variants");
        let full = evals.pop().expect("two variants");
        runs.push(SeedRun { seed, full, no_lsnm });
    }
    Ok((runs, start.elapsed()))
}

fn criterion_7(runs: &[SeedRun], elapsed: Duration) -> Outcome {
    let qice_ok = runs.iter().all(|r| 100.0 * r.full.report.qice <= C7_QICE_X100);
    let wins = runs.iter().filter(|r| r.full.report.qice < r.no_lsnm.report.qice).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: full {:.3} vs no_lsnm {:.3}", r.seed, 100.0 * r.full.report.qice, 100.0 * r.no_lsnm.report.qice))
        .collect();
    outcome(
        qice_ok && wins >= 2 && elapsed < C7_BUDGET,
        format!(
            "QICE x100 {}; full better on {wins}/3; {:.1} min",
            detail.join(", "),
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn criterion_8(runs: &[SeedRun]) -> Outcome {
    let (_, truth_std) = synth_ground_truth(SynthKind::Linear, C7_SYNTH_LEN);
    let rs: Vec<f64> = runs
        .iter()
        .map(|r| {
            let ens: Vec<f64> = r.full.region.iter().map(|p| p.std[0]).collect();
            let truth: Vec<f64> = r.full.region.iter().map(|p| truth_std[p.time]).collect();
            pearson(&ens, &truth)
        })
        .collect();
    let hits = rs.iter().filter(|&&r| r > C8_MIN_PEARSON).count();
    outcome(
        hits >= C8_MIN_SEEDS,
        format!("Pearson(ensemble std, v[t]) per seed {rs:.3?}; {hits}/3 above {C8_MIN_PEARSON}"),
    )
}

// ---------------------------------------------------------------- criterion 9

fn etth1_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("NSDIFF_ETTH1_CSV") {
        return Some(PathBuf::from(p));
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ETTh1.csv");
    p.exists().then_some(p)
}

fn criterion_9() -> Outcome {
    let Some(path) = etth1_path() else {
        return outcome(
            false,
            "ETTh1.csv not found (set NSDIFF_ETTH1_CSV or place it at data/ETTh1.csv); smoke run not executed",
        );
    };
    let run = || -> nsdiff::Result<String> {
        let ds = load_csv(&path, true)?.head(C9_ROWS)?;
        let ds = split_dataset(&ds, SplitScheme::Ratio)?;
        let cfg = TrainConfig {
            epochs: 2,
            samples: 20,
            eval_stride: 24,
            ..TrainConfig::default()
        };
        let fitted = fit_nsdiff(&ds, &cfg)?;
        let ev = evaluate(&fitted.model, &fitted.data.test, &fitted.data.feature_names, cfg.samples)?;
        let dir = tempfile::tempdir().map_err(|e| nsdiff::Error::Internal(e.to_string()))?;
        let ckpt = dir.path().join("etth1.nsdf");
        save_checkpoint(&ckpt, &fitted.model)?;
        let reloaded = load_checkpoint(&ckpt)?;
        let identical = reloaded.to_bytes()? == fitted.model.to_bytes()?;
        let finite = ev.report.crps.is_finite() && ev.report.qice.is_finite();
        if !(identical && finite) {
            return Err(nsdiff::Error::Internal(format!(
                "finite metrics {finite}, bitwise round trip {identical}"
            )));
        }
        Ok(format!("CRPS {:.4}, QICE {:.4}, checkpoint round trip bitwise", ev.report.crps, ev.report.qice))
    };
    match run() {
        Ok(detail) => outcome(true, detail),
        Err(e) => outcome(false, e.to_string()),
    }
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Outcome {
    let run = || -> nsdiff::Result<(Vec<u8>, String)> {
        let ds = split_dataset(&synth_linear(1200, 5)?, SplitScheme::Ratio)?;
        let cfg = TrainConfig {
            seed: 5,
            epochs: 2,
            input_len: 48,
            horizon: 24,
            variance_window: 24,
            estimator_hidden: 32,
            denoiser_hidden: 32,
            step_embedding: 8,
            samples: 20,
            eval_stride: 8,
            ..TrainConfig::default()
        };
        let fitted = fit_nsdiff(&ds, &cfg)?;
        let ev = evaluate(&fitted.model, &fitted.data.test, &fitted.data.feature_names, cfg.samples)?;
        Ok((fitted.model.to_bytes()?, ev.report.to_json()?))
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => outcome(
            a == b,
            format!("checkpoints identical: {}; reports identical: {}", a.0 == b.0, a.1 == b.1),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let simple: [(u32, fn() -> Outcome); 6] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
    ];
    for (n, check) in simple {
        if wants(n) {
            results.push((n, check()));
        }
    }
    if wants(7) || wants(8) {
        match synthetic_runs() {
            Ok((runs, elapsed)) => {
                if wants(7) {
                    results.push((7, criterion_7(&runs, elapsed)));
                }
                if wants(8) {
                    results.push((8, criterion_8(&runs)));
                }
            }
            Err(e) => {
                for n in [7, 8].into_iter().filter(|&n| wants(n)) {
                    results.push((n, outcome(false, format!("synthetic run failed: {e}"))));
                }
            }
        }
    }
    if wants(9) {
        results.push((9, criterion_9()));
    }
    if wants(10) {
        results.push((10, criterion_10()));
    }
    results.sort_by_key(|(n, _)| *n);
    for (n, o) in &results {
        println!("criterion {n:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
