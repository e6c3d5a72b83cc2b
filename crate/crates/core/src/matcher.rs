//! Shift estimation by maximizing the correlation of (ranked or raw)
//! observations with shifted copies of the template.
//!
//! Every estimate first scans all `n` grid shifts `k / n` with one FFT
//! circular cross-correlation, then refines around the best grid shift by
//! golden-section search on the exact `O(n)` objective.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{rank_transform, RankVector, Signal};
use crate::templates::{wrap_unit, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rank,
    Pearson,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Rank, Method::Pearson];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rank => "rank",
            Method::Pearson => "pearson",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rank" => Ok(Method::Rank),
            "pearson" => Ok(Method::Pearson),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOpts {
    /// Refine below grid resolution; when off the best grid shift is returned.
    pub refine: bool,
    /// Width of the final golden-section bracket, in units of θ.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RefineOpts {
    fn default() -> Self {
        RefineOpts {
            refine: true,
            tol: 1e-7,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    /// Estimated shift in `[0, 1)`.
    pub theta_hat: f64,
    /// Criterion value at `theta_hat`.
    pub objective_value: f64,
    /// Index `k` of the best grid shift `k / n`.
    pub grid_argmax: usize,
    pub refine_iterations: usize,
    pub method: Method,
}

/// Signed representative of `d` modulo one, in `(-1/2, 1/2]`.
pub fn wrap_signed(d: f64) -> f64 {
    let r = d - d.round();
    if r <= -0.5 {
        r + 1.0
    } else {
        r
    }
}

/// Distance on the circle: `min_k |a - b + k|`.
pub fn wrap_distance(a: f64, b: f64) -> f64 {
    wrap_signed(a - b).abs()
}

struct GridPlan {
    // conjugated spectrum of the template sampled at j / n
    template_spectrum: Vec<Complex<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

type PlanCache = RwLock<HashMap<(String, usize), Arc<GridPlan>>>;

fn plan_cache() -> &'static PlanCache {
    static CACHE: OnceLock<PlanCache> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn grid_plan(template: &Template, n: usize) -> Arc<GridPlan> {
    let key = (template.id().to_string(), n);
    if let Some(plan) = plan_cache().read().expect("plan cache poisoned").get(&key) {
        return Arc::clone(plan);
    }
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut spectrum: Vec<Complex<f64>> = template
        .sample_grid(n)
        .into_iter()
        .map(|v| Complex::new(v, 0.0))
        .collect();
    forward.process(&mut spectrum);
    for c in &mut spectrum {
        *c = c.conj();
    }
    let plan = Arc::new(GridPlan {
        template_spectrum: spectrum,
        forward,
        inverse,
    });
    let mut cache = plan_cache().write().expect("plan cache poisoned");
    Arc::clone(cache.entry(key).or_insert(plan))
}

/// Drops all cached template spectra.
pub fn clear_grid_cache() {
    plan_cache().write().expect("plan cache poisoned").clear();
}

/// `c[k] = (1/n) Σ_{i=1..n} w_i f((i - k)/n)` for `k = 0..n`, by FFT.
///
/// `weights[i - 1]` is the weight of design point `i / n`.
pub fn correlate_grid(weights: &[f64], template: &Template) -> Result<Vec<f64>> {
    let n = weights.len();
    if n < 2 {
        return Err(Error::TooShort { min: 2, got: n });
    }
    let plan = grid_plan(template, n);
    // design point i/n sits at circular index i mod n
    let mut buf: Vec<Complex<f64>> = (0..n).map(|j| Complex::new(weights[(j + n - 1) % n], 0.0)).collect();
    plan.forward.process(&mut buf);
    for (b, t) in buf.iter_mut().zip(&plan.template_spectrum) {
        *b *= t;
    }
    plan.inverse.process(&mut buf);
    let scale = 1.0 / (n as f64 * n as f64);
    Ok(buf.into_iter().map(|c| c.re * scale).collect())
}

/// Exact criterion `(1/n) Σ w_i f(i/n - θ)`.
pub fn objective(theta: f64, weights: &[f64], template: &Template) -> f64 {
    let n = weights.len() as f64;
    weights
        .iter()
        .enumerate()
        .map(|(i, &w)| w * template.eval((i + 1) as f64 / n - theta))
        .sum::<f64>()
        / n
}

/// Rank criterion `(1/n) Σ (R_i/n) f(i/n - θ)`.
pub fn objective_rank(theta: f64, ranks: &RankVector, template: &Template) -> f64 {
    objective(theta, &rank_weights(ranks), template)
}

fn rank_weights(ranks: &RankVector) -> Vec<f64> {
    let n = ranks.len() as f64;
    ranks.ranks.iter().map(|r| r / n).collect()
}

/// Maximizes `f` on `[a, b]`; returns `(x, f(x), iterations)`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iters = 0;
    while b - a > tol && iters < max_iter {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        iters += 1;
    }
    if fc >= fd {
        (c, fc, iters)
    } else {
        (d, fd, iters)
    }
}

/// Maximizes the objective on `[lo, hi]`. The objective is smooth between
/// the shifts `j/n - b` at which a design point crosses a template breakpoint
/// `b`; each such piece is searched separately. When `f` is linear on each
/// piece the maximum sits at one of the cuts.
fn refine_bracket(
    f: impl Fn(f64) -> f64,
    n: usize,
    template: &Template,
    (lo, hi): (f64, f64),
    piecewise_linear: bool,
    opts: RefineOpts,
) -> (f64, f64, usize) {
    let nf = n as f64;
    let mut cuts = vec![lo, hi];
    for &b in template.breakpoints().iter().filter(|&&b| b < 1.0) {
        let first = ((lo + b) * nf).ceil() as i64;
        let last = ((hi + b) * nf).floor() as i64;
        cuts.extend((first..=last).map(|j| j as f64 / nf - b).filter(|&t| t > lo && t < hi));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = (cuts[0], f(cuts[0]), 0);
    for &t in &cuts[1..] {
        let v = f(t);
        if v > best.1 {
            best = (t, v, best.2);
        }
    }
    if !piecewise_linear {
        for w in cuts.windows(2) {
            let (t, v, it) = golden_section_max(&f, w[0], w[1], opts.tol, opts.max_iter);
            best.2 += it;
            if v > best.1 {
                best = (t, v, best.2);
            }
        }
    }
    best
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

fn check_template(template: &Template) -> Result<()> {
    if template.is_constant() {
        return Err(Error::ConstantTemplate);
    }
    Ok(())
}

/// Estimates the shift of `template` in `signal`.
pub fn estimate(signal: &Signal, template: &Template, method: Method, opts: RefineOpts) -> Result<EstimateResult> {
    check_template(template)?;
    let n = signal.len();
    if n < 2 {
        return Err(Error::TooShort { min: 2, got: n });
    }
    if signal.values.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::DegenerateSignal { n });
    }
    let weights = match method {
        Method::Rank => rank_weights(&rank_transform(&signal.values)),
        Method::Pearson => signal.values.clone(),
    };
    let grid = correlate_grid(&weights, template)?;
    let k = first_argmax(&grid);
    let nf = n as f64;
    let theta_grid = k as f64 / nf;
    let at_grid = objective(theta_grid, &weights, template);
    let (mut theta, mut value, mut iters) = (theta_grid, at_grid, 0);
    if opts.refine {
        let (t, v, it) = refine_bracket(
            |th| objective(th, &weights, template),
            n,
            template,
            ((k as f64 - 1.0) / nf, (k as f64 + 1.0) / nf),
            template.is_piecewise_linear(),
            opts,
        );
        iters = it;
        if v > at_grid {
            theta = t;
            value = v;
        }
    }
    Ok(EstimateResult {
        theta_hat: wrap_unit(theta),
        objective_value: value,
        grid_argmax: k,
        refine_iterations: iters,
        method,
    })
}

/// Result of the least-squares fit `argmin_θ Σ (Y_i - f(i/n - θ))²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresResult {
    pub theta_hat: f64,
    pub residual_sum_of_squares: f64,
    pub grid_argmin: usize,
    pub refine_iterations: usize,
}

/// Residual sum of squares at shift `theta`.
pub fn residual_sum_of_squares(theta: f64, values: &[f64], template: &Template) -> f64 {
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let r = y - template.eval((i + 1) as f64 / n - theta);
            r * r
        })
        .sum()
}

/// Least-squares shift estimate. The grid scan evaluates every residual sum
/// directly, so this costs `O(n²)`; it serves as a reference for the
/// correlation-based Pearson estimate.
pub fn estimate_least_squares(signal: &Signal, template: &Template, opts: RefineOpts) -> Result<LeastSquaresResult> {
    check_template(template)?;
    let n = signal.len();
    if n < 2 {
        return Err(Error::TooShort { min: 2, got: n });
    }
    let samples = template.sample_grid(n);
    let ssr: Vec<f64> = (0..n)
        .map(|k| {
            signal
                .values
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let r = y - samples[(i + 1 + n - k) % n];
                    r * r
                })
                .sum()
        })
        .collect();
    let neg: Vec<f64> = ssr.iter().map(|v| -v).collect();
    let k = first_argmax(&neg);
    let nf = n as f64;
    let theta_grid = k as f64 / nf;
    let at_grid = residual_sum_of_squares(theta_grid, &signal.values, template);
    let (mut theta, mut value, mut iters) = (theta_grid, at_grid, 0);
    if opts.refine {
        let (t, v, it) = refine_bracket(
            |th| -residual_sum_of_squares(th, &signal.values, template),
            n,
            template,
            ((k as f64 - 1.0) / nf, (k as f64 + 1.0) / nf),
            false,
            opts,
        );
        iters = it;
        if -v < at_grid {
            theta = t;
            value = -v;
        }
    }
    Ok(LeastSquaresResult {
        theta_hat: wrap_unit(theta),
        residual_sum_of_squares: value,
        grid_argmin: k,
        refine_iterations: iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;
    use crate::sampling::generate_signal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // O(n²) reference for correlate_grid
    fn direct_correlation(weights: &[f64], template: &Template) -> Vec<f64> {
        let n = weights.len();
        (0..n)
            .map(|k| {
                weights
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| w * template.eval(((i + 1) as f64 - k as f64) / n as f64))
                    .sum::<f64>()
                    / n as f64
            })
            .collect()
    }

    #[test]
    fn objective_rank_hand_example() {
        let ranks = RankVector {
            ranks: vec![1.0, 2.0, 3.0, 4.0],
        };
        let v = objective_rank(0.0, &ranks, &Template::builtin_a());
        assert!((v - 0.125).abs() < 1e-15);
        assert!((objective_rank(1.0, &ranks, &Template::builtin_a()) - v).abs() < 1e-15);
    }

    #[test]
    fn fft_matches_direct_sum_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in Template::builtins() {
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fft = correlate_grid(&w, &t).unwrap();
            let direct = direct_correlation(&w, &t);
            for (a, b) in fft.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn correlate_grid_matches_objective_rank() {
        let noise = NoiseModel::gaussian(1.0);
        let s = generate_signal(&Template::builtin_c(), 0.2, 500, Some(&noise), 4).unwrap();
        let ranks = rank_transform(&s.values);
        let grid = correlate_grid(&rank_weights(&ranks), &Template::builtin_c()).unwrap();
        for k in (0..500).step_by(7) {
            let exact = objective_rank(k as f64 / 500.0, &ranks, &Template::builtin_c());
            assert!((grid[k] - exact).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn correlate_grid_rejects_short_input() {
        assert!(matches!(
            correlate_grid(&[1.0], &Template::builtin_a()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn autocorrelation_peaks_at_zero_and_shifts() {
        let t = Template::builtin_b();
        let n = 128;
        let w: Vec<f64> = (1..=n).map(|i| t.eval(i as f64 / n as f64)).collect();
        let grid = correlate_grid(&w, &t).unwrap();
        assert_eq!(first_argmax(&grid), 0);
        for j in [1usize, 5, 77] {
            let shifted: Vec<f64> = (0..n).map(|i| w[(i + n - j) % n]).collect();
            assert_eq!(first_argmax(&correlate_grid(&shifted, &t).unwrap()), j);
        }
    }

    #[test]
    fn noiseless_recovery_rank() {
        let s = generate_signal(&Template::builtin_a(), 0.37, 10_000, None, 0).unwrap();
        let est = estimate(&s, &Template::builtin_a(), Method::Rank, RefineOpts::default()).unwrap();
        assert!(wrap_distance(est.theta_hat, 0.37) <= 1e-4, "{est:?}");
    }

    #[test]
    fn rank_estimate_invariant_under_arctan() {
        let t = Template::builtin_c();
        let s = generate_signal(&t, 0.61, 1000, Some(&NoiseModel::student_t3(1.0)), 8).unwrap();
        let a = estimate(&s, &t, Method::Rank, RefineOpts::default()).unwrap();
        let b = estimate(&s.map(f64::atan), &t, Method::Rank, RefineOpts::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pearson_matches_least_squares() {
        for (t, seed) in [(Template::builtin_a(), 1u64), (Template::builtin_c(), 2)] {
            let s = generate_signal(&t, 0.4, 400, Some(&NoiseModel::gaussian(0.5)), seed).unwrap();
            let opts = RefineOpts::default();
            let corr = estimate(&s, &t, Method::Pearson, opts).unwrap();
            let ls = estimate_least_squares(&s, &t, opts).unwrap();
            assert_eq!(corr.grid_argmax, ls.grid_argmin);
            // Σ f(x_i - θ)² is only constant on the grid; between grid points
            // the two criteria can peak at slightly different places
            assert!(wrap_distance(corr.theta_hat, ls.theta_hat) <= 1.0 / 400.0);
        }
    }

    #[test]
    fn translation_equivariance() {
        let t = Template::builtin_a();
        let n = 1000;
        let base = generate_signal(&t, 0.1, n, None, 0).unwrap();
        for method in Method::ALL {
            let e0 = estimate(&base, &t, method, RefineOpts::default()).unwrap();
            for j in [3usize, 250, 999] {
                let shifted = Signal::new((0..n).map(|i| base.values[(i + n - j) % n]).collect()).unwrap();
                let e = estimate(&shifted, &t, method, RefineOpts::default()).unwrap();
                let expected = wrap_unit(e0.theta_hat + j as f64 / n as f64);
                assert!(wrap_distance(e.theta_hat, expected) < 1e-9, "{method} j={j}");
            }
        }
    }

    #[test]
    fn refinement_never_decreases_objective() {
        let t = Template::builtin_c();
        for seed in 0..20 {
            let s = generate_signal(&t, 0.8, 300, Some(&NoiseModel::cauchy(1.0)), seed).unwrap();
            for method in Method::ALL {
                let e = estimate(&s, &t, method, RefineOpts::default()).unwrap();
                let weights = match method {
                    Method::Rank => rank_weights(&rank_transform(&s.values)),
                    Method::Pearson => s.values.clone(),
                };
                let grid = correlate_grid(&weights, &t).unwrap();
                let best = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(e.objective_value >= best - 1e-12);
                assert!(wrap_distance(e.theta_hat, e.grid_argmax as f64 / 300.0) <= 1.0 / 300.0 + 1e-15);
            }
        }
    }

    #[test]
    fn brute_force_agreement_small_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = RefineOpts::default();
        for case in 0..6 {
            let t = &Template::builtins()[case % 3];
            let n = rng.random_range(8..=64);
            let s = generate_signal(t, rng.random(), n, Some(&NoiseModel::gaussian(0.3)), case as u64).unwrap();
            for method in Method::ALL {
                let weights = match method {
                    Method::Rank => rank_weights(&rank_transform(&s.values)),
                    Method::Pearson => s.values.clone(),
                };
                let m = 1_000_000;
                let (mut best_theta, mut best) = (0.0, f64::NEG_INFINITY);
                for j in 0..m {
                    let th = j as f64 / m as f64;
                    let v = objective(th, &weights, t);
                    if v > best {
                        best = v;
                        best_theta = th;
                    }
                }
                let e = estimate(&s, t, method, opts).unwrap();
                assert!(
                    e.objective_value >= best - 1e-12,
                    "{method} case {case} n={n} t={} est {} val {} k={} best {best_theta} {best}",
                    t.id(),
                    e.theta_hat,
                    e.objective_value,
                    e.grid_argmax
                );
                // the maximizer is unique here, so the argmaxes agree as well
                assert!(
                    wrap_distance(e.theta_hat, best_theta) <= 2.0 / m as f64 + opts.tol,
                    "{method} case {case}: {} vs {best_theta}",
                    e.theta_hat
                );
            }
        }
    }

    #[test]
    fn error_paths() {
        let flat = Template::piecewise_linear(vec![(0.0, 1.0), (0.5, 1.0)]).unwrap();
        let s = Signal::new(vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            estimate(&s, &flat, Method::Rank, RefineOpts::default()),
            Err(Error::ConstantTemplate)
        ));
        let constant = Signal::new(vec![2.0; 10]).unwrap();
        assert!(matches!(
            estimate(&constant, &Template::builtin_a(), Method::Rank, RefineOpts::default()),
            Err(Error::DegenerateSignal { n: 10 })
        ));
    }

    #[test]
    fn wrap_helpers() {
        assert_eq!(wrap_signed(0.5), 0.5);
        assert_eq!(wrap_signed(-0.5), 0.5);
        assert!((wrap_signed(0.9) + 0.1).abs() < 1e-15);
        assert!((wrap_distance(0.02, 0.98) - 0.04).abs() < 1e-15);
        assert_eq!(wrap_distance(0.3, 0.3), 0.0);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx, it) = golden_section_max(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-9, 200);
        assert!((x - 0.3).abs() < 1e-8 && fx <= 0.0 && it > 10);
    }

    #[test]
    fn refinement_off_returns_grid_point() {
        let t = Template::builtin_c();
        let s = generate_signal(&t, 0.3337, 200, Some(&NoiseModel::gaussian(0.2)), 1).unwrap();
        let opts = RefineOpts {
            refine: false,
            ..RefineOpts::default()
        };
        let e = estimate(&s, &t, Method::Pearson, opts).unwrap();
        assert_eq!(e.theta_hat, e.grid_argmax as f64 / 200.0);
        assert_eq!(e.refine_iterations, 0);
    }
}
