//! Large-sample behaviour of the rank estimator, by numerical quadrature.
//!
//! With the true shift at zero, the population criterion is
//!
//! ```text
//! M(θ)   = ∫∫ Φ₂(f(x₀) - f(x)) f(x₀ - θ) dx dx₀
//! M''(0) = -∫∫ f'(x)² φ₂(f(x) - f(x₀)) dx dx₀
//! γ²     = ∫ ∫ Λ(x₀, z)² φ(z) dz dx₀
//! Λ(x₀, z) = ∫ (f'(x) - f'(x₀)) [Φ(z + f(x) - f(x₀)) - Φ₂(f(x) - f(x₀))] dx
//! ```
//!
//! and `√n (θ̂ - θ*)` is asymptotically `N(0, γ² / M''(0)²)`. The Pearson
//! estimator has limiting variance `σ² / ∫ f'²`; the ratio of the two is the
//! asymptotic relative efficiency reported by [`report`].
//!
//! Integrals over `[0, 1]` use composite Gauss–Legendre panels aligned with
//! the template's breakpoints. Integrals over the noise use the tangent
//! substitution from [`crate::quadrature`].

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{self, fmt_num};
use crate::noise::{NoiseFamily, NoiseModel};
use crate::quadrature::{Chebyshev, Rule};
use crate::templates::{wrap_unit, Template};

/// Node counts for the asymptotic integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Nodes per `[0, 1]` axis.
    pub x_nodes: usize,
    /// Gauss–Legendre order of each `[0, 1]` panel.
    pub gl_order: usize,
    /// Panels of the tangent-substituted rule for the noise integral.
    pub z_panels: usize,
    pub z_order: usize,
    /// Points of the θ grid probed by [`verify_local_max`].
    pub theta_grid: usize,
    /// Also run at half the node counts and report the difference.
    pub error_estimate: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            x_nodes: 2048,
            gl_order: 4,
            z_panels: 8,
            z_order: 16,
            theta_grid: 4096,
            error_estimate: true,
        }
    }
}

impl QuadratureConfig {
    pub fn with_nodes(x_nodes: usize) -> QuadratureConfig {
        QuadratureConfig {
            x_nodes,
            ..QuadratureConfig::default()
        }
    }

    /// Every node count doubled.
    pub fn doubled(&self) -> QuadratureConfig {
        QuadratureConfig {
            x_nodes: self.x_nodes * 2,
            z_panels: self.z_panels * 2,
            ..*self
        }
    }

    /// Every node count halved.
    pub fn halved(&self) -> QuadratureConfig {
        QuadratureConfig {
            x_nodes: (self.x_nodes / 2).max(self.gl_order),
            z_panels: (self.z_panels / 2).max(1),
            ..*self
        }
    }

    fn x_rule(&self, template: &Template) -> Rule {
        Rule::composite(&template.breakpoints(), self.x_nodes, self.gl_order)
    }

    fn z_rule(&self, noise: &NoiseModel) -> Rule {
        Rule::real_line(noise.scale, self.z_panels, self.z_order)
    }
}

/// Template values at quadrature nodes, with nodes that share `(f, f')`
/// merged into one entry carrying their total weight.
struct NodeTable {
    value: Vec<f64>,
    deriv: Vec<f64>,
    weight: Vec<f64>,
}

impl NodeTable {
    fn new(template: &Template, rule: &Rule) -> NodeTable {
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut table = NodeTable {
            value: Vec::new(),
            deriv: Vec::new(),
            weight: Vec::new(),
        };
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let f = template.eval(x);
            let fp = template.eval_deriv(x);
            match index.entry((f.to_bits(), fp.to_bits())) {
                std::collections::hash_map::Entry::Occupied(e) => table.weight[*e.get()] += w,
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(table.value.len());
                    table.value.push(f);
                    table.deriv.push(fp);
                    table.weight.push(w);
                }
            }
        }
        table
    }

    fn len(&self) -> usize {
        self.value.len()
    }
}

/// `M''(0) = -∫∫ f'(x)² φ₂(f(x) - f(x₀)) dx dx₀`.
pub fn m_second_at_star(template: &Template, noise: &NoiseModel, cfg: &QuadratureConfig) -> f64 {
    let nodes = NodeTable::new(template, &cfg.x_rule(template));
    let per_node: Vec<f64> = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let fp = nodes.deriv[i];
            if fp == 0.0 {
                return 0.0;
            }
            let fx = nodes.value[i];
            let inner: f64 = (0..nodes.len())
                .map(|j| nodes.weight[j] * noise.phi2_density(fx - nodes.value[j]))
                .sum();
            nodes.weight[i] * fp * fp * inner
        })
        .collect();
    -per_node.iter().sum::<f64>()
}

/// How `Ξ(w, z) = Φ(z + w) - Φ₂(w)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiForm {
    Direct,
    /// `1 - Φ(-z - w) - Φ₂(w)`, equal to the direct form for symmetric noise.
    Reflected,
}

/// `γ² = ∫∫ [∫ (f'(x) - f'(x₀)) Ξ(f(x) - f(x₀), z) dx]² φ(z) dz dx₀`.
pub fn gamma_squared(template: &Template, noise: &NoiseModel, cfg: &QuadratureConfig) -> f64 {
    gamma_squared_with(template, noise, cfg, XiForm::Direct)
}

pub fn gamma_squared_with(template: &Template, noise: &NoiseModel, cfg: &QuadratureConfig, form: XiForm) -> f64 {
    let nodes = NodeTable::new(template, &cfg.x_rule(template));
    let z_rule = cfg.z_rule(noise);
    let z_weight: Vec<(f64, f64)> = z_rule
        .nodes
        .iter()
        .zip(&z_rule.weights)
        .map(|(&z, &w)| (z, w * noise.pdf(z)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let m = nodes.len();
    let per_outer: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| {
            let (f0, fp0) = (nodes.value[j], nodes.deriv[j]);
            let diff: Vec<f64> = (0..m).map(|i| nodes.value[i] - f0).collect();
            let coef: Vec<f64> = (0..m).map(|i| nodes.weight[i] * (nodes.deriv[i] - fp0)).collect();
            // z-free part of Λ: ∫ (f'(x) - f'(x₀)) Φ₂(f(x) - f(x₀)) dx
            let centre: f64 = (0..m)
                .filter(|&i| coef[i] != 0.0)
                .map(|i| coef[i] * noise.phi2(diff[i]))
                .sum();
            let mut acc = 0.0;
            for &(z, wz) in &z_weight {
                let mut lambda = -centre;
                for i in 0..m {
                    if coef[i] == 0.0 {
                        continue;
                    }
                    let cdf = match form {
                        XiForm::Direct => noise.cdf(z + diff[i]),
                        XiForm::Reflected => 1.0 - noise.cdf(-z - diff[i]),
                    };
                    lambda += coef[i] * cdf;
                }
                acc += wz * lambda * lambda;
            }
            nodes.weight[j] * acc
        })
        .collect();
    per_outer.iter().sum()
}

/// The population criterion `M(θ)` for one (template, noise) pair.
///
/// `g(y) = ∫ Φ₂(y - f(x)) dx` is smooth in `y`, so it is tabulated once as a
/// Chebyshev interpolant over the range of `f`; each `M(θ)` is then a single
/// integral whose panels follow the breakpoints of both `f` and `f(· - θ)`.
pub struct PopulationCriterion {
    template: Template,
    g: Chebyshev,
    x_nodes: usize,
    gl_order: usize,
}

impl PopulationCriterion {
    pub fn new(template: &Template, noise: &NoiseModel, cfg: &QuadratureConfig) -> PopulationCriterion {
        let rule = cfg.x_rule(template);
        let values: Vec<f64> = rule.nodes.iter().map(|&x| template.eval(x)).collect();
        let (lo, hi) = template.value_range();
        let g = Chebyshev::fit(
            |y| {
                values
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&f, &w)| w * noise.phi2(y - f))
                    .sum()
            },
            lo,
            hi,
            1e-13,
        );
        PopulationCriterion {
            template: template.clone(),
            g,
            x_nodes: cfg.x_nodes,
            gl_order: cfg.gl_order,
        }
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let shift = wrap_unit(theta);
        let base = self.template.breakpoints();
        let mut breaks: Vec<f64> = base.clone();
        breaks.extend(base.iter().map(|&b| wrap_unit(b + shift)));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let rule = Rule::composite(&breaks, self.x_nodes, self.gl_order);
        rule.integrate(|t| self.g.eval(self.template.eval(t)) * self.template.eval(t - theta))
    }
}

/// `M(θ)` with the true shift at zero.
pub fn big_m(template: &Template, noise: &NoiseModel, theta: f64) -> f64 {
    PopulationCriterion::new(template, noise, &QuadratureConfig::default()).eval(theta)
}

/// Numerical probe that zero is a stationary point and the global maximum of `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMaxDiagnostic {
    /// Central difference `(M(h) - M(-h)) / 2h` at `h = 1e-4`.
    pub m_prime_at_0: f64,
    /// Grid maximizer of `M`, reduced to `[0, 1)`.
    pub grid_argmax_theta: f64,
    pub is_global_max_on_grid: bool,
    pub grid_points: usize,
    pub grid_start: f64,
}

const M_PRIME_STEP: f64 = 1e-4;

pub fn verify_local_max(template: &Template, noise: &NoiseModel, cfg: &QuadratureConfig) -> LocalMaxDiagnostic {
    verify_local_max_from(template, noise, cfg, 0.0)
}

/// [`verify_local_max`] on the grid `start + k / N`, `k = 0..N`.
pub fn verify_local_max_from(
    template: &Template,
    noise: &NoiseModel,
    cfg: &QuadratureConfig,
    start: f64,
) -> LocalMaxDiagnostic {
    let crit = PopulationCriterion::new(template, noise, cfg);
    let h = M_PRIME_STEP;
    let m_prime_at_0 = (crit.eval(h) - crit.eval(-h)) / (2.0 * h);
    let n = cfg.theta_grid;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|k| crit.eval(start + k as f64 / n as f64))
        .collect();
    let mut best = 0;
    for k in 1..n {
        if values[k] > values[best] {
            best = k;
        }
    }
    let grid_argmax_theta = wrap_unit(start + best as f64 / n as f64);
    let is_global_max_on_grid = crate::matcher::wrap_distance(grid_argmax_theta, 0.0) < 0.5 / n as f64;
    LocalMaxDiagnostic {
        m_prime_at_0,
        grid_argmax_theta,
        is_global_max_on_grid,
        grid_points: n,
        grid_start: start,
    }
}

/// Quadrature settings and error estimates attached to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureInfo {
    pub x_nodes: usize,
    pub gl_order: usize,
    pub z_panels: usize,
    pub z_order: usize,
    /// Scale of the tangent substitution `z = s tan(πu/2)`.
    pub z_scale: f64,
    /// `|M''(0) - M''(0)|` between this run and one at half the node counts.
    pub m_second_abs_err: Option<f64>,
    pub gamma_sq_abs_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub template: String,
    pub noise: NoiseModel,
    pub m_second: f64,
    pub gamma_sq: f64,
    /// `γ² / M''(0)²`, limiting variance of `√n (θ̂ - θ*)` for the rank estimator.
    pub avar_rank: f64,
    /// `σ² / ∫ f'²`, the same for the Pearson estimator.
    #[serde(with = "format::extended")]
    pub avar_pearson: f64,
    /// `avar_pearson / avar_rank`.
    #[serde(with = "format::extended")]
    pub are: f64,
    #[serde(with = "format::extended")]
    pub noise_variance: f64,
    pub deriv_energy: f64,
    pub quadrature: QuadratureInfo,
}

/// Full asymptotic report at the default node counts.
pub fn report(template: &Template, noise: &NoiseModel) -> Result<AsymptoticReport> {
    report_with(template, noise, &QuadratureConfig::default())
}

pub fn report_with(template: &Template, noise: &NoiseModel, cfg: &QuadratureConfig) -> Result<AsymptoticReport> {
    if template.is_constant() {
        return Err(Error::ConstantTemplate);
    }
    noise.validate()?;
    let m_second = m_second_at_star(template, noise, cfg);
    let gamma_sq = gamma_squared(template, noise, cfg);
    let (m_err, g_err) = if cfg.error_estimate {
        let coarse = cfg.halved();
        (
            Some((m_second - m_second_at_star(template, noise, &coarse)).abs()),
            Some((gamma_sq - gamma_squared(template, noise, &coarse)).abs()),
        )
    } else {
        (None, None)
    };
    let deriv_energy = template.deriv_energy();
    let noise_variance = noise.variance();
    let avar_rank = gamma_sq / (m_second * m_second);
    let avar_pearson = noise_variance / deriv_energy;
    let are = if avar_pearson.is_infinite() {
        f64::INFINITY
    } else {
        avar_pearson / avar_rank
    };
    Ok(AsymptoticReport {
        template: template.label().to_string(),
        noise: *noise,
        m_second,
        gamma_sq,
        avar_rank,
        avar_pearson,
        are,
        noise_variance,
        deriv_energy,
        quadrature: QuadratureInfo {
            x_nodes: cfg.x_nodes,
            gl_order: cfg.gl_order,
            z_panels: cfg.z_panels,
            z_order: cfg.z_order,
            z_scale: noise.scale,
            m_second_abs_err: m_err,
            gamma_sq_abs_err: g_err,
        },
    })
}

/// One cell of the efficiency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub template: String,
    pub noise: String,
    #[serde(with = "format::extended")]
    pub are: f64,
}

/// Asymptotic relative efficiency for templates A, B, C under standard
/// Gaussian, t₃ and Cauchy noise.
pub fn efficiency_table(cfg: &QuadratureConfig) -> Result<Vec<TableRow>> {
    let mut rows = Vec::with_capacity(9);
    for template in Template::builtins() {
        for family in NoiseFamily::ALL {
            let noise = NoiseModel::new(family, 1.0)?;
            let are = if noise.variance().is_infinite() {
                // the ratio is infinite whatever the rank-side integrals are
                f64::INFINITY
            } else {
                report_with(&template, &noise, cfg)?.are
            };
            rows.push(TableRow {
                template: template.label().to_string(),
                noise: family.table_label().into(),
                are,
            });
        }
    }
    Ok(rows)
}

/// CSV with header `template,noise,are`.
pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("template,noise,are\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.template, r.noise, fmt_num(r.are)));
    }
    out
}
