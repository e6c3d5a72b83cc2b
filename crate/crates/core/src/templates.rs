//! One-periodic templates: the three built-in shapes and user-supplied
//! piecewise-linear functions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::Rule;

/// Reduces `x` to `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateKind {
    BuiltinA,
    BuiltinB,
    BuiltinC,
    /// Knots `(position, value)` with strictly increasing positions in `[0, 1)`;
    /// the last segment wraps around to the first knot shifted by one.
    PiecewiseLinear(Vec<(f64, f64)>),
}

/// A Lipschitz, one-periodic template function.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    kind: TemplateKind,
    lipschitz_bound: f64,
    kink_points: Vec<f64>,
    // pieces on which the template is smooth, for quadrature
    smooth_breaks: Vec<f64>,
    // per-segment slopes of a piecewise-linear template
    slopes: Vec<f64>,
    id: String,
}

// max |f'| for template C, attained at 4x - 2 = ±1/√5
const LIPSCHITZ_C: f64 = 24.0 * 16.0 / (25.0 * 2.236_067_977_499_79);

#[derive(Debug, Serialize, Deserialize)]
struct KnotsFile {
    knots: Vec<[f64; 2]>,
}

impl Template {
    pub fn builtin_a() -> Template {
        Template {
            kind: TemplateKind::BuiltinA,
            lipschitz_bound: 4.0,
            kink_points: vec![0.25, 0.5, 0.75],
            smooth_breaks: vec![0.25, 0.5, 0.75],
            slopes: Vec::new(),
            id: "A".into(),
        }
    }

    pub fn builtin_b() -> Template {
        let kinks = vec![0.2, 0.3, 0.4, 0.6, 0.7, 0.8];
        Template {
            kind: TemplateKind::BuiltinB,
            lipschitz_bound: 10.0,
            kink_points: kinks.clone(),
            smooth_breaks: kinks,
            slopes: Vec::new(),
            id: "B".into(),
        }
    }

    pub fn builtin_c() -> Template {
        Template {
            kind: TemplateKind::BuiltinC,
            lipschitz_bound: LIPSCHITZ_C,
            kink_points: Vec::new(),
            // C is only C² at the edges of its support
            smooth_breaks: vec![0.25, 0.75],
            slopes: Vec::new(),
            id: "C".into(),
        }
    }

    /// The three built-in templates in table order.
    pub fn builtins() -> [Template; 3] {
        [Template::builtin_a(), Template::builtin_b(), Template::builtin_c()]
    }

    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Template> {
        if knots.is_empty() {
            return Err(Error::InvalidTemplate("at least one knot is required".into()));
        }
        for &(p, v) in &knots {
            if !(p.is_finite() && v.is_finite()) {
                return Err(Error::InvalidTemplate(format!("non-finite knot ({p}, {v})")));
            }
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidTemplate(format!("knot position {p} outside [0, 1)")));
            }
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidTemplate(
                "knot positions must be strictly increasing".into(),
            ));
        }
        let k = knots.len();
        let slopes: Vec<f64> = (0..k)
            .map(|j| {
                let (p0, v0) = knots[j];
                let (p1, v1) = if j + 1 < k {
                    knots[j + 1]
                } else {
                    (knots[0].0 + 1.0, knots[0].1)
                };
                (v1 - v0) / (p1 - p0)
            })
            .collect();
        let lipschitz_bound = slopes.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let kink_points = (0..k)
            .filter(|&j| slopes[j] != slopes[(j + k - 1) % k])
            .map(|j| knots[j].0)
            .collect();
        let smooth_breaks = knots.iter().map(|&(p, _)| p).filter(|&p| p > 0.0).collect();
        let id = knots
            .iter()
            .map(|(p, v)| format!("{:016x}:{:016x}", p.to_bits(), v.to_bits()))
            .collect::<Vec<_>>()
            .join(",");
        Ok(Template {
            kind: TemplateKind::PiecewiseLinear(knots),
            lipschitz_bound,
            kink_points,
            smooth_breaks,
            slopes,
            id: format!("pwl[{id}]"),
        })
    }

    /// Parses `{"knots": [[position, value], ...]}`.
    pub fn from_json_str(json: &str) -> Result<Template> {
        let file: KnotsFile = serde_json::from_str(json)?;
        Template::piecewise_linear(file.knots.into_iter().map(|[p, v]| (p, v)).collect())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Template> {
        let text = std::fs::read_to_string(path)?;
        Template::from_json_str(&text)
    }

    /// `A`, `B`, `C` (any case) or a path to a knots JSON file.
    pub fn from_spec(spec: &str) -> Result<Template> {
        match spec {
            "A" | "a" => Ok(Template::builtin_a()),
            "B" | "b" => Ok(Template::builtin_b()),
            "C" | "c" => Ok(Template::builtin_c()),
            path => {
                let p = Path::new(path);
                if !p.exists() {
                    return Err(Error::InvalidTemplate(format!(
                        "unknown template `{path}` (expected A, B, C or a JSON file)"
                    )));
                }
                Template::from_json_file(p)
            }
        }
    }

    /// Serializes a piecewise-linear template back to its knots JSON.
    pub fn to_json(&self) -> Option<String> {
        match &self.kind {
            TemplateKind::PiecewiseLinear(knots) => {
                let file = KnotsFile {
                    knots: knots.iter().map(|&(p, v)| [p, v]).collect(),
                };
                serde_json::to_string(&file).ok()
            }
            _ => None,
        }
    }

    pub fn kind(&self) -> &TemplateKind {
        &self.kind
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn kink_points(&self) -> &[f64] {
        &self.kink_points
    }

    /// True when the template has no variation, so no shift is identifiable.
    pub fn is_constant(&self) -> bool {
        match self.kind {
            TemplateKind::PiecewiseLinear(_) => self.slopes.iter().all(|&s| s == 0.0),
            _ => false,
        }
    }

    /// True when the template is linear between consecutive breakpoints.
    pub fn is_piecewise_linear(&self) -> bool {
        !matches!(self.kind, TemplateKind::BuiltinC)
    }

    /// Stable identifier, used as a cache key.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Short label for reports: `A`, `B`, `C` or `custom`.
    pub fn label(&self) -> &str {
        match self.kind {
            TemplateKind::PiecewiseLinear(_) => "custom",
            _ => &self.id,
        }
    }

    /// `(min f, max f)`.
    pub fn value_range(&self) -> (f64, f64) {
        match &self.kind {
            TemplateKind::PiecewiseLinear(knots) => knots
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
                    (lo.min(v), hi.max(v))
                }),
            _ => (0.0, 1.0),
        }
    }

    /// `[0, ..., 1]`: the endpoints of the pieces on which the template is smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.smooth_breaks.len() + 2);
        b.push(0.0);
        b.extend(self.smooth_breaks.iter().copied());
        b.push(1.0);
        b
    }

    pub fn eval(&self, x: f64) -> f64 {
        let x = wrap_unit(x);
        match &self.kind {
            TemplateKind::BuiltinA => {
                if (0.25..0.5).contains(&x) {
                    4.0 * x - 1.0
                } else if (0.5..0.75).contains(&x) {
                    3.0 - 4.0 * x
                } else {
                    0.0
                }
            }
            TemplateKind::BuiltinB => {
                if (0.2..0.3).contains(&x) {
                    10.0 * x - 2.0
                } else if (0.3..0.4).contains(&x) {
                    4.0 - 10.0 * x
                } else if (0.6..0.7).contains(&x) {
                    10.0 * x - 6.0
                } else if (0.7..0.8).contains(&x) {
                    8.0 - 10.0 * x
                } else {
                    0.0
                }
            }
            TemplateKind::BuiltinC => {
                let u = 4.0 * x - 2.0;
                let base = 1.0 - u * u;
                if base > 0.0 {
                    base * base * base
                } else {
                    0.0
                }
            }
            TemplateKind::PiecewiseLinear(knots) => {
                let (j, offset) = self.locate(knots, x);
                knots[j].1 + self.slopes[j] * offset
            }
        }
    }

    /// Derivative of the template; right-hand derivative at kinks.
    pub fn eval_deriv(&self, x: f64) -> f64 {
        let x = wrap_unit(x);
        match &self.kind {
            TemplateKind::BuiltinA => {
                if (0.25..0.5).contains(&x) {
                    4.0
                } else if (0.5..0.75).contains(&x) {
                    -4.0
                } else {
                    0.0
                }
            }
            TemplateKind::BuiltinB => {
                if (0.2..0.3).contains(&x) || (0.6..0.7).contains(&x) {
                    10.0
                } else if (0.3..0.4).contains(&x) || (0.7..0.8).contains(&x) {
                    -10.0
                } else {
                    0.0
                }
            }
            TemplateKind::BuiltinC => {
                let u = 4.0 * x - 2.0;
                let base = 1.0 - u * u;
                if base > 0.0 {
                    -24.0 * u * base * base
                } else {
                    0.0
                }
            }
            TemplateKind::PiecewiseLinear(knots) => self.slopes[self.locate(knots, x).0],
        }
    }

    // segment index and offset from its start, for x in [0, 1)
    fn locate(&self, knots: &[(f64, f64)], x: f64) -> (usize, f64) {
        let idx = knots.partition_point(|&(p, _)| p <= x);
        if idx == 0 {
            let last = knots.len() - 1;
            (last, x + 1.0 - knots[last].0)
        } else {
            (idx - 1, x - knots[idx - 1].0)
        }
    }

    /// `∫₀¹ f'(x)² dx`.
    pub fn deriv_energy(&self) -> f64 {
        match &self.kind {
            TemplateKind::BuiltinA => 8.0,
            TemplateKind::BuiltinB => 40.0,
            TemplateKind::PiecewiseLinear(knots) => {
                let k = knots.len();
                (0..k)
                    .map(|j| {
                        let len = if j + 1 < k {
                            knots[j + 1].0 - knots[j].0
                        } else {
                            knots[0].0 + 1.0 - knots[j].0
                        };
                        self.slopes[j] * self.slopes[j] * len
                    })
                    .sum()
            }
            TemplateKind::BuiltinC => {
                let breaks = self.breakpoints();
                let mut nodes = 64;
                let mut prev = Rule::composite(&breaks, nodes, 8).integrate(|x| self.eval_deriv(x).powi(2));
                loop {
                    nodes *= 2;
                    let next = Rule::composite(&breaks, nodes, 8).integrate(|x| self.eval_deriv(x).powi(2));
                    if (next - prev).abs() <= 1e-12 * next.abs() || nodes > 1 << 16 {
                        return next;
                    }
                    prev = next;
                }
            }
        }
    }

    /// Template sampled at `j / n` for `j = 0..n`.
    pub fn sample_grid(&self, n: usize) -> Vec<f64> {
        (0..n).map(|j| self.eval(j as f64 / n as f64)).collect()
    }
}
