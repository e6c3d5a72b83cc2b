//! Quadrature building blocks shared by the noise and asymptotics modules.
//!
//! Finite intervals use composite Gauss–Legendre panels laid out on the
//! smooth pieces of the integrand, so no node ever sits on a breakpoint.
//! The real line is mapped onto `(-1, 1)` with `z = s * tan(pi * u / 2)`,
//! which turns Cauchy-like tails into bounded integrands.

use std::f64::consts::{FRAC_PI_2, PI};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if 2 * i + 1 == n {
            x = 0.0;
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let (pn, pn1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
    let d = n as f64 * (x * pn - pn1) / (x * x - 1.0);
    (pn, d)
}

/// A fixed quadrature rule: `sum_j weights[j] * f(nodes[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Composite Gauss–Legendre rule on `[breaks[0], breaks[last]]`.
    ///
    /// Roughly `total_nodes` nodes are spread over the pieces between
    /// consecutive breakpoints in proportion to their length; every piece
    /// gets at least one panel of `order` nodes.
    pub fn composite(breaks: &[f64], total_nodes: usize, order: usize) -> Rule {
        assert!(breaks.len() >= 2, "need at least one piece");
        let (gx, gw) = gauss_legendre(order);
        let span = breaks[breaks.len() - 1] - breaks[0];
        let total_panels = (total_nodes / order).max(1) as f64;
        let mut nodes = Vec::with_capacity(total_nodes + order * breaks.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for piece in breaks.windows(2) {
            let (a, b) = (piece[0], piece[1]);
            if b <= a {
                continue;
            }
            let panels = ((total_panels * (b - a) / span).round() as usize).max(1);
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let lo = a + p as f64 * h;
                let mid = lo + 0.5 * h;
                for (&x, &w) in gx.iter().zip(&gw) {
                    nodes.push(mid + 0.5 * h * x);
                    weights.push(0.5 * h * w);
                }
            }
        }
        Rule { nodes, weights }
    }

    /// Rule for `integral_{-inf}^{inf} f(z) dz` through `z = scale * tan(pi u / 2)`.
    ///
    /// The Jacobian is folded into the weights.
    pub fn real_line(scale: f64, panels: usize, order: usize) -> Rule {
        let base = Rule::composite(&[-1.0, 1.0], panels * order, order);
        let mut nodes = Vec::with_capacity(base.len());
        let mut weights = Vec::with_capacity(base.len());
        for (&u, &w) in base.nodes.iter().zip(&base.weights) {
            let angle = FRAC_PI_2 * u;
            let c = angle.cos();
            nodes.push(scale * angle.tan());
            weights.push(w * scale * FRAC_PI_2 / (c * c));
        }
        Rule { nodes, weights }
    }
}

const ADAPTIVE_ORDER: usize = 16;
const ADAPTIVE_MAX_PANELS: usize = 4096;

/// Integrates `f` over the real line, doubling the panel count of the
/// tangent-substituted Gauss–Legendre rule until successive estimates agree
/// to `abs_tol`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, scale: f64, abs_tol: f64) -> f64 {
    let mut panels = 4;
    let mut prev = integrate_tan_panels(&f, scale, panels);
    loop {
        panels *= 2;
        let next = integrate_tan_panels(&f, scale, panels);
        if (next - prev).abs() <= abs_tol || panels >= ADAPTIVE_MAX_PANELS {
            return next;
        }
        prev = next;
    }
}

fn integrate_tan_panels<F: Fn(f64) -> f64>(f: &F, scale: f64, panels: usize) -> f64 {
    thread_local! {
        static GL: (Vec<f64>, Vec<f64>) = gauss_legendre(ADAPTIVE_ORDER);
    }
    GL.with(|(gx, gw)| {
        let h = 2.0 / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = -1.0 + (p as f64 + 0.5) * h;
            let mut panel = 0.0;
            for (&x, &w) in gx.iter().zip(gw) {
                let angle = FRAC_PI_2 * (mid + 0.5 * h * x);
                let c = angle.cos();
                let jac = scale * FRAC_PI_2 / (c * c);
                panel += w * f(scale * angle.tan()) * jac;
            }
            total += 0.5 * h * panel;
        }
        total
    })
}

/// Barycentric Chebyshev interpolant on `[a, b]` (points of the second kind).
#[derive(Debug, Clone)]
pub struct Chebyshev {
    a: f64,
    b: f64,
    points: Vec<f64>,
    values: Vec<f64>,
}

impl Chebyshev {
    /// Fits `f` on `[a, b]`, doubling the degree until the interpolant
    /// predicts the newly added points to within `abs_tol`.
    pub fn fit<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Chebyshev {
        if b - a <= 0.0 {
            let v = f(a);
            return Chebyshev {
                a,
                b: a,
                points: vec![a],
                values: vec![v],
            };
        }
        let mut degree = 16;
        let mut cheb = Chebyshev::sample(&mut f, a, b, degree);
        loop {
            let finer_degree = degree * 2;
            let mut points = Vec::with_capacity(finer_degree + 1);
            let mut values = Vec::with_capacity(finer_degree + 1);
            let mut max_err: f64 = 0.0;
            for j in 0..=finer_degree {
                let x = cheb_point(a, b, j, finer_degree);
                let v = if j % 2 == 0 {
                    cheb.values[j / 2]
                } else {
                    let fx = f(x);
                    max_err = max_err.max((cheb.eval(x) - fx).abs());
                    fx
                };
                points.push(x);
                values.push(v);
            }
            cheb = Chebyshev { a, b, points, values };
            degree = finer_degree;
            if max_err <= abs_tol || degree >= 4096 {
                return cheb;
            }
        }
    }

    fn sample<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, degree: usize) -> Chebyshev {
        let points: Vec<f64> = (0..=degree).map(|j| cheb_point(a, b, j, degree)).collect();
        let values = points.iter().map(|&x| f(x)).collect();
        Chebyshev { a, b, points, values }
    }

    pub fn degree(&self) -> usize {
        self.points.len() - 1
    }

    /// Evaluates the interpolant; arguments are clamped to `[a, b]`.
    pub fn eval(&self, x: f64) -> f64 {
        if self.points.len() == 1 {
            return self.values[0];
        }
        let x = x.clamp(self.a, self.b);
        let last = self.points.len() - 1;
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (&p, &v)) in self.points.iter().zip(&self.values).enumerate() {
            let d = x - p;
            if d == 0.0 {
                return v;
            }
            let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == last {
                w *= 0.5;
            }
            let t = w / d;
            num += t * v;
            den += t;
        }
        num / den
    }
}

fn cheb_point(a: f64, b: f64, j: usize, degree: usize) -> f64 {
    let t = (PI * j as f64 / degree as f64).cos();
    0.5 * (a + b) + 0.5 * (b - a) * t
}
