//! Composite Gauss–Legendre rules, including the rule used for expectations
//! over a unit-variance normal variable.

use serde::{Deserialize, Serialize};

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
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
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A set of weighted evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Composite Gauss–Legendre rule for ∫ₐᵇ g(x) dx.
    pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let (gx, gw) = gauss_legendre(order);
        let h = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(mid + 0.5 * h * x);
                weights.push(0.5 * h * w);
            }
        }
        Rule { nodes, weights }
    }

    /// Rule for E[g(T)] with T ~ Normal(center, 1), truncated to
    /// center ± `half_width` and normalized so the weights sum to one.
    pub fn normal_expectation(center: f64, spec: NormalQuadrature) -> Self {
        let mut rule = Rule::composite(
            center - spec.half_width,
            center + spec.half_width,
            spec.panels,
            spec.order,
        );
        for (w, t) in rule.weights.iter_mut().zip(&rule.nodes) {
            *w *= crate::normal::pdf(t - center);
        }
        let total: f64 = rule.weights.iter().sum();
        for w in &mut rule.weights {
            *w /= total;
        }
        rule
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Shape of a [`Rule::normal_expectation`] rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalQuadrature {
    pub panels: usize,
    pub order: usize,
    pub half_width: f64,
}

impl NormalQuadrature {
    /// Rule sized for rank probabilities among `m` tests.
    ///
    /// Each rank's integrand is a bump in t whose width shrinks like 1/√m, so
    /// the panel count grows like √m.
    pub fn for_tests(m: usize) -> Self {
        let panels = ((8.0 * (m as f64).sqrt()).ceil() as usize).max(64);
        NormalQuadrature { panels, order: 8, half_width: 10.0 }
    }

    pub fn nodes(&self) -> usize {
        self.panels * self.order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // exact through degree 15
        let i14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((i14 - 2.0 / 15.0).abs() < 1e-14);
        let i15: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(15)).sum();
        assert!(i15.abs() < 1e-14);
    }

    #[test]
    fn normal_expectation_moments() {
        let rule = Rule::normal_expectation(1.5, NormalQuadrature::for_tests(100));
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let mean = rule.integrate(|t| t);
        let var = rule.integrate(|t| (t - 1.5).powi(2));
        assert!((mean - 1.5).abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        let tail = rule.integrate(|t| if t > 1.5 { 1.0 } else { 0.0 });
        assert!((tail - 0.5).abs() < 1e-12);
    }
}
