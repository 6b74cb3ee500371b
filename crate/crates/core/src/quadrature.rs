//! Gauss rules and breakpoint-aligned composite rules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a one-dimensional rule.
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

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Family {
    Hermite,
    Legendre,
}

impl Family {
    fn beta(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            Family::Hermite => k,
            Family::Legendre => k * k / (4.0 * k * k - 1.0),
        }
    }

    fn mu0(self) -> f64 {
        match self {
            Family::Hermite => 1.0,
            Family::Legendre => 2.0,
        }
    }
}

/// Golub-Welsch nodes, one Newton polish on the monic recurrence, then
/// Christoffel weights from the orthonormal recurrence.
fn compute(family: Family, n: usize) -> Rule {
    assert!(n >= 1, "rule needs at least one node");
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            family.beta(i.max(j)).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jac).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    for x in nodes.iter_mut() {
        for _ in 0..2 {
            let (mut p0, mut p1, mut d0, mut d1) = (0.0, 1.0, 0.0, 0.0);
            for k in 0..n {
                let b = if k == 0 { 0.0 } else { family.beta(k) };
                let p2 = *x * p1 - b * p0;
                let d2 = p1 + *x * d1 - b * d0;
                p0 = p1;
                p1 = p2;
                d0 = d1;
                d1 = d2;
                let s = p1.abs().max(1.0);
                if s > 1e100 {
                    p0 /= s;
                    p1 /= s;
                    d0 /= s;
                    d1 /= s;
                }
            }
            if d1 != 0.0 {
                let step = p1 / d1;
                if step.is_finite() && step.abs() < 1e-6 * (1.0 + x.abs()) {
                    *x -= step;
                }
            }
        }
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let mut q0 = 0.0;
            let mut q1 = 1.0 / family.mu0().sqrt();
            let mut s = q1 * q1;
            for k in 0..n - 1 {
                let bk = if k == 0 { 0.0 } else { family.beta(k).sqrt() };
                let q2 = (x * q1 - bk * q0) / family.beta(k + 1).sqrt();
                q0 = q1;
                q1 = q2;
                s += q1 * q1;
            }
            1.0 / s
        })
        .collect();
    Rule { nodes, weights }
}

fn cached(family: Family, n: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<(Family, usize), Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().expect("rule cache").get(&(family, n)) {
        return Arc::clone(r);
    }
    let rule = Arc::new(compute(family, n));
    cache.lock().expect("rule cache").insert((family, n), Arc::clone(&rule));
    rule
}

/// Gauss-Hermite rule for expectations under N(0, 1); weights sum to 1.
pub fn gauss_hermite(n: usize) -> Arc<Rule> {
    cached(Family::Hermite, n)
}

/// Gauss-Legendre rule on [-1, 1]; weights sum to 2.
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    cached(Family::Legendre, n)
}

/// Gauss-Legendre nodes per segment used by composite rules at a given order.
pub fn per_segment_nodes(order: usize) -> usize {
    (order / 16).max(2)
}

/// Sorted, deduplicated breakpoints on `[lo, hi]`: the endpoints, every
/// `extra` point strictly inside, and every `anchor + m * step` inside.
pub fn breakpoints(lo: f64, hi: f64, anchor: f64, step: f64, extra: &[f64]) -> Vec<f64> {
    let mut b = vec![lo, hi];
    b.extend(extra.iter().copied().filter(|x| *x > lo && *x < hi));
    if step > 0.0 {
        let m0 = ((lo - anchor) / step).ceil() as i64;
        let m1 = ((hi - anchor) / step).floor() as i64;
        b.extend(
            (m0..=m1)
                .map(|m| anchor + m as f64 * step)
                .filter(|x| *x > lo && *x < hi),
        );
    }
    b.sort_by(f64::total_cmp);
    let scale = (hi - lo).abs().max(1.0);
    b.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * scale);
    b
}

/// Composite Gauss-Legendre rule with Lebesgue weights over consecutive
/// breakpoints.
pub fn composite(breaks: &[f64], per_segment: usize) -> Rule {
    let gl = gauss_legendre(per_segment);
    let mut nodes = Vec::with_capacity(breaks.len().saturating_sub(1) * per_segment);
    let mut weights = Vec::with_capacity(nodes.capacity());
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, wt) in gl.nodes.iter().zip(&gl.weights) {
            nodes.push(mid + half * x);
            weights.push(half * wt);
        }
    }
    Rule { nodes, weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn double_factorial_odd(k: u32) -> f64 {
        (1..=k).step_by(2).map(f64::from).product()
    }

    #[test]
    fn hermite_weights_sum_to_one() {
        for n in [1, 2, 5, 16, 64, 128] {
            let r = gauss_hermite(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn hermite_moments_exact() {
        let r = gauss_hermite(32);
        for p in 0..=20u32 {
            let got = r.integrate(|x| x.powi(p as i32));
            let want = if p % 2 == 1 {
                0.0
            } else {
                double_factorial_odd(p.saturating_sub(1))
            };
            // Odd moments cancel; compare against the size of the even neighbour.
            let scale = double_factorial_odd((p + p % 2).saturating_sub(1));
            assert!((got - want).abs() <= 1e-12 * scale, "p={p} got={got} want={want}");
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(4);
        assert!((r.integrate(|x| x.powi(6)) - 2.0 / 7.0).abs() < 1e-15);
        assert!((r.integrate(|x| x.powi(7))).abs() < 1e-15);
    }

    #[test]
    fn composite_rule_respects_breakpoints() {
        let b = breakpoints(-1.0, 1.0, 0.0, 0.5, &[0.1]);
        assert_eq!(b, vec![-1.0, -0.5, 0.0, 0.1, 0.5, 1.0]);
        let r = composite(&b, 2);
        // Step function integrates exactly when its jump is a breakpoint.
        let v = r.integrate(|x| if x < 0.1 { 1.0 } else { 3.0 });
        assert!((v - (1.1 + 3.0 * 0.9)).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn composite_is_exact_for_cubics(a in -5.0f64..0.0, w in 0.1f64..5.0, c in -2.0f64..2.0) {
            let b = breakpoints(a, a + w, 0.0, 0.7, &[]);
            let r = composite(&b, 2);
            let f = |x: f64| c * x * x * x - x + 1.0;
            let prim = |x: f64| c * x.powi(4) / 4.0 - x * x / 2.0 + x;
            let want = prim(a + w) - prim(a);
            prop_assert!((r.integrate(f) - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }
}
