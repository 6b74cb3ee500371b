//! Observation-sharing team on `[0,1]^2` with cost `u1 (1 - u2)`.
//!
//! Agent 1 sees `(y1, y2)` and plays `h_n(y1) h_n(y2)`, agent 2 sees `y2`
//! and plays `h_n(y2)`, where `h_n(y) = 1` iff `floor(2^n y)` is even. Each
//! agent's joint converges weakly, yet the cost is `0` along the sequence
//! and `1/8` under the product of the limits.
//!
//! All integrals are exact: `integral over A_n of y^p` is a finite sum over
//! dyadic cells, evaluated with power-sum closed forms.

use std::fmt;
use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest level for which reports are produced.
pub const MAX_LEVEL: u32 = 40;

fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn pow2(n: u32) -> BigRational {
    BigRational::from_integer(BigInt::one() << n as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DyadicStrategy {
    n: u32,
}

impl DyadicStrategy {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("dyadic level must be at least 1".into()));
        }
        Ok(Self { n })
    }

    pub fn level(&self) -> u32 {
        self.n
    }

    pub fn eval(&self, y: f64) -> Result<u8> {
        h_n_eval(self.n, y)
    }
}

/// `1` iff `floor(2^n y)` is even; `y = 1` belongs to `A_n`.
pub fn h_n_eval(n: u32, y: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(y));
    }
    if n == 0 {
        return Err(Error::InvalidSpec("dyadic level must be at least 1".into()));
    }
    if y == 1.0 {
        return Ok(1);
    }
    // Scaling by a power of two is exact in binary floating point.
    let cell = (y * 2f64.powi(n as i32)).floor();
    Ok(u8::from(cell % 2.0 == 0.0))
}

/// `sum_{k=0}^{count-1} k^j` for `j = 0..=max_j`, from the telescoping
/// identity `sum ((k+1)^{j+1} - k^{j+1}) = count^{j+1}`.
fn power_sums(count: &BigRational, max_j: usize) -> Vec<BigRational> {
    let mut binom = vec![vec![BigRational::one()]];
    for r in 1..=max_j + 1 {
        let prev = &binom[r - 1];
        let row: Vec<BigRational> = (0..=r)
            .map(|i| {
                let a = if i > 0 {
                    prev[i - 1].clone()
                } else {
                    BigRational::zero()
                };
                let b = if i < r { prev[i].clone() } else { BigRational::zero() };
                a + b
            })
            .collect();
        binom.push(row);
    }
    let mut sums: Vec<BigRational> = Vec::with_capacity(max_j + 1);
    let mut cpow = count.clone();
    for j in 0..=max_j {
        let mut s = cpow.clone();
        for (i, si) in sums.iter().enumerate() {
            s -= binom[j + 1][i].clone() * si;
        }
        sums.push(s / binom[j + 1][j].clone());
        cpow *= count;
    }
    sums
}

/// `integral over A_n of y^p dy` for `p = 0..=max_p`.
///
/// `A_n` is the union of `[2k/2^n, (2k+1)/2^n)` for `k < 2^{n-1}`, so the
/// integral is `sum_k ((2k+1)^{p+1} - (2k)^{p+1}) / ((p+1) 2^{n(p+1)})`.
pub fn a_n_moments(n: u32, max_p: usize) -> Result<Vec<BigRational>> {
    if n == 0 {
        return Err(Error::InvalidSpec("dyadic level must be at least 1".into()));
    }
    let count = pow2(n - 1);
    let sums = power_sums(&count, max_p);
    let scale = pow2(n);
    let mut out = Vec::with_capacity(max_p + 1);
    for p in 0..=max_p {
        // (2k+1)^{p+1} - (2k)^{p+1} = sum_{j<=p} C(p+1, j) 2^j k^j
        let mut total = BigRational::zero();
        let mut c = BigRational::one();
        for (j, s) in sums.iter().enumerate().take(p + 1) {
            total += c.clone() * pow2(j as u32) * s;
            c = c * int((p + 1 - j) as i64) / int(j as i64 + 1);
        }
        let denom = int(p as i64 + 1) * num_traits::pow(scale.clone(), p + 1);
        out.push(total / denom);
    }
    Ok(out)
}

/// Monomial `y1^a y2^b u1^c u2^d`. Actions are binary, so only whether
/// `c` and `d` are positive matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Monomial {
    pub y1: u32,
    pub y2: u32,
    pub u1: u32,
    pub u2: u32,
}

impl Monomial {
    pub const fn new(y1: u32, y2: u32, u1: u32, u2: u32) -> Self {
        Self { y1, y2, u1, u2 }
    }

    fn y_degree(&self) -> usize {
        self.y1.max(self.y2) as usize
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (name, e) in [("y1", self.y1), ("y2", self.y2), ("u1", self.u1), ("u2", self.u2)] {
            match e {
                0 => {}
                1 => parts.push(name.to_string()),
                _ => parts.push(format!("{name}^{e}")),
            }
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

/// Polynomial test function with rational coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub name: String,
    pub terms: Vec<(BigRational, Monomial)>,
}

impl TestFunction {
    pub fn monomial(m: Monomial) -> Self {
        Self {
            name: m.to_string(),
            terms: vec![(BigRational::one(), m)],
        }
    }

    /// The team cost `u1 (1 - u2)`.
    pub fn cost() -> Self {
        Self {
            name: "c".into(),
            terms: vec![
                (int(1), Monomial::new(0, 0, 1, 0)),
                (int(-1), Monomial::new(0, 0, 1, 1)),
            ],
        }
    }

    fn y_degree(&self) -> usize {
        self.terms.iter().map(|(_, m)| m.y_degree()).max().unwrap_or(0)
    }

    /// Depends only on `(y1, y2, u1)`.
    pub fn is_agent1(&self) -> bool {
        self.terms.iter().all(|(_, m)| m.u2 == 0)
    }

    /// Depends only on `(y2, u2)`.
    pub fn is_agent2(&self) -> bool {
        self.terms.iter().all(|(_, m)| m.y1 == 0 && m.u1 == 0)
    }
}

/// Exact `integral of g` under the level-`n` joint of `(y1, y2, u1, u2)`.
pub fn sequence_integral(g: &TestFunction, n: u32) -> Result<BigRational> {
    let m = a_n_moments(n, g.y_degree())?;
    let full = |p: u32| int(1) / int(p as i64 + 1);
    let mut total = BigRational::zero();
    for (coef, t) in &g.terms {
        // u1 = 1 forces h(y1) = h(y2) = 1 and hence u2 = 1.
        let v = if t.u1 > 0 {
            m[t.y1 as usize].clone() * &m[t.y2 as usize]
        } else if t.u2 > 0 {
            full(t.y1) * &m[t.y2 as usize]
        } else {
            full(t.y1) * full(t.y2)
        };
        total += coef.clone() * v;
    }
    Ok(total)
}

/// Exact `integral of g` under the product of the limit joints:
/// uniform observations, `P(u1 = 1) = 1/4`, `P(u2 = 1) = 1/2`, independent.
pub fn limit_integral(g: &TestFunction) -> BigRational {
    let mut total = BigRational::zero();
    for (coef, t) in &g.terms {
        let mut v = int(1) / int((t.y1 as i64 + 1) * (t.y2 as i64 + 1));
        if t.u1 > 0 {
            v /= int(4);
        }
        if t.u2 > 0 {
            v /= int(2);
        }
        total += coef.clone() * v;
    }
    total
}

/// Exact cost of the level-`n` profile.
pub fn sequence_cost(n: u32) -> Result<BigRational> {
    sequence_integral(&TestFunction::cost(), n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitSummary {
    pub cost: String,
    /// `(action, probability)` for agent 1 and agent 2.
    pub agent1: Vec<(u8, String)>,
    pub agent2: Vec<(u8, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Limit {
    pub cost: BigRational,
    pub agent1: Vec<(u8, BigRational)>,
    pub agent2: Vec<(u8, BigRational)>,
}

impl Limit {
    pub fn summary(&self) -> LimitSummary {
        let s = |v: &[(u8, BigRational)]| v.iter().map(|(a, p)| (*a, p.to_string())).collect();
        LimitSummary {
            cost: self.cost.to_string(),
            agent1: s(&self.agent1),
            agent2: s(&self.agent2),
        }
    }
}

pub fn limit_cost_and_marginals() -> Limit {
    let q = |a, b| BigRational::new(BigInt::from(a), BigInt::from(b));
    Limit {
        cost: limit_integral(&TestFunction::cost()),
        agent1: vec![(0, q(3, 4)), (1, q(1, 4))],
        agent2: vec![(0, q(1, 2)), (1, q(1, 2))],
    }
}

/// Every monomial of `y`-degree at most 3 per coordinate, multiplied by the
/// agent's action (functions of the observations alone have zero gap).
pub fn default_catalog() -> Vec<TestFunction> {
    let mut out = Vec::new();
    for a in 0..=3 {
        for b in 0..=3 {
            out.push(TestFunction::monomial(Monomial::new(a, b, 1, 0)));
        }
    }
    for b in 0..=3 {
        out.push(TestFunction::monomial(Monomial::new(0, b, 0, 1)));
    }
    out.push(TestFunction::monomial(Monomial::new(0, 0, 0, 0)));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLimitRow {
    pub n: u32,
    pub sequence_cost: BigRational,
    pub p_u1: BigRational,
    pub p_u2: BigRational,
    /// `|integral under level n - integral under the limit|` per test function.
    pub gaps: Vec<BigRational>,
    pub full_joint_gap: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLimitReport {
    pub functions: Vec<String>,
    pub rows: Vec<WeakLimitRow>,
}

/// Gaps between level-`n` and limit integrals for `n = 1..=n_max`. The
/// catalog may only contain per-agent test functions; the full-joint column
/// always uses the cost.
pub fn weak_limit_report(n_max: u32, catalog: &[TestFunction]) -> Result<WeakLimitReport> {
    if n_max == 0 || n_max > MAX_LEVEL {
        return Err(Error::InvalidSpec(format!("n_max must lie in 1..={MAX_LEVEL}")));
    }
    if let Some(g) = catalog.iter().find(|g| !g.is_agent1() && !g.is_agent2()) {
        return Err(Error::InvalidSpec(format!("{} mixes both agents' actions", g.name)));
    }
    let cost = TestFunction::cost();
    let p1 = TestFunction::monomial(Monomial::new(0, 0, 1, 0));
    let p2 = TestFunction::monomial(Monomial::new(0, 0, 0, 1));
    let limits: Vec<BigRational> = catalog.iter().map(limit_integral).collect();
    let cost_limit = limit_integral(&cost);
    let mut rows = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let gaps = catalog
            .iter()
            .zip(&limits)
            .map(|(g, l)| Ok((sequence_integral(g, n)? - l).abs()))
            .collect::<Result<Vec<_>>>()?;
        let sequence_cost = sequence_integral(&cost, n)?;
        rows.push(WeakLimitRow {
            n,
            full_joint_gap: (sequence_cost.clone() - &cost_limit).abs(),
            sequence_cost,
            p_u1: sequence_integral(&p1, n)?,
            p_u2: sequence_integral(&p2, n)?,
            gaps,
        });
    }
    Ok(WeakLimitReport {
        functions: catalog.iter().map(|g| g.name.clone()).collect(),
        rows,
    })
}

fn decimal(q: &BigRational) -> String {
    q.to_f64().map_or_else(|| q.to_string(), |v| v.to_string())
}

impl WeakLimitReport {
    /// `n,sequence_cost,p_u1,p_u2,gap_<g>...,full_joint_gap`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["n", "sequence_cost", "p_u1", "p_u2"].map(String::from).to_vec();
        header.extend(self.functions.iter().map(|f| format!("gap_{f}")));
        header.push("full_joint_gap".into());
        wr.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.n.to_string(),
                decimal(&r.sequence_cost),
                decimal(&r.p_u1),
                decimal(&r.p_u2),
            ];
            rec.extend(r.gaps.iter().map(decimal));
            rec.push(decimal(&r.full_joint_gap));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    /// Brute force over the dyadic cells of `[0,1]`: `h_n` is constant on each.
    fn cell_moment(n: u32, p: u32) -> BigRational {
        let cells = 1i64 << n;
        (0..cells)
            .filter(|k| k % 2 == 0)
            .map(|k| {
                (int(k + 1).pow(p as i32 + 1) - int(k).pow(p as i32 + 1))
                    / (int(p as i64 + 1) * int(cells).pow(p as i32 + 1))
            })
            .sum()
    }

    #[test]
    fn h_n_examples() {
        assert_eq!(h_n_eval(1, 0.3).unwrap(), 1);
        assert_eq!(h_n_eval(1, 0.7).unwrap(), 0);
        assert_eq!(h_n_eval(2, 1.0).unwrap(), 1);
        assert_eq!(h_n_eval(3, 0.0).unwrap(), 1);
        assert_eq!(h_n_eval(1, 1.5).unwrap_err(), Error::Domain(1.5));
        assert!(DyadicStrategy::new(0).is_err());
    }

    #[test]
    fn moments_match_cell_enumeration() {
        for n in 1..=10 {
            let m = a_n_moments(n, 4).unwrap();
            for p in 0..=4 {
                assert_eq!(m[p as usize], cell_moment(n, p), "n={n} p={p}");
            }
        }
    }

    #[test]
    fn first_moment_closed_form() {
        for n in 1..=40 {
            let m = a_n_moments(n, 1).unwrap();
            assert_eq!(m[0], q(1, 2));
            assert_eq!(m[1], q(1, 4) - int(1) / pow2(n + 2));
        }
    }

    #[test]
    fn sequence_cost_vanishes_and_limit_is_an_eighth() {
        for n in [1, 2, 12, 40] {
            assert!(sequence_cost(n).unwrap().is_zero());
        }
        let l = limit_cost_and_marginals();
        assert_eq!(l.cost, q(1, 8));
        assert_eq!(l.agent1, vec![(0, q(3, 4)), (1, q(1, 4))]);
        assert_eq!(l.agent2, vec![(0, q(1, 2)), (1, q(1, 2))]);
    }

    #[test]
    fn report_rows() {
        let r = weak_limit_report(12, &default_catalog()).unwrap();
        assert_eq!(r.rows.len(), 12);
        for row in &r.rows {
            assert!(row.sequence_cost.is_zero());
            assert_eq!(row.p_u1, q(1, 4));
            assert_eq!(row.p_u2, q(1, 2));
            assert_eq!(row.full_joint_gap, q(1, 8));
        }
        let i = r.functions.iter().position(|f| f == "y2*u2").unwrap();
        for row in &r.rows {
            assert_eq!(row.gaps[i], int(1) / pow2(row.n + 2));
        }
        let one = r.functions.iter().position(|f| f == "1").unwrap();
        assert!(r.rows.iter().all(|row| row.gaps[one].is_zero()));
    }

    #[test]
    fn per_agent_gaps_shrink() {
        let r = weak_limit_report(MAX_LEVEL, &default_catalog()).unwrap();
        for j in 0..r.functions.len() {
            for w in r.rows.windows(2) {
                assert!(w[1].gaps[j] <= w[0].gaps[j], "{} at n={}", r.functions[j], w[1].n);
            }
            assert!(r.rows.last().unwrap().gaps[j] < q(1, 1 << 40));
        }
    }

    #[test]
    fn report_guards() {
        assert!(weak_limit_report(0, &[]).is_err());
        assert!(weak_limit_report(41, &[]).is_err());
        assert!(weak_limit_report(3, &[TestFunction::cost()]).is_err());
    }

    #[test]
    fn csv_columns() {
        let r = weak_limit_report(2, &[TestFunction::monomial(Monomial::new(0, 1, 0, 1))]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "n,sequence_cost,p_u1,p_u2,gap_y2*u2,full_joint_gap");
        assert_eq!(lines[1], "1,0,0.25,0.5,0.125,0.125");
    }

    proptest! {
        #[test]
        fn h_n_is_indicator_of_a_n(n in 1u32..20, y in 0.0f64..1.0) {
            let k = (y * 2f64.powi(n as i32)).floor() as u64;
            let lo = k as f64 / 2f64.powi(n as i32);
            prop_assert!(lo <= y);
            prop_assert_eq!(h_n_eval(n, y).unwrap(), u8::from(k.is_multiple_of(2)));
        }

        #[test]
        fn complement_moments_add_up(n in 1u32..30, p in 0usize..6) {
            // A_n and its shift by 2^-n tile [0,1); the shift raises every moment.
            let m = a_n_moments(n, p).unwrap();
            let whole = int(1) / int(p as i64 + 1);
            let rest = whole - &m[p];
            prop_assert!(m[p] <= rest);
        }
    }
}
