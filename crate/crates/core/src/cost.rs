//! Serializable cost expressions.
//!
//! A [`CostExpr`] is a tree over affine maps of declared variables. It is
//! compiled against a flat variable layout into a [`Compiled`] evaluator that
//! supports point evaluation and interval bounds over boxes.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Variable reference. `State { t: 1 }` is the primitive initial state;
/// later states are eliminated by unrolling the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Var {
    State { t: usize },
    ProcessNoise { t: usize },
    Obs { agent: usize, time: usize },
    Act { agent: usize, time: usize },
}

impl std::str::FromStr for Var {
    type Err = Error;

    /// Inverse of `Display`: `x1`, `w0_2`, `y1_1`, `u2_2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("cannot parse variable `{s}`"));
        let num = |t: &str| t.parse::<usize>().ok().filter(|v| *v >= 1);
        let pair = |t: &str| {
            let (a, b) = t.split_once('_')?;
            Some((num(a)?, num(b)?))
        };
        if let Some(t) = s.strip_prefix("w0_") {
            return num(t).map(|t| Var::ProcessNoise { t }).ok_or_else(bad);
        }
        match s.split_at_checked(1) {
            Some(("x", t)) => num(t).map(|t| Var::State { t }),
            Some(("y", t)) => pair(t).map(|(agent, time)| Var::Obs { agent, time }),
            Some(("u", t)) => pair(t).map(|(agent, time)| Var::Act { agent, time }),
            _ => None,
        }
        .ok_or_else(bad)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::State { t } => write!(f, "x{t}"),
            Var::ProcessNoise { t } => write!(f, "w0_{t}"),
            Var::Obs { agent, time } => write!(f, "y{agent}_{time}"),
            Var::Act { agent, time } => write!(f, "u{agent}_{time}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTerm {
    pub var: Var,
    /// `out x dim(var)` coefficient matrix.
    pub coeff: Matrix,
}

/// `offset + sum_k coeff_k * var_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    #[serde(default)]
    pub terms: Vec<AffineTerm>,
    pub offset: Vec<f64>,
}

impl Affine {
    pub fn zero(dim: usize) -> Self {
        Self {
            terms: Vec::new(),
            offset: vec![0.0; dim],
        }
    }

    pub fn constant(offset: Vec<f64>) -> Self {
        Self {
            terms: Vec::new(),
            offset,
        }
    }

    /// Identity map of a `dim`-dimensional variable.
    pub fn var(v: Var, dim: usize) -> Self {
        Self::zero(dim).plus(v, linalg::identity(dim))
    }

    /// Scalar `s * v` for a one-dimensional variable.
    pub fn scaled(v: Var, s: f64) -> Self {
        Self::zero(1).plus(v, vec![vec![s]])
    }

    pub fn plus(mut self, v: Var, coeff: Matrix) -> Self {
        self.terms.push(AffineTerm { var: v, coeff });
        self
    }

    pub fn plus_scaled(self, v: Var, s: f64) -> Self {
        let d = self.dim();
        self.plus(v, linalg::scaled_identity(d, s))
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Self {
        self.offset = offset;
        self
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.terms.iter().map(|t| t.var).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.coeff.iter().flatten().all(|c| *c == 0.0))
    }

    /// Sum of all coefficient blocks attached to `v`.
    pub fn coeff_of(&self, v: &Var) -> Option<Matrix> {
        let mut acc: Option<Matrix> = None;
        for t in self.terms.iter().filter(|t| t.var == *v) {
            acc = Some(match acc {
                None => t.coeff.clone(),
                Some(mut a) => {
                    for (ra, rb) in a.iter_mut().zip(&t.coeff) {
                        for (x, y) in ra.iter_mut().zip(rb) {
                            *x += y;
                        }
                    }
                    a
                }
            });
        }
        acc
    }

    /// Merges duplicate variables and drops all-zero blocks.
    pub fn normalized(&self) -> Self {
        let mut out = Self::constant(self.offset.clone());
        let mut seen = BTreeSet::new();
        for t in &self.terms {
            if seen.insert(t.var) {
                let c = self.coeff_of(&t.var).expect("present");
                if c.iter().flatten().any(|x| *x != 0.0) {
                    out.terms.push(AffineTerm { var: t.var, coeff: c });
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Affine) -> Result<Affine> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "adding affine maps of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        for (a, b) in out.offset.iter_mut().zip(&other.offset) {
            *a += b;
        }
        Ok(out.normalized())
    }

    /// Left-multiplies by `m` (`rows x dim`).
    pub fn premultiply(&self, m: &Matrix) -> Affine {
        Affine {
            terms: self
                .terms
                .iter()
                .map(|t| AffineTerm {
                    var: t.var,
                    coeff: linalg::matmul(m, &t.coeff),
                })
                .collect(),
            offset: linalg::matvec(m, &self.offset),
        }
    }

    /// Replaces every variable for which `f` returns a map.
    pub fn substitute(&self, f: &dyn Fn(&Var) -> Option<Affine>) -> Result<Affine> {
        let mut out = Affine::constant(self.offset.clone());
        for t in &self.terms {
            match f(&t.var) {
                None => out.terms.push(t.clone()),
                Some(rep) => {
                    let cols = t.coeff.first().map_or(0, Vec::len);
                    if rep.dim() != cols {
                        return Err(Error::DimensionMismatch(format!(
                            "substituting {} of dimension {} into a block with {} columns",
                            t.var,
                            rep.dim(),
                            cols
                        )));
                    }
                    out = out.add(&rep.premultiply(&t.coeff))?;
                }
            }
        }
        Ok(out.normalized())
    }

    pub fn check_shapes(&self, dim_of: &dyn Fn(&Var) -> Option<usize>) -> Result<()> {
        for t in &self.terms {
            let d = dim_of(&t.var).ok_or_else(|| Error::InvalidSpec(format!("undeclared variable {}", t.var)))?;
            let (r, c) = linalg::shape(&t.coeff)?;
            if r != self.dim() || c != d {
                return Err(Error::DimensionMismatch(format!(
                    "coefficient of {} is {r}x{c}, expected {}x{d}",
                    t.var,
                    self.dim()
                )));
            }
        }
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

impl fmt::Display for Affine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        for t in &self.terms {
            let scalar = t.coeff.len() == 1 && t.coeff[0].len() == 1;
            if scalar {
                let c = t.coeff[0][0];
                parts.push(match c {
                    1.0 => format!("{}", t.var),
                    -1.0 => format!("-{}", t.var),
                    c => format!("{}*{}", fmt_num(c), t.var),
                });
            } else {
                parts.push(format!("{:?}*{}", t.coeff, t.var));
            }
        }
        if self.offset.iter().any(|o| *o != 0.0) || parts.is_empty() {
            if self.offset.len() == 1 {
                parts.push(fmt_num(self.offset[0]));
            } else {
                parts.push(format!("{:?}", self.offset));
            }
        }
        let s = parts.join(" + ").replace("+ -", "- ");
        f.write_str(&s)
    }
}

/// Cost expression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum CostExpr {
    Constant {
        value: f64,
    },
    /// Scalar affine map.
    Affine {
        map: Affine,
    },
    /// `arg' W arg` with `W` positive definite.
    Quadratic {
        arg: Affine,
        weight: Matrix,
    },
    Exp {
        arg: Box<CostExpr>,
    },
    Sum {
        terms: Vec<CostExpr>,
    },
    Product {
        factors: Vec<CostExpr>,
    },
}

impl CostExpr {
    pub fn constant(value: f64) -> Self {
        CostExpr::Constant { value }
    }

    pub fn linear(map: Affine) -> Self {
        CostExpr::Affine { map }
    }

    pub fn square(arg: Affine) -> Self {
        let d = arg.dim();
        CostExpr::Quadratic {
            arg,
            weight: linalg::identity(d),
        }
    }

    pub fn weighted(arg: Affine, weight: Matrix) -> Self {
        CostExpr::Quadratic { arg, weight }
    }

    pub fn exp(arg: CostExpr) -> Self {
        CostExpr::Exp { arg: Box::new(arg) }
    }

    pub fn sum(terms: Vec<CostExpr>) -> Self {
        CostExpr::Sum { terms }
    }

    pub fn product(factors: Vec<CostExpr>) -> Self {
        CostExpr::Product { factors }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            CostExpr::Constant { .. } => {}
            CostExpr::Affine { map } => out.extend(map.vars()),
            CostExpr::Quadratic { arg, .. } => out.extend(arg.vars()),
            CostExpr::Exp { arg } => arg.collect_vars(out),
            CostExpr::Sum { terms: xs } | CostExpr::Product { factors: xs } => {
                xs.iter().for_each(|x| x.collect_vars(out))
            }
        }
    }

    /// Polynomial degree, or `None` when an exponential depends on a variable.
    pub fn degree(&self) -> Option<u32> {
        match self {
            CostExpr::Constant { .. } => Some(0),
            CostExpr::Affine { map } => Some(u32::from(!map.is_constant())),
            CostExpr::Quadratic { arg, .. } => Some(if arg.is_constant() { 0 } else { 2 }),
            CostExpr::Exp { arg } => match arg.degree() {
                Some(0) => Some(0),
                _ => None,
            },
            CostExpr::Sum { terms } => terms.iter().try_fold(0, |m, t| t.degree().map(|d| m.max(d))),
            CostExpr::Product { factors } => factors.iter().try_fold(0, |s, t| t.degree().map(|d| s + d)),
        }
    }

    /// Syntactic nonnegativity (sufficient, not necessary).
    pub fn is_nonnegative(&self) -> bool {
        match self {
            CostExpr::Constant { value } => *value >= 0.0,
            CostExpr::Affine { map } => map.is_constant() && map.offset.iter().all(|o| *o >= 0.0),
            CostExpr::Quadratic { .. } | CostExpr::Exp { .. } => true,
            CostExpr::Sum { terms } => terms.iter().all(CostExpr::is_nonnegative),
            CostExpr::Product { factors } => factors.iter().all(CostExpr::is_nonnegative),
        }
    }

    /// Top-level summands with nested sums flattened.
    pub fn summands(&self) -> Vec<&CostExpr> {
        match self {
            CostExpr::Sum { terms } => terms.iter().flat_map(CostExpr::summands).collect(),
            other => vec![other],
        }
    }

    pub fn substitute(&self, f: &dyn Fn(&Var) -> Option<Affine>) -> Result<CostExpr> {
        Ok(match self {
            CostExpr::Constant { value } => CostExpr::Constant { value: *value },
            CostExpr::Affine { map } => CostExpr::Affine {
                map: map.substitute(f)?,
            },
            CostExpr::Quadratic { arg, weight } => CostExpr::Quadratic {
                arg: arg.substitute(f)?,
                weight: weight.clone(),
            },
            CostExpr::Exp { arg } => CostExpr::exp(arg.substitute(f)?),
            CostExpr::Sum { terms } => CostExpr::sum(terms.iter().map(|t| t.substitute(f)).collect::<Result<_>>()?),
            CostExpr::Product { factors } => {
                CostExpr::product(factors.iter().map(|t| t.substitute(f)).collect::<Result<_>>()?)
            }
        })
    }

    /// Checks leaf shapes and that every quadratic weight is positive definite.
    pub fn validate(&self, dim_of: &dyn Fn(&Var) -> Option<usize>) -> Result<()> {
        match self {
            CostExpr::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidSpec("non-finite constant in cost".into()));
                }
            }
            CostExpr::Affine { map } => {
                if map.dim() != 1 {
                    return Err(Error::DimensionMismatch("affine cost leaves must be scalar".into()));
                }
                map.check_shapes(dim_of)?;
            }
            CostExpr::Quadratic { arg, weight } => {
                arg.check_shapes(dim_of)?;
                let (r, c) = linalg::shape(weight)?;
                if r != arg.dim() || c != arg.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "quadratic weight is {r}x{c} for an argument of dimension {}",
                        arg.dim()
                    )));
                }
                if !linalg::is_positive_definite(weight) {
                    return Err(Error::InvalidSpec("quadratic weight must be positive definite".into()));
                }
            }
            CostExpr::Exp { arg } => arg.validate(dim_of)?,
            CostExpr::Sum { terms: xs } | CostExpr::Product { factors: xs } => {
                if xs.is_empty() {
                    return Err(Error::InvalidSpec("empty sum or product in cost".into()));
                }
                for x in xs {
                    x.validate(dim_of)?;
                }
            }
        }
        Ok(())
    }

    /// Compiles against a layout mapping each variable to `(start, len)`.
    pub fn compile(&self, slot: &dyn Fn(&Var) -> Option<(usize, usize)>) -> Result<Compiled> {
        Ok(Compiled {
            root: compile_node(self, slot)?,
        })
    }
}

impl fmt::Display for CostExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostExpr::Constant { value } => write!(f, "{value}"),
            CostExpr::Affine { map } => write!(f, "{map}"),
            CostExpr::Quadratic { arg, weight } => {
                if weight.len() == 1 {
                    let w = weight[0][0];
                    if w == 1.0 {
                        write!(f, "({arg})^2")
                    } else {
                        write!(f, "{w}*({arg})^2")
                    }
                } else {
                    write!(f, "|{arg}|^2_{weight:?}")
                }
            }
            CostExpr::Exp { arg } => write!(f, "exp({arg})"),
            CostExpr::Sum { terms } => {
                let s: Vec<String> = terms.iter().map(ToString::to_string).collect();
                write!(f, "{}", s.join(" + "))
            }
            CostExpr::Product { factors } => {
                let s: Vec<String> = factors
                    .iter()
                    .map(|x| match x {
                        CostExpr::Sum { .. } => format!("({x})"),
                        _ => x.to_string(),
                    })
                    .collect();
                write!(f, "{}", s.join(" * "))
            }
        }
    }
}

/// Affine map lowered onto a flat input vector.
#[derive(Debug, Clone)]
pub struct CAffine {
    out: usize,
    offset: Vec<f64>,
    blocks: Vec<(usize, usize, Vec<f64>)>,
}

impl CAffine {
    pub fn compile(a: &Affine, slot: &dyn Fn(&Var) -> Option<(usize, usize)>) -> Result<Self> {
        let out = a.dim();
        let mut blocks = Vec::new();
        for t in &a.normalized().terms {
            let (start, len) =
                slot(&t.var).ok_or_else(|| Error::InvalidSpec(format!("undeclared variable {}", t.var)))?;
            let (r, c) = linalg::shape(&t.coeff)?;
            if r != out || c != len {
                return Err(Error::DimensionMismatch(format!(
                    "coefficient of {} is {r}x{c}, expected {out}x{len}",
                    t.var
                )));
            }
            blocks.push((start, len, t.coeff.iter().flatten().copied().collect()));
        }
        Ok(Self {
            out,
            offset: a.offset.clone(),
            blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.out
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[..self.out].copy_from_slice(&self.offset);
        for (start, len, m) in &self.blocks {
            let xs = &x[*start..*start + *len];
            for (i, o) in out[..self.out].iter_mut().enumerate() {
                let row = &m[i * len..(i + 1) * len];
                *o += row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    pub fn eval_scalar(&self, x: &[f64]) -> f64 {
        let mut s = self.offset[0];
        for (start, len, m) in &self.blocks {
            for j in 0..*len {
                s += m[j] * x[start + j];
            }
        }
        s
    }

    pub fn interval_into(&self, lo: &[f64], hi: &[f64], out: &mut [(f64, f64)]) {
        for (i, o) in out[..self.out].iter_mut().enumerate() {
            let mut l = self.offset[i];
            let mut h = self.offset[i];
            for (start, len, m) in &self.blocks {
                for j in 0..*len {
                    let c = m[i * len + j];
                    let (a, b) = (c * lo[start + j], c * hi[start + j]);
                    l += a.min(b);
                    h += a.max(b);
                }
            }
            *o = (l, h);
        }
    }
}

const MAX_QUAD_DIM: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Lin(CAffine),
    Quad {
        arg: CAffine,
        w: Vec<f64>,
        diagonal: bool,
        eig: (f64, f64),
    },
    Exp(Box<Node>),
    Sum(Vec<Node>),
    Prod(Vec<Node>),
}

fn compile_node(e: &CostExpr, slot: &dyn Fn(&Var) -> Option<(usize, usize)>) -> Result<Node> {
    Ok(match e {
        CostExpr::Constant { value } => Node::Const(*value),
        CostExpr::Affine { map } => {
            if map.dim() != 1 {
                return Err(Error::DimensionMismatch("affine cost leaves must be scalar".into()));
            }
            Node::Lin(CAffine::compile(map, slot)?)
        }
        CostExpr::Quadratic { arg, weight } => {
            let d = arg.dim();
            if d > MAX_QUAD_DIM {
                return Err(Error::DimensionMismatch(format!(
                    "quadratic argument of dimension {d} exceeds {MAX_QUAD_DIM}"
                )));
            }
            let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || weight[i][j] == 0.0));
            let ev = linalg::sym_eigenvalues(weight);
            Node::Quad {
                arg: CAffine::compile(arg, slot)?,
                w: weight.iter().flatten().copied().collect(),
                diagonal,
                eig: (ev[0], ev[d - 1]),
            }
        }
        CostExpr::Exp { arg } => Node::Exp(Box::new(compile_node(arg, slot)?)),
        CostExpr::Sum { terms } => Node::Sum(terms.iter().map(|t| compile_node(t, slot)).collect::<Result<_>>()?),
        CostExpr::Product { factors } => {
            Node::Prod(factors.iter().map(|t| compile_node(t, slot)).collect::<Result<_>>()?)
        }
    })
}

fn sq_interval(l: f64, h: f64) -> (f64, f64) {
    if l <= 0.0 && h >= 0.0 {
        (0.0, (l * l).max(h * h))
    } else {
        let (a, b) = (l * l, h * h);
        (a.min(b), a.max(b))
    }
}

fn mul_interval(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let c = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Lin(a) => a.eval_scalar(x),
            Node::Quad { arg, w, diagonal, .. } => {
                let d = arg.dim();
                if d == 1 {
                    let v = arg.eval_scalar(x);
                    return w[0] * v * v;
                }
                let mut buf = [0.0f64; MAX_QUAD_DIM];
                arg.eval_into(x, &mut buf);
                let v = &buf[..d];
                if *diagonal {
                    (0..d).map(|i| w[i * d + i] * v[i] * v[i]).sum()
                } else {
                    let mut s = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            s += v[i] * w[i * d + j] * v[j];
                        }
                    }
                    s
                }
            }
            Node::Exp(a) => a.eval(x).exp(),
            Node::Sum(xs) => xs.iter().map(|n| n.eval(x)).sum(),
            Node::Prod(xs) => xs.iter().map(|n| n.eval(x)).product(),
        }
    }

    fn interval(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        match self {
            Node::Const(c) => (*c, *c),
            Node::Lin(a) => {
                let mut o = [(0.0, 0.0)];
                a.interval_into(lo, hi, &mut o);
                o[0]
            }
            Node::Quad {
                arg, w, diagonal, eig, ..
            } => {
                let d = arg.dim();
                let mut buf = [(0.0f64, 0.0f64); MAX_QUAD_DIM];
                arg.interval_into(lo, hi, &mut buf);
                let sq: Vec<(f64, f64)> = buf[..d].iter().map(|(l, h)| sq_interval(*l, *h)).collect();
                if *diagonal {
                    sq.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, (l, h))| {
                        (a + w[i * d + i] * l, b + w[i * d + i] * h)
                    })
                } else {
                    let sl: f64 = sq.iter().map(|p| p.0).sum();
                    let sh: f64 = sq.iter().map(|p| p.1).sum();
                    (eig.0 * sl, eig.1 * sh)
                }
            }
            Node::Exp(a) => {
                let (l, h) = a.interval(lo, hi);
                (l.exp(), h.exp())
            }
            Node::Sum(xs) => xs.iter().fold((0.0, 0.0), |(a, b), n| {
                let (l, h) = n.interval(lo, hi);
                (a + l, b + h)
            }),
            Node::Prod(xs) => xs
                .iter()
                .fold((1.0, 1.0), |acc, n| mul_interval(acc, n.interval(lo, hi))),
        }
    }
}

/// Cost expression lowered onto a flat variable vector.
#[derive(Debug, Clone)]
pub struct Compiled {
    root: Node,
}

impl Compiled {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.root.eval(x)
    }

    /// Enclosure of the expression over the box `[lo, hi]`.
    pub fn interval(&self, lo: &[f64], hi: &[f64]) -> (f64, f64) {
        self.root.interval(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const U1: Var = Var::Act { agent: 1, time: 1 };
    const Y1: Var = Var::Obs { agent: 1, time: 1 };

    #[test]
    fn variables_parse_their_display() {
        for v in [
            U1,
            Y1,
            Var::State { t: 3 },
            Var::ProcessNoise { t: 2 },
            Var::Act { agent: 12, time: 4 },
        ] {
            assert_eq!(v.to_string().parse::<Var>().unwrap(), v);
        }
        for s in ["", "u1", "y0_1", "z1", "w0_", "x"] {
            assert!(s.parse::<Var>().is_err(), "{s}");
        }
    }

    fn slot(v: &Var) -> Option<(usize, usize)> {
        match v {
            Var::Obs { .. } => Some((0, 1)),
            Var::Act { .. } => Some((1, 1)),
            _ => None,
        }
    }

    fn sq_diff() -> CostExpr {
        CostExpr::square(Affine::var(U1, 1).plus_scaled(Y1, -1.0))
    }

    #[test]
    fn evaluates_square_difference() {
        let c = sq_diff().compile(&slot).unwrap();
        assert_eq!(c.eval(&[1.0, 3.5]), 6.25);
    }

    #[test]
    fn display_is_readable() {
        assert_eq!(sq_diff().to_string(), "(u1_1 - y1_1)^2");
        let e = CostExpr::sum(vec![
            CostExpr::weighted(Affine::var(U1, 1), vec![vec![0.05]]),
            CostExpr::constant(2.0),
        ]);
        assert_eq!(e.to_string(), "0.05*(u1_1)^2 + 2");
    }

    #[test]
    fn degree_and_sign() {
        let e = CostExpr::product(vec![sq_diff(), CostExpr::exp(CostExpr::linear(Affine::var(U1, 1)))]);
        assert_eq!(sq_diff().degree(), Some(2));
        assert_eq!(e.degree(), None);
        assert!(e.is_nonnegative());
        assert!(!CostExpr::linear(Affine::var(U1, 1)).is_nonnegative());
    }

    #[test]
    fn substitution_composes_affine_maps() {
        // u -> 2y + 1, so (u - y)^2 becomes (y + 1)^2.
        let e = sq_diff()
            .substitute(&|v| (*v == U1).then(|| Affine::scaled(Y1, 2.0).with_offset(vec![1.0])))
            .unwrap();
        let c = e.compile(&slot).unwrap();
        assert_eq!(c.eval(&[3.0, 100.0]), 16.0);
        assert_eq!(e.vars(), [Y1].into_iter().collect());
    }

    #[test]
    fn rejects_indefinite_weight() {
        let e = CostExpr::weighted(Affine::var(U1, 1), vec![vec![-1.0]]);
        let dims = |_: &Var| Some(1);
        assert!(e.validate(&dims).is_err());
    }

    #[test]
    fn serde_round_trip_through_toml() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct W {
            cost: CostExpr,
        }
        let w = W {
            cost: CostExpr::product(vec![sq_diff(), CostExpr::exp(CostExpr::constant(0.5))]),
        };
        let text = toml::to_string(&w).unwrap();
        let back: W = toml::from_str(&text).unwrap();
        assert_eq!(back, w);
    }

    proptest! {
        #[test]
        fn interval_encloses_point_values(
            a in -3.0f64..3.0, b in -3.0f64..3.0, wa in 0.0f64..1.0, wb in 0.0f64..1.0,
        ) {
            let lo = [a.min(b), -1.0];
            let hi = [a.max(b), 2.0];
            let e = CostExpr::sum(vec![
                CostExpr::product(vec![
                    sq_diff(),
                    CostExpr::exp(CostExpr::linear(Affine::scaled(U1, 0.3).plus_scaled(Y1, -0.2))),
                ]),
                CostExpr::linear(Affine::scaled(Y1, -1.5)),
            ]);
            let c = e.compile(&slot).unwrap();
            let x = [lo[0] + wa * (hi[0] - lo[0]), lo[1] + wb * (hi[1] - lo[1])];
            let (l, h) = c.interval(&lo, &hi);
            let v = c.eval(&x);
            prop_assert!(l <= v + 1e-12 && v <= h + 1e-12);
        }
    }
}
