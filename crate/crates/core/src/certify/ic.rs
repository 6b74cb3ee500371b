//! Coercivity class: for compact `K` in the `a` variables, a compact `L`
//! in the `b` variables outside of which the cost stays above `M`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cost::{Affine, CostExpr, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::space::SpaceSpec;

/// Boundary samples per verification pass.
const SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct IcQuery {
    pub f: CostExpr,
    pub group_a: Vec<Var>,
    pub group_b: Vec<Var>,
    /// Box over the concatenated `a` coordinates.
    pub k_box: SpaceSpec,
    pub m: f64,
    /// Largest half-width explored for `L` and for the remaining variables.
    pub search_box: f64,
    pub seed: u64,
    /// Dimensions of variables that do not appear in `f` (default 1).
    pub dims: BTreeMap<Var, usize>,
}

impl IcQuery {
    pub fn new(f: CostExpr, group_a: Vec<Var>, group_b: Vec<Var>, k_box: SpaceSpec, m: f64) -> Self {
        Self {
            f,
            group_a,
            group_b,
            k_box,
            m,
            search_box: 1e3,
            seed: 0,
            dims: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IcMethod {
    /// Quadratic leading term, possibly times a factor positive on `K`.
    Analytic,
    /// Growing-box search with sampled infima.
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessPoint {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcReport {
    pub pass: bool,
    pub method: IcMethod,
    pub m: f64,
    pub k_box: SpaceSpec,
    pub l_box: Option<SpaceSpec>,
    /// Certified lower bound of the positive factor over `K` (1 if none).
    pub factor_lower_bound: f64,
    /// Closed-form lower bound of the infimum over `K x L^c`.
    pub analytic_inf: Option<f64>,
    /// Smallest sampled value over `K x L^c` (or on the last shell tried).
    pub sampled_inf: f64,
    /// Points with values below `M` at growing `|b|`; empty on a pass.
    pub witness: Vec<WitnessPoint>,
}

/// Dimensions of the variables of `e`, read off the coefficient shapes.
pub(crate) fn var_dims(e: &CostExpr, out: &mut BTreeMap<Var, usize>) {
    let mut from_affine = |a: &Affine| {
        for t in &a.terms {
            out.insert(t.var, t.coeff.first().map_or(0, Vec::len));
        }
    };
    match e {
        CostExpr::Constant { .. } => {}
        CostExpr::Affine { map } => from_affine(map),
        CostExpr::Quadratic { arg, .. } => from_affine(arg),
        CostExpr::Exp { arg } => var_dims(arg, out),
        CostExpr::Sum { terms: xs } | CostExpr::Product { factors: xs } => xs.iter().for_each(|x| var_dims(x, out)),
    }
}

/// Variable layout `[a | b | c]`.
struct Layout {
    slots: BTreeMap<Var, (usize, usize)>,
    da: usize,
    db: usize,
    dc: usize,
}

impl Layout {
    fn new(q: &IcQuery) -> Result<Self> {
        let mut dims = BTreeMap::new();
        var_dims(&q.f, &mut dims);
        for v in &q.group_b {
            if !dims.contains_key(v) {
                return Err(Error::InvalidSpec(format!("{v} does not appear in the function")));
            }
        }
        let dim = |v: &Var| dims.get(v).or(q.dims.get(v)).copied().unwrap_or(1);
        let mut slots = BTreeMap::new();
        let mut off = 0;
        for v in q.group_a.iter().chain(&q.group_b) {
            if slots.insert(*v, (off, dim(v))).is_some() {
                return Err(Error::InvalidSpec(format!("{v} listed twice")));
            }
            off += dim(v);
        }
        let da: usize = q.group_a.iter().map(dim).sum();
        let db = off - da;
        let mut dc = 0;
        for (v, d) in &dims {
            if !slots.contains_key(v) {
                slots.insert(*v, (off, *d));
                off += d;
                dc += d;
            }
        }
        if q.k_box.dim() != da {
            return Err(Error::DimensionMismatch(format!(
                "K box has {} coordinates, a has {da}",
                q.k_box.dim()
            )));
        }
        q.k_box.validate("K box")?;
        Ok(Self { slots, da, db, dc })
    }

    fn slot(&self, v: &Var) -> Option<(usize, usize)> {
        self.slots.get(v).copied()
    }

    fn is_a(&self, v: &Var) -> bool {
        self.slot(v).is_some_and(|(s, _)| s < self.da)
    }

    fn is_b(&self, v: &Var) -> bool {
        self.slot(v).is_some_and(|(s, _)| s >= self.da && s < self.da + self.db)
    }
}

/// `||G b + H a + o||^2_W`, with the positive factors that multiply it.
struct Leading {
    arg: Affine,
    weight: Matrix,
    factors: Vec<CostExpr>,
}

fn leading(e: &CostExpr, lay: &Layout) -> Option<Leading> {
    match e {
        CostExpr::Quadratic { arg, weight } => {
            let vars = arg.vars();
            let has_b = vars.iter().any(|v| lay.is_b(v));
            let only_ab = vars.iter().all(|v| lay.is_a(v) || lay.is_b(v));
            (has_b && only_ab && arg.dim() == lay.db).then(|| Leading {
                arg: arg.clone(),
                weight: weight.clone(),
                factors: Vec::new(),
            })
        }
        CostExpr::Sum { terms } => {
            if !terms.iter().all(CostExpr::is_nonnegative) {
                return None;
            }
            terms.iter().find_map(|t| leading(t, lay))
        }
        CostExpr::Product { factors } => {
            if !factors.iter().all(CostExpr::is_nonnegative) {
                return None;
            }
            let i = factors.iter().position(|f| leading(f, lay).is_some())?;
            let mut lead = leading(&factors[i], lay)?;
            for (j, f) in factors.iter().enumerate() {
                if j != i {
                    if !f.vars().iter().all(|v| lay.is_a(v)) {
                        return None;
                    }
                    lead.factors.push(f.clone());
                }
            }
            Some(lead)
        }
        _ => None,
    }
}

/// Lower bound of `e` over the box by interval enclosures on a uniform
/// subdivision.
pub(crate) fn box_lower_bound(c: &crate::cost::Compiled, lo: &[f64], hi: &[f64]) -> f64 {
    let d = lo.len();
    if d == 0 {
        return c.interval(lo, hi).0;
    }
    let splits = ((1e5f64).powf(1.0 / d as f64) as usize).clamp(1, 256);
    let total = splits.pow(d as u32);
    let mut best = f64::INFINITY;
    let (mut sl, mut sh) = (vec![0.0; d], vec![0.0; d]);
    for mut idx in 0..total {
        for j in (0..d).rev() {
            let i = idx % splits;
            idx /= splits;
            let w = (hi[j] - lo[j]) / splits as f64;
            sl[j] = lo[j] + w * i as f64;
            sh[j] = if i + 1 == splits {
                hi[j]
            } else {
                lo[j] + w * (i + 1) as f64
            };
        }
        best = best.min(c.interval(&sl, &sh).0);
    }
    best
}

fn random_in_box(rng: &mut ChaCha8Rng, b: &SpaceSpec, out: &mut [f64]) {
    for (j, v) in out.iter_mut().enumerate() {
        *v = rng.random_range(b.lower[j]..=b.upper[j]);
    }
}

/// Random point on the boundary of `[lo, hi]`.
fn random_on_boundary(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64], out: &mut [f64]) {
    for (j, v) in out.iter_mut().enumerate() {
        *v = rng.random_range(lo[j]..=hi[j]);
    }
    let face = rng.random_range(0..out.len());
    out[face] = if rng.random_bool(0.5) { lo[face] } else { hi[face] };
}

struct Evaluator<'a> {
    f: crate::cost::Compiled,
    lay: &'a Layout,
    c_half: f64,
}

impl Evaluator<'_> {
    /// `inf_c f(a, b, c)` by a coarse scan and cyclic golden-section
    /// refinement over `[-c_half, c_half]` per coordinate. Writes the
    /// minimizer into `z`.
    fn inf_c(&self, z: &mut [f64]) -> f64 {
        let start = self.lay.da + self.lay.db;
        if self.lay.dc == 0 {
            return self.f.eval(z);
        }
        for v in &mut z[start..] {
            *v = 0.0;
        }
        let mut best = self.f.eval(z);
        let n = 41;
        let step = 2.0 * self.c_half / (n - 1) as f64;
        for _ in 0..2 {
            for j in start..start + self.lay.dc {
                let mut arg = z[j];
                for i in 0..n {
                    z[j] = -self.c_half + step * i as f64;
                    let v = self.f.eval(z);
                    if v < best {
                        best = v;
                        arg = z[j];
                    }
                }
                let (mut a, mut b) = (arg - step, arg + step);
                let g = (5f64.sqrt() - 1.0) / 2.0;
                for _ in 0..80 {
                    let (c, d) = (b - g * (b - a), a + g * (b - a));
                    z[j] = c;
                    let fc = self.f.eval(z);
                    z[j] = d;
                    let fd = self.f.eval(z);
                    if fc <= fd {
                        b = d;
                    } else {
                        a = c;
                    }
                }
                z[j] = 0.5 * (a + b);
                let v = self.f.eval(z);
                if v < best {
                    best = v;
                    arg = z[j];
                }
                z[j] = arg;
            }
        }
        best
    }

    /// Smallest sampled value with `a` in `K` and `b` on the boundary of
    /// each of the given boxes.
    fn boundary_inf(&self, q: &IcQuery, shells: &[(Vec<f64>, Vec<f64>)], rng: &mut ChaCha8Rng) -> f64 {
        let lay = self.lay;
        let mut z = vec![0.0; lay.da + lay.db + lay.dc];
        let mut best = f64::INFINITY;
        for s in 0..SAMPLES {
            let (lo, hi) = &shells[s % shells.len()];
            random_in_box(rng, &q.k_box, &mut z[..lay.da]);
            random_on_boundary(rng, lo, hi, &mut z[lay.da..lay.da + lay.db]);
            // Corners of K x L first.
            let bits = (lay.da + lay.db).min(12);
            if s < (1usize << bits) {
                for j in 0..bits {
                    let up = (s >> j) & 1 == 1;
                    z[j] = if j < lay.da {
                        if up {
                            q.k_box.upper[j]
                        } else {
                            q.k_box.lower[j]
                        }
                    } else if up {
                        hi[j - lay.da]
                    } else {
                        lo[j - lay.da]
                    };
                }
            }
            best = best.min(self.inf_c(&mut z));
        }
        best
    }
}

/// Certifies `inf over K x L^c (x C) of f >= M` or returns a witness that
/// the infimum tends to something below `M`.
pub fn check_ic_class(q: &IcQuery) -> Result<IcReport> {
    if !(q.m > 0.0) || !(q.search_box > 0.0) {
        return Err(Error::InvalidSpec(
            "IC check needs M > 0 and a positive search box".into(),
        ));
    }
    if q.group_b.is_empty() {
        return Err(Error::InvalidSpec("IC check needs at least one target variable".into()));
    }
    let lay = Layout::new(q)?;
    let ev = Evaluator {
        f: q.f.compile(&|v| lay.slot(v))?,
        lay: &lay,
        c_half: 2.0 * q.search_box,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(q.seed);
    if let Some(lead) = leading(&q.f, &lay) {
        if let Some(r) = analytic(q, &lay, &ev, &lead, &mut rng)? {
            return Ok(r);
        }
    }
    search(q, &lay, &ev, &mut rng)
}

fn analytic(
    q: &IcQuery,
    lay: &Layout,
    ev: &Evaluator,
    lead: &Leading,
    rng: &mut ChaCha8Rng,
) -> Result<Option<IcReport>> {
    let (da, db) = (lay.da, lay.db);
    // Split the argument into G b + H a + o.
    let mut g = DMatrix::<f64>::zeros(db, db);
    let mut h = DMatrix::<f64>::zeros(db, da);
    for t in &lead.arg.terms {
        let (s, d) = lay.slot(&t.var).expect("laid out");
        for r in 0..db {
            for c in 0..d {
                if s >= da {
                    g[(r, s - da + c)] += t.coeff[r][c];
                } else {
                    h[(r, s + c)] += t.coeff[r][c];
                }
            }
        }
    }
    let Some(g_inv) = g.clone().try_inverse() else {
        return Ok(None);
    };
    let w = DMatrix::from_fn(db, db, |i, j| lead.weight[i][j]);
    let r = g.transpose() * &w * &g;
    let r_rows: Matrix = (0..db).map(|i| (0..db).map(|j| r[(i, j)]).collect()).collect();
    let lambda_min = linalg::sym_eigenvalues(&r_rows)[0];
    if !(lambda_min > 0.0) {
        return Ok(None);
    }
    // Positive factors depend on `a` only.
    let factor_lower_bound = if lead.factors.is_empty() {
        1.0
    } else {
        let prod = CostExpr::product(lead.factors.clone()).compile(&|v| lay.slot(v))?;
        let mut lo = vec![0.0; da];
        let mut hi = vec![0.0; da];
        lo.copy_from_slice(&q.k_box.lower);
        hi.copy_from_slice(&q.k_box.upper);
        box_lower_bound(&prod, &lo, &hi)
    };
    if !(factor_lower_bound > 0.0) {
        return Ok(None);
    }
    // b* = p(a) = -G^{-1}(H a + o); interval hull over K.
    let p = -&g_inv * &h;
    let o = nalgebra::DVector::from_column_slice(&lead.arg.offset);
    let p0 = -&g_inv * o;
    let radius = (q.m / factor_lower_bound / lambda_min).sqrt();
    let mut l_lo = vec![0.0; db];
    let mut l_hi = vec![0.0; db];
    let mut gap = f64::INFINITY;
    for j in 0..db {
        let (mut lo, mut hi) = (p0[j], p0[j]);
        for i in 0..da {
            let (x, y) = (p[(j, i)] * q.k_box.lower[i], p[(j, i)] * q.k_box.upper[i]);
            lo += x.min(y);
            hi += x.max(y);
        }
        // Inflate by the radius and round outward past the next integer,
        // which leaves a strict margin.
        l_lo[j] = (lo - radius).ceil() - 1.0;
        l_hi[j] = (hi + radius).floor() + 1.0;
        gap = gap.min(l_hi[j] - hi).min(lo - l_lo[j]);
    }
    let analytic_inf = factor_lower_bound * lambda_min * gap * gap;
    debug_assert!(analytic_inf >= q.m);
    let sampled_inf = ev.boundary_inf(q, &[(l_lo.clone(), l_hi.clone())], rng);
    let pass = analytic_inf >= q.m && sampled_inf >= q.m * (1.0 - 1e-12);
    Ok(Some(IcReport {
        pass,
        method: IcMethod::Analytic,
        m: q.m,
        k_box: q.k_box.clone(),
        l_box: Some(SpaceSpec {
            lower: l_lo,
            upper: l_hi,
        }),
        factor_lower_bound,
        analytic_inf: Some(analytic_inf),
        sampled_inf,
        witness: Vec::new(),
    }))
}

fn search(q: &IcQuery, lay: &Layout, ev: &Evaluator, rng: &mut ChaCha8Rng) -> Result<IcReport> {
    let db = lay.db;
    let mut radii = Vec::new();
    let mut r = 1.0;
    while r <= q.search_box {
        radii.push(r);
        r *= 2.0;
    }
    let mut last_inf = f64::INFINITY;
    for (i, &r) in radii.iter().enumerate() {
        let shells: Vec<(Vec<f64>, Vec<f64>)> = radii[i..].iter().map(|&t| (vec![-t; db], vec![t; db])).collect();
        last_inf = ev.boundary_inf(q, &shells, rng);
        if last_inf >= q.m {
            return Ok(IcReport {
                pass: true,
                method: IcMethod::Search,
                m: q.m,
                k_box: q.k_box.clone(),
                l_box: Some(SpaceSpec::symmetric(db, r)),
                factor_lower_bound: 1.0,
                analytic_inf: None,
                sampled_inf: last_inf,
                witness: Vec::new(),
            });
        }
    }
    // Witness ray from the centre of K along the worst signed axis.
    let center: Vec<f64> = q
        .k_box
        .lower
        .iter()
        .zip(&q.k_box.upper)
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    let mut z = vec![0.0; lay.da + db + lay.dc];
    let eval_at = |t: f64, axis: usize, sign: f64, z: &mut Vec<f64>| {
        z[..lay.da].copy_from_slice(&center);
        for v in &mut z[lay.da..lay.da + db] {
            *v = 0.0;
        }
        z[lay.da + axis] = sign * t;
        ev.inf_c(z)
    };
    let mut dir = (0, 1.0);
    let mut worst = f64::INFINITY;
    for axis in 0..db {
        for sign in [1.0, -1.0] {
            let v = eval_at(q.search_box, axis, sign, &mut z);
            if v < worst {
                worst = v;
                dir = (axis, sign);
            }
        }
    }
    let steps = 16;
    let mut witness = Vec::new();
    for i in 0..=steps {
        let t = q.search_box.powf(i as f64 / steps as f64);
        let value = eval_at(t, dir.0, dir.1, &mut z);
        witness.push(WitnessPoint {
            a: z[..lay.da].to_vec(),
            b: z[lay.da..lay.da + db].to_vec(),
            c: z[lay.da + db..].to_vec(),
            value,
        });
    }
    // The tail of the ray must stay below M.
    let tail = &witness[witness.len() - 4..];
    if tail.iter().all(|w| w.value < q.m) {
        witness.retain(|w| w.value < q.m);
        return Ok(IcReport {
            pass: false,
            method: IcMethod::Search,
            m: q.m,
            k_box: q.k_box.clone(),
            l_box: None,
            factor_lower_bound: 1.0,
            analytic_inf: None,
            sampled_inf: last_inf,
            witness,
        });
    }
    Err(Error::Inconclusive(format!(
        "no box up to half-width {} keeps the sampled infimum above {} (last {last_inf}), and no ray stays below it",
        q.search_box, q.m
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{build_benchmark, Params};
    use crate::reduction::static_reduce;

    const A: Var = Var::Obs { agent: 1, time: 1 };
    const B: Var = Var::Act { agent: 1, time: 1 };

    #[test]
    fn squared_difference_on_unit_box() {
        let f = CostExpr::square(Affine::var(B, 1).plus_scaled(A, -1.0));
        let r = check_ic_class(&IcQuery::new(f, vec![A], vec![B], SpaceSpec::symmetric(1, 1.0), 100.0)).unwrap();
        assert!(r.pass && r.method == IcMethod::Analytic, "{r:?}");
        assert_eq!(r.l_box, Some(SpaceSpec::symmetric(1, 12.0)));
        assert_eq!(r.analytic_inf, Some(121.0));
        // Closed form of the infimum over K x L^c: (12 - 1)^2.
        assert!((r.sampled_inf - 121.0).abs() < 1e-9, "{}", r.sampled_inf);
    }

    #[test]
    fn weighted_vector_quadratic() {
        let b2 = Var::Act { agent: 2, time: 2 };
        let f = CostExpr::weighted(
            Affine::var(b2, 2).plus(A, vec![vec![1.0], vec![-2.0]]),
            vec![vec![2.0, 0.5], vec![0.5, 1.0]],
        );
        let q = IcQuery::new(f.clone(), vec![A], vec![b2], SpaceSpec::symmetric(1, 2.0), 50.0);
        let r = check_ic_class(&q).unwrap();
        assert!(r.pass && r.analytic_inf.unwrap() >= 50.0);
        assert!(r.sampled_inf >= 50.0);
    }

    fn reduced_witsenhausen() -> crate::reduction::ReducedTeam {
        static_reduce(&build_benchmark("witsenhausen", &Params::new()).unwrap()).unwrap()
    }

    #[test]
    fn product_with_density_factor_passes() {
        let rt = reduced_witsenhausen();
        let u1 = Var::Act { agent: 1, time: 1 };
        let u2 = Var::Act { agent: 2, time: 2 };
        let y1 = Var::Obs { agent: 1, time: 1 };
        let y2 = Var::Obs { agent: 2, time: 2 };
        let f = CostExpr::product(vec![
            CostExpr::square(Affine::var(u2, 1).plus_scaled(u1, -1.0)),
            rt.phi_expr(1).unwrap(),
        ]);
        let q = IcQuery::new(f, vec![u1, y1, y2], vec![u2], SpaceSpec::symmetric(3, 1.0), 100.0);
        let r = check_ic_class(&q).unwrap();
        assert!(r.pass && r.method == IcMethod::Analytic, "{r:?}");
        // exp(u1 y2 - u1^2 / 2) >= exp(-1.5) on the unit cube.
        assert!(r.factor_lower_bound <= (-1.5f64).exp() && r.factor_lower_bound > 0.2);
    }

    #[test]
    fn reduced_cost_is_not_coercive_in_the_first_action() {
        let rt = reduced_witsenhausen();
        let u1 = Var::Act { agent: 1, time: 1 };
        let y1 = Var::Obs { agent: 1, time: 1 };
        let y2 = Var::Obs { agent: 2, time: 2 };
        let f = CostExpr::product(vec![rt.team.cost_expr.clone(), rt.phi_prefix_expr(2).unwrap()]);
        let mut q = IcQuery::new(f, vec![y1, y2], vec![u1], SpaceSpec::symmetric(2, 1.0), 1.0);
        q.search_box = 100.0;
        let r = check_ic_class(&q).unwrap();
        assert!(!r.pass && r.l_box.is_none());
        let far: Vec<_> = r.witness.iter().filter(|w| w.b[0].abs() >= 10.0).collect();
        assert!(!far.is_empty());
        for w in far {
            assert_eq!(w.a, vec![0.0, 0.0]);
            assert!(w.value < 1e-6, "{w:?}");
        }
    }

    #[test]
    fn bounded_function_is_inconclusive_or_witnessed() {
        // exp(-(b - a)^2) never exceeds 1, so M = 2 admits a witness.
        let f = CostExpr::exp(CostExpr::product(vec![
            CostExpr::constant(-1.0),
            CostExpr::square(Affine::var(B, 1).plus_scaled(A, -1.0)),
        ]));
        let mut q = IcQuery::new(f, vec![A], vec![B], SpaceSpec::symmetric(1, 1.0), 2.0);
        q.search_box = 16.0;
        let r = check_ic_class(&q).unwrap();
        assert!(!r.pass && !r.witness.is_empty());
    }

    #[test]
    fn rejects_bad_queries() {
        let f = CostExpr::square(Affine::var(B, 1));
        assert!(check_ic_class(&IcQuery::new(
            f.clone(),
            vec![A],
            vec![B],
            SpaceSpec::symmetric(2, 1.0),
            1.0
        ))
        .is_err());
        assert!(check_ic_class(&IcQuery::new(f, vec![A], vec![B], SpaceSpec::symmetric(1, 1.0), 0.0)).is_err());
    }
}
