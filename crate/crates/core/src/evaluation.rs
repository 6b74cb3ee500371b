//! Expected cost by simulation and by tensor quadrature.
//!
//! Two independent paths are provided. The dynamic path follows the
//! observation channels (`y = h + w`) and places its noise nodes in
//! `w`-space, split where a strategy cell boundary falls. The reduced path
//! draws every observation from its noise law, multiplies by the density
//! factor, and uses one fixed rule per decision maker aligned with the cell
//! edges in `y`-space.

use rayon::prelude::*;
use serde::Serialize;

use crate::cost::{Affine, CAffine};
use crate::error::{Error, Result};
use crate::linalg::{self, Gaussian};
use crate::model::{sample_rng, Team};
use crate::quadrature::{self, Rule};
use crate::reduction::{ReducedTeam, LOG_PHI_LIMIT};
use crate::strategy::{Prepared, Profile, Strategy};

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
}

/// Sum with a fixed pairwise tree, independent of thread count.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

pub(crate) fn prepare(team: &Team, profile: &Profile) -> Result<Vec<Prepared>> {
    if profile.len() != team.dms.len() {
        return Err(Error::InvalidStrategy(format!(
            "profile has {} strategies for {} decision makers",
            profile.len(),
            team.dms.len()
        )));
    }
    for (s, d) in profile.iter().zip(&team.dms) {
        if s.dims() != (d.ydim, d.udim) {
            return Err(Error::DimensionMismatch(format!(
                "strategy of {} maps {:?}, expected ({}, {})",
                d.label(),
                s.dims(),
                d.ydim,
                d.udim
            )));
        }
    }
    Ok(profile.iter().map(Prepared::new).collect())
}

fn summarize(values: &[f64], seed: u64) -> Estimate {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let dev: Vec<f64> = values.par_iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if n > 1 {
        pairwise_sum(&dev) / (n - 1) as f64
    } else {
        0.0
    };
    Estimate {
        estimate: mean,
        stderr: (var / n as f64).sqrt(),
        n,
        seed,
    }
}

/// Runs `sample` on `0..n` in parallel and aborts on the first failing or
/// non-finite index, re-running it alone to report the exact error.
fn monte_carlo(n: usize, seed: u64, sample: impl Fn(u64) -> Result<f64> + Sync) -> Result<Estimate> {
    if n < 1000 {
        return Err(Error::InvalidSpec(format!("Monte Carlo needs n >= 1000, got {n}")));
    }
    let values: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample(i).unwrap_or(f64::NAN))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        sample(i as u64)?;
        return Err(Error::NonFinite { index: i });
    }
    Ok(summarize(&values, seed))
}

/// Forward simulation of the dynamic team.
pub fn expected_cost_mc(team: &Team, profile: &Profile, seed: u64, n: usize) -> Result<Estimate> {
    let strat = prepare(team, profile)?;
    monte_carlo(n, seed, |i| {
        let mut rng = sample_rng(seed, i);
        let mut z = vec![0.0; team.layout.len];
        team.draw_primitives(&mut rng, &mut z);
        let mut y = [0.0f64; 16];
        for (d, s) in team.dms.iter().zip(&strat) {
            d.h.eval_into(&z, &mut y);
            for j in 0..d.ydim {
                y[j] += z[d.w + j];
            }
            z[d.y..d.y + d.ydim].copy_from_slice(&y[..d.ydim]);
            s.sample(&y[..d.ydim], &mut rng, &mut z[d.u..d.u + d.udim]);
        }
        Ok(team.cost.eval(&z))
    })
}

/// Simulation of the reduced team: observations drawn from their noise
/// laws, cost weighted by the density factor.
pub fn expected_cost_mc_reduced(rt: &ReducedTeam, profile: &Profile, seed: u64, n: usize) -> Result<Estimate> {
    let team = &rt.team;
    let strat = prepare(team, profile)?;
    monte_carlo(n, seed, |i| {
        let mut rng = sample_rng(seed, i);
        let mut z = vec![0.0; team.layout.len];
        team.draw_primitives(&mut rng, &mut z);
        let mut h = [0.0f64; 16];
        let mut y = [0.0f64; 16];
        let mut log_phi = 0.0;
        for (k, (d, s)) in team.dms.iter().zip(&strat).enumerate() {
            d.h.eval_into(&z, &mut h);
            y[..d.ydim].copy_from_slice(&z[d.w..d.w + d.ydim]);
            z[d.y..d.y + d.ydim].copy_from_slice(&y[..d.ydim]);
            log_phi += rt.log_phi_channel(k, &y[..d.ydim], &h[..d.ydim]);
            s.sample(&y[..d.ydim], &mut rng, &mut z[d.u..d.u + d.udim]);
        }
        if !(log_phi <= LOG_PHI_LIMIT) {
            return Err(Error::PhiOverflow { log_value: log_phi });
        }
        Ok(team.cost.eval(&z) * log_phi.exp())
    })
}

/// Resolution of the tensor rules.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadOptions {
    /// Gauss-Hermite nodes per dimension for free primitives and for
    /// observations read by linear strategies.
    pub order: usize,
    /// Gauss-Legendre nodes per segment of the cell-aligned rules.
    pub per_segment: usize,
    /// Half-width of the truncated noise support, in standard deviations.
    pub tail_sigmas: f64,
    /// Longest segment of a cell-aligned rule, in standard deviations.
    pub max_width_sigmas: f64,
    /// Largest primitive dimension accepted.
    pub max_dims: usize,
    /// Largest number of integrand evaluations accepted.
    pub node_budget: f64,
}

impl QuadOptions {
    pub fn with_order(order: usize) -> Self {
        Self {
            order,
            per_segment: quadrature::per_segment_nodes(order),
            tail_sigmas: 8.0,
            max_width_sigmas: 0.5,
            max_dims: 4,
            node_budget: 5e9,
        }
    }
}

/// Weighted points of a tensor rule, row-major.
#[derive(Debug, Clone, Default)]
pub(crate) struct NodeSet {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub points: Vec<f64>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn single() -> Self {
        Self {
            dim: 0,
            weights: vec![1.0],
            points: Vec::new(),
        }
    }

    /// Tensor product of one-dimensional rules, with each weight scaled by
    /// `density(point)`.
    fn tensor(rules: &[&Rule], density: impl Fn(&[f64]) -> f64) -> Self {
        let dim = rules.len();
        let total: usize = rules.iter().map(|r| r.len()).product();
        let mut weights = Vec::with_capacity(total);
        let mut points = Vec::with_capacity(total * dim);
        let mut p = vec![0.0; dim];
        for idx in 0..total {
            let mut rem = idx;
            let mut w = 1.0;
            for j in (0..dim).rev() {
                let i = rem % rules[j].len();
                rem /= rules[j].len();
                p[j] = rules[j].nodes[i];
                w *= rules[j].weights[i];
            }
            let w = w * density(&p);
            if w > 0.0 {
                weights.push(w);
                points.extend_from_slice(&p);
            }
        }
        Self { dim, weights, points }
    }

    /// Gauss-Hermite tensor rule for a Gaussian law.
    fn hermite(law: &Gaussian, order: usize) -> Self {
        let gh = quadrature::gauss_hermite(order);
        let rules: Vec<&Rule> = vec![&*gh; law.dim()];
        let mut set = Self::tensor(&rules, |_| 1.0);
        let mut out = vec![0.0; law.dim()];
        for c in set.points.chunks_mut(law.dim()) {
            law.transform(c, &mut out);
            c.copy_from_slice(&out);
        }
        set
    }

    fn product(a: &Self, b: &Self) -> Self {
        let dim = a.dim + b.dim;
        let mut weights = Vec::with_capacity(a.len() * b.len());
        let mut points = Vec::with_capacity(a.len() * b.len() * dim);
        for i in 0..a.len() {
            for j in 0..b.len() {
                weights.push(a.weights[i] * b.weights[j]);
                points.extend_from_slice(a.point(i));
                points.extend_from_slice(b.point(j));
            }
        }
        Self { dim, weights, points }
    }
}

/// Gauss-Hermite tensor rule over all free primitives (`x1`, `w0_t`).
pub(crate) fn outer_set(team: &Team, order: usize) -> NodeSet {
    team.free.iter().fold(NodeSet::single(), |acc, b| {
        NodeSet::product(&acc, &NodeSet::hermite(&b.law, order))
    })
}

/// Cell-aligned composite rule on one coordinate.
fn aligned_rule(lo: f64, hi: f64, anchor: f64, step: f64, edges: &[f64], per_segment: usize) -> Rule {
    quadrature::composite(&quadrature::breakpoints(lo, hi, anchor, step, edges), per_segment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    Dynamic,
    Reduced,
}

/// Nested integration engine shared by both evaluation paths, posterior
/// means and the best-response sweeps.
pub(crate) struct Engine<'a> {
    pub team: &'a Team,
    pub rt: Option<&'a ReducedTeam>,
    pub strat: Vec<Prepared>,
    pub opts: QuadOptions,
    pub mode: Mode,
    pub outer: NodeSet,
    /// Cell edges per coordinate for grid strategies.
    edges: Vec<Option<Vec<Vec<f64>>>>,
    /// Fixed observation rules of the reduced path.
    pub fixed: Vec<NodeSet>,
}

impl<'a> Engine<'a> {
    pub fn dynamic(team: &'a Team, profile: &Profile, opts: QuadOptions) -> Result<Self> {
        Self::build(team, None, profile, opts, Mode::Dynamic)
    }

    pub fn reduced(rt: &'a ReducedTeam, profile: &Profile, opts: QuadOptions) -> Result<Self> {
        Self::build(&rt.team, Some(rt), profile, opts, Mode::Reduced)
    }

    fn build(
        team: &'a Team,
        rt: Option<&'a ReducedTeam>,
        profile: &Profile,
        opts: QuadOptions,
        mode: Mode,
    ) -> Result<Self> {
        let dims = team.primitive_dim();
        if dims > opts.max_dims {
            return Err(Error::DimensionTooLarge {
                dims,
                limit: opts.max_dims,
            });
        }
        if opts.order == 0 || opts.per_segment == 0 {
            return Err(Error::InvalidSpec("quadrature order must be positive".into()));
        }
        let strat = prepare(team, profile)?;
        let edges = strat
            .iter()
            .map(|s| s.obs_grid().map(|g| (0..g.dim()).map(|j| g.edges(j)).collect()))
            .collect();
        let outer = outer_set(team, opts.order);
        let mut e = Self {
            team,
            rt,
            strat,
            opts,
            mode,
            outer,
            edges,
            fixed: Vec::new(),
        };
        if mode == Mode::Reduced {
            e.fixed = e.fixed_rules()?;
        }
        e.check_budget(profile)?;
        Ok(e)
    }

    fn support(profile: &Profile, k: usize) -> f64 {
        match &profile[k] {
            Strategy::Behavioral(b) => b
                .table
                .iter()
                .map(|r| r.iter().filter(|p| **p > 0.0).count())
                .max()
                .unwrap_or(1) as f64,
            _ => 1.0,
        }
    }

    fn check_budget(&self, profile: &Profile) -> Result<()> {
        let mut nodes = self.outer.len() as f64;
        for (k, d) in self.team.dms.iter().enumerate() {
            let per = match self.mode {
                Mode::Reduced => self.fixed[k].len() as f64,
                Mode::Dynamic => match &self.edges[k] {
                    None => (self.opts.order as f64).powi(d.ydim as i32),
                    Some(e) => e
                        .iter()
                        .map(|ej| {
                            let segs = 2.0 * self.opts.tail_sigmas / self.opts.max_width_sigmas + ej.len() as f64 + 2.0;
                            segs * self.opts.per_segment as f64
                        })
                        .product(),
                },
            };
            nodes *= per * Self::support(profile, k);
        }
        if nodes > self.opts.node_budget {
            return Err(Error::NodeBudgetExceeded {
                nodes,
                budget: self.opts.node_budget,
            });
        }
        Ok(())
    }

    /// Observation rules of the reduced path. Each covers the declared
    /// observation box, the noise law, and every plausible channel mean
    /// widened by the tail, with breakpoints at the cell edges.
    fn fixed_rules(&self) -> Result<Vec<NodeSet>> {
        let t = self.team;
        let zmax = quadrature::gauss_hermite(self.opts.order)
            .nodes
            .iter()
            .fold(0.0f64, |a, b| a.max(b.abs()));
        let half = zmax.max(self.opts.tail_sigmas);
        let mut lo = vec![0.0; t.layout.len];
        let mut hi = vec![0.0; t.layout.len];
        for b in &t.free {
            let sq = (b.law.dim() as f64).sqrt();
            for j in 0..b.law.dim() {
                let r = half * sq * b.law.std()[j];
                lo[b.start + j] = b.law.mean()[j] - r;
                hi[b.start + j] = b.law.mean()[j] + r;
            }
        }
        let mut out = Vec::with_capacity(t.dms.len());
        for (k, d) in t.dms.iter().enumerate() {
            let mut hb = vec![(0.0, 0.0); d.ydim];
            d.h.interval_into(&lo, &hi, &mut hb);
            let nu = &d.noise;
            let set = match &self.edges[k] {
                None => NodeSet::hermite(nu, self.opts.order),
                Some(edges) => {
                    let rules: Vec<Rule> = (0..d.ydim)
                        .map(|j| {
                            let (m, s) = (nu.mean()[j], nu.std()[j]);
                            let tail = self.opts.tail_sigmas * s;
                            let g = &edges[j];
                            let a = g[0].min(hb[j].0 + m - tail).min(m - tail);
                            let b = g[g.len() - 1].max(hb[j].1 + m + tail).max(m + tail);
                            aligned_rule(a, b, m, self.opts.max_width_sigmas * s, g, self.opts.per_segment)
                        })
                        .collect();
                    let refs: Vec<&Rule> = rules.iter().collect();
                    NodeSet::tensor(&refs, |y| nu.log_density(y).exp())
                }
            };
            if set.points.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: k });
            }
            let sq = (d.ydim as f64).sqrt();
            for j in 0..d.ydim {
                let (a, b) = set
                    .points
                    .chunks(d.ydim)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                        (a.min(p[j]), b.max(p[j]))
                    });
                lo[d.y + j] = a.min(-half * sq * nu.std()[j]);
                hi[d.y + j] = b.max(half * sq * nu.std()[j]);
            }
            // Action box: grid actions are bounded by the action space, linear
            // ones by the image of the observation box.
            match &self.strat[k] {
                Prepared::Grid { .. } => {
                    for j in 0..d.udim {
                        lo[d.u + j] = d.action_space.lower[j];
                        hi[d.u + j] = d.action_space.upper[j];
                    }
                }
                Prepared::Linear {
                    ydim,
                    udim,
                    gain,
                    offset,
                } => {
                    for i in 0..*udim {
                        let (mut a, mut b) = (offset[i], offset[i]);
                        for j in 0..*ydim {
                            let c = gain[i * ydim + j];
                            let (p, q) = (c * lo[d.y + j], c * hi[d.y + j]);
                            a += p.min(q);
                            b += p.max(q);
                        }
                        lo[d.u + i] = a;
                        hi[d.u + i] = b;
                    }
                }
            }
            out.push(set);
        }
        Ok(out)
    }

    /// Noise rule of the dynamic path for a decision maker whose channel
    /// mean is `h`.
    fn dynamic_rule(&self, k: usize, h: &[f64]) -> NodeSet {
        let d = &self.team.dms[k];
        let nu = &d.noise;
        match &self.edges[k] {
            None => NodeSet::hermite(nu, self.opts.order),
            Some(edges) => {
                let rules: Vec<Rule> = (0..d.ydim)
                    .map(|j| {
                        let (m, s) = (nu.mean()[j], nu.std()[j]);
                        let tail = self.opts.tail_sigmas * s;
                        let shifted: Vec<f64> = edges[j].iter().map(|e| e - h[j]).collect();
                        aligned_rule(
                            m - tail,
                            m + tail,
                            m,
                            self.opts.max_width_sigmas * s,
                            &shifted,
                            self.opts.per_segment,
                        )
                    })
                    .collect();
                let refs: Vec<&Rule> = rules.iter().collect();
                NodeSet::tensor(&refs, |w| nu.log_density(w).exp())
            }
        }
    }

    /// Rule for level `k` at the current prefix, with the channel mean.
    pub fn level(&self, k: usize, z: &[f64]) -> (Vec<f64>, std::borrow::Cow<'_, NodeSet>) {
        let d = &self.team.dms[k];
        let mut h = vec![0.0; d.ydim];
        d.h.eval_into(z, &mut h);
        let set = match self.mode {
            Mode::Dynamic => std::borrow::Cow::Owned(self.dynamic_rule(k, &h)),
            Mode::Reduced => std::borrow::Cow::Borrowed(&self.fixed[k]),
        };
        (h, set)
    }

    /// Writes node `i` of level `k` into `z` and returns its weight factor
    /// (including the density factor on the reduced path).
    #[inline]
    pub fn place(&self, k: usize, set: &NodeSet, i: usize, h: &[f64], z: &mut [f64]) -> Result<f64> {
        let d = &self.team.dms[k];
        let p = set.point(i);
        match self.mode {
            Mode::Dynamic => {
                for j in 0..d.ydim {
                    z[d.w + j] = p[j];
                    z[d.y + j] = h[j] + p[j];
                }
                Ok(set.weights[i])
            }
            Mode::Reduced => {
                z[d.w..d.w + d.ydim].copy_from_slice(p);
                z[d.y..d.y + d.ydim].copy_from_slice(p);
                let lp = self.rt.expect("reduced engine").log_phi_channel(k, p, h);
                let w = set.weights[i];
                if lp <= LOG_PHI_LIMIT {
                    return Ok(w * lp.exp());
                }
                // The node weight carries the reference density, so the
                // product is a shifted noise density and stays bounded.
                let v = (w.ln() + lp).exp();
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::PhiOverflow { log_value: lp })
                }
            }
        }
    }

    /// Depth-first walk over levels `k..stop`, calling `leaf(z, weight)`.
    pub fn walk(
        &self,
        k: usize,
        stop: usize,
        z: &mut [f64],
        weight: f64,
        leaf: &mut dyn FnMut(&mut [f64], f64) -> Result<()>,
    ) -> Result<()> {
        if k == stop {
            return leaf(z, weight);
        }
        let (h, set) = self.level(k, z);
        for i in 0..set.len() {
            self.walk_node(k, stop, &set, i, &h, z, weight, leaf)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn walk_node(
        &self,
        k: usize,
        stop: usize,
        set: &NodeSet,
        i: usize,
        h: &[f64],
        z: &mut [f64],
        weight: f64,
        leaf: &mut dyn FnMut(&mut [f64], f64) -> Result<()>,
    ) -> Result<()> {
        let w = weight * self.place(k, set, i, h, z)?;
        if w == 0.0 {
            return Ok(());
        }
        let d = &self.team.dms[k];
        let mut y = [0.0f64; 16];
        y[..d.ydim].copy_from_slice(&z[d.y..d.y + d.ydim]);
        let mut err = None;
        self.strat[k].for_each(&y[..d.ydim], |p, a| {
            if err.is_none() {
                z[d.u..d.u + d.udim].copy_from_slice(a);
                if let Err(e) = self.walk(k + 1, stop, z, w * p, leaf) {
                    err = Some(e);
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// `sum weight * f(z)` over the full tensor, parallel over the nodes of
    /// the first decision maker with a fixed summation order.
    pub fn integrate(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<f64> {
        let len = self.team.layout.len;
        let stop = self.team.dms.len();
        let mut parts = Vec::new();
        for o in 0..self.outer.len() {
            let mut z0 = vec![0.0; len];
            z0[..self.outer.dim].copy_from_slice(self.outer.point(o));
            let (h, set) = self.level(0, &z0);
            let w0 = self.outer.weights[o];
            let vals: Vec<Result<f64>> = (0..set.len())
                .into_par_iter()
                .map(|i| {
                    let mut z = z0.clone();
                    let mut acc = 0.0;
                    self.walk_node(0, stop, &set, i, &h, &mut z, w0, &mut |z, w| {
                        acc += w * f(z);
                        Ok(())
                    })?;
                    Ok(acc)
                })
                .collect();
            for v in vals {
                parts.push(v?);
            }
        }
        let total = pairwise_sum(&parts);
        if !total.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(total)
    }
}

/// Dynamic-path quadrature of the expected cost at the given order.
pub fn expected_cost_quadrature(team: &Team, profile: &Profile, order: usize) -> Result<f64> {
    expected_cost_quadrature_with(team, profile, &QuadOptions::with_order(order))
}

pub fn expected_cost_quadrature_with(team: &Team, profile: &Profile, opts: &QuadOptions) -> Result<f64> {
    let e = Engine::dynamic(team, profile, opts.clone())?;
    e.integrate(&|z| team.cost.eval(z))
}

/// Reduced-path quadrature of `int c phi prod(pi nu) Pr(d omega0)`.
pub fn expected_cost_quadrature_reduced(rt: &ReducedTeam, profile: &Profile, order: usize) -> Result<f64> {
    expected_cost_quadrature_reduced_with(rt, profile, &QuadOptions::with_order(order))
}

pub fn expected_cost_quadrature_reduced_with(rt: &ReducedTeam, profile: &Profile, opts: &QuadOptions) -> Result<f64> {
    let e = Engine::reduced(rt, profile, opts.clone())?;
    e.integrate(&|z| rt.team.cost.eval(z))
}

/// Quadratic term of one decision maker split as `M u + r(.)`.
struct QuadPiece {
    m: linalg::Matrix,
    r: CAffine,
    weight: linalg::Matrix,
}

fn quad_pieces(team: &Team, k: usize) -> Result<Vec<QuadPiece>> {
    let d = &team.dms[k];
    let form = team.form.as_ref().ok_or_else(|| Error::NonQuadratic(d.label()))?;
    if form.per_dm[k].is_empty() {
        return Err(Error::NonQuadratic(d.label()));
    }
    form.per_dm[k]
        .iter()
        .map(|&i| match &form.summands[i] {
            crate::cost::CostExpr::Quadratic { arg, weight } => {
                let own = d.act_var();
                let m = arg.coeff_of(&own).ok_or_else(|| Error::NonQuadratic(d.label()))?;
                let n = arg.normalized();
                let rest = Affine {
                    terms: n.terms.into_iter().filter(|t| t.var != own).collect(),
                    offset: n.offset,
                };
                let r = CAffine::compile(&rest, &|v| team.layout.slot(v))?;
                Ok(QuadPiece {
                    m,
                    r,
                    weight: weight.clone(),
                })
            }
            _ => Err(Error::NonQuadratic(d.label())),
        })
        .collect()
}

/// Walks the reduced measure over the decision makers before `k` with the
/// observation of `k` fixed at `y`, calling `leaf(z, weight)` where the
/// weight carries the density factor of `k` itself.
fn conditional_walk(
    rt: &ReducedTeam,
    k: usize,
    y: &[f64],
    profile: &Profile,
    order: usize,
    leaf: &mut dyn FnMut(&mut [f64], f64) -> Result<()>,
) -> Result<()> {
    let team = &rt.team;
    let d = &team.dms[k];
    if y.len() != d.ydim {
        return Err(Error::DimensionMismatch(format!(
            "observation of {} has dimension {}",
            d.label(),
            d.ydim
        )));
    }
    let e = Engine::reduced(rt, profile, QuadOptions::with_order(order))?;
    let mut h = vec![0.0; d.ydim];
    for o in 0..e.outer.len() {
        let mut z = vec![0.0; team.layout.len];
        z[..e.outer.dim].copy_from_slice(e.outer.point(o));
        e.walk(0, k, &mut z, e.outer.weights[o], &mut |z, w| {
            z[d.y..d.y + d.ydim].copy_from_slice(y);
            z[d.w..d.w + d.ydim].copy_from_slice(y);
            d.h.eval_into(z, &mut h);
            let lp = rt.log_phi_channel(k, y, &h);
            if !(lp <= LOG_PHI_LIMIT) {
                return Err(Error::PhiOverflow { log_value: lp });
            }
            leaf(z, w * lp.exp())
        })?;
    }
    Ok(())
}

/// Minimizer of the conditional expectation of the decision maker's own
/// quadratic term given its observation `y`: `-H^{-1} sum M' R E[r | y]`
/// with `H = sum M' R M`.
pub fn posterior_mean(
    rt: &ReducedTeam,
    agent: usize,
    time: usize,
    y: &[f64],
    profile: &Profile,
    order: usize,
) -> Result<Vec<f64>> {
    let team = &rt.team;
    let k = team
        .dm_index(agent, time)
        .ok_or_else(|| Error::InvalidSpec(format!("no decision maker ({agent}, {time})")))?;
    let pieces = quad_pieces(team, k)?;
    let udim = team.dms[k].udim;
    let mut total = 0.0;
    let mut sums: Vec<Vec<f64>> = pieces.iter().map(|p| vec![0.0; p.r.dim()]).collect();
    let mut buf = vec![0.0; pieces.iter().map(|p| p.r.dim()).max().unwrap_or(0)];
    conditional_walk(rt, k, y, profile, order, &mut |z, w| {
        total += w;
        for (p, s) in pieces.iter().zip(sums.iter_mut()) {
            let buf = &mut buf[..p.r.dim()];
            p.r.eval_into(z, buf);
            for (a, b) in s.iter_mut().zip(buf.iter()) {
                *a += w * b;
            }
        }
        Ok(())
    })?;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NonFinite { index: k });
    }
    let mut hess = nalgebra::DMatrix::<f64>::zeros(udim, udim);
    let mut grad = nalgebra::DVector::<f64>::zeros(udim);
    for (p, s) in pieces.iter().zip(&sums) {
        let m = nalgebra::DMatrix::from_fn(p.m.len(), udim, |i, j| p.m[i][j]);
        let r = nalgebra::DMatrix::from_fn(p.weight.len(), p.weight.len(), |i, j| p.weight[i][j]);
        let mean = nalgebra::DVector::from_iterator(s.len(), s.iter().map(|v| v / total));
        hess += m.transpose() * &r * &m;
        grad += m.transpose() * &r * mean;
    }
    let sol = hess
        .lu()
        .solve(&(-grad))
        .ok_or_else(|| Error::NonQuadratic(team.dms[k].label()))?;
    Ok(sol.iter().copied().collect())
}

/// Conditional expectation of the decision maker's own term at action `u`
/// given observation `y`, up to the normalizing constant of the
/// conditional law (which is divided out).
pub fn conditional_term_cost(
    rt: &ReducedTeam,
    agent: usize,
    time: usize,
    y: &[f64],
    u: &[f64],
    profile: &Profile,
    order: usize,
) -> Result<f64> {
    let team = &rt.team;
    let k = team
        .dm_index(agent, time)
        .ok_or_else(|| Error::InvalidSpec(format!("no decision maker ({agent}, {time})")))?;
    let form = team
        .form
        .as_ref()
        .ok_or_else(|| Error::NonQuadratic(team.dms[k].label()))?;
    let d = &team.dms[k];
    if u.len() != d.udim {
        return Err(Error::DimensionMismatch(format!(
            "action of {} has dimension {}",
            d.label(),
            d.udim
        )));
    }
    let term = form.dm_term(k).compile(&|v| team.layout.slot(v))?;
    let (mut total, mut acc) = (0.0, 0.0);
    conditional_walk(rt, k, y, profile, order, &mut |z, w| {
        z[d.u..d.u + d.udim].copy_from_slice(u);
        total += w;
        acc += w * term.eval(z);
        Ok(())
    })?;
    if !(total > 0.0) {
        return Err(Error::NonFinite { index: k });
    }
    Ok(acc / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{build_benchmark, Params};
    use crate::reduction::static_reduce;
    use crate::strategy::{DeterministicGridStrategy, Grid, LinearStrategy};

    fn team(name: &str) -> Team {
        Team::new(build_benchmark(name, &Params::new()).unwrap()).unwrap()
    }

    fn zero_grid(t: &Team, n: usize) -> Profile {
        t.dms
            .iter()
            .map(|d| {
                let obs = Grid::uniform(&d.observation_space, n).unwrap();
                let act = Grid::uniform(&d.action_space, n).unwrap();
                Strategy::Deterministic(DeterministicGridStrategy::constant(obs, act, &vec![0.0; d.udim]))
            })
            .collect()
    }

    fn linear(gains: &[f64]) -> Profile {
        gains
            .iter()
            .map(|g| Strategy::Linear(LinearStrategy::scalar(*g)))
            .collect()
    }

    #[test]
    fn second_moment_is_exact() {
        let t = team("witsenhausen");
        let j = expected_cost_quadrature(&t, &linear(&[1.0, 0.0]), 32).unwrap();
        assert!((j - 1.0).abs() < 1e-12, "{j}");
    }

    #[test]
    fn linear_mmse_profile_matches_formula() {
        let t = team("witsenhausen");
        let a: f64 = 1.0;
        let p = linear(&[a, a * a / (a * a + 1.0)]);
        let want = (a - 1.0).powi(2) + a * a / (a * a + 1.0);
        let j = expected_cost_quadrature(&t, &p, 64).unwrap();
        assert!((j - want).abs() < 1e-8, "{j}");
        let rt = static_reduce(&t.spec).unwrap();
        let jr = expected_cost_quadrature_reduced(&rt, &p, 64).unwrap();
        assert!((jr - want).abs() < 1e-8, "{jr}");
    }

    #[test]
    fn zero_grid_profile_costs_one_on_both_paths() {
        let t = team("witsenhausen");
        let p = zero_grid(&t, 201);
        let j = expected_cost_quadrature(&t, &p, 64).unwrap();
        assert!((j - 1.0).abs() < 1e-8, "{j}");
        let rt = static_reduce(&t.spec).unwrap();
        let jr = expected_cost_quadrature_reduced(&rt, &p, 64).unwrap();
        assert!((jr - 1.0).abs() < 1e-8, "{jr}");
    }

    #[test]
    fn grid_identity_profile_agrees_across_paths() {
        let t = team("witsenhausen");
        let d = &t.dms;
        let g1 = Grid::uniform(&d[0].observation_space, 201).unwrap();
        let a1 = Grid::uniform(&d[0].action_space, 201).unwrap();
        let g2 = Grid::uniform(&d[1].observation_space, 201).unwrap();
        let a2 = Grid::uniform(&d[1].action_space, 201).unwrap();
        let p = vec![
            Strategy::Deterministic(DeterministicGridStrategy::from_fn(g1, a1, |y| vec![0.7 * y[0]])),
            Strategy::Deterministic(DeterministicGridStrategy::from_fn(g2, a2, |y| vec![0.4 * y[0]])),
        ];
        let j = expected_cost_quadrature(&t, &p, 64).unwrap();
        let rt = static_reduce(&t.spec).unwrap();
        let jr = expected_cost_quadrature_reduced(&rt, &p, 64).unwrap();
        assert!((j - jr).abs() < 1e-6, "{j} vs {jr}");
    }

    #[test]
    fn five_dimensional_primitives_rejected() {
        let t = team("relay");
        let p = linear(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            expected_cost_quadrature(&t, &p, 8).unwrap_err(),
            Error::DimensionTooLarge { dims: 5, limit: 4 }
        );
    }

    #[test]
    fn monte_carlo_zero_profile() {
        let t = team("witsenhausen");
        let e = expected_cost_mc(&t, &linear(&[0.0, 0.0]), 7, 200_000).unwrap();
        assert!((e.estimate - 1.0).abs() < 4.0 * e.stderr, "{e:?}");
        let again = expected_cost_mc(&t, &linear(&[0.0, 0.0]), 7, 200_000).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn constant_cost_has_zero_stderr() {
        let mut spec = build_benchmark("witsenhausen", &Params::new()).unwrap();
        spec.cost = crate::cost::CostExpr::constant(5.0);
        let t = Team::new(spec).unwrap();
        let e = expected_cost_mc(&t, &linear(&[1.0, 1.0]), 1, 1000).unwrap();
        assert_eq!((e.estimate, e.stderr), (5.0, 0.0));
    }

    #[test]
    fn test_channel_zero_profile_is_source_variance() {
        let t = Team::new(build_benchmark("test_channel", &Params::new().set("sigma1", 1.5)).unwrap()).unwrap();
        let e = expected_cost_mc(&t, &linear(&[0.0, 0.0]), 3, 100_000).unwrap();
        assert!((e.estimate - 2.25).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn reduced_monte_carlo_agrees() {
        let t = team("witsenhausen");
        let rt = static_reduce(&t.spec).unwrap();
        let p = linear(&[0.8, 0.3]);
        let want = expected_cost_quadrature(&t, &p, 32).unwrap();
        let e = expected_cost_mc_reduced(&rt, &p, 11, 200_000).unwrap();
        assert!((e.estimate - want).abs() < 4.0 * e.stderr, "{e:?} vs {want}");
    }

    #[test]
    fn posterior_means() {
        let t = team("witsenhausen");
        let rt = static_reduce(&t.spec).unwrap();
        let zero = linear(&[0.0, 0.0]);
        assert!(posterior_mean(&rt, 2, 2, &[1.7], &zero, 64).unwrap()[0].abs() < 1e-12);
        let ident = linear(&[1.0, 0.0]);
        for y in [-2.0, 0.5, 3.0] {
            let m = posterior_mean(&rt, 2, 2, &[y], &ident, 64).unwrap()[0];
            assert!((m - y / 2.0).abs() < 1e-9, "{m}");
        }
        // Agent 1's own term targets its observation.
        let m = posterior_mean(&rt, 1, 1, &[0.9], &zero, 64).unwrap()[0];
        assert!((m - 0.9).abs() < 1e-12, "{m}");
    }

    #[test]
    fn posterior_mean_of_constant_target() {
        let mut spec = build_benchmark("witsenhausen", &Params::new()).unwrap();
        spec.cost = crate::cost::CostExpr::sum(vec![
            crate::cost::CostExpr::square(
                Affine::var(crate::cost::Var::Act { agent: 1, time: 1 }, 1).with_offset(vec![-3.0]),
            ),
            crate::cost::CostExpr::square(
                Affine::var(crate::cost::Var::Act { agent: 2, time: 2 }, 1)
                    .plus_scaled(crate::cost::Var::Act { agent: 1, time: 1 }, -1.0),
            ),
        ]);
        let rt = static_reduce(&spec).unwrap();
        let m = posterior_mean(&rt, 1, 1, &[-4.0], &linear(&[0.0, 0.0]), 32).unwrap()[0];
        assert!((m - 3.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_mean_minimizes_slice() {
        let t = team("witsenhausen");
        let rt = static_reduce(&t.spec).unwrap();
        let p = linear(&[0.9, 0.0]);
        for y in [-1.0, 0.3, 2.2] {
            let m = posterior_mean(&rt, 2, 2, &[y], &p, 48).unwrap();
            let c0 = conditional_term_cost(&rt, 2, 2, &[y], &m, &p, 48).unwrap();
            for d in [-1e-3, 1e-3] {
                let c = conditional_term_cost(&rt, 2, 2, &[y], &[m[0] + d], &p, 48).unwrap();
                assert!(c >= c0, "{c} < {c0}");
            }
        }
    }
}
