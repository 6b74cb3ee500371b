//! Person-by-person best responses, best linear profiles and the cost-slice
//! bound.
//!
//! Best responses are computed on the reduced team with the fixed
//! cell-aligned observation rules of the evaluation engine. For decision
//! maker `k` and cell `c` the table `Q[c][a]` is the weighted cost of taking
//! action `a` on every node of `c`, integrated over everything else. The
//! exact discrete cost of the updated profile is `sum_c min_a Q[c][a]`, so
//! the trace cannot increase.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::{Engine, QuadOptions};
use crate::model::Team;
use crate::reduction::ReducedTeam;
use crate::strategy::{
    as_behavioral, determinize, DeterministicGridStrategy, Grid, LinearStrategy, Prepared, Profile, Strategy,
};

/// Deterministic grid profile that plays the action point nearest to zero.
pub fn zero_profile(team: &Team, cells: usize, actions: usize) -> Result<Profile> {
    team.dms
        .iter()
        .map(|d| {
            let obs = Grid::uniform(&d.observation_space, cells)?;
            let act = Grid::uniform(&d.action_space, actions)?;
            Ok(Strategy::Deterministic(DeterministicGridStrategy::constant(
                obs,
                act,
                &vec![0.0; d.udim],
            )))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PbpOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub quad: QuadOptions,
}

impl Default for PbpOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-8,
            quad: QuadOptions::with_order(64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    /// Sweep number; 0 is the initial profile.
    pub iteration: usize,
    pub agent: usize,
    pub time: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PbpResult {
    pub profile: Profile,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub sweeps: usize,
}

impl PbpResult {
    pub fn final_cost(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.cost)
    }
}

/// Conditional cost table of decision maker `k` against the engine's
/// current strategies of everybody else.
fn best_response_table(e: &Engine<'_>, k: usize) -> Result<Vec<Vec<f64>>> {
    let team = e.team;
    let d = &team.dms[k];
    let (udim, points, grid) = match &e.strat[k] {
        Prepared::Grid { obs, udim, points, .. } => (*udim, points, obs),
        Prepared::Linear { .. } => return Err(Error::InvalidStrategy("best responses need grid strategies".into())),
    };
    let n_act = points.len() / udim;
    let set = &e.fixed[k];
    let mut by_cell: Vec<Vec<usize>> = vec![Vec::new(); grid.len()];
    for i in 0..set.len() {
        by_cell[grid.locate(set.point(i))].push(i);
    }
    let stop = team.dms.len();
    let cost = &team.cost;
    by_cell
        .par_iter()
        .map(|nodes| {
            let mut q = vec![0.0; n_act];
            if nodes.is_empty() {
                return Ok(q);
            }
            for o in 0..e.outer.len() {
                let mut z = vec![0.0; team.layout.len];
                z[..e.outer.dim].copy_from_slice(e.outer.point(o));
                e.walk(0, k, &mut z, e.outer.weights[o], &mut |z, w| {
                    let (h, set) = e.level(k, z);
                    for &i in nodes {
                        let wy = w * e.place(k, &set, i, &h, z)?;
                        if wy == 0.0 {
                            continue;
                        }
                        for (a, qa) in q.iter_mut().enumerate() {
                            z[d.u..d.u + udim].copy_from_slice(&points[a * udim..(a + 1) * udim]);
                            let mut s = 0.0;
                            e.walk(k + 1, stop, z, 1.0, &mut |z, w2| {
                                s += w2 * cost.eval(z);
                                Ok(())
                            })?;
                            *qa += wy * s;
                        }
                    }
                    Ok(())
                })?;
            }
            Ok(q)
        })
        .collect()
}

fn behavioral_of(s: &Strategy) -> Result<crate::strategy::BehavioralGridStrategy> {
    match s {
        Strategy::Behavioral(b) => Ok(b.clone()),
        Strategy::Deterministic(d) => Ok(as_behavioral(d)),
        Strategy::Linear(_) => Err(Error::InvalidStrategy("best responses need grid strategies".into())),
    }
}

/// Cyclic exact cell-wise best responses in causal order until one sweep
/// improves the cost by less than `tol`.
pub fn pbp_optimize(rt: &ReducedTeam, init: &Profile, opts: &PbpOptions) -> Result<PbpResult> {
    let team = &rt.team;
    let mut profile = init.clone();
    let mut beh = profile.iter().map(behavioral_of).collect::<Result<Vec<_>>>()?;
    let mut engine = Engine::reduced(rt, &profile, opts.quad.clone())?;
    let j0 = engine.integrate(&|z| team.cost.eval(z))?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        agent: 0,
        time: 0,
        cost: j0,
    }];
    let mut current = j0;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_iters {
        sweeps += 1;
        let start = current;
        for k in 0..team.dms.len() {
            let q = best_response_table(&engine, k)?;
            let det = determinize(&beh[k], &q)?;
            current = q.iter().zip(&det.lookup).map(|(row, &a)| row[a]).sum();
            beh[k] = as_behavioral(&det);
            profile[k] = Strategy::Deterministic(det);
            engine.strat[k] = Prepared::new(&profile[k]);
            trace.push(TraceEntry {
                iteration: sweeps,
                agent: team.dms[k].agent,
                time: team.dms[k].time,
                cost: current,
            });
        }
        if start - current < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(PbpResult {
        profile,
        trace,
        converged,
        sweeps,
    })
}

/// `int c_k phi dlambda` on the reduced team's discrete scheme, together
/// with the full cost on the same scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SliceBound {
    pub slice: f64,
    pub total: f64,
}

impl SliceBound {
    pub fn holds(&self) -> bool {
        self.slice <= self.total + 1e-8
    }
}

/// Expected value of one decision maker's own cost terms under the reduced
/// measure, next to the full expected cost. A decision maker without own
/// terms has slice 0.
pub fn cost_slice_bound(
    rt: &ReducedTeam,
    profile: &Profile,
    agent: usize,
    time: usize,
    quad: &QuadOptions,
) -> Result<SliceBound> {
    let team = &rt.team;
    let form = &team.decomposition;
    if !form.kappa_nonnegative {
        return Err(Error::FormMismatch(
            "residual cost is not syntactically nonnegative".into(),
        ));
    }
    let k = team
        .dm_index(agent, time)
        .ok_or_else(|| Error::InvalidSpec(format!("no decision maker ({agent}, {time})")))?;
    let term = form.dm_term(k).compile(&|v| team.layout.slot(v))?;
    let e = Engine::reduced(rt, profile, quad.clone())?;
    let slice = e.integrate(&|z| term.eval(z))?;
    let total = e.integrate(&|z| team.cost.eval(z))?;
    Ok(SliceBound { slice, total })
}

/// Range of one linear coefficient: `n` evenly spaced values on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoeffRange {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl CoeffRange {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self { lo, hi, n }
    }

    fn value(&self, i: usize) -> f64 {
        if self.n <= 1 {
            0.5 * (self.lo + self.hi)
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }

    fn step(&self) -> f64 {
        if self.n <= 1 {
            0.0
        } else {
            (self.hi - self.lo) / (self.n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestLinear {
    pub profile: Profile,
    /// Gains in causal order, each row-major.
    pub coefficients: Vec<f64>,
    pub cost: f64,
}

/// Number of linear gains of a team.
pub fn linear_coefficient_count(team: &Team) -> usize {
    team.dms.iter().map(|d| d.ydim * d.udim).sum()
}

fn linear_profile(team: &Team, c: &[f64]) -> Profile {
    let mut off = 0;
    team.dms
        .iter()
        .map(|d| {
            let gain = (0..d.udim)
                .map(|i| c[off + i * d.ydim..off + (i + 1) * d.ydim].to_vec())
                .collect();
            off += d.ydim * d.udim;
            Strategy::Linear(LinearStrategy {
                gain,
                offset: vec![0.0; d.udim],
            })
        })
        .collect()
}

/// Evaluator for linear profiles. Polynomial costs are integrated exactly
/// by the smallest Gauss-Hermite order that covers their degree.
struct LinearEval<'a> {
    team: &'a Team,
    opts: QuadOptions,
}

impl<'a> LinearEval<'a> {
    fn new(team: &'a Team) -> Self {
        let order = match team.cost_expr.degree() {
            Some(deg) => (deg as usize + 2) / 2,
            None => 24,
        };
        let mut opts = QuadOptions::with_order(order.max(1));
        opts.max_dims = usize::MAX;
        opts.node_budget = 1e8;
        Self { team, opts }
    }

    fn cost(&self, c: &[f64]) -> f64 {
        let p = linear_profile(self.team, c);
        Engine::dynamic(self.team, &p, self.opts.clone())
            .and_then(|e| e.integrate(&|z| self.team.cost.eval(z)))
            .unwrap_or(f64::INFINITY)
    }
}

fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Exhaustive search over the coefficient grid (at most 10^6 points),
/// then coordinate-wise golden-section refinement within one grid step.
/// Offsets are fixed at zero.
pub fn best_linear(team: &Team, grid: &[CoeffRange]) -> Result<BestLinear> {
    let m = linear_coefficient_count(team);
    if grid.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} linear coefficients, {} ranges given",
            grid.len()
        )));
    }
    if grid.iter().any(|r| r.n == 0 || !(r.lo <= r.hi)) {
        return Err(Error::InvalidSpec("coefficient ranges need n >= 1 and lo <= hi".into()));
    }
    let total = grid
        .iter()
        .try_fold(1usize, |acc, r| acc.checked_mul(r.n))
        .unwrap_or(usize::MAX);
    if total > 1_000_000 {
        return Err(Error::GridTooLarge(total));
    }
    let ev = LinearEval::new(team);
    let point = |idx: usize| {
        let mut rem = idx;
        let mut c = vec![0.0; m];
        for j in (0..m).rev() {
            c[j] = grid[j].value(rem % grid[j].n);
            rem /= grid[j].n;
        }
        c
    };
    let costs: Vec<f64> = (0..total).into_par_iter().map(|i| ev.cost(&point(i))).collect();
    let mut best = 0;
    for (i, v) in costs.iter().enumerate() {
        if *v < costs[best] {
            best = i;
        }
    }
    let mut c = point(best);
    let mut fc = costs[best];
    if !fc.is_finite() {
        return Err(Error::NonFinite { index: best });
    }
    for _cycle in 0..500 {
        let before = fc;
        for j in 0..m {
            let step = grid[j].step().max(1e-3 * (1.0 + c[j].abs()));
            let mut trial = c.clone();
            let (x, fx) = golden_section(
                |v| {
                    trial[j] = v;
                    ev.cost(&trial)
                },
                c[j] - step,
                c[j] + step,
                60,
            );
            if fx < fc {
                c[j] = x;
                fc = fx;
            }
        }
        if before - fc <= 1e-13 * (1.0 + fc.abs()) {
            break;
        }
    }
    Ok(BestLinear {
        profile: linear_profile(team, &c),
        coefficients: c,
        cost: fc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{build_benchmark, Params};
    use crate::cost::{Affine, CostExpr, Var};
    use crate::model::{DecisionMaker, NoiseSpec, TeamSpec};
    use crate::reduction::static_reduce;
    use crate::space::SpaceSpec;

    const Y: Var = Var::Obs { agent: 1, time: 1 };
    const U: Var = Var::Act { agent: 1, time: 1 };

    fn reduced(name: &str, p: Params) -> ReducedTeam {
        static_reduce(&build_benchmark(name, &p).unwrap()).unwrap()
    }

    fn quick() -> PbpOptions {
        let mut quad = QuadOptions::with_order(16);
        quad.per_segment = 2;
        PbpOptions {
            max_iters: 4,
            tol: 1e-8,
            quad,
        }
    }

    #[test]
    fn best_linear_witsenhausen() {
        let rt = reduced("witsenhausen", Params::new());
        let r = best_linear(
            &rt.team,
            &[CoeffRange::new(0.0, 2.0, 21), CoeffRange::new(0.0, 1.0, 21)],
        )
        .unwrap();
        // Independent oracle: J(a) = (a-1)^2 + a^2/(a^2+1) at b = a^2/(a^2+1).
        let j = |a: f64| (a - 1.0).powi(2) + a * a / (a * a + 1.0);
        let a = r.coefficients[0];
        assert!((r.cost - j(a)).abs() < 1e-9, "{r:?}");
        assert!((r.cost - 0.418_587_8).abs() < 1e-6, "{r:?}");
        assert!((r.coefficients[1] - a * a / (a * a + 1.0)).abs() < 1e-4);
    }

    #[test]
    fn best_linear_rejects_bad_grids() {
        let rt = reduced("witsenhausen", Params::new());
        let big = CoeffRange::new(0.0, 1.0, 1001);
        assert!(matches!(
            best_linear(&rt.team, &[big, big]),
            Err(Error::GridTooLarge(_))
        ));
        assert!(matches!(
            best_linear(&rt.team, &[big]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn pbp_trace_is_monotone() {
        let rt = reduced("witsenhausen", Params::new());
        let init: Profile = zero_profile(&rt.team, 41, 41)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(k, s)| match s {
                Strategy::Deterministic(d) if k == 0 => {
                    Strategy::Deterministic(DeterministicGridStrategy::from_fn(d.obs.clone(), d.act.clone(), |y| {
                        vec![0.7 * y[0]]
                    }))
                }
                s => s,
            })
            .collect();
        let r = pbp_optimize(&rt, &init, &quick()).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1].cost <= w[0].cost + 1e-12, "{:?}", r.trace);
        }
        assert!(r.final_cost() < 0.5, "{}", r.final_cost());
        let check = crate::evaluation::expected_cost_quadrature_reduced_with(&rt, &r.profile, &quick().quad).unwrap();
        assert!((check - r.final_cost()).abs() < 1e-10);
    }

    #[test]
    fn zero_profile_is_a_fixed_point_of_the_test_channel() {
        let rt = reduced("test_channel", Params::new());
        let init = zero_profile(&rt.team, 41, 41).unwrap();
        let r = pbp_optimize(&rt, &init, &quick()).unwrap();
        assert!(r.converged && r.sweeps == 1);
        assert_eq!(r.profile, init);
    }

    #[test]
    fn pbp_requires_grid_strategies() {
        let rt = reduced("witsenhausen", Params::new());
        let p = vec![Strategy::Linear(LinearStrategy::scalar(1.0)); 2];
        assert!(matches!(
            pbp_optimize(&rt, &p, &quick()),
            Err(Error::InvalidStrategy(_))
        ));
    }

    /// One decision maker observing `y ~ N(0, 1)` on `[-4, 4]`.
    fn single(cost: CostExpr) -> ReducedTeam {
        let spec = TeamSpec {
            name: "single".into(),
            agents: 1,
            horizon: 1,
            state: None,
            decision_makers: vec![DecisionMaker {
                agent: 1,
                time: 1,
                observation_space: SpaceSpec::symmetric(1, 4.0),
                action_space: SpaceSpec::symmetric(1, 4.0),
                channel: Affine::zero(1),
                noise: NoiseSpec::scalar(1.0),
            }],
            cost,
        };
        static_reduce(&spec).unwrap()
    }

    #[test]
    fn single_agent_target_is_reached_in_one_sweep() {
        let rt = single(CostExpr::square(Affine::var(U, 1).plus_scaled(Y, -1.0)));
        let init = zero_profile(&rt.team, 16, 16).unwrap();
        let r = pbp_optimize(&rt, &init, &quick()).unwrap();
        let Strategy::Deterministic(d) = &r.profile[0] else {
            panic!("deterministic")
        };
        // Equal grids: the conditional mean of each cell lies in the cell,
        // so the nearest action point is the cell's own center.
        assert_eq!(d.lookup, (0..16).collect::<Vec<_>>());
        assert!(r.converged && r.sweeps == 2, "{r:?}");
        assert_eq!(r.trace[1].cost, r.final_cost());
    }

    #[test]
    fn kappa_only_slice_is_zero() {
        let rt = single(CostExpr::square(Affine::var(Y, 1)));
        let p = zero_profile(&rt.team, 16, 16).unwrap();
        let b = cost_slice_bound(&rt, &p, 1, 1, &quick().quad).unwrap();
        assert_eq!(b.slice, 0.0);
        assert!(b.holds() && (b.total - 1.0).abs() < 1e-3, "{b:?}");
    }

    #[test]
    fn slice_bound_holds_for_witsenhausen() {
        let rt = reduced("witsenhausen", Params::new());
        let p = zero_profile(&rt.team, 41, 41).unwrap();
        for (agent, time) in [(1, 1), (2, 2)] {
            let b = cost_slice_bound(&rt, &p, agent, time, &quick().quad).unwrap();
            assert!(b.holds(), "{b:?}");
        }
        assert!(cost_slice_bound(&rt, &p, 3, 3, &quick().quad).is_err());
    }
}
