//! Team declarations, structural validation and cost unrolling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{Affine, CAffine, Compiled, CostExpr, Var};
use crate::error::{Error, Result};
use crate::linalg::{self, Gaussian, Matrix};
use crate::space::SpaceSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

impl NoiseSpec {
    pub fn scalar(variance: f64) -> Self {
        Self {
            mean: vec![0.0],
            covariance: vec![vec![variance]],
        }
    }

    pub fn isotropic(dim: usize, variance: f64) -> Self {
        Self {
            mean: vec![0.0; dim],
            covariance: linalg::scaled_identity(dim, variance),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn gaussian(&self, label: &str) -> Result<Gaussian> {
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidSpec(format!("{label}: non-finite mean")));
        }
        Gaussian::new(&self.mean, &self.covariance, label)
    }
}

/// `x_{t+1} = map(x_t, u_t, ...) + w0_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub map: Affine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub space: SpaceSpec,
    pub initial: NoiseSpec,
    /// Entry `t - 1` produces `x_{t+1}`.
    #[serde(default)]
    pub dynamics: Vec<Dynamics>,
}

/// One (agent, time) pair: observes `channel(omega0, earlier actions) + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionMaker {
    pub agent: usize,
    pub time: usize,
    pub observation_space: SpaceSpec,
    pub action_space: SpaceSpec,
    pub channel: Affine,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamSpec {
    pub name: String,
    pub agents: usize,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateModel>,
    pub decision_makers: Vec<DecisionMaker>,
    pub cost: CostExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub sequential_no_sharing: bool,
    pub additive_gaussian: bool,
    pub lqg_form: bool,
    pub existence_guaranteed: bool,
    pub annotation: Option<String>,
    pub notes: Vec<String>,
}

pub const EXISTENCE_NOTE: &str = "existence guaranteed: LQG team without observation sharing, \
additive Gaussian observation noise; a team-optimal solution in deterministic strategies exists";

/// Decomposition `sum_k c_k + kappa` of the unrolled cost, where every
/// `c_k` is a sum of quadratic forms whose latest action is `u_k` with an
/// invertible coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralForm {
    pub summands: Vec<CostExpr>,
    pub per_dm: Vec<Vec<usize>>,
    pub kappa: Vec<usize>,
    pub kappa_nonnegative: bool,
}

impl StructuralForm {
    pub fn dm_term(&self, k: usize) -> CostExpr {
        let parts: Vec<CostExpr> = self.per_dm[k].iter().map(|&i| self.summands[i].clone()).collect();
        match parts.len() {
            0 => CostExpr::constant(0.0),
            1 => parts.into_iter().next().expect("one part"),
            _ => CostExpr::sum(parts),
        }
    }

    pub fn kappa_expr(&self) -> CostExpr {
        if self.kappa.is_empty() {
            CostExpr::constant(0.0)
        } else {
            CostExpr::sum(self.kappa.iter().map(|&i| self.summands[i].clone()).collect())
        }
    }
}

/// Start and length of a variable block in the flat vector.
pub type Slot = (usize, usize);

/// Flat layout: `[x1 | w0_1 .. | w_k .. | y_k .. | u_k .. | x_2 .. x_T]`.
/// The trailing states are only present in the extended layout.
#[derive(Debug, Clone)]
pub struct Layout {
    pub x1: Option<Slot>,
    pub w0: Vec<Option<Slot>>,
    pub n_free: usize,
    pub n_prim: usize,
    pub len: usize,
    pub states: Vec<Slot>,
    pub len_ext: usize,
    dm_index: Vec<((usize, usize), usize)>,
    y: Vec<Slot>,
    u: Vec<Slot>,
}

impl Layout {
    fn dm(&self, agent: usize, time: usize) -> Option<usize> {
        self.dm_index
            .iter()
            .find(|(key, _)| *key == (agent, time))
            .map(|(_, k)| *k)
    }

    pub fn slot(&self, v: &Var) -> Option<Slot> {
        match v {
            Var::State { t: 1 } => self.x1,
            Var::State { .. } => None,
            Var::ProcessNoise { t } => self.w0.get(t.checked_sub(1)?).copied().flatten(),
            Var::Obs { agent, time } => self.dm(*agent, *time).map(|k| self.y[k]),
            Var::Act { agent, time } => self.dm(*agent, *time).map(|k| self.u[k]),
        }
    }

    pub fn slot_ext(&self, v: &Var) -> Option<Slot> {
        match v {
            Var::State { t } if *t >= 2 => self.states.get(t - 2).copied(),
            other => self.slot(other),
        }
    }
}

/// A primitive block integrated against its own Gaussian law.
#[derive(Debug, Clone)]
pub struct FreeBlock {
    pub var: Var,
    pub start: usize,
    pub law: Gaussian,
}

/// Decision maker after validation, in causal order.
#[derive(Debug, Clone)]
pub struct Dm {
    pub agent: usize,
    pub time: usize,
    pub ydim: usize,
    pub udim: usize,
    pub y: usize,
    pub u: usize,
    pub w: usize,
    /// Channel mean with states unrolled.
    pub channel: Affine,
    pub h: CAffine,
    pub noise: Gaussian,
    pub observation_space: SpaceSpec,
    pub action_space: SpaceSpec,
}

impl Dm {
    pub fn obs_var(&self) -> Var {
        Var::Obs {
            agent: self.agent,
            time: self.time,
        }
    }

    pub fn act_var(&self) -> Var {
        Var::Act {
            agent: self.agent,
            time: self.time,
        }
    }

    pub fn label(&self) -> String {
        format!("({},{})", self.agent, self.time)
    }
}

/// A validated, compiled team.
#[derive(Debug, Clone)]
pub struct Team {
    pub spec: TeamSpec,
    pub layout: Layout,
    pub free: Vec<FreeBlock>,
    pub dms: Vec<Dm>,
    pub cost_expr: CostExpr,
    pub cost: Compiled,
    cost_ext: Compiled,
    state_maps: Vec<CAffine>,
    pub report: ValidationReport,
    /// Present when every decision maker owns a quadratic term.
    pub form: Option<StructuralForm>,
    /// Summands split by owner, whether or not every decision maker has one.
    pub decomposition: StructuralForm,
}

/// Unrolled cost `c(omega0, y, u)` over primitives, observations and actions.
#[derive(Debug, Clone)]
pub struct PrimitiveCost {
    pub expr: CostExpr,
    compiled: Compiled,
    layout: Layout,
    y_len: usize,
    u_len: usize,
}

impl PrimitiveCost {
    /// `omega0` holds `x1, w0_1, ..`; `y` and `u` concatenate decision makers
    /// in causal order.
    pub fn eval(&self, omega0: &[f64], y: &[f64], u: &[f64]) -> f64 {
        assert_eq!(omega0.len(), self.layout.n_free, "omega0 length");
        assert_eq!(y.len(), self.y_len, "observation length");
        assert_eq!(u.len(), self.u_len, "action length");
        let mut z = vec![0.0; self.layout.len];
        z[..self.layout.n_free].copy_from_slice(omega0);
        let y0 = self.layout.n_prim;
        z[y0..y0 + y.len()].copy_from_slice(y);
        z[y0 + y.len()..y0 + y.len() + u.len()].copy_from_slice(u);
        self.compiled.eval(&z)
    }
}

pub fn validate_team(spec: &TeamSpec) -> Result<ValidationReport> {
    Ok(Team::new(spec.clone())?.report)
}

pub fn unroll_cost(spec: &TeamSpec) -> Result<PrimitiveCost> {
    let team = Team::new(spec.clone())?;
    Ok(team.primitive_cost())
}

fn invertible(m: &Matrix) -> bool {
    let n = m.len();
    if n == 0 || m.iter().any(|r| r.len() != n) {
        return false;
    }
    let d = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j]);
    let scale = m.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    d.determinant().abs() > 1e-12 * scale.powi(n as i32)
}

impl Team {
    pub fn new(mut spec: TeamSpec) -> Result<Self> {
        if spec.agents == 0 || spec.horizon == 0 {
            return Err(Error::InvalidSpec("agents and horizon must be positive".into()));
        }
        if spec.decision_makers.is_empty() {
            return Err(Error::InvalidSpec("no decision makers declared".into()));
        }
        spec.decision_makers.sort_by_key(|d| (d.time, d.agent));
        for w in spec.decision_makers.windows(2) {
            if (w[0].agent, w[0].time) == (w[1].agent, w[1].time) {
                return Err(Error::InvalidSpec(format!(
                    "decision maker ({}, {}) declared twice",
                    w[0].agent, w[0].time
                )));
            }
        }
        let mut notes = Vec::new();

        // Free primitives.
        let mut free = Vec::new();
        let mut pos = 0;
        let mut x1 = None;
        let mut w0 = vec![None; spec.horizon.saturating_sub(1)];
        let nx = spec.state.as_ref().map_or(0, |s| s.space.dim());
        if let Some(st) = &spec.state {
            st.space.validate("state space")?;
            if st.initial.dim() != nx {
                return Err(Error::DimensionMismatch("initial state law vs state space".into()));
            }
            free.push(FreeBlock {
                var: Var::State { t: 1 },
                start: pos,
                law: st.initial.gaussian("x1")?,
            });
            x1 = Some((pos, nx));
            pos += nx;
            if st.dynamics.len() != spec.horizon - 1 {
                return Err(Error::InvalidSpec(format!(
                    "expected {} dynamics maps, found {}",
                    spec.horizon - 1,
                    st.dynamics.len()
                )));
            }
            for (i, d) in st.dynamics.iter().enumerate() {
                let t = i + 1;
                if let Some(n) = &d.noise {
                    if n.dim() != nx {
                        return Err(Error::DimensionMismatch(format!("w0_{t} vs state dimension")));
                    }
                    free.push(FreeBlock {
                        var: Var::ProcessNoise { t },
                        start: pos,
                        law: n.gaussian(&format!("w0_{t}"))?,
                    });
                    w0[i] = Some((pos, nx));
                    pos += nx;
                }
            }
        }
        let n_free = pos;

        // Decision makers: noise, observation and action blocks.
        let k_count = spec.decision_makers.len();
        let mut noises = Vec::with_capacity(k_count);
        let mut w_slots = Vec::with_capacity(k_count);
        for d in &spec.decision_makers {
            if d.agent == 0 || d.agent > spec.agents || d.time == 0 || d.time > spec.horizon {
                return Err(Error::InvalidSpec(format!(
                    "decision maker ({}, {}) outside N={} T={}",
                    d.agent, d.time, spec.agents, spec.horizon
                )));
            }
            let label = format!("w{}_{}", d.agent, d.time);
            d.observation_space.validate(&format!("observation space of {label}"))?;
            d.action_space.validate(&format!("action space of {label}"))?;
            let ydim = d.observation_space.dim();
            if d.noise.dim() != ydim || d.channel.dim() != ydim {
                return Err(Error::DimensionMismatch(format!(
                    "channel, noise and observation space of ({}, {}) disagree",
                    d.agent, d.time
                )));
            }
            noises.push(d.noise.gaussian(&label)?);
            w_slots.push(pos);
            pos += ydim;
        }
        let n_prim = pos;
        let mut y = Vec::with_capacity(k_count);
        for d in &spec.decision_makers {
            y.push((pos, d.observation_space.dim()));
            pos += d.observation_space.dim();
        }
        let mut u = Vec::with_capacity(k_count);
        for d in &spec.decision_makers {
            u.push((pos, d.action_space.dim()));
            pos += d.action_space.dim();
        }
        let len = pos;
        let mut states = Vec::new();
        if spec.state.is_some() {
            for _ in 2..=spec.horizon {
                states.push((pos, nx));
                pos += nx;
            }
        }
        let layout = Layout {
            x1,
            w0,
            n_free,
            n_prim,
            len,
            states,
            len_ext: pos,
            dm_index: spec
                .decision_makers
                .iter()
                .enumerate()
                .map(|(k, d)| ((d.agent, d.time), k))
                .collect(),
            y,
            u,
        };
        let dim_ext = |v: &Var| layout.slot_ext(v).map(|s| s.1);
        let time_of_act = |v: &Var| match v {
            Var::Act { time, .. } => Some(*time),
            _ => None,
        };

        // Unroll states: x_t as affine maps over primitives and actions.
        let mut unrolled_states: Vec<Affine> = Vec::new();
        if let Some(st) = &spec.state {
            unrolled_states.push(Affine::var(Var::State { t: 1 }, nx));
            for (i, d) in st.dynamics.iter().enumerate() {
                let t = i + 1;
                if d.map.dim() != nx {
                    return Err(Error::DimensionMismatch(format!("dynamics map {t} output dimension")));
                }
                d.map.check_shapes(&dim_ext)?;
                for v in d.map.vars() {
                    match v {
                        Var::Obs { .. } => {
                            return Err(Error::InvalidSpec(format!("dynamics map {t} reads observation {v}")))
                        }
                        Var::State { t: s } if s > t => {
                            return Err(Error::InvalidSpec(format!("dynamics map {t} reads future state {v}")))
                        }
                        Var::Act { time, .. } if time > t => {
                            return Err(Error::InvalidSpec(format!("dynamics map {t} reads future action {v}")))
                        }
                        _ => {}
                    }
                }
                let prev = unrolled_states.clone();
                let mut next = d.map.substitute(&|v| match v {
                    Var::State { t: s } => prev.get(s - 1).cloned(),
                    _ => None,
                })?;
                if d.noise.is_some() {
                    next = next.add(&Affine::var(Var::ProcessNoise { t }, nx))?;
                }
                unrolled_states.push(next);
            }
        }
        let state_sub = |v: &Var| match v {
            Var::State { t } if *t >= 2 => unrolled_states.get(t - 1).cloned(),
            _ => None,
        };

        // Channels: unroll, check information structure.
        let mut sequential = true;
        let mut dms = Vec::with_capacity(k_count);
        for (k, d) in spec.decision_makers.iter().enumerate() {
            d.channel.check_shapes(&dim_ext)?;
            let channel = d.channel.substitute(&state_sub)?;
            for v in channel.vars() {
                match v {
                    Var::Obs { .. } => {
                        return Err(Error::InformationStructure(format!(
                            "observation of ({}, {}) reads observation {v}",
                            d.agent, d.time
                        )))
                    }
                    Var::Act { time, .. } if time >= d.time => {
                        sequential = false;
                        notes.push(format!(
                            "observation of ({}, {}) depends on {v}, which is not strictly earlier",
                            d.agent, d.time
                        ));
                    }
                    _ => {}
                }
            }
            let h = CAffine::compile(&channel, &|v| layout.slot(v))?;
            dms.push(Dm {
                agent: d.agent,
                time: d.time,
                ydim: d.observation_space.dim(),
                udim: d.action_space.dim(),
                y: layout.y[k].0,
                u: layout.u[k].0,
                w: w_slots[k],
                channel,
                h,
                noise: noises[k].clone(),
                observation_space: d.observation_space.clone(),
                action_space: d.action_space.clone(),
            });
        }

        // Cost.
        spec.cost.validate(&dim_ext)?;
        let cost_expr = spec.cost.substitute(&state_sub)?;
        let cost = cost_expr.compile(&|v| layout.slot(v))?;
        let cost_ext = spec.cost.compile(&|v| layout.slot_ext(v))?;
        let state_maps = unrolled_states
            .iter()
            .skip(1)
            .map(|a| CAffine::compile(a, &|v| layout.slot(v)))
            .collect::<Result<Vec<_>>>()?;

        // Structural form.
        let summands: Vec<CostExpr> = cost_expr.summands().into_iter().cloned().collect();
        let mut per_dm = vec![Vec::new(); k_count];
        let mut kappa = Vec::new();
        let mut kappa_ok = true;
        for (i, s) in summands.iter().enumerate() {
            let owner = match s {
                CostExpr::Quadratic { arg, .. } => {
                    let latest = arg
                        .normalized()
                        .terms
                        .iter()
                        .filter_map(|t| match t.var {
                            Var::Act { agent, time } => layout.dm(agent, time),
                            _ => None,
                        })
                        .max();
                    latest.filter(|&k| {
                        let dk = &dms[k];
                        let own_ok = arg.coeff_of(&dk.act_var()).is_some_and(|c| invertible(&c));
                        let rest_ok = arg.vars().iter().all(|v| match v {
                            Var::Act { .. } => *v == dk.act_var() || time_of_act(v).is_some_and(|t| t < dk.time),
                            Var::Obs { time, .. } => *v == dk.obs_var() || *time < dk.time,
                            _ => true,
                        });
                        own_ok && rest_ok
                    })
                }
                _ => None,
            };
            match owner {
                Some(k) => per_dm[k].push(i),
                None => {
                    kappa_ok &= s.is_nonnegative();
                    kappa.push(i);
                }
            }
        }
        let all_owned = per_dm.iter().all(|v| !v.is_empty());
        if !all_owned {
            for (k, v) in per_dm.iter().enumerate() {
                if v.is_empty() {
                    notes.push(format!(
                        "no quadratic term |u - p|^2_R found for decision maker {}",
                        dms[k].label()
                    ));
                }
            }
        }
        if !kappa_ok {
            notes.push("residual term is not syntactically nonnegative".into());
        }
        let lqg_form = all_owned && kappa_ok;
        let decomposition = StructuralForm {
            summands,
            per_dm,
            kappa,
            kappa_nonnegative: kappa_ok,
        };
        let form = all_owned.then(|| decomposition.clone());
        let existence = sequential && lqg_form;
        let report = ValidationReport {
            sequential_no_sharing: sequential,
            additive_gaussian: true,
            lqg_form,
            existence_guaranteed: existence,
            annotation: existence.then(|| EXISTENCE_NOTE.to_string()),
            notes,
        };
        Ok(Self {
            spec,
            layout,
            free,
            dms,
            cost_expr,
            cost,
            cost_ext,
            state_maps,
            report,
            form,
            decomposition,
        })
    }

    pub fn primitive_cost(&self) -> PrimitiveCost {
        PrimitiveCost {
            expr: self.cost_expr.clone(),
            compiled: self.cost.clone(),
            layout: self.layout.clone(),
            y_len: self.dms.iter().map(|d| d.ydim).sum(),
            u_len: self.dms.iter().map(|d| d.udim).sum(),
        }
    }

    /// Index of a decision maker in causal order.
    pub fn dm_index(&self, agent: usize, time: usize) -> Option<usize> {
        self.layout.dm(agent, time)
    }

    /// Total dimension of the primitive random variables.
    pub fn primitive_dim(&self) -> usize {
        self.layout.n_prim
    }

    pub fn primitive_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for b in &self.free {
            for j in 0..b.law.dim() {
                names.push(if b.law.dim() == 1 {
                    b.var.to_string()
                } else {
                    format!("{}[{j}]", b.var)
                });
            }
        }
        for d in &self.dms {
            for j in 0..d.ydim {
                names.push(if d.ydim == 1 {
                    format!("w{}_{}", d.agent, d.time)
                } else {
                    format!("w{}_{}[{j}]", d.agent, d.time)
                });
            }
        }
        names
    }

    /// Draws all primitives of one sample into `z[..n_prim]`.
    pub fn draw_primitives(&self, rng: &mut ChaCha8Rng, z: &mut [f64]) {
        let widest = self
            .free
            .iter()
            .map(|b| b.law.dim())
            .chain(self.dms.iter().map(|d| d.ydim))
            .max()
            .unwrap_or(0);
        let mut buf = vec![0.0f64; widest];
        for b in &self.free {
            let d = b.law.dim();
            for v in buf[..d].iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            b.law.transform(&buf[..d], &mut z[b.start..b.start + d]);
        }
        for dm in &self.dms {
            let d = dm.ydim;
            for v in buf[..d].iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            dm.noise.transform(&buf[..d], &mut z[dm.w..dm.w + d]);
        }
    }

    /// Evaluates the declared (non-unrolled) cost on the simulated
    /// trajectory of `omega0` and actions `u`, with observations `y` taken
    /// as given.
    pub fn trajectory_cost(&self, omega0: &[f64], y: &[f64], u: &[f64]) -> f64 {
        let mut z = vec![0.0; self.layout.len_ext];
        z[..self.layout.n_free].copy_from_slice(omega0);
        let y0 = self.layout.n_prim;
        z[y0..y0 + y.len()].copy_from_slice(y);
        z[y0 + y.len()..y0 + y.len() + u.len()].copy_from_slice(u);
        // States are simulated step by step from the declared dynamics.
        if let Some(st) = &self.spec.state {
            for (i, d) in st.dynamics.iter().enumerate() {
                let m = CAffine::compile(&d.map, &|v| self.layout.slot_ext(v)).expect("validated map");
                let mut next = vec![0.0; m.dim()];
                m.eval_into(&z, &mut next);
                if let Some((s0, n)) = self.layout.w0[i] {
                    for (a, b) in next.iter_mut().zip(&z[s0..s0 + n]) {
                        *a += b;
                    }
                }
                let (s0, n) = self.layout.states[i];
                z[s0..s0 + n].copy_from_slice(&next);
            }
        }
        self.cost_ext.eval(&z)
    }

    /// States `x_2..x_T` of the flat vector `z`, from the unrolled maps.
    pub fn states_of(&self, z: &[f64]) -> Vec<Vec<f64>> {
        self.state_maps
            .iter()
            .map(|m| {
                let mut out = vec![0.0; m.dim()];
                m.eval_into(z, &mut out);
                out
            })
            .collect()
    }
}

/// Counter-based stream: sample `i` of seed `seed` is reproducible on its own.
pub fn sample_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

/// Table of primitive draws, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveTable {
    pub names: Vec<String>,
    pub n: usize,
    pub data: Vec<f64>,
}

impl PrimitiveTable {
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.names.len();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let d = self.names.len();
        (0..self.n).map(move |i| self.data[i * d + j])
    }
}

pub fn sample_primitives(team: &Team, seed: u64, n: usize) -> Result<PrimitiveTable> {
    if n == 0 {
        return Err(Error::InvalidSpec("sample size must be at least 1".into()));
    }
    let d = team.primitive_dim();
    let mut data = vec![0.0; n * d];
    data.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let mut rng = sample_rng(seed, i as u64);
        let mut z = vec![0.0; d];
        team.draw_primitives(&mut rng, &mut z);
        row.copy_from_slice(&z);
    });
    Ok(PrimitiveTable {
        names: team.primitive_names(),
        n,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{build_benchmark, Params};
    use proptest::prelude::*;

    fn witsenhausen() -> TeamSpec {
        build_benchmark("witsenhausen", &Params::new()).unwrap()
    }

    /// `x2 = x1 + u1`, cost `x2^2`, one decision maker observing `x1 + w`.
    fn one_step() -> TeamSpec {
        let u = Var::Act { agent: 1, time: 1 };
        TeamSpec {
            name: "one_step".into(),
            agents: 1,
            horizon: 2,
            state: Some(StateModel {
                space: SpaceSpec::symmetric(1, 8.0),
                initial: NoiseSpec::scalar(1.0),
                dynamics: vec![Dynamics {
                    map: Affine::var(Var::State { t: 1 }, 1).plus_scaled(u, 1.0),
                    noise: None,
                }],
            }),
            decision_makers: vec![DecisionMaker {
                agent: 1,
                time: 1,
                observation_space: SpaceSpec::symmetric(1, 8.0),
                action_space: SpaceSpec::symmetric(1, 8.0),
                channel: Affine::var(Var::State { t: 1 }, 1),
                noise: NoiseSpec::scalar(1.0),
            }],
            cost: CostExpr::sum(vec![
                CostExpr::square(Affine::var(Var::State { t: 2 }, 1)),
                CostExpr::square(Affine::var(u, 1)),
            ]),
        }
    }

    #[test]
    fn witsenhausen_unrolls_to_declared_formula() {
        let c = unroll_cost(&witsenhausen()).unwrap();
        assert_eq!(c.expr.to_string(), "(u1_1 - y1_1)^2 + (u2_2 - u1_1)^2");
        assert_eq!(c.eval(&[], &[2.0, 0.5], &[1.0, 3.0]), 1.0 + 4.0);
    }

    #[test]
    fn one_step_system_substitutes_dynamics() {
        let c = unroll_cost(&one_step()).unwrap();
        assert!(c.expr.to_string().starts_with("(x1 + u1_1)^2"), "{}", c.expr);
        assert_eq!(c.eval(&[1.5], &[0.0], &[-0.5]), 1.0 + 0.25);
    }

    #[test]
    fn validation_is_pure_and_flags_existence() {
        let a = validate_team(&witsenhausen()).unwrap();
        assert_eq!(a, validate_team(&witsenhausen()).unwrap());
        assert!(a.sequential_no_sharing && a.additive_gaussian && a.lqg_form);
        assert_eq!(a.annotation.as_deref(), Some(EXISTENCE_NOTE));
    }

    #[test]
    fn singular_noise_rejected() {
        let mut s = witsenhausen();
        s.decision_makers[1].noise = NoiseSpec::scalar(0.0);
        assert!(matches!(validate_team(&s), Err(Error::SingularNoise(_))));
    }

    #[test]
    fn observation_sharing_rejected() {
        let mut s = witsenhausen();
        s.decision_makers[1].channel = Affine::var(Var::Obs { agent: 1, time: 1 }, 1);
        assert!(matches!(validate_team(&s), Err(Error::InformationStructure(_))));
    }

    #[test]
    fn simultaneous_action_breaks_sequentiality() {
        let mut s = witsenhausen();
        s.decision_makers[1].channel = Affine::zero(1).plus_scaled(Var::Act { agent: 2, time: 2 }, 1.0);
        let r = validate_team(&s).unwrap();
        assert!(!r.sequential_no_sharing && !r.existence_guaranteed);
    }

    #[test]
    fn missing_own_quadratic_term_loses_lqg_form() {
        let mut s = witsenhausen();
        s.cost = CostExpr::square(
            Affine::var(Var::Act { agent: 2, time: 2 }, 1).plus_scaled(Var::Act { agent: 1, time: 1 }, -1.0),
        );
        let r = validate_team(&s).unwrap();
        assert!(!r.lqg_form && r.annotation.is_none());
        assert!(r.notes.iter().any(|n| n.contains("(1,1)")));
    }

    #[test]
    fn sampling_is_reproducible() {
        let team = Team::new(witsenhausen()).unwrap();
        let a = sample_primitives(&team, 0, 2).unwrap();
        assert_eq!(a, sample_primitives(&team, 0, 2).unwrap());
        assert_ne!(a, sample_primitives(&team, 1, 2).unwrap());
        assert_eq!(a.names, vec!["w1_1", "w2_2"]);
        assert!(sample_primitives(&team, 0, 0).is_err());
    }

    #[test]
    fn sample_moments_and_independence() {
        let team = Team::new(build_benchmark("test_channel", &Params::new()).unwrap()).unwrap();
        let n = 1_000_000;
        let t = sample_primitives(&team, 11, n).unwrap();
        let tol = 4.0 / (n as f64).sqrt();
        let x: Vec<f64> = t.column(0).collect();
        let w: Vec<f64> = t.column(t.names.len() - 1).collect();
        let mean_w = w.iter().sum::<f64>() / n as f64;
        assert!(mean_w.abs() < tol, "{mean_w}");
        let corr = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        assert!(corr.abs() < tol, "{corr}");
    }

    #[test]
    fn disjoint_seeds_pass_chi_square() {
        // 4x4 contingency table of sign/magnitude quartiles across two seeds.
        let team = Team::new(witsenhausen()).unwrap();
        let n = 20_000;
        let (a, b) = (
            sample_primitives(&team, 3, n).unwrap(),
            sample_primitives(&team, 4, n).unwrap(),
        );
        let q = 0.674_489_750_196_081_7;
        let bin = |v: f64| {
            if v < -q {
                0
            } else if v < 0.0 {
                1
            } else if v < q {
                2
            } else {
                3
            }
        };
        let mut table = [[0.0f64; 4]; 4];
        for (x, y) in a.column(0).zip(b.column(0)) {
            table[bin(x)][bin(y)] += 1.0;
        }
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..4).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let mut chi2 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let e = rows[i] * cols[j] / n as f64;
                chi2 += (table[i][j] - e).powi(2) / e;
            }
        }
        // 0.999 quantile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 27.877, "{chi2}");
    }

    #[test]
    fn layout_places_blocks_in_order() {
        let team = Team::new(one_step()).unwrap();
        let l = &team.layout;
        assert_eq!(l.x1, Some((0, 1)));
        assert_eq!(l.slot(&Var::Obs { agent: 1, time: 1 }), Some((2, 1)));
        assert_eq!(l.slot(&Var::Act { agent: 1, time: 1 }), Some((3, 1)));
        assert_eq!(l.slot_ext(&Var::State { t: 2 }), Some((4, 1)));
        assert_eq!(team.states_of(&[1.0, 0.0, 0.0, 2.0]), vec![vec![3.0]]);
    }

    proptest! {
        #[test]
        fn trajectory_cost_equals_unrolled(x in -5.0f64..5.0, w in -3.0f64..3.0, u in -5.0f64..5.0) {
            let team = Team::new(one_step()).unwrap();
            let c = team.primitive_cost();
            let y = x + w;
            prop_assert_eq!(team.trajectory_cost(&[x], &[y], &[u]), c.eval(&[x], &[y], &[u]));
        }

        #[test]
        fn relay_trajectory_cost_equals_unrolled(v in prop::collection::vec(-3.0f64..3.0, 10)) {
            let team = Team::new(build_benchmark("relay", &Params::new().set("n", 3.0)).unwrap()).unwrap();
            let nf = team.layout.n_free;
            let ny: usize = team.dms.iter().map(|d| d.ydim).sum();
            let nu: usize = team.dms.iter().map(|d| d.udim).sum();
            let (o, rest) = v.split_at(nf);
            let (y, rest) = rest.split_at(ny);
            let u = &rest[..nu];
            let a = team.trajectory_cost(o, y, u);
            let b = team.primitive_cost().eval(o, y, u);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{} vs {}", a, b);
        }
    }
}
