//! Python bindings: team specs, static reduction, evaluation,
//! person-by-person optimization, certificates and the dyadic
//! counterexample.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use teamopt::benchmarks::{build_benchmark, Params};
use teamopt::certify::{
    check_condition_c1 as c1_check, check_ic_class, sequential_tail_mass, sequential_tightness, C1Kernel, C1Options,
    IcQuery,
};
use teamopt::config::TeamFile;
use teamopt::cost::{CostExpr, Var};
use teamopt::counterexample;
use teamopt::evaluation::{self, QuadOptions};
use teamopt::linalg;
use teamopt::model::validate_team;
use teamopt::optimize::{self, CoeffRange, PbpOptions};
use teamopt::reduction::{self, EquivalenceMethod};
use teamopt::space::SpaceSpec;
use teamopt::strategy::{DeterministicGridStrategy, LinearStrategy, Strategy};

create_exception!(teamopt_py, TeamoptError, PyException);

fn err(e: teamopt::Error) -> PyErr {
    TeamoptError::new_err(e.to_string())
}

/// Declared team problem.
#[pyclass(module = "teamopt_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct TeamSpec {
    inner: teamopt::model::TeamSpec,
}

#[pymethods]
impl TeamSpec {
    /// Benchmark by name; `params` maps names to a float or a list of floats.
    #[staticmethod]
    #[pyo3(signature = (name, params = None))]
    fn benchmark(name: &str, params: Option<std::collections::BTreeMap<String, Vec<f64>>>) -> PyResult<Self> {
        let p = Params(params.unwrap_or_default());
        Ok(Self {
            inner: build_benchmark(name, &p).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let f = TeamFile::parse(text).map_err(err)?;
        Ok(Self {
            inner: f.spec().map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        TeamFile::from_spec(self.inner.clone()).to_toml().map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    /// Validation flags as a dict.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = validate_team(&self.inner).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("sequential_no_sharing", r.sequential_no_sharing)?;
        d.set_item("additive_gaussian", r.additive_gaussian)?;
        d.set_item("lqg_form", r.lqg_form)?;
        d.set_item("existence_guaranteed", r.existence_guaranteed)?;
        d.set_item("annotation", r.annotation)?;
        d.set_item("notes", r.notes)?;
        Ok(d)
    }

    /// Unrolled cost as text.
    fn unrolled_cost(&self) -> PyResult<String> {
        Ok(teamopt::model::unroll_cost(&self.inner).map_err(err)?.expr.to_string())
    }

    fn reduce(&self) -> PyResult<ReducedTeam> {
        Ok(ReducedTeam {
            inner: reduction::static_reduce(&self.inner).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "TeamSpec({:?}, decision_makers={})",
            self.inner.name,
            self.inner.decision_makers.len()
        )
    }
}

/// Static reduction of a team.
#[pyclass(module = "teamopt_py", frozen, skip_from_py_object)]
struct ReducedTeam {
    inner: reduction::ReducedTeam,
}

#[pymethods]
impl ReducedTeam {
    fn summary(&self) -> String {
        self.inner.summary()
    }

    /// `(agent, time)` of every decision maker in causal order.
    fn decision_makers(&self) -> Vec<(usize, usize)> {
        self.inner.team.dms.iter().map(|d| (d.agent, d.time)).collect()
    }

    fn phi_factor(&self, omega0: Vec<f64>, y: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        self.inner.phi_factor(&omega0, &y, &u).map_err(err)
    }

    /// Normalization residual per channel.
    #[pyo3(signature = (omega0, u, order = 64))]
    fn phi_normalization(&self, omega0: Vec<f64>, u: Vec<f64>, order: usize) -> PyResult<Vec<f64>> {
        let r = reduction::check_phi_normalization(&self.inner, &omega0, &u, order).map_err(err)?;
        Ok(r.into_iter().map(|c| c.residual).collect())
    }

    /// Scalar gains `u = g * y` per decision maker.
    fn linear_profile(&self, gains: Vec<f64>) -> PyResult<Profile> {
        let team = &self.inner.team;
        if gains.len() != team.dms.len() {
            return Err(err(teamopt::Error::DimensionMismatch(format!(
                "{} gains for {} decision makers",
                gains.len(),
                team.dms.len()
            ))));
        }
        let strategies = team
            .dms
            .iter()
            .zip(gains)
            .map(|(d, g)| {
                LinearStrategy::new(linalg::scaled_identity(d.udim, g), vec![0.0; d.udim]).map(Strategy::Linear)
            })
            .collect::<teamopt::Result<_>>()
            .map_err(err)?;
        Ok(Profile { inner: strategies })
    }

    /// Grid profile `u = g * y` (zero when `gains` is omitted).
    #[pyo3(signature = (cells, actions = None, gains = None))]
    fn grid_profile(&self, cells: usize, actions: Option<usize>, gains: Option<Vec<f64>>) -> PyResult<Profile> {
        let team = &self.inner.team;
        let zero = optimize::zero_profile(team, cells, actions.unwrap_or(cells)).map_err(err)?;
        let gains = gains.unwrap_or_else(|| vec![0.0; team.dms.len()]);
        if gains.len() != team.dms.len() {
            return Err(err(teamopt::Error::DimensionMismatch(
                "one gain per decision maker".into(),
            )));
        }
        let inner = zero
            .into_iter()
            .zip(gains)
            .map(|(s, g)| match s {
                Strategy::Deterministic(d) => {
                    Strategy::Deterministic(DeterministicGridStrategy::from_fn(d.obs.clone(), d.act.clone(), |y| {
                        y.iter().map(|v| g * v).collect()
                    }))
                }
                s => s,
            })
            .collect();
        Ok(Profile { inner })
    }

    /// Expected cost by tensor quadrature on the dynamic (default) or the
    /// reduced form.
    #[pyo3(signature = (profile, order = 64, reduced = false))]
    fn expected_cost(&self, py: Python<'_>, profile: &Profile, order: usize, reduced: bool) -> PyResult<f64> {
        let q = QuadOptions::with_order(order);
        py.detach(|| {
            if reduced {
                evaluation::expected_cost_quadrature_reduced_with(&self.inner, &profile.inner, &q)
            } else {
                evaluation::expected_cost_quadrature_with(&self.inner.team, &profile.inner, &q)
            }
        })
        .map_err(err)
    }

    /// `(estimate, stderr)` by Monte Carlo.
    #[pyo3(signature = (profile, seed = 0, n = 1_000_000, reduced = false))]
    fn expected_cost_mc(
        &self,
        py: Python<'_>,
        profile: &Profile,
        seed: u64,
        n: usize,
        reduced: bool,
    ) -> PyResult<(f64, f64)> {
        let e = py
            .detach(|| {
                if reduced {
                    evaluation::expected_cost_mc_reduced(&self.inner, &profile.inner, seed, n)
                } else {
                    evaluation::expected_cost_mc(&self.inner.team, &profile.inner, seed, n)
                }
            })
            .map_err(err)?;
        Ok((e.estimate, e.stderr))
    }

    /// `(J, J_RST, gap)` by quadrature.
    #[pyo3(signature = (profile, order = 64))]
    fn verify_equivalence(&self, py: Python<'_>, profile: &Profile, order: usize) -> PyResult<(f64, f64, f64)> {
        let r = py
            .detach(|| {
                reduction::verify_equivalence(&self.inner, &profile.inner, EquivalenceMethod::Quadrature { order })
            })
            .map_err(err)?;
        Ok((r.j, r.j_rst, r.gap))
    }

    /// Person-by-person optimization from a grid profile.
    #[pyo3(signature = (init, max_iters = 50, tol = 1e-8, order = 64))]
    fn pbp_optimize(
        &self,
        py: Python<'_>,
        init: &Profile,
        max_iters: usize,
        tol: f64,
        order: usize,
    ) -> PyResult<PbpResult> {
        let opts = PbpOptions {
            max_iters,
            tol,
            quad: QuadOptions::with_order(order),
        };
        let r = py
            .detach(|| optimize::pbp_optimize(&self.inner, &init.inner, &opts))
            .map_err(err)?;
        Ok(PbpResult {
            trace: r.trace.iter().map(|t| (t.iteration, t.agent, t.time, t.cost)).collect(),
            converged: r.converged,
            sweeps: r.sweeps,
            profile: Profile { inner: r.profile },
        })
    }

    /// `(cost, coefficients)` of the best linear profile over a uniform
    /// coefficient grid, refined by golden section.
    #[pyo3(signature = (lo = -2.0, hi = 2.0, steps = 21))]
    fn best_linear(&self, py: Python<'_>, lo: f64, hi: f64, steps: usize) -> PyResult<(f64, Vec<f64>)> {
        let team = &self.inner.team;
        let ranges = vec![CoeffRange::new(lo, hi, steps); optimize::linear_coefficient_count(team)];
        let r = py.detach(|| optimize::best_linear(team, &ranges)).map_err(err)?;
        Ok((r.cost, r.coefficients))
    }

    /// `(slice, total)` for one decision maker.
    #[pyo3(signature = (profile, agent, time, order = 64))]
    fn cost_slice_bound(&self, profile: &Profile, agent: usize, time: usize, order: usize) -> PyResult<(f64, f64)> {
        let b = optimize::cost_slice_bound(
            &self.inner,
            &profile.inner,
            agent,
            time,
            &QuadOptions::with_order(order),
        )
        .map_err(err)?;
        Ok((b.slice, b.total))
    }

    /// Causal ladder of tightness certificates, one dict per rung. With
    /// `profile` and `samples`, each rung also carries its empirical tail.
    #[pyo3(signature = (k, eps, profile = None, samples = 0, seed = 0))]
    fn sequential_tightness<'py>(
        &self,
        py: Python<'py>,
        k: f64,
        eps: f64,
        profile: Option<&Profile>,
        samples: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rungs = py
            .detach(|| sequential_tightness(&self.inner, k, eps, 1e3, seed))
            .map_err(err)?;
        let tails = match profile {
            Some(p) if samples > 0 => Some(
                py.detach(|| sequential_tail_mass(&self.inner, &p.inner, &rungs, seed + 1, samples))
                    .map_err(err)?,
            ),
            _ => None,
        };
        rungs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let d = PyDict::new(py);
                d.set_item("agent", r.agent)?;
                d.set_item("time", r.time)?;
                d.set_item("eps", r.cert.eps)?;
                d.set_item("m", r.cert.m)?;
                d.set_item("k_box", (r.cert.k_box.lower.clone(), r.cert.k_box.upper.clone()))?;
                d.set_item("l_box", (r.cert.l_box.lower.clone(), r.cert.l_box.upper.clone()))?;
                d.set_item("consumed", r.consumed.clone())?;
                d.set_item("expr", r.expr.clone())?;
                if let Some(t) = &tails {
                    d.set_item("tail_mass", t[i].mass)?;
                    d.set_item("tail_stderr", t[i].stderr)?;
                    d.set_item("tail_limit", t[i].limit)?;
                }
                Ok(d)
            })
            .collect()
    }

    /// Coercivity check of the reduced cost in the variables `b` over the
    /// box `[-k_half, k_half]` in every other variable.
    #[pyo3(signature = (b, m, k_half = 1.0, search_box = 1e3))]
    fn check_ic<'py>(
        &self,
        py: Python<'py>,
        b: Vec<String>,
        m: f64,
        k_half: f64,
        search_box: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let team = &self.inner.team;
        let phi = self.inner.phi_prefix_expr(team.dms.len()).map_err(err)?;
        let f = CostExpr::product(vec![team.cost_expr.clone(), phi]);
        let group_b: Vec<Var> = b
            .iter()
            .map(|s| s.parse())
            .collect::<teamopt::Result<_>>()
            .map_err(err)?;
        let group_a: Vec<Var> = f.vars().into_iter().filter(|v| !group_b.contains(v)).collect();
        let da: usize = group_a.iter().map(|v| team.layout.slot(v).map_or(1, |s| s.1)).sum();
        let mut q = IcQuery::new(f, group_a, group_b, SpaceSpec::symmetric(da.max(1), k_half), m);
        q.search_box = search_box;
        let r = py.detach(|| check_ic_class(&q)).map_err(err)?;
        ic_dict(py, &r)
    }
}

fn ic_dict<'py>(py: Python<'py>, r: &teamopt::certify::IcReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("pass", r.pass)?;
    d.set_item("l_box", r.l_box.as_ref().map(|l| (l.lower.clone(), l.upper.clone())))?;
    d.set_item("analytic_inf", r.analytic_inf)?;
    d.set_item("sampled_inf", r.sampled_inf)?;
    let w: Vec<(Vec<f64>, Vec<f64>, f64)> = r.witness.iter().map(|w| (w.a.clone(), w.b.clone(), w.value)).collect();
    d.set_item("witness", w)?;
    Ok(d)
}

/// One strategy per decision maker.
#[pyclass(module = "teamopt_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Profile {
    inner: teamopt::strategy::Profile,
}

#[pymethods]
impl Profile {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn is_deterministic(&self) -> bool {
        self.inner.iter().all(|s| s.is_deterministic())
    }

    /// Action index per observation cell of a deterministic grid strategy.
    fn lookup(&self, k: usize) -> PyResult<Vec<usize>> {
        match self.inner.get(k) {
            Some(Strategy::Deterministic(d)) => Ok(d.lookup.clone()),
            _ => Err(TeamoptError::new_err(format!(
                "strategy {k} is not a deterministic grid strategy"
            ))),
        }
    }
}

#[pyclass(module = "teamopt_py", frozen, get_all)]
struct PbpResult {
    /// `(iteration, agent, time, cost)` rows.
    trace: Vec<(usize, usize, usize, f64)>,
    converged: bool,
    sweeps: usize,
    profile: Profile,
}

#[pymethods]
impl PbpResult {
    #[getter]
    fn final_cost(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.3)
    }
}

/// C1 check for the `gaussian` or `step` kernel.
#[pyfunction]
#[pyo3(signature = (kernel, variance = 1.0))]
fn check_condition_c1<'py>(py: Python<'py>, kernel: &str, variance: f64) -> PyResult<Bound<'py, PyDict>> {
    let k = C1Kernel::from_name(kernel, variance).map_err(err)?;
    let r = py.detach(|| check_condition_c1_impl(&k)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pass", r.pass)?;
    d.set_item("eps", r.eps)?;
    d.set_item("delta", r.delta)?;
    d.set_item("vc_integral", r.vc_integral)?;
    d.set_item("note", r.note)?;
    Ok(d)
}

fn check_condition_c1_impl(k: &C1Kernel) -> teamopt::Result<teamopt::certify::C1Report> {
    c1_check(k, &C1Options::default())
}

/// `(b - a)^2` style check: `sum_j (b_j - a_j)^2` on `K = [-k_half, k_half]^d`.
#[pyfunction]
#[pyo3(signature = (m, k_half = 1.0, dim = 1))]
fn check_ic_squared_difference<'py>(py: Python<'py>, m: f64, k_half: f64, dim: usize) -> PyResult<Bound<'py, PyDict>> {
    let a = Var::Obs { agent: 1, time: 1 };
    let b = Var::Act { agent: 1, time: 1 };
    let f = CostExpr::square(
        teamopt::cost::Affine::var(b, dim)
            .add(&teamopt::cost::Affine::var(a, dim).premultiply(&linalg::scaled_identity(dim, -1.0)))
            .map_err(err)?,
    );
    let q = IcQuery::new(f, vec![a], vec![b], SpaceSpec::symmetric(dim, k_half), m);
    let r = py.detach(|| check_ic_class(&q)).map_err(err)?;
    ic_dict(py, &r)
}

/// `P(A) <= E[phi 1_A] / inf_A phi` on weighted samples: `(bound, p, holds)`.
#[pyfunction]
fn generalized_markov_bound(
    phi: Vec<f64>,
    weights: Vec<f64>,
    in_set: Vec<bool>,
    inf_phi: f64,
) -> PyResult<(f64, f64, bool)> {
    let r = teamopt::certify::generalized_markov_bound(&phi, &weights, &in_set, inf_phi).map_err(err)?;
    Ok((r.bound, r.p_estimate, r.holds))
}

#[pyfunction]
fn h_n_eval(n: u32, y: f64) -> PyResult<u8> {
    counterexample::h_n_eval(n, y).map_err(err)
}

/// Exact cost of the level-`n` dyadic profile, as a fraction string.
#[pyfunction]
fn sequence_cost(n: u32) -> PyResult<String> {
    Ok(counterexample::sequence_cost(n).map_err(err)?.to_string())
}

/// `(cost, agent1, agent2)` of the limit, probabilities as fraction strings.
#[pyfunction]
fn limit_cost_and_marginals() -> (String, Vec<(u8, String)>, Vec<(u8, String)>) {
    let s = counterexample::limit_cost_and_marginals().summary();
    (s.cost, s.agent1, s.agent2)
}

/// Per-`n` report as CSV text.
#[pyfunction]
#[pyo3(signature = (n_max = 12))]
fn weak_limit_report(n_max: u32) -> PyResult<String> {
    let r = counterexample::weak_limit_report(n_max, &counterexample::default_catalog()).map_err(err)?;
    let mut buf = Vec::new();
    r.write_csv(&mut buf).map_err(err)?;
    String::from_utf8(buf).map_err(|e| TeamoptError::new_err(e.to_string()))
}

#[pymodule]
fn teamopt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TeamoptError", m.py().get_type::<TeamoptError>())?;
    m.add_class::<TeamSpec>()?;
    m.add_class::<ReducedTeam>()?;
    m.add_class::<Profile>()?;
    m.add_class::<PbpResult>()?;
    m.add_function(wrap_pyfunction!(check_condition_c1, m)?)?;
    m.add_function(wrap_pyfunction!(check_ic_squared_difference, m)?)?;
    m.add_function(wrap_pyfunction!(generalized_markov_bound, m)?)?;
    m.add_function(wrap_pyfunction!(h_n_eval, m)?)?;
    m.add_function(wrap_pyfunction!(sequence_cost, m)?)?;
    m.add_function(wrap_pyfunction!(limit_cost_and_marginals, m)?)?;
    m.add_function(wrap_pyfunction!(weak_limit_report, m)?)?;
    Ok(())
}
