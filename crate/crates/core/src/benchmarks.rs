//! Factories for the standard benchmark teams.
//!
//! Noiseless observations of a Gaussian source (`y1 = x1`) are declared as
//! the observer's own noise with a zero channel mean, so the source appears
//! in costs as `y1_1`.

use std::collections::BTreeMap;

use crate::cost::{Affine, CostExpr, Var};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DecisionMaker, Dynamics, NoiseSpec, StateModel, Team, TeamSpec};
use crate::space::SpaceSpec;

pub const NAMES: [&str; 5] = [
    "witsenhausen",
    "test_channel",
    "vector_test_channel",
    "relay",
    "static_output_feedback",
];

/// Named numeric parameters; scalars are one-element vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params(pub BTreeMap<String, Vec<f64>>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: f64) -> Self {
        self.0.insert(key.to_string(), vec![value]);
        self
    }

    pub fn set_vec(mut self, key: &str, value: Vec<f64>) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    /// Parses `key=v` or `key=v1,v2,...`.
    pub fn parse_assignment(mut self, s: &str) -> Result<Self> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
        let vals = v
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| Error::Config(format!("{k}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        self.0.insert(k.trim().to_string(), vals);
        Ok(self)
    }

    pub fn scalar(&self, key: &str, default: f64) -> Result<f64> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) if v.len() == 1 && v[0].is_finite() => Ok(v[0]),
            Some(v) => Err(Error::DimensionMismatch(format!(
                "{key} must be a finite scalar, got {v:?}"
            ))),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.scalar(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::InvalidSpec(format!("{key} must be positive, got {v}")))
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.scalar(key, default as f64)?;
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidSpec(format!("{key} must be a positive integer, got {v}")))
        }
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!(
                "unknown parameter `{k}`; expected one of {known:?}"
            ))),
            None => Ok(()),
        }
    }
}

fn act(agent: usize, time: usize) -> Var {
    Var::Act { agent, time }
}

fn obs(agent: usize, time: usize) -> Var {
    Var::Obs { agent, time }
}

fn dm(
    agent: usize,
    time: usize,
    obs_half: f64,
    act_half: f64,
    dim: usize,
    channel: Affine,
    noise: NoiseSpec,
) -> DecisionMaker {
    DecisionMaker {
        agent,
        time,
        observation_space: SpaceSpec::symmetric(dim, obs_half),
        action_space: SpaceSpec::symmetric(dim, act_half),
        channel,
        noise,
    }
}

/// Builds a named benchmark and checks that it validates.
pub fn build_benchmark(name: &str, params: &Params) -> Result<TeamSpec> {
    let spec = match name {
        "witsenhausen" => witsenhausen(params)?,
        "test_channel" => test_channel(params)?,
        "vector_test_channel" => vector_test_channel(params)?,
        "relay" => relay(params)?,
        "static_output_feedback" => static_output_feedback(params)?,
        other => return Err(Error::UnknownBenchmark(other.to_string())),
    };
    Team::new(spec.clone())?;
    Ok(spec)
}

/// `c = (u1 - y1)^2 + (u2 - u1)^2`, `y1 ~ N(0, sx^2)`, `y2 = u1 + w2`.
fn witsenhausen(p: &Params) -> Result<TeamSpec> {
    p.check_known(&["sigma_x", "sigma_w"])?;
    let sx = p.positive("sigma_x", 1.0)?;
    let sw = p.positive("sigma_w", 1.0)?;
    let cost = CostExpr::sum(vec![
        CostExpr::square(Affine::var(act(1, 1), 1).plus_scaled(obs(1, 1), -1.0)),
        CostExpr::square(Affine::var(act(2, 2), 1).plus_scaled(act(1, 1), -1.0)),
    ]);
    Ok(TeamSpec {
        name: "witsenhausen".into(),
        agents: 2,
        horizon: 2,
        state: None,
        decision_makers: vec![
            dm(1, 1, 8.0 * sx, 8.0 * sx, 1, Affine::zero(1), NoiseSpec::scalar(sx * sx)),
            dm(
                2,
                2,
                8.0 * sx + 4.0 * sw,
                8.0 * sx,
                1,
                Affine::var(act(1, 1), 1),
                NoiseSpec::scalar(sw * sw),
            ),
        ],
        cost,
    })
}

/// `c = lambda |u1|^2 + |u2 - x1|^2` with `y1 = x1 ~ N(0, s1^2 I)`,
/// `y2 = u1 + w2`.
fn channel_team(name: &str, d: usize, lambda: f64, s1: f64, sw: f64) -> TeamSpec {
    let cost = CostExpr::sum(vec![
        CostExpr::weighted(Affine::var(act(1, 1), d), linalg::scaled_identity(d, lambda)),
        CostExpr::square(Affine::var(act(2, 2), d).plus(obs(1, 1), linalg::scaled_identity(d, -1.0))),
    ]);
    TeamSpec {
        name: name.into(),
        agents: 2,
        horizon: 2,
        state: None,
        decision_makers: vec![
            dm(
                1,
                1,
                8.0 * s1,
                8.0 * s1,
                d,
                Affine::zero(d),
                NoiseSpec::isotropic(d, s1 * s1),
            ),
            dm(
                2,
                2,
                8.0 * s1 + 8.0 * sw,
                8.0 * s1,
                d,
                Affine::var(act(1, 1), d),
                NoiseSpec::isotropic(d, sw * sw),
            ),
        ],
        cost,
    }
}

fn test_channel(p: &Params) -> Result<TeamSpec> {
    p.check_known(&["lambda", "sigma1", "sigma_w"])?;
    Ok(channel_team(
        "test_channel",
        1,
        p.positive("lambda", 0.05)?,
        p.positive("sigma1", 1.0)?,
        p.positive("sigma_w", 1.0)?,
    ))
}

fn vector_test_channel(p: &Params) -> Result<TeamSpec> {
    p.check_known(&["dim", "lambda", "sigma1", "sigma_w"])?;
    Ok(channel_team(
        "vector_test_channel",
        p.count("dim", 2)?,
        p.positive("lambda", 0.05)?,
        p.positive("sigma1", 1.0)?,
        p.positive("sigma_w", 1.0)?,
    ))
}

/// Encoder, `n - 2` relays and a decoder in a chain:
/// `c = (u_n - x1)^2 + sum_{i<n} lambda_i u_i^2`, `y1 = x1 + w1`,
/// `y_i = u_{i-1} + w_i`. Agent `i` acts at time `i`.
fn relay(p: &Params) -> Result<TeamSpec> {
    p.check_known(&["n", "lambda", "sigma_x", "sigma_w", "sigma_1", "box_sigmas"])?;
    let n = p.count("n", 4)?;
    if n < 2 {
        return Err(Error::InvalidSpec("relay needs n >= 2".into()));
    }
    let lambda = match p.0.get("lambda") {
        None => vec![0.1; n - 1],
        Some(v) if v.len() == 1 => vec![v[0]; n - 1],
        Some(v) if v.len() == n - 1 => v.clone(),
        Some(v) => {
            return Err(Error::DimensionMismatch(format!(
                "relay with n={n} needs {} lambda values, got {}",
                n - 1,
                v.len()
            )))
        }
    };
    if lambda.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidSpec("relay lambda values must be positive".into()));
    }
    let sx = p.positive("sigma_x", 1.0)?;
    let sw = p.positive("sigma_w", 1.0)?;
    let s1 = p.positive("sigma_1", sw)?;
    // Half-width of the observation and action boxes in standard deviations.
    let b = p.positive("box_sigmas", 8.0)?;
    let x1 = Var::State { t: 1 };
    let mut terms = vec![CostExpr::square(Affine::var(act(n, n), 1).plus_scaled(x1, -1.0))];
    for (i, l) in lambda.iter().enumerate() {
        terms.push(CostExpr::weighted(Affine::var(act(i + 1, i + 1), 1), vec![vec![*l]]));
    }
    let mut dms = vec![dm(
        1,
        1,
        b * (sx + s1),
        b * (sx + s1),
        1,
        Affine::var(x1, 1),
        NoiseSpec::scalar(s1 * s1),
    )];
    for i in 2..=n {
        dms.push(dm(
            i,
            i,
            b * (sx + s1 + sw),
            b * (sx + s1),
            1,
            Affine::var(act(i - 1, i - 1), 1),
            NoiseSpec::scalar(sw * sw),
        ));
    }
    Ok(TeamSpec {
        name: "relay".into(),
        agents: n,
        horizon: n,
        state: Some(StateModel {
            space: SpaceSpec::symmetric(1, b * sx),
            initial: NoiseSpec::scalar(sx * sx),
            dynamics: (1..n)
                .map(|t| Dynamics {
                    map: Affine::var(Var::State { t }, 1),
                    noise: None,
                })
                .collect(),
        }),
        decision_makers: dms,
        cost: CostExpr::sum(terms),
    })
}

/// One controller without memory acting on a scalar linear system:
/// `x_{t+1} = a x_t + b u_t + w0_t`, `y_t = c x_t + v_t`,
/// `cost = sum_t q x_t^2 + r u_t^2`.
fn static_output_feedback(p: &Params) -> Result<TeamSpec> {
    p.check_known(&["a", "b", "c", "q", "r", "sigma_x", "sigma_w", "sigma_v", "horizon"])?;
    let a = p.scalar("a", 1.0)?;
    let b = p.scalar("b", 1.0)?;
    let c = p.scalar("c", 1.0)?;
    let q = p.positive("q", 1.0)?;
    let r = p.positive("r", 1.0)?;
    let sx = p.positive("sigma_x", 1.0)?;
    let sw = p.positive("sigma_w", 1.0)?;
    let sv = p.positive("sigma_v", 1.0)?;
    let t_max = p.count("horizon", 2)?;
    let xs = |t| Var::State { t };
    let half = 8.0 * (sx + sw * t_max as f64);
    let mut terms = Vec::new();
    for t in 1..=t_max {
        terms.push(CostExpr::weighted(Affine::var(xs(t), 1), vec![vec![q]]));
        terms.push(CostExpr::weighted(Affine::var(act(1, t), 1), vec![vec![r]]));
    }
    let dms = (1..=t_max)
        .map(|t| {
            dm(
                1,
                t,
                c.abs() * half + 8.0 * sv,
                half,
                1,
                Affine::scaled(xs(t), c),
                NoiseSpec::scalar(sv * sv),
            )
        })
        .collect();
    Ok(TeamSpec {
        name: "static_output_feedback".into(),
        agents: 1,
        horizon: t_max,
        state: Some(StateModel {
            space: SpaceSpec::symmetric(1, half),
            initial: NoiseSpec::scalar(sx * sx),
            dynamics: (1..t_max)
                .map(|t| Dynamics {
                    map: Affine::scaled(xs(t), a).plus_scaled(act(1, t), b),
                    noise: Some(NoiseSpec::scalar(sw * sw)),
                })
                .collect(),
        }),
        decision_makers: dms,
        cost: CostExpr::sum(terms),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_benchmarks_validate_with_existence() {
        for name in NAMES {
            let spec = build_benchmark(name, &Params::new()).unwrap();
            let team = Team::new(spec).unwrap();
            let r = &team.report;
            assert!(
                r.sequential_no_sharing && r.additive_gaussian && r.lqg_form,
                "{name}: {r:?}"
            );
            assert!(r.existence_guaranteed && r.annotation.is_some(), "{name}");
        }
    }

    #[test]
    fn unrolled_costs_match_formulas() {
        let w = Team::new(build_benchmark("witsenhausen", &Params::new()).unwrap()).unwrap();
        assert_eq!(w.cost_expr.to_string(), "(u1_1 - y1_1)^2 + (u2_2 - u1_1)^2");
        let t = Team::new(build_benchmark("test_channel", &Params::new()).unwrap()).unwrap();
        assert_eq!(t.cost_expr.to_string(), "0.05*(u1_1)^2 + (u2_2 - y1_1)^2");
        let r = Team::new(build_benchmark("relay", &Params::new().set("n", 4.0)).unwrap()).unwrap();
        assert_eq!(
            r.cost_expr.to_string(),
            "(u4_4 - x1)^2 + 0.1*(u1_1)^2 + 0.1*(u2_2)^2 + 0.1*(u3_3)^2"
        );
        assert_eq!(r.primitive_dim(), 5);
    }

    #[test]
    fn unknown_names_and_bad_params_rejected() {
        assert_eq!(
            build_benchmark("nope", &Params::new()).unwrap_err(),
            Error::UnknownBenchmark("nope".into())
        );
        let bad = Params::new().set_vec("lambda", vec![0.1, 0.2]);
        assert!(matches!(
            build_benchmark("relay", &bad),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            build_benchmark("witsenhausen", &Params::new().set("bogus", 1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn params_parse_lists() {
        let p = Params::new().parse_assignment("lambda=0.1,0.2,0.3").unwrap();
        assert_eq!(p.0["lambda"], vec![0.1, 0.2, 0.3]);
        assert!(Params::new().parse_assignment("lambda").is_err());
    }
}
