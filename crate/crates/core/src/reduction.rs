//! Change of measure to an equivalent static team.
//!
//! For `y = h(omega0, u_<) + w` with `w ~ N(m, S)`, the observation law is
//! replaced by the noise law `nu = N(m, S)` and the cost is multiplied by
//! `phi(y) = eta(y - h) / eta(y)`, accumulated in log-space.

use std::fmt::Write as _;

use serde::Serialize;

use crate::cost::{Affine, CostExpr};
use crate::error::{Error, Result};
use crate::evaluation::{self, Estimate};
use crate::linalg::{self, Gaussian};
use crate::model::{Team, TeamSpec};
use crate::quadrature;
use crate::strategy::Profile;

/// Largest admissible log of the density factor.
pub const LOG_PHI_LIMIT: f64 = 700.0;

#[derive(Debug, Clone)]
pub struct ReducedChannel {
    pub agent: usize,
    pub time: usize,
    /// Mean map `h` with states unrolled.
    pub channel: Affine,
    /// Reference measure: the law of the observation noise.
    pub nu: Gaussian,
}

#[derive(Debug, Clone)]
pub struct ReducedTeam {
    pub team: Team,
    pub channels: Vec<ReducedChannel>,
}

pub fn static_reduce(spec: &TeamSpec) -> Result<ReducedTeam> {
    ReducedTeam::from_team(Team::new(spec.clone())?)
}

impl ReducedTeam {
    pub fn from_team(team: Team) -> Result<Self> {
        if !team.report.sequential_no_sharing {
            return Err(Error::NotReducible(team.report.notes.join("; ")));
        }
        if !team.report.additive_gaussian {
            return Err(Error::NotReducible("observation noise is not additive Gaussian".into()));
        }
        let channels = team
            .dms
            .iter()
            .map(|d| ReducedChannel {
                agent: d.agent,
                time: d.time,
                channel: d.channel.clone(),
                nu: d.noise.clone(),
            })
            .collect();
        Ok(Self { team, channels })
    }

    /// `log phi_k` for observation `y` and channel mean `h`.
    #[inline]
    pub fn log_phi_channel(&self, k: usize, y: &[f64], h: &[f64]) -> f64 {
        let nu = &self.channels[k].nu;
        nu.log_density_shifted(y, h) - nu.log_density(y)
    }

    /// Product of all channel factors at `(omega0, y, u)`, where `y` and `u`
    /// concatenate decision makers in causal order.
    pub fn phi_factor(&self, omega0: &[f64], y: &[f64], u: &[f64]) -> Result<f64> {
        let t = &self.team;
        let mut z = vec![0.0; t.layout.len];
        z[..t.layout.n_free].copy_from_slice(omega0);
        let y0 = t.layout.n_prim;
        z[y0..y0 + y.len()].copy_from_slice(y);
        z[y0 + y.len()..y0 + y.len() + u.len()].copy_from_slice(u);
        let mut log_phi = 0.0;
        let mut h = [0.0f64; 16];
        for (k, d) in t.dms.iter().enumerate() {
            d.h.eval_into(&z, &mut h);
            log_phi += self.log_phi_channel(k, &z[d.y..d.y + d.ydim], &h[..d.ydim]);
        }
        if !(log_phi <= LOG_PHI_LIMIT) {
            return Err(Error::PhiOverflow { log_value: log_phi });
        }
        Ok(log_phi.exp())
    }

    /// `phi_k` as a cost expression over the observation, primitives and
    /// earlier actions.
    pub fn phi_expr(&self, k: usize) -> Result<CostExpr> {
        let c = &self.channels[k];
        let d = &self.team.dms[k];
        let p = c.nu.precision_matrix();
        let n = d.ydim;
        let mean_neg: Vec<f64> = c.nu.mean().iter().map(|m| -m).collect();
        let centered = Affine::var(d.obs_var(), n).with_offset(mean_neg);
        let shifted = centered.add(&c.channel.premultiply(&linalg::scaled_identity(n, -1.0)))?;
        Ok(CostExpr::exp(CostExpr::sum(vec![
            CostExpr::product(vec![CostExpr::constant(-0.5), CostExpr::weighted(shifted, p.clone())]),
            CostExpr::product(vec![CostExpr::constant(0.5), CostExpr::weighted(centered, p)]),
        ])))
    }

    /// Product of the factors of the first `upto` decision makers.
    pub fn phi_prefix_expr(&self, upto: usize) -> Result<CostExpr> {
        let parts = (0..upto)
            .filter(|&k| {
                !self.channels[k].channel.is_constant() || self.channels[k].channel.offset.iter().any(|o| *o != 0.0)
            })
            .map(|k| self.phi_expr(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(match parts.len() {
            0 => CostExpr::constant(1.0),
            1 => parts.into_iter().next().expect("one factor"),
            _ => CostExpr::product(parts),
        })
    }

    /// Structured text summary of the reduced team.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "[reduced_team]\nname = {:?}\nchannels = {}",
            self.team.spec.name,
            self.channels.len()
        );
        for c in &self.channels {
            let _ = writeln!(s, "\n[[channel]]\nagent = {}\ntime = {}", c.agent, c.time);
            let _ = writeln!(s, "h = {:?}", c.channel.to_string());
            let _ = writeln!(s, "nu_mean = {:?}", c.nu.mean());
            let _ = writeln!(s, "nu_covariance = {:?}", c.nu.covariance_matrix());
            let trivial = c.channel.is_constant() && c.channel.offset.iter().all(|o| *o == 0.0);
            let _ = writeln!(s, "phi_identically_one = {trivial}");
        }
        let _ = writeln!(
            s,
            "\n[cost]\nreduced = {:?}",
            format!("({}) * phi", self.team.cost_expr)
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationResidual {
    pub agent: usize,
    pub time: usize,
    /// `max_j |h_j - m_j| / sigma_j`.
    pub shift_sigmas: f64,
    pub residual: f64,
    pub flagged: bool,
}

/// Residual `|int phi_k dnu_k - 1|` per channel by Gauss-Hermite over `nu_k`.
pub fn check_phi_normalization(
    rt: &ReducedTeam,
    omega0: &[f64],
    u: &[f64],
    order: usize,
) -> Result<Vec<NormalizationResidual>> {
    if order < 16 {
        return Err(Error::InvalidSpec("normalization check needs order >= 16".into()));
    }
    let t = &rt.team;
    if omega0.len() != t.layout.n_free || u.len() != t.dms.iter().map(|d| d.udim).sum::<usize>() {
        return Err(Error::DimensionMismatch("omega0 or action vector length".into()));
    }
    let mut z = vec![0.0; t.layout.len];
    z[..t.layout.n_free].copy_from_slice(omega0);
    let mut off = 0;
    for d in &t.dms {
        z[d.u..d.u + d.udim].copy_from_slice(&u[off..off + d.udim]);
        off += d.udim;
    }
    let gh = quadrature::gauss_hermite(order);
    let mut out = Vec::new();
    for (k, d) in t.dms.iter().enumerate() {
        let nu = &rt.channels[k].nu;
        let mut h = vec![0.0; d.ydim];
        d.h.eval_into(&z, &mut h);
        let shift_sigmas = h
            .iter()
            .zip(nu.mean().iter().zip(nu.std()))
            .map(|(hj, (m, s))| (hj - m).abs() / s)
            .fold(0.0, f64::max);
        let n = d.ydim;
        let total = gh.len().pow(n as u32);
        let mut integral = 0.0;
        let mut zz = vec![0.0; n];
        let mut y = vec![0.0; n];
        for idx in 0..total {
            let mut rem = idx;
            let mut w = 1.0;
            for j in (0..n).rev() {
                let i = rem % gh.len();
                rem /= gh.len();
                zz[j] = gh.nodes[i];
                w *= gh.weights[i];
            }
            nu.transform(&zz, &mut y);
            let lp = rt.log_phi_channel(k, &y, &h);
            integral += w * lp.min(LOG_PHI_LIMIT).exp();
        }
        let residual = (integral - 1.0).abs();
        out.push(NormalizationResidual {
            agent: d.agent,
            time: d.time,
            shift_sigmas,
            residual: if residual.is_finite() { residual } else { f64::INFINITY },
            flagged: !(residual <= 1e-8),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquivalenceMethod {
    MonteCarlo { seed: u64, n: usize },
    Quadrature { order: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub j: f64,
    pub j_rst: f64,
    pub gap: f64,
    pub stderr: Option<f64>,
}

/// Evaluates the dynamic team by forward simulation and the reduced team
/// by the weighted independent-observation form, and reports the gap.
pub fn verify_equivalence(rt: &ReducedTeam, profile: &Profile, method: EquivalenceMethod) -> Result<EquivalenceReport> {
    match method {
        EquivalenceMethod::Quadrature { order } => {
            let j = evaluation::expected_cost_quadrature(&rt.team, profile, order)?;
            let j_rst = evaluation::expected_cost_quadrature_reduced(rt, profile, order)?;
            Ok(EquivalenceReport {
                j,
                j_rst,
                gap: (j - j_rst).abs(),
                stderr: None,
            })
        }
        EquivalenceMethod::MonteCarlo { seed, n } => {
            let a: Estimate = evaluation::expected_cost_mc(&rt.team, profile, seed, n)?;
            let b: Estimate =
                evaluation::expected_cost_mc_reduced(rt, profile, seed.wrapping_add(0x9E37_79B9_7F4A_7C15), n)?;
            Ok(EquivalenceReport {
                j: a.estimate,
                j_rst: b.estimate,
                gap: (a.estimate - b.estimate).abs(),
                stderr: Some((a.stderr * a.stderr + b.stderr * b.stderr).sqrt()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{build_benchmark, Params};
    use crate::cost::Var;
    use crate::strategy::{LinearStrategy, Strategy};

    fn wits() -> ReducedTeam {
        static_reduce(&build_benchmark("witsenhausen", &Params::new()).unwrap()).unwrap()
    }

    fn linear(gains: &[f64]) -> Profile {
        gains
            .iter()
            .map(|g| Strategy::Linear(LinearStrategy::scalar(*g)))
            .collect()
    }

    #[test]
    fn witsenhausen_factor_closed_form() {
        let rt = wits();
        assert_eq!(rt.phi_factor(&[], &[0.3, 1.0], &[0.0, 5.0]).unwrap(), 1.0);
        let v = rt.phi_factor(&[], &[0.3, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-14);
        for (u1, y2) in [(-1.3, 0.4), (2.0, -3.0), (0.25, 7.0)] {
            let want = ((-u1 * u1 + 2.0 * y2 * u1) / 2.0f64).exp();
            let got = rt.phi_factor(&[], &[0.0, y2], &[u1, 0.0]).unwrap();
            assert!((got / want - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn test_channel_factor_is_density_ratio() {
        let sw: f64 = 2.0;
        let spec = build_benchmark("test_channel", &Params::new().set("sigma_w", sw)).unwrap();
        let rt = static_reduce(&spec).unwrap();
        let eta = |x: f64| (-x * x / (2.0 * sw * sw)).exp() / (2.0 * std::f64::consts::PI * sw * sw).sqrt();
        for (u1, y2) in [(1.0, 0.5), (-2.5, 3.0)] {
            let got = rt.phi_factor(&[], &[0.0, y2], &[u1, 0.0]).unwrap();
            assert!((got - eta(y2 - u1) / eta(y2)).abs() < 1e-12 * got);
            let closed = ((2.0 * y2 * u1 - u1 * u1) / (2.0 * sw * sw)).exp();
            assert!((got / closed - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let rt = wits();
        let err = rt.phi_factor(&[], &[0.0, 40.0], &[40.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::PhiOverflow { log_value } if (log_value - 800.0).abs() < 1e-9));
    }

    #[test]
    fn factor_expression_matches_numeric_factor() {
        let rt = wits();
        let e = rt.phi_expr(1).unwrap();
        let t = &rt.team;
        let c = e.compile(&|v| t.layout.slot(v)).unwrap();
        let mut z = vec![0.0; t.layout.len];
        z[t.dms[1].y] = 0.7;
        z[t.dms[0].u] = -1.2;
        let want = rt.phi_factor(&[], &[0.0, 0.7], &[-1.2, 0.0]).unwrap();
        assert!((c.eval(&z) - want).abs() < 1e-13);
    }

    #[test]
    fn normalization_residuals() {
        let rt = wits();
        for u1 in [0.0, 2.0, -5.0, 5.0] {
            let r = check_phi_normalization(&rt, &[], &[u1, 0.0], 64).unwrap();
            assert!(r.iter().all(|c| c.residual <= 1e-8 && !c.flagged), "{r:?}");
        }
        let far = check_phi_normalization(&rt, &[], &[20.0, 0.0], 64).unwrap();
        assert!(far[1].flagged && far[1].shift_sigmas == 20.0, "{far:?}");
        assert!(check_phi_normalization(&rt, &[], &[0.0, 0.0], 8).is_err());
    }

    #[test]
    fn zero_and_identity_profiles_cost_one() {
        let rt = wits();
        for p in [linear(&[0.0, 0.0]), linear(&[1.0, 0.0])] {
            let r = verify_equivalence(&rt, &p, EquivalenceMethod::Quadrature { order: 64 }).unwrap();
            assert!((r.j - 1.0).abs() < 1e-10 && (r.j_rst - 1.0).abs() < 1e-10, "{r:?}");
        }
        let r = verify_equivalence(
            &rt,
            &linear(&[1.0, 0.0]),
            EquivalenceMethod::MonteCarlo { seed: 5, n: 100_000 },
        )
        .unwrap();
        assert!(r.gap <= 4.0 * r.stderr.unwrap(), "{r:?}");
    }

    #[test]
    fn non_sequential_team_is_not_reducible() {
        let mut spec = build_benchmark("witsenhausen", &Params::new()).unwrap();
        spec.decision_makers[0].channel = Affine::var(Var::Act { agent: 2, time: 2 }, 1);
        assert!(matches!(static_reduce(&spec), Err(Error::NotReducible(_))));
    }

    #[test]
    fn summary_lists_channels() {
        let s = wits().summary();
        assert!(s.contains("h = \"u1_1\""), "{s}");
        assert!(s.contains("phi_identically_one = true"));
    }
}
