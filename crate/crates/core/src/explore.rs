//! Search for relay-chain parameters where two-level quantizers beat the
//! best linear profile.
//!
//! The family: every transmitter sends `amp_i * sgn(y_i)` and the decoder
//! plays the conditional mean. With sign relays the decoder's estimate has
//! the closed form `m * c * tanh(amp_last * y / sigma_w^2)` where
//! `m = E[x1 | y1 > 0]` and `c` is the product of `1 - 2 P(flip)` over the
//! hard-decision hops, so the model cost needs only one Gauss-Hermite sum.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::benchmarks::{build_benchmark, Params};
use crate::error::{Error, Result};
use crate::evaluation::{expected_cost_mc, Estimate};
use crate::model::Team;
use crate::optimize::{best_linear, linear_coefficient_count, CoeffRange};
use crate::quadrature;
use crate::space::SpaceSpec;
use crate::strategy::{DeterministicGridStrategy, Grid, Profile, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayPoint {
    pub n: usize,
    pub lambda: f64,
    pub sigma_x: f64,
    pub sigma_1: f64,
    pub sigma_w: f64,
}

impl RelayPoint {
    pub fn params(&self) -> Params {
        Params::new()
            .set("n", self.n as f64)
            .set("lambda", self.lambda)
            .set("sigma_x", self.sigma_x)
            .set("sigma_1", self.sigma_1)
            .set("sigma_w", self.sigma_w)
    }

    pub fn team(&self) -> Result<Team> {
        Team::new(build_benchmark("relay", &self.params())?)
    }
}

/// The documented search grid: chains of 3 to 5 agents, three power
/// weights, two encoder noise levels, unit source and channel noise.
pub fn default_grid() -> Vec<RelayPoint> {
    let mut out = Vec::new();
    for n in [3, 4, 5] {
        for lambda in [0.003, 0.01, 0.03] {
            for sigma_1 in [0.01, 0.1] {
                out.push(RelayPoint {
                    n,
                    lambda,
                    sigma_x: 1.0,
                    sigma_1,
                    sigma_w: 1.0,
                });
            }
        }
    }
    out
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `E[x1 | y1 > 0]`.
fn encoder_mean(p: &RelayPoint) -> f64 {
    let sx2 = p.sigma_x * p.sigma_x;
    sx2 / (sx2 + p.sigma_1 * p.sigma_1).sqrt() * (2.0 / std::f64::consts::PI).sqrt()
}

/// Expected cost of the quantizer chain with amplitudes `amps` (one per
/// transmitter) and the optimal decoder.
pub fn quantizer_cost(p: &RelayPoint, amps: &[f64]) -> Result<f64> {
    if amps.len() + 1 != p.n {
        return Err(Error::DimensionMismatch(format!(
            "{} amplitudes for {} agents",
            amps.len(),
            p.n
        )));
    }
    let sw2 = p.sigma_w * p.sigma_w;
    let phi = std_normal();
    let (last, hops) = amps.split_last().expect("n >= 2");
    let c: f64 = hops.iter().map(|a| 1.0 - 2.0 * phi.cdf(-a.abs() / p.sigma_w)).product();
    let m = encoder_mean(p);
    let gh = quadrature::gauss_hermite(64);
    let t2 = gh.integrate(|z| {
        let y = last.abs() + p.sigma_w * z;
        (last.abs() * y / sw2).tanh().powi(2)
    });
    let power: f64 = amps.iter().map(|a| a * a).sum::<f64>() * p.lambda;
    Ok(p.sigma_x * p.sigma_x - m * m * c * c * t2 + power)
}

/// Best amplitudes by a scan over a common amplitude followed by cyclic
/// golden-section refinement.
pub fn best_quantizer(p: &RelayPoint) -> Result<(Vec<f64>, f64)> {
    let k = p.n - 1;
    let mut best = (vec![0.0; k], f64::INFINITY);
    for i in 1..=120 {
        let a = 0.05 * i as f64 * p.sigma_w;
        let amps = vec![a; k];
        let j = quantizer_cost(p, &amps)?;
        if j < best.1 {
            best = (amps, j);
        }
    }
    let (mut amps, mut j) = best;
    for _ in 0..200 {
        let before = j;
        for i in 0..k {
            let (lo, hi) = (0.0, 2.0 * amps[i] + p.sigma_w);
            let mut trial = amps.clone();
            let (x, fx) = golden(
                |v| {
                    trial[i] = v;
                    quantizer_cost(p, &trial).unwrap_or(f64::INFINITY)
                },
                lo,
                hi,
            );
            if fx < j {
                amps[i] = x;
                j = fx;
            }
        }
        if before - j < 1e-14 {
            break;
        }
    }
    Ok((amps, j))
}

fn golden(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc <= fd {
            (b, d, fd) = (d, c, fc);
            c = b - g * (b - a);
            fc = f(c);
        } else {
            (a, c, fc) = (c, d, fd);
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

/// Grid-strategy profile of the quantizer chain. The decoder's tanh map is
/// tabulated on `decoder_cells` observation cells.
pub fn quantizer_profile(team: &Team, p: &RelayPoint, amps: &[f64], decoder_cells: usize) -> Result<Profile> {
    let n = team.dms.len();
    let phi = std_normal();
    let mut out = Vec::with_capacity(n);
    for (i, d) in team.dms.iter().enumerate() {
        let obs_cells = if i + 1 == n { decoder_cells } else { 2 };
        let obs = Grid::uniform(&d.observation_space, obs_cells)?;
        if i + 1 < n {
            let act = Grid::uniform(&SpaceSpec::symmetric(1, 2.0 * amps[i].abs()), 2)?;
            out.push(Strategy::Deterministic(DeterministicGridStrategy::new(
                obs,
                act,
                vec![0, 1],
            )?));
        } else {
            let hops = &amps[..n - 2];
            let last = amps[n - 2].abs();
            let c: f64 = hops.iter().map(|a| 1.0 - 2.0 * phi.cdf(-a.abs() / p.sigma_w)).product();
            let scale = encoder_mean(p) * c;
            let sw2 = p.sigma_w * p.sigma_w;
            let act = Grid::uniform(&SpaceSpec::symmetric(1, scale.max(1e-12)), decoder_cells)?;
            out.push(Strategy::Deterministic(DeterministicGridStrategy::from_fn(
                obs,
                act,
                |y| vec![scale * (last * y[0] / sw2).tanh()],
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayFinding {
    pub point: RelayPoint,
    pub linear_cost: f64,
    pub linear_gains: Vec<f64>,
    pub quantizer_model_cost: f64,
    pub amplitudes: Vec<f64>,
}

impl RelayFinding {
    pub fn model_gap(&self) -> f64 {
        self.linear_cost - self.quantizer_model_cost
    }
}

/// Best linear profile of a relay chain from a coarse gain grid. The first
/// gain scales the nearly noiseless source, the others re-normalize.
pub fn relay_best_linear(team: &Team) -> Result<(Vec<f64>, f64)> {
    let m = linear_coefficient_count(team);
    // About 2 * 10^4 grid points in total.
    let steps = (2e4f64.powf(1.0 / m as f64) as usize).clamp(5, 21);
    let ranges: Vec<CoeffRange> = (0..m)
        .map(|i| match i {
            0 => CoeffRange::new(0.0, 6.0, steps),
            _ if i + 1 == m => CoeffRange::new(0.0, 1.0, steps),
            _ => CoeffRange::new(0.0, 2.0, steps),
        })
        .collect();
    let r = best_linear(team, &ranges)?;
    Ok((r.coefficients, r.cost))
}

/// Scores every point of `grid` by the model gap.
pub fn relay_search(grid: &[RelayPoint]) -> Result<Vec<RelayFinding>> {
    grid.iter()
        .map(|p| {
            let team = p.team()?;
            let (linear_gains, linear_cost) = relay_best_linear(&team)?;
            let (amplitudes, quantizer_model_cost) = best_quantizer(p)?;
            Ok(RelayFinding {
                point: p.clone(),
                linear_cost,
                linear_gains,
                quantizer_model_cost,
                amplitudes,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayVerdict {
    pub finding: RelayFinding,
    pub quantizer_mc: Estimate,
    /// `quantizer_mc < linear_cost - 3 stderr`.
    pub nonlinear_wins: bool,
}

/// Checks the finding with the largest model gap by Monte Carlo.
pub fn verify_best(findings: &[RelayFinding], seed: u64, n: usize) -> Result<Option<RelayVerdict>> {
    let Some(best) = findings
        .iter()
        .filter(|f| f.model_gap() > 0.0)
        .max_by(|a, b| a.model_gap().total_cmp(&b.model_gap()))
    else {
        return Ok(None);
    };
    let team = best.point.team()?;
    let profile = quantizer_profile(&team, &best.point, &best.amplitudes, 4001)?;
    let est = expected_cost_mc(&team, &profile, seed, n)?;
    Ok(Some(RelayVerdict {
        nonlinear_wins: est.estimate < best.linear_cost - 3.0 * est.stderr,
        quantizer_mc: est,
        finding: best.clone(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(n: usize, lambda: f64) -> RelayPoint {
        RelayPoint {
            n,
            lambda,
            sigma_x: 1.0,
            sigma_1: 0.01,
            sigma_w: 1.0,
        }
    }

    /// Closed-form linear chain: signal gain and noise variance propagate
    /// hop by hop, and the decoder is the linear MMSE estimator.
    fn linear_chain_cost(p: &RelayPoint, a: &[f64]) -> f64 {
        let sx2 = p.sigma_x * p.sigma_x;
        let (mut g, mut v, mut power) = (1.0, p.sigma_1 * p.sigma_1, 0.0);
        for ai in a {
            power += p.lambda * ai * ai * (g * g * sx2 + v);
            g *= ai;
            v = ai * ai * v + p.sigma_w * p.sigma_w;
        }
        sx2 - (g * sx2).powi(2) / (g * g * sx2 + v) + power
    }

    #[test]
    fn zero_amplitudes_cost_the_prior_variance() {
        let p = point(3, 0.1);
        assert!((quantizer_cost(&p, &[0.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(quantizer_cost(&p, &[1.0]).is_err());
    }

    #[test]
    fn model_cost_matches_monte_carlo() {
        let p = point(3, 0.05);
        let amps = [1.5, 1.2];
        let team = p.team().unwrap();
        let prof = quantizer_profile(&team, &p, &amps, 4001).unwrap();
        let est = expected_cost_mc(&team, &prof, 11, 200_000).unwrap();
        let model = quantizer_cost(&p, &amps).unwrap();
        assert!(
            (est.estimate - model).abs() < 4.0 * est.stderr + 1e-4,
            "{est:?} vs {model}"
        );
    }

    #[test]
    fn linear_search_matches_closed_form_chain() {
        let p = point(4, 0.01);
        let team = p.team().unwrap();
        let (gains, cost) = relay_best_linear(&team).unwrap();
        // Gains are per agent; the decoder gain is optimal given the others.
        let transmit = &gains[..gains.len() - 1];
        let closed = linear_chain_cost(&p, transmit);
        assert!((cost - closed).abs() < 1e-8, "{cost} vs {closed}");
        // No nearby transmit gains do better.
        for i in 0..transmit.len() {
            for d in [-1e-3, 1e-3] {
                let mut t = transmit.to_vec();
                t[i] += d;
                assert!(linear_chain_cost(&p, &t) >= closed - 1e-9);
            }
        }
    }
}
