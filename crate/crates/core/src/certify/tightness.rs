//! Compact boxes `K x L` that carry all but `2 eps` of every measure whose
//! marginal on `a` is the primitive law and whose cost integral is at most
//! `k`: `K` from Gaussian quantiles, `L` from a coercivity certificate at
//! level `M = k / eps`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::ic::{check_ic_class, var_dims, IcQuery, IcReport};
use crate::cost::{CostExpr, Var};
use crate::error::{Error, Result};
use crate::evaluation::prepare;
use crate::model::sample_rng;
use crate::reduction::ReducedTeam;
use crate::space::SpaceSpec;
use crate::strategy::Profile;

/// Law of one `a` coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Marginal {
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Already confined to a box by an earlier certificate.
    Fixed {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessQuery {
    pub f: CostExpr,
    pub group_a: Vec<Var>,
    pub group_b: Vec<Var>,
    /// One entry per `a` coordinate.
    pub marginals: Vec<Marginal>,
    pub k: f64,
    pub eps: f64,
    pub declared_b: Option<SpaceSpec>,
    pub search_box: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessCertificate {
    pub eps: f64,
    pub k: f64,
    pub m: f64,
    pub k_box: SpaceSpec,
    pub l_box: SpaceSpec,
    /// Two-sided tail mass left outside `K` per Gaussian coordinate.
    pub coordinate_tail: f64,
    /// Bound on the mass outside `K x L`: `eps` from `K`, `k / M` from `L`.
    pub outside_bound: f64,
    /// `L` is not contained in the declared space of `b`.
    pub extends_declared: bool,
    pub ic: IcReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCheck {
    pub n: usize,
    pub mass: f64,
    pub stderr: f64,
    pub limit: f64,
    pub pass: bool,
}

impl TailCheck {
    fn from_count(outside: usize, n: usize, limit: f64) -> Self {
        let mass = outside as f64 / n as f64;
        Self {
            n,
            mass,
            stderr: (mass * (1.0 - mass) / n as f64).sqrt(),
            limit,
            pass: mass < limit,
        }
    }
}

impl TightnessCertificate {
    /// Empirical mass outside `K x L` of rows `[a | b]`.
    pub fn tail_check(&self, rows: &[f64]) -> Result<TailCheck> {
        let (da, db) = (self.k_box.dim(), self.l_box.dim());
        if rows.is_empty() || !rows.len().is_multiple_of(da + db) {
            return Err(Error::DimensionMismatch(format!("rows must have {} columns", da + db)));
        }
        let outside = rows
            .par_chunks(da + db)
            .filter(|r| !self.k_box.contains(&r[..da]) || !self.l_box.contains(&r[da..]))
            .count();
        Ok(TailCheck::from_count(
            outside,
            rows.len() / (da + db),
            self.outside_bound,
        ))
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

pub fn tightness_sets(q: &TightnessQuery) -> Result<TightnessCertificate> {
    if !(q.eps > 0.0 && q.eps < 1.0) || !(q.k >= 0.0) {
        return Err(Error::InvalidSpec("tightness needs 0 < eps < 1 and k >= 0".into()));
    }
    let gaussians = q
        .marginals
        .iter()
        .filter(|m| matches!(m, Marginal::Gaussian { .. }))
        .count();
    let coordinate_tail = if gaussians == 0 { 0.0 } else { q.eps / gaussians as f64 };
    let z = if gaussians == 0 {
        0.0
    } else {
        -std_normal().inverse_cdf(coordinate_tail / 2.0)
    };
    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    for m in &q.marginals {
        let (lo, hi) = match m {
            Marginal::Gaussian { mean, std } => (mean - z * std, mean + z * std),
            Marginal::Fixed { lo, hi } => (*lo, *hi),
        };
        lower.push(lo);
        upper.push(hi);
    }
    let k_box = SpaceSpec::new(lower, upper)?;
    // k = 0 still needs a finite level.
    let m = (q.k / q.eps).max(f64::MIN_POSITIVE.sqrt());
    let mut ic = IcQuery::new(q.f.clone(), q.group_a.clone(), q.group_b.clone(), k_box.clone(), m);
    ic.search_box = q.search_box;
    ic.seed = q.seed;
    let report = check_ic_class(&ic)?;
    let Some(l_box) = report.l_box.clone().filter(|_| report.pass) else {
        return Err(Error::Inconclusive(format!(
            "no compact L certified at M = {m}; {} witness points",
            report.witness.len()
        )));
    };
    let extends_declared = q.declared_b.as_ref().is_some_and(|d| {
        l_box.lower.iter().zip(&d.lower).any(|(l, dl)| l < dl) || l_box.upper.iter().zip(&d.upper).any(|(u, du)| u > du)
    });
    Ok(TightnessCertificate {
        eps: q.eps,
        k: q.k,
        m,
        k_box,
        l_box,
        coordinate_tail,
        outside_bound: q.eps + q.k / m,
        extends_declared,
        ic: report,
    })
}

/// One certificate of the causal ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rung {
    pub agent: usize,
    pub time: usize,
    /// Cost slice times the density factors up to this decision maker.
    pub expr: String,
    pub a_vars: Vec<Var>,
    pub b_var: Var,
    /// Earlier rungs whose `L` boxes enter this rung's `K`.
    pub consumed: Vec<usize>,
    pub cert: TightnessCertificate,
}

/// Certificates in causal order. Rung `r` uses the budget `eps / 2^r`, the
/// decision maker's own cost terms times the density factors of rungs
/// `0..=r`, Gaussian quantile boxes for primitives and observations, and
/// earlier `L` boxes for earlier actions.
pub fn sequential_tightness(rt: &ReducedTeam, k: f64, eps: f64, search_box: f64, seed: u64) -> Result<Vec<Rung>> {
    let team = &rt.team;
    let form = team
        .form
        .as_ref()
        .ok_or_else(|| Error::FormMismatch(team.report.notes.join("; ")))?;
    let mut rungs: Vec<Rung> = Vec::with_capacity(team.dms.len());
    for (r, d) in team.dms.iter().enumerate() {
        let term = form.dm_term(r);
        let prefix = rt.phi_prefix_expr(r + 1)?;
        let f = match prefix {
            CostExpr::Constant { value: 1.0 } => term,
            p => CostExpr::product(vec![term, p]),
        };
        let b_var = d.act_var();
        let mut dims = BTreeMap::new();
        var_dims(&f, &mut dims);
        if !dims.contains_key(&b_var) {
            return Err(Error::FormMismatch(format!(
                "cost slice of {} does not involve its action",
                d.label()
            )));
        }
        let mut a_vars = Vec::new();
        let mut marginals = Vec::new();
        let mut consumed = Vec::new();
        for (v, dim) in &dims {
            if *v == b_var {
                continue;
            }
            match v {
                Var::Act { agent, time } => {
                    let j = team
                        .dm_index(*agent, *time)
                        .ok_or_else(|| Error::FormMismatch(format!("unknown action {v}")))?;
                    if j >= r {
                        return Err(Error::FormMismatch(format!("rung {r} needs the later action {v}")));
                    }
                    let l = &rungs[j].cert.l_box;
                    marginals.extend((0..*dim).map(|c| Marginal::Fixed {
                        lo: l.lower[c],
                        hi: l.upper[c],
                    }));
                    consumed.push(j);
                }
                Var::Obs { agent, time } => {
                    let j = team
                        .dm_index(*agent, *time)
                        .ok_or_else(|| Error::FormMismatch(format!("unknown observation {v}")))?;
                    let nu = &rt.channels[j].nu;
                    marginals.extend((0..*dim).map(|c| Marginal::Gaussian {
                        mean: nu.mean()[c],
                        std: nu.std()[c],
                    }));
                }
                _ => {
                    let b = team
                        .free
                        .iter()
                        .find(|b| b.var == *v)
                        .ok_or_else(|| Error::FormMismatch(format!("{v} is not a primitive variable")))?;
                    marginals.extend((0..*dim).map(|c| Marginal::Gaussian {
                        mean: b.law.mean()[c],
                        std: b.law.std()[c],
                    }));
                }
            }
            a_vars.push(*v);
        }
        consumed.sort_unstable();
        consumed.dedup();
        assert!(consumed.iter().all(|&j| j < r), "rung {r} consumed a later certificate");
        let q = TightnessQuery {
            f: f.clone(),
            group_a: a_vars.clone(),
            group_b: vec![b_var],
            marginals,
            k,
            eps: eps / 2f64.powi(r as i32),
            declared_b: Some(d.action_space.clone()),
            search_box,
            seed: seed.wrapping_add(r as u64),
        };
        let cert = tightness_sets(&q)?;
        rungs.push(Rung {
            agent: d.agent,
            time: d.time,
            expr: f.to_string(),
            a_vars,
            b_var,
            consumed,
            cert,
        });
    }
    Ok(rungs)
}

/// Empirical mass outside each rung's `K x L` under the reduced measure
/// (observations drawn from their noise laws) and the given profile.
pub fn sequential_tail_mass(
    rt: &ReducedTeam,
    profile: &Profile,
    rungs: &[Rung],
    seed: u64,
    n: usize,
) -> Result<Vec<TailCheck>> {
    let team = &rt.team;
    let strat = prepare(team, profile)?;
    let slots: Vec<Vec<(usize, usize)>> = rungs
        .iter()
        .map(|r| {
            r.a_vars
                .iter()
                .chain(std::iter::once(&r.b_var))
                .map(|v| {
                    team.layout
                        .slot(v)
                        .ok_or_else(|| Error::InvalidSpec(format!("{v} is not laid out")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let outside: Vec<usize> = (0..n as u64)
        .into_par_iter()
        .fold(
            || vec![0usize; rungs.len()],
            |mut acc, i| {
                let mut rng = sample_rng(seed, i);
                let mut z = vec![0.0; team.layout.len];
                team.draw_primitives(&mut rng, &mut z);
                for (d, s) in team.dms.iter().zip(&strat) {
                    let (w, y) = (d.w, d.y);
                    z.copy_within(w..w + d.ydim, y);
                    let obs = z[y..y + d.ydim].to_vec();
                    s.sample(&obs, &mut rng, &mut z[d.u..d.u + d.udim]);
                }
                for ((r, sl), c) in rungs.iter().zip(&slots).zip(acc.iter_mut()) {
                    let row: Vec<f64> = sl.iter().flat_map(|&(s, l)| z[s..s + l].iter().copied()).collect();
                    let da = r.cert.k_box.dim();
                    if !r.cert.k_box.contains(&row[..da]) || !r.cert.l_box.contains(&row[da..]) {
                        *c += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0usize; rungs.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(rungs
        .iter()
        .zip(outside)
        .map(|(r, c)| TailCheck::from_count(c, n, r.cert.outside_bound))
        .collect())
}
