//! Kernel regularity: continuity of the observation density with its local
//! variation dominated by an integrable function `h`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature;

type KernelFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Catalog of observation kernels `eta(a, y)` against a reference measure.
#[derive(Clone)]
pub enum C1Kernel {
    /// `y = a + w`, `w ~ N(0, variance I)`, Lebesgue reference measure and
    /// `h(a0, y) = max over the unit ball around a0 of |d eta / da|`.
    AdditiveGaussian { dim: usize, variance: f64 },
    /// `eta(a, y) = 1{y > a}` with `h = 1`.
    Step,
    /// User kernel on `R^dim`; `h` may be missing.
    User {
        dim: usize,
        eta: KernelFn,
        h: Option<KernelFn>,
    },
}

impl fmt::Debug for C1Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            C1Kernel::AdditiveGaussian { dim, variance } => write!(f, "AdditiveGaussian({dim}, {variance})"),
            C1Kernel::Step => write!(f, "Step"),
            C1Kernel::User { dim, h, .. } => write!(f, "User(dim {dim}, h: {})", h.is_some()),
        }
    }
}

impl C1Kernel {
    pub fn from_name(name: &str, variance: f64) -> Result<Self> {
        match name {
            "gaussian" => Ok(C1Kernel::AdditiveGaussian { dim: 1, variance }),
            "step" => Ok(C1Kernel::Step),
            other => Err(Error::Config(format!("unknown kernel `{other}` (gaussian, step)"))),
        }
    }

    fn dim(&self) -> usize {
        match self {
            C1Kernel::AdditiveGaussian { dim, .. } | C1Kernel::User { dim, .. } => *dim,
            C1Kernel::Step => 1,
        }
    }

    /// Natural length scale used to size the grid.
    fn scale(&self) -> f64 {
        match self {
            C1Kernel::AdditiveGaussian { variance, .. } => variance.sqrt(),
            _ => 1.0,
        }
    }
}

fn gaussian_radial(dim: usize, variance: f64, rho: f64) -> f64 {
    (-rho * rho / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).powf(dim as f64 / 2.0)
}

/// `|grad eta|` as a function of the distance `rho = |y - a|`, maximized
/// over `rho` in `[d - 1, d + 1]`.
fn gaussian_vc(dim: usize, variance: f64, d: f64) -> f64 {
    let s = variance.sqrt();
    let rho = s.clamp((d - 1.0).max(0.0), d + 1.0);
    rho / variance * gaussian_radial(dim, variance, rho)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Tensor grid of `points` per coordinate on `[-half_width, half_width]`,
/// in units of the kernel's length scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct C1Grid {
    pub half_width: f64,
    pub points: usize,
}

impl Default for C1Grid {
    fn default() -> Self {
        Self {
            half_width: 5.0,
            points: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C1Options {
    pub grid: C1Grid,
    pub eps: Vec<f64>,
    /// First rung of the halving ladder for `delta`.
    pub delta_start: f64,
    pub halvings: usize,
    /// Offsets per direction sampled strictly inside `delta`.
    pub offsets: usize,
}

impl Default for C1Options {
    fn default() -> Self {
        Self {
            grid: C1Grid::default(),
            eps: vec![1.0, 0.5, 0.2, 0.1],
            delta_start: 1.0,
            halvings: 20,
            offsets: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct C1Report {
    pub pass: bool,
    pub eps: Vec<f64>,
    /// Largest ladder `delta` that worked for each `eps`.
    pub delta: Vec<Option<f64>>,
    /// Estimate of `sup_a int h(a, y) dnu(y)`.
    pub vc_integral: f64,
    /// Region over which uniformity in `a0` was checked.
    pub checked_box: (f64, f64),
    pub note: String,
}

struct Evaluator {
    eta: KernelFn,
    h: KernelFn,
}

fn evaluator(kernel: &C1Kernel) -> Result<Evaluator> {
    Ok(match kernel {
        C1Kernel::AdditiveGaussian { dim, variance } => {
            let (d, v) = (*dim, *variance);
            Evaluator {
                eta: Arc::new(move |a, y| gaussian_radial(d, v, dist(a, y))),
                h: Arc::new(move |a0, y| gaussian_vc(d, v, dist(a0, y))),
            }
        }
        C1Kernel::Step => Evaluator {
            eta: Arc::new(|a, y| if y[0] > a[0] { 1.0 } else { 0.0 }),
            h: Arc::new(|_, _| 1.0),
        },
        C1Kernel::User { eta, h, .. } => Evaluator {
            eta: eta.clone(),
            h: h.clone().ok_or(Error::NoVcFunction)?,
        },
    })
}

fn grid_points(dim: usize, half: f64, n: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect()
    };
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; dim];
            for j in (0..dim).rev() {
                p[j] = axis[idx % n];
                idx /= n;
            }
            p
        })
        .collect()
}

/// Unit directions: coordinate axes and the main diagonal, both signs.
fn directions(dim: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for j in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[j] = s;
            out.push(e);
        }
    }
    if dim > 1 {
        let c = 1.0 / (dim as f64).sqrt();
        out.push(vec![c; dim]);
        out.push(vec![-c; dim]);
    }
    out
}

/// Does `|eta(a, y) - eta(a0, y)| < eps h(a0, y)` hold for every grid
/// `a0`, `y` and every sampled `a` with `|a - a0| < delta`?
fn delta_works(ev: &Evaluator, grid: &[Vec<f64>], dirs: &[Vec<f64>], offsets: usize, eps: f64, delta: f64) -> bool {
    grid.par_iter().all(|a0| {
        let mut a = a0.clone();
        for dir in dirs {
            for j in 1..=offsets {
                let t = delta * (j as f64 / offsets as f64) * (1.0 - 1e-9);
                for (ai, (x, d)) in a.iter_mut().zip(a0.iter().zip(dir)) {
                    *ai = x + t * d;
                }
                for y in grid {
                    let diff = ((ev.eta)(&a, y) - (ev.eta)(a0, y)).abs();
                    if !(diff < eps * (ev.h)(a0, y)) {
                        return false;
                    }
                }
            }
        }
        true
    })
}

fn vc_integral(kernel: &C1Kernel, ev: &Evaluator, grid: &[Vec<f64>], cell: f64) -> f64 {
    match kernel {
        C1Kernel::AdditiveGaussian { dim, variance } => {
            // h depends on |y - a0| only: integrate radially.
            let n = *dim as f64;
            let surface = 2.0 * std::f64::consts::PI.powf(n / 2.0) / gamma(n / 2.0);
            let hi = 1.0 + 40.0 * variance.sqrt();
            let rule = quadrature::composite(
                &quadrature::breakpoints(0.0, hi, 0.0, 0.25 * variance.sqrt(), &[1.0]),
                8,
            );
            let radial = rule.integrate(|d| gaussian_vc(*dim, *variance, d) * d.powf(n - 1.0));
            if *dim == 1 {
                2.0 * radial
            } else {
                surface * radial
            }
        }
        _ => {
            // Riemann sum over the grid for each a0; report the largest.
            let vol = cell.powi(kernel.dim() as i32);
            grid.par_iter()
                .map(|a0| grid.iter().map(|y| (ev.h)(a0, y)).sum::<f64>() * vol)
                .reduce(|| 0.0, f64::max)
        }
    }
}

/// Searches, for each `eps`, the halving ladder for a `delta` that keeps
/// the kernel's variation below `eps h` on the grid.
pub fn check_condition_c1(kernel: &C1Kernel, opts: &C1Options) -> Result<C1Report> {
    let ev = evaluator(kernel)?;
    if opts.grid.points < 2 || opts.offsets == 0 || opts.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidSpec(
            "C1 check needs >= 2 grid points, offsets and positive eps".into(),
        ));
    }
    let dim = kernel.dim();
    let half = opts.grid.half_width * kernel.scale();
    let grid = grid_points(dim, half, opts.grid.points);
    let dirs = directions(dim);
    let delta: Vec<Option<f64>> = opts
        .eps
        .iter()
        .map(|&eps| {
            let mut d = opts.delta_start;
            for _ in 0..=opts.halvings {
                if delta_works(&ev, &grid, &dirs, opts.offsets, eps, d) {
                    return Some(d);
                }
                d *= 0.5;
            }
            None
        })
        .collect();
    let cell = 2.0 * half / (opts.grid.points - 1) as f64;
    let vc = vc_integral(kernel, &ev, &grid, cell);
    let pass = delta.iter().all(Option::is_some) && vc.is_finite();
    Ok(C1Report {
        pass,
        eps: opts.eps.clone(),
        delta,
        vc_integral: vc,
        checked_box: (-half, half),
        note: format!(
            "uniformity in a0 checked on [{:.6}, {:.6}]^{dim} only; the condition asks for all of the action space",
            -half, half
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> C1Options {
        C1Options {
            grid: C1Grid {
                half_width: 4.0,
                points: 61,
            },
            ..C1Options::default()
        }
    }

    #[test]
    fn gaussian_kernel_passes() {
        let r = check_condition_c1(&C1Kernel::AdditiveGaussian { dim: 1, variance: 1.0 }, &small()).unwrap();
        assert!(r.pass, "{r:?}");
        // The mean value theorem gives delta = eps; the ladder finds the
        // largest power of two below it.
        assert_eq!(r.delta, vec![Some(1.0), Some(0.5), Some(0.125), Some(0.0625)]);
        assert!(r.vc_integral.is_finite() && r.vc_integral > 0.0);
    }

    #[test]
    fn step_kernel_fails_everywhere() {
        let r = check_condition_c1(&C1Kernel::Step, &small()).unwrap();
        assert!(!r.pass);
        assert!(r.delta.iter().all(Option::is_none));
    }

    #[test]
    fn scaled_gaussian_vc_integral() {
        // Oracle: sup over the unit ball of |d/da N(y - a; 4)|, integrated
        // over y by a fine Riemann sum.
        let v: f64 = 4.0;
        let dens = |r: f64| (-r * r / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let grad = |r: f64| r.abs() / v * dens(r);
        let mut oracle = 0.0;
        let step = 1e-3;
        let mut y = -40.0;
        while y < 40.0 {
            let mut best: f64 = 0.0;
            for k in 0..=200 {
                best = best.max(grad(y - 1.0 + k as f64 / 100.0));
            }
            oracle += best * step;
            y += step;
        }
        let r = check_condition_c1(&C1Kernel::AdditiveGaussian { dim: 1, variance: v }, &small()).unwrap();
        assert!(r.pass);
        assert!((r.vc_integral - oracle).abs() < 1e-3, "{} vs {oracle}", r.vc_integral);
    }

    #[test]
    fn user_kernel_without_h_is_rejected() {
        let k = C1Kernel::User {
            dim: 1,
            eta: Arc::new(|a, y| (-(y[0] - a[0]).powi(2)).exp()),
            h: None,
        };
        assert_eq!(check_condition_c1(&k, &small()).unwrap_err(), Error::NoVcFunction);
    }

    #[test]
    fn bivariate_gaussian_passes_on_a_coarse_grid() {
        let opts = C1Options {
            grid: C1Grid {
                half_width: 3.0,
                points: 9,
            },
            eps: vec![1.0, 0.5],
            offsets: 3,
            ..C1Options::default()
        };
        let r = check_condition_c1(&C1Kernel::AdditiveGaussian { dim: 2, variance: 4.0 }, &opts).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
