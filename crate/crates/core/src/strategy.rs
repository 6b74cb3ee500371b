//! Grid, behavioral, deterministic and linear strategies.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::space::SpaceSpec;

const ROW_TOL: f64 = 1e-12;

/// Uniform tensor grid over a box. Cells are numbered row-major with the
/// last coordinate varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Grid {
    pub fn new(space: &SpaceSpec, counts: Vec<usize>) -> Result<Self> {
        space.validate("grid box")?;
        if counts.len() != space.dim() || counts.contains(&0) {
            return Err(Error::InvalidStrategy(format!(
                "grid needs one positive count per coordinate, got {counts:?}"
            )));
        }
        Ok(Self {
            lower: space.lower.clone(),
            upper: space.upper.clone(),
            counts,
        })
    }

    pub fn uniform(space: &SpaceSpec, n: usize) -> Result<Self> {
        Self::new(space, vec![n; space.dim()])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self, j: usize) -> f64 {
        (self.upper[j] - self.lower[j]) / self.counts[j] as f64
    }

    /// Strictly increasing cell edges of coordinate `j`.
    pub fn edges(&self, j: usize) -> Vec<f64> {
        let n = self.counts[j];
        let mut e: Vec<f64> = (0..=n).map(|i| self.lower[j] + i as f64 * self.width(j)).collect();
        e[n] = self.upper[j];
        e
    }

    fn coord_center(&self, j: usize, i: usize) -> f64 {
        self.lower[j] + (i as f64 + 0.5) * self.width(j)
    }

    pub fn center_into(&self, cell: usize, out: &mut [f64]) {
        let mut rem = cell;
        for j in (0..self.dim()).rev() {
            let i = rem % self.counts[j];
            rem /= self.counts[j];
            out[j] = self.coord_center(j, i);
        }
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        self.center_into(cell, &mut c);
        c
    }

    /// Flat `len x dim` table of all cell centers.
    pub fn centers(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (c, chunk) in out.chunks_mut(d).enumerate() {
            self.center_into(c, chunk);
        }
        out
    }

    /// Index of the cell along coordinate `j`; out-of-box values clamp.
    pub fn locate_coord(&self, j: usize, v: f64) -> usize {
        let n = self.counts[j];
        let r = ((v - self.lower[j]) / self.width(j)).floor();
        if r.is_nan() || r < 0.0 {
            0
        } else {
            (r as usize).min(n - 1)
        }
    }

    /// Cell containing `y`, clamping out-of-box observations to the
    /// nearest boundary cell.
    pub fn locate(&self, y: &[f64]) -> usize {
        let mut cell = 0;
        for j in 0..self.dim() {
            cell = cell * self.counts[j] + self.locate_coord(j, y[j]);
        }
        cell
    }

    /// Index of the center closest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        self.locate(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralGridStrategy {
    pub obs: Grid,
    pub act: Grid,
    /// Rows are observation cells, columns are action points.
    pub table: Vec<Vec<f64>>,
}

impl BehavioralGridStrategy {
    pub fn new(obs: Grid, act: Grid, table: Vec<Vec<f64>>) -> Result<Self> {
        if table.len() != obs.len() {
            return Err(Error::InvalidStrategy(format!(
                "{} rows for {} observation cells",
                table.len(),
                obs.len()
            )));
        }
        for (r, row) in table.iter().enumerate() {
            if row.len() != act.len() {
                return Err(Error::InvalidStrategy(format!("row {r} has {} entries", row.len())));
            }
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidStrategy(format!("row {r} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidStrategy(format!("row {r} sums to {s}")));
            }
        }
        Ok(Self { obs, act, table })
    }

    pub fn is_deterministic(&self) -> bool {
        self.table
            .iter()
            .all(|row| row.iter().filter(|p| **p > 0.0).count() == 1 && row.contains(&1.0))
    }

    /// Most likely action per cell, lowest index on ties.
    pub fn argmax(&self) -> DeterministicGridStrategy {
        let lookup = self
            .table
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) },
                    )
                    .0
            })
            .collect();
        DeterministicGridStrategy {
            obs: self.obs.clone(),
            act: self.act.clone(),
            lookup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicGridStrategy {
    pub obs: Grid,
    pub act: Grid,
    pub lookup: Vec<usize>,
}

impl DeterministicGridStrategy {
    pub fn new(obs: Grid, act: Grid, lookup: Vec<usize>) -> Result<Self> {
        if lookup.len() != obs.len() {
            return Err(Error::InvalidStrategy(format!(
                "{} entries for {} observation cells",
                lookup.len(),
                obs.len()
            )));
        }
        if let Some(bad) = lookup.iter().find(|i| **i >= act.len()) {
            return Err(Error::InvalidStrategy(format!("action index {bad} out of range")));
        }
        Ok(Self { obs, act, lookup })
    }

    /// Every cell picks the action point nearest to `action`.
    pub fn constant(obs: Grid, act: Grid, action: &[f64]) -> Self {
        let a = act.nearest(action);
        let lookup = vec![a; obs.len()];
        Self { obs, act, lookup }
    }

    /// Every cell picks the action point nearest to `f(center)`.
    pub fn from_fn(obs: Grid, act: Grid, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let lookup = (0..obs.len()).map(|c| act.nearest(&f(&obs.center(c)))).collect();
        Self { obs, act, lookup }
    }
}

/// `u = gain * y + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearStrategy {
    pub gain: Matrix,
    pub offset: Vec<f64>,
}

impl LinearStrategy {
    pub fn new(gain: Matrix, offset: Vec<f64>) -> Result<Self> {
        if gain.len() != offset.len() || gain.iter().any(|r| r.len() != gain.first().map_or(0, Vec::len)) {
            return Err(Error::InvalidStrategy("gain rows must match offset length".into()));
        }
        Ok(Self { gain, offset })
    }

    pub fn scalar(g: f64) -> Self {
        Self {
            gain: vec![vec![g]],
            offset: vec![0.0],
        }
    }

    pub fn zero(ydim: usize, udim: usize) -> Self {
        Self {
            gain: vec![vec![0.0; ydim]; udim],
            offset: vec![0.0; udim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.gain.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.offset.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Behavioral(BehavioralGridStrategy),
    Deterministic(DeterministicGridStrategy),
    Linear(LinearStrategy),
}

impl Strategy {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Strategy::Behavioral(b) => (b.obs.dim(), b.act.dim()),
            Strategy::Deterministic(d) => (d.obs.dim(), d.act.dim()),
            Strategy::Linear(l) => (l.input_dim(), l.output_dim()),
        }
    }

    pub fn obs_grid(&self) -> Option<&Grid> {
        match self {
            Strategy::Behavioral(b) => Some(&b.obs),
            Strategy::Deterministic(d) => Some(&d.obs),
            Strategy::Linear(_) => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Strategy::Behavioral(b) => b.is_deterministic(),
            _ => true,
        }
    }
}

/// One strategy per decision maker, in causal order.
pub type Profile = Vec<Strategy>;

/// Dirac rows at the looked-up actions.
pub fn as_behavioral(det: &DeterministicGridStrategy) -> BehavioralGridStrategy {
    let n = det.act.len();
    let table = det
        .lookup
        .iter()
        .map(|&a| {
            let mut row = vec![0.0; n];
            row[a] = 1.0;
            row
        })
        .collect();
    BehavioralGridStrategy {
        obs: det.obs.clone(),
        act: det.act.clone(),
        table,
    }
}

/// Argmin of the conditional cost per observation cell, lowest index on ties.
pub fn determinize(beh: &BehavioralGridStrategy, conditional_cost: &[Vec<f64>]) -> Result<DeterministicGridStrategy> {
    if conditional_cost.len() != beh.obs.len() || conditional_cost.iter().any(|r| r.len() != beh.act.len()) {
        return Err(Error::DimensionMismatch("conditional cost table shape".into()));
    }
    let mut lookup = Vec::with_capacity(conditional_cost.len());
    for (r, row) in conditional_cost.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidStrategy(format!(
                "non-finite conditional cost in row {r}"
            )));
        }
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v < row[best] {
                best = i;
            }
        }
        lookup.push(best);
    }
    Ok(DeterministicGridStrategy {
        obs: beh.obs.clone(),
        act: beh.act.clone(),
        lookup,
    })
}

/// Joint weights over (observation cell, action point).
pub fn induced_joint(beh: &BehavioralGridStrategy, obs_measure: &[f64]) -> Result<Vec<Vec<f64>>> {
    if obs_measure.len() != beh.obs.len() {
        return Err(Error::DimensionMismatch("observation measure length".into()));
    }
    let s: f64 = obs_measure.iter().sum();
    if (s - 1.0).abs() > ROW_TOL || obs_measure.iter().any(|m| *m < 0.0) {
        return Err(Error::InvalidStrategy(format!("observation measure sums to {s}")));
    }
    Ok(beh
        .table
        .iter()
        .zip(obs_measure)
        .map(|(row, m)| row.iter().map(|p| m * p).collect())
        .collect())
}

/// Random behavioral table: every row mixes `support` action points drawn
/// among those whose coordinates lie in `[-window, window]`.
pub fn random_behavioral<R: Rng>(
    obs: &Grid,
    act: &Grid,
    support: usize,
    window: f64,
    rng: &mut R,
) -> Result<BehavioralGridStrategy> {
    let allowed: Vec<usize> = (0..act.len())
        .filter(|&a| act.center(a).iter().all(|c| c.abs() <= window))
        .collect();
    if allowed.is_empty() || support == 0 {
        return Err(Error::InvalidStrategy("no admissible action points".into()));
    }
    let table = (0..obs.len())
        .map(|_| {
            let mut row = vec![0.0; act.len()];
            let raw: Vec<f64> = (0..support).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            for r in raw {
                row[allowed[rng.random_range(0..allowed.len())]] += r / total;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
            row
        })
        .collect();
    BehavioralGridStrategy::new(obs.clone(), act.clone(), table)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Row per observation cell: `cell,center,p_0,..` with the header listing
/// action points (coordinates joined by `;`).
pub fn write_strategy_csv<W: Write>(beh: &BehavioralGridStrategy, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["cell".to_string(), "center".to_string()];
    header.extend((0..beh.act.len()).map(|a| join(&beh.act.center(a))));
    wr.write_record(&header)?;
    for (c, row) in beh.table.iter().enumerate() {
        let mut rec = vec![c.to_string(), join(&beh.obs.center(c))];
        rec.extend(row.iter().map(|p| p.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_strategy_csv<R: Read>(r: R, obs: &Grid, act: &Grid) -> Result<BehavioralGridStrategy> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.len() != act.len() + 2 {
        return Err(Error::InvalidStrategy(format!(
            "header has {} action columns, grid has {}",
            header.len().saturating_sub(2),
            act.len()
        )));
    }
    let mut table = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidStrategy(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        table.push(row);
    }
    BehavioralGridStrategy::new(obs.clone(), act.clone(), table)
}

/// Strategy lowered for fast repeated evaluation.
#[derive(Debug, Clone)]
pub enum Prepared {
    Grid {
        obs: Grid,
        udim: usize,
        points: Vec<f64>,
        rows: Vec<Vec<(f64, u32)>>,
    },
    Linear {
        ydim: usize,
        udim: usize,
        gain: Vec<f64>,
        offset: Vec<f64>,
    },
}

impl Prepared {
    pub fn new(s: &Strategy) -> Self {
        match s {
            Strategy::Behavioral(b) => Prepared::Grid {
                obs: b.obs.clone(),
                udim: b.act.dim(),
                points: b.act.centers(),
                rows: b
                    .table
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(_, p)| **p > 0.0)
                            .map(|(i, p)| (*p, i as u32))
                            .collect()
                    })
                    .collect(),
            },
            Strategy::Deterministic(d) => Prepared::Grid {
                obs: d.obs.clone(),
                udim: d.act.dim(),
                points: d.act.centers(),
                rows: d.lookup.iter().map(|&a| vec![(1.0, a as u32)]).collect(),
            },
            Strategy::Linear(l) => Prepared::Linear {
                ydim: l.input_dim(),
                udim: l.output_dim(),
                gain: l.gain.iter().flatten().copied().collect(),
                offset: l.offset.clone(),
            },
        }
    }

    pub fn udim(&self) -> usize {
        match self {
            Prepared::Grid { udim, .. } | Prepared::Linear { udim, .. } => *udim,
        }
    }

    pub fn obs_grid(&self) -> Option<&Grid> {
        match self {
            Prepared::Grid { obs, .. } => Some(obs),
            Prepared::Linear { .. } => None,
        }
    }

    /// Calls `f(probability, action)` for every action in the support.
    #[inline]
    pub fn for_each(&self, y: &[f64], mut f: impl FnMut(f64, &[f64])) {
        match self {
            Prepared::Grid {
                obs,
                udim,
                points,
                rows,
            } => {
                for (p, a) in &rows[obs.locate(y)] {
                    let a = *a as usize;
                    f(*p, &points[a * udim..(a + 1) * udim]);
                }
            }
            Prepared::Linear {
                ydim,
                udim,
                gain,
                offset,
            } => {
                let mut buf = [0.0f64; 16];
                for i in 0..*udim {
                    let mut s = offset[i];
                    for j in 0..*ydim {
                        s += gain[i * ydim + j] * y[j];
                    }
                    buf[i] = s;
                }
                f(1.0, &buf[..*udim]);
            }
        }
    }

    /// Draws one action into `out`.
    pub fn sample<R: Rng>(&self, y: &[f64], rng: &mut R, out: &mut [f64]) {
        match self {
            Prepared::Grid {
                obs,
                udim,
                points,
                rows,
            } => {
                let row = &rows[obs.locate(y)];
                let a = if row.len() == 1 {
                    row[0].1
                } else {
                    let r: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = row[row.len() - 1].1;
                    for (p, a) in row {
                        acc += p;
                        if r < acc {
                            pick = *a;
                            break;
                        }
                    }
                    pick
                } as usize;
                out.copy_from_slice(&points[a * udim..(a + 1) * udim]);
            }
            Prepared::Linear { .. } => self.for_each(y, |_, a| out.copy_from_slice(a)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn line(n: usize, half: f64) -> Grid {
        Grid::uniform(&SpaceSpec::symmetric(1, half), n).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = line(4, 2.0);
        assert_eq!(g.edges(0), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(g.center(1), vec![-0.5]);
        assert_eq!(g.locate(&[-10.0]), 0);
        assert_eq!(g.locate(&[10.0]), 3);
        assert_eq!(g.locate(&[0.0]), 2);
        let g2 = Grid::new(&SpaceSpec::symmetric(2, 1.0), vec![2, 3]).unwrap();
        assert_eq!(g2.len(), 6);
        assert_eq!(g2.locate(&[0.5, -0.9]), 3);
        assert_eq!(g2.center(3), vec![0.5, -1.0 + 1.0 / 3.0]);
    }

    #[test]
    fn identity_lookup_gives_dirac_rows() {
        let d = DeterministicGridStrategy::new(line(2, 1.0), line(2, 1.0), vec![0, 1]).unwrap();
        assert_eq!(as_behavioral(&d).table, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let c = DeterministicGridStrategy::new(line(3, 1.0), line(2, 1.0), vec![1, 1, 1]).unwrap();
        assert!(as_behavioral(&c).table.iter().all(|r| r == &vec![0.0, 1.0]));
    }

    #[test]
    fn determinize_picks_argmin_with_low_tie_break() {
        let b = BehavioralGridStrategy::new(line(2, 1.0), line(3, 1.0), vec![vec![1.0 / 3.0; 3]; 2]).unwrap();
        let d = determinize(&b, &[vec![3.0, 1.0, 2.0], vec![1.0, 1.0, 5.0]]).unwrap();
        assert_eq!(d.lookup, vec![1, 0]);
    }

    #[test]
    fn induced_joint_of_dirac_strategy() {
        let d = DeterministicGridStrategy::new(line(2, 1.0), line(2, 1.0), vec![0, 1]).unwrap();
        let j = induced_joint(&as_behavioral(&d), &[0.5, 0.5]).unwrap();
        assert_eq!(j, vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(BehavioralGridStrategy::new(line(1, 1.0), line(2, 1.0), vec![vec![0.5, 0.6]]).is_err());
        assert!(BehavioralGridStrategy::new(line(1, 1.0), line(2, 1.0), vec![vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let b = random_behavioral(&line(5, 2.0), &line(4, 2.0), 2, 2.0, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_strategy_csv(&b, &mut buf).unwrap();
        let back = read_strategy_csv(buf.as_slice(), &b.obs, &b.act).unwrap();
        assert_eq!(back, b);
    }

    proptest! {
        #[test]
        fn argmax_inverts_as_behavioral(lookup in proptest::collection::vec(0usize..7, 9)) {
            let d = DeterministicGridStrategy::new(line(9, 3.0), line(7, 1.0), lookup).unwrap();
            prop_assert_eq!(as_behavioral(&d).argmax(), d);
        }

        #[test]
        fn random_rows_are_stochastic(seed in 0u64..500, support in 1usize..5) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b = random_behavioral(&line(11, 4.0), &line(21, 8.0), support, 2.0, &mut rng).unwrap();
            for row in &b.table {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL);
                prop_assert!(row.iter().all(|p| *p >= 0.0));
            }
        }

        #[test]
        fn determinize_never_increases_table_cost(
            costs in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 3),
            seed in 0u64..100,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b = random_behavioral(&line(3, 1.0), &line(4, 1.0), 3, 1.0, &mut rng).unwrap();
            let d = determinize(&b, &costs).unwrap();
            for (c, row) in costs.iter().enumerate() {
                let mixed: f64 = row.iter().zip(&b.table[c]).map(|(v, p)| v * p).sum();
                prop_assert!(row[d.lookup[c]] <= mixed + 1e-12);
            }
        }

        #[test]
        fn induced_joint_conserves_mass(seed in 0u64..100, raw in proptest::collection::vec(0.01f64..1.0, 6)) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let b = random_behavioral(&line(6, 1.0), &line(5, 1.0), 2, 1.0, &mut rng).unwrap();
            let s: f64 = raw.iter().sum();
            let m: Vec<f64> = raw.iter().map(|r| r / s).collect();
            let m_sum: f64 = m.iter().sum();
            prop_assume!((m_sum - 1.0).abs() <= ROW_TOL);
            let j = induced_joint(&b, &m).unwrap();
            let total: f64 = j.iter().flatten().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for (row, mj) in j.iter().zip(&m) {
                prop_assert!((row.iter().sum::<f64>() - mj).abs() <= 1e-15);
            }
        }
    }
}
