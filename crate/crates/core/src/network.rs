//! Communication topologies: symmetric doubly stochastic mixing matrices and
//! the gossip step that applies them.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::{self, Matrix};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum TopologyKind {
    /// `P = I`: agents never talk. Exempt from the connectivity check.
    Identity,
    /// Ring where every agent is linked to `degree / 2` neighbors on each
    /// side, keeping `self_weight` and splitting the rest evenly.
    Cyclic { degree: usize, self_weight: f64 },
    /// `P = (1/m) 1 1ᵀ`.
    Complete,
    Custom(Matrix),
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Identity => write!(f, "identity"),
            TopologyKind::Cyclic { degree, self_weight } => write!(f, "cyclic({degree},{self_weight})"),
            TopologyKind::Complete => write!(f, "complete"),
            TopologyKind::Custom(_) => write!(f, "custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    kind: TopologyKind,
    p: Matrix,
    beta: f64,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn agents(&self) -> usize {
        self.p.rows()
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    /// Second largest singular value of `P`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `N_k = { j : P[j][k] > 0 }`, ascending.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }
}

pub fn make_topology(kind: TopologyKind, m: usize) -> Result<Topology> {
    if m == 0 {
        return Err(Error::Topology("need at least one agent".into()));
    }
    let p = match &kind {
        TopologyKind::Identity => Matrix::identity(m),
        TopologyKind::Complete => Matrix::new(m, m, vec![1.0 / m as f64; m * m])?,
        TopologyKind::Cyclic { degree, self_weight } => cyclic_matrix(m, *degree, *self_weight)?,
        TopologyKind::Custom(p) => {
            if p.shape() != (m, m) {
                return Err(Error::Topology(format!("custom matrix is {:?}, expected {m}x{m}", p.shape())));
            }
            p.clone()
        }
    };
    validate(&p, !matches!(kind, TopologyKind::Identity))?;
    let beta = if m == 1 {
        // A single agent has no second singular value; P = [1] mixes nothing.
        1.0
    } else {
        matlib::singular_values(&p)?[1]
    };
    let neighbors = (0..m).map(|k| (0..m).filter(|&j| p[(j, k)] > 0.0).collect()).collect();
    Ok(Topology { kind, p, beta, neighbors })
}

fn cyclic_matrix(m: usize, degree: usize, self_weight: f64) -> Result<Matrix> {
    if m < 3 {
        return Err(Error::Topology(format!("cyclic graph needs m >= 3, got {m}")));
    }
    if degree == 0 || degree % 2 != 0 || degree >= m {
        return Err(Error::Topology(format!("cyclic degree must be even and in [2, {}], got {degree}", m - 1)));
    }
    if !(self_weight > 0.0 && self_weight < 1.0) {
        return Err(Error::Topology(format!("self weight must lie in (0, 1), got {self_weight}")));
    }
    let neighbor_weight = (1.0 - self_weight) / degree as f64;
    let mut p = Matrix::zeros(m, m);
    for k in 0..m {
        p[(k, k)] = self_weight;
        for h in 1..=degree / 2 {
            p[(k, (k + h) % m)] = neighbor_weight;
            p[(k, (k + m - h) % m)] = neighbor_weight;
        }
    }
    Ok(p)
}

fn validate(p: &Matrix, require_connected: bool) -> Result<()> {
    let m = p.rows();
    if !p.is_square() {
        return Err(Error::Topology("mixing matrix must be square".into()));
    }
    if let Some(v) = p.as_slice().iter().find(|&&v| v < 0.0) {
        return Err(Error::Topology(format!("nonnegativity: entry {v} < 0")));
    }
    let asym = p.asymmetry();
    if asym > STOCHASTIC_TOL {
        return Err(Error::Topology(format!("symmetry: max |P_ij - P_ji| = {asym:e}")));
    }
    for k in 0..m {
        let row: f64 = p.row(k).iter().sum();
        let col: f64 = (0..m).map(|j| p[(j, k)]).sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Topology(format!("row sums: row {k} sums to {row}")));
        }
        if (col - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Topology(format!("column sums: column {k} sums to {col}")));
        }
        if p[(k, k)].is_nan() || p[(k, k)] <= 0.0 {
            return Err(Error::Topology(format!("positive diagonal: P[{k}][{k}] = {}", p[(k, k)])));
        }
    }
    if require_connected && !is_connected(p) {
        return Err(Error::Topology("connectivity: graph of P is disconnected".into()));
    }
    Ok(())
}

/// Reachability over the support of `P`; equivalent to `P + P² + … + P^m`
/// being entrywise positive.
fn is_connected(p: &Matrix) -> bool {
    let m = p.rows();
    let mut seen = vec![false; m];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(k) = stack.pop() {
        for j in 0..m {
            if !seen[j] && p[(k, j)] > 0.0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Reads a mixing matrix: first line `m`, then `m` whitespace-separated rows.
pub fn read_matrix_file(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_text(&text)
}

pub fn parse_matrix_text(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let m: usize = lines
        .next()
        .ok_or_else(|| Error::Topology("empty matrix file".into()))?
        .parse()
        .map_err(|e| Error::Topology(format!("first line must be m: {e}")))?;
    let mut data = Vec::with_capacity(m * m);
    for r in 0..m {
        let line = lines.next().ok_or_else(|| Error::Topology(format!("missing row {r}")))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Topology(format!("row {r}: {e}"))))
            .collect::<Result<_>>()?;
        if row.len() != m {
            return Err(Error::Topology(format!("row {r} has {} entries, expected {m}", row.len())));
        }
        data.extend(row);
    }
    if lines.next().is_some() {
        return Err(Error::Topology("trailing rows after matrix".into()));
    }
    Ok(Matrix::new(m, m, data)?)
}

/// Worst ratio `Σ_j |[Pᵏ]_{ji} − 1/m| / (√m βᵏ)` over `1 ≤ k ≤ k_max` and
/// agents `i`. A zero deviation counts as ratio 0, which covers `β = 0`.
pub fn mixing_bound_check(t: &Topology, k_max: u32) -> Result<f64> {
    let m = t.agents();
    let inv_m = 1.0 / m as f64;
    let root_m = (m as f64).sqrt();
    let mut power = Matrix::identity(m);
    let mut worst: f64 = 0.0;
    for k in 1..=k_max {
        power = matlib::matmul(&power, t.p())?;
        let bound = root_m * t.beta().powi(k as i32);
        for i in 0..m {
            let dev: f64 = (0..m).map(|j| (power[(j, i)] - inv_m).abs()).sum();
            let ratio = if dev <= f64::EPSILON {
                0.0
            } else if bound == 0.0 {
                f64::INFINITY
            } else {
                dev / bound
            };
            worst = worst.max(ratio);
        }
    }
    Ok(worst)
}

/// `out[k] = Σ_j P[j][k] · estimates[j]` over `j ∈ N_k`, ascending `j`.
pub fn gossip_mix(t: &Topology, estimates: &[Matrix]) -> Result<Vec<Matrix>> {
    let mut out = estimates.to_vec();
    gossip_mix_into(t, estimates, &mut out)?;
    Ok(out)
}

/// In-place form of [`gossip_mix`]; `out` must already hold `m` matrices of
/// the right shape.
pub fn gossip_mix_into(t: &Topology, estimates: &[Matrix], out: &mut [Matrix]) -> Result<()> {
    let m = t.agents();
    if estimates.len() != m || out.len() != m {
        return Err(Error::InvalidArgument(format!(
            "gossip over {m} agents got {} estimates",
            estimates.len()
        )));
    }
    let shape = estimates[0].shape();
    if estimates.iter().chain(out.iter()).any(|e| e.shape() != shape) {
        return Err(Error::InvalidArgument("estimates differ in shape".into()));
    }
    for (k, target) in out.iter_mut().enumerate() {
        let nbrs = t.neighbors(k);
        let first = nbrs[0];
        let w0 = t.p()[(first, k)];
        // Start from the first term rather than zero so that P = [1] is an
        // exact copy, signed zeros included.
        for (o, &v) in target.as_mut_slice().iter_mut().zip(estimates[first].as_slice()) {
            *o = w0 * v;
        }
        for &j in &nbrs[1..] {
            let w = t.p()[(j, k)];
            for (o, &v) in target.as_mut_slice().iter_mut().zip(estimates[j].as_slice()) {
                *o += w * v;
            }
        }
    }
    Ok(())
}

/// Config-level description of a topology, resolved against `m` later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TopologySpec {
    Identity,
    Cyclic { degree: usize, self_weight: f64 },
    Complete,
    Custom { path: String },
}

impl TopologySpec {
    pub fn label(&self) -> String {
        match self {
            TopologySpec::Identity => "identity".into(),
            TopologySpec::Cyclic { .. } => "cyclic".into(),
            TopologySpec::Complete => "complete".into(),
            TopologySpec::Custom { .. } => "custom".into(),
        }
    }

    pub fn build(&self, m: usize) -> Result<Topology> {
        let kind = match self {
            TopologySpec::Identity => TopologyKind::Identity,
            TopologySpec::Cyclic { degree, self_weight } => TopologyKind::Cyclic {
                degree: *degree,
                self_weight: *self_weight,
            },
            TopologySpec::Complete => TopologyKind::Complete,
            TopologySpec::Custom { path } => TopologyKind::Custom(read_matrix_file(Path::new(path))?),
        };
        make_topology(kind, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(vals: &[f64]) -> Vec<Matrix> {
        vals.iter().map(|&v| Matrix::from_rows(&[&[v]]).unwrap()).collect()
    }

    #[test]
    fn identity_topology() {
        let t = make_topology(TopologyKind::Identity, 5).unwrap();
        assert_eq!(t.beta(), 1.0);
        assert!((0..5).all(|k| t.neighbors(k) == [k]));
    }

    #[test]
    fn complete_topology() {
        let t = make_topology(TopologyKind::Complete, 5).unwrap();
        assert!(t.beta().abs() < 1e-12);
        assert_eq!(t.neighbors(2), [0, 1, 2, 3, 4]);
    }

    #[test]
    fn cyclic_topology_beta() {
        let t = make_topology(TopologyKind::Cyclic { degree: 2, self_weight: 0.3 }, 5).unwrap();
        let expected = 0.3 + 0.7 * (2.0 * std::f64::consts::PI / 5.0).cos();
        assert!((t.beta() - expected).abs() < 1e-10);
        assert!((t.beta() - 0.5163).abs() < 1e-4);
        assert_eq!(t.neighbors(0), [0, 1, 4]);
    }

    #[test]
    fn single_agent() {
        let t = make_topology(TopologyKind::Identity, 1).unwrap();
        assert_eq!(t.agents(), 1);
        let out = gossip_mix(&t, &scalars(&[-0.0])).unwrap();
        assert_eq!(out[0][(0, 0)].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn custom_checks_are_named() {
        let bad = |rows: &[&[f64]]| {
            let p = Matrix::from_rows(rows).unwrap();
            make_topology(TopologyKind::Custom(p), rows.len()).unwrap_err().to_string()
        };
        assert!(bad(&[&[0.5, 0.5], &[0.4, 0.6]]).contains("symmetry"));
        assert!(bad(&[&[0.5, 0.4], &[0.4, 0.5]]).contains("row sums"));
        assert!(bad(&[&[1.5, -0.5], &[-0.5, 1.5]]).contains("nonnegativity"));
        assert!(bad(&[&[0.0, 1.0], &[1.0, 0.0]]).contains("positive diagonal"));
        assert!(bad(&[&[1.0, 0.0, 0.0], &[0.0, 0.5, 0.5], &[0.0, 0.5, 0.5]]).contains("connectivity"));
        let ok = Matrix::from_rows(&[&[0.6, 0.4], &[0.4, 0.6]]).unwrap();
        let t = make_topology(TopologyKind::Custom(ok), 2).unwrap();
        assert!((t.beta() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn cyclic_rejects_bad_parameters() {
        assert!(make_topology(TopologyKind::Cyclic { degree: 2, self_weight: 0.3 }, 2).is_err());
        assert!(make_topology(TopologyKind::Cyclic { degree: 3, self_weight: 0.3 }, 7).is_err());
        assert!(make_topology(TopologyKind::Cyclic { degree: 2, self_weight: 1.0 }, 5).is_err());
        let t = make_topology(TopologyKind::Cyclic { degree: 4, self_weight: 0.2 }, 9).unwrap();
        assert_eq!(t.neighbors(0), [0, 1, 2, 7, 8]);
    }

    #[test]
    fn mixing_bound_examples() {
        let complete = make_topology(TopologyKind::Complete, 5).unwrap();
        assert_eq!(mixing_bound_check(&complete, 20).unwrap(), 0.0);
        let cyc = make_topology(TopologyKind::Cyclic { degree: 2, self_weight: 0.3 }, 5).unwrap();
        let r = mixing_bound_check(&cyc, 20).unwrap();
        assert!(r > 0.0 && r <= 1.0 + 1e-9, "{r}");
        let id = make_topology(TopologyKind::Identity, 5).unwrap();
        let r = mixing_bound_check(&id, 20).unwrap();
        assert!((r - 2.0 * 4.0 / 5.0 / 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gossip_examples() {
        let id = make_topology(TopologyKind::Identity, 3).unwrap();
        let input = scalars(&[1.0, 2.0, 3.0]);
        assert_eq!(gossip_mix(&id, &input).unwrap(), input);

        let complete = make_topology(TopologyKind::Complete, 3).unwrap();
        for out in gossip_mix(&complete, &input).unwrap() {
            assert!((out[(0, 0)] - 2.0).abs() < 1e-15);
        }

        let p = Matrix::from_rows(&[&[0.4, 0.3, 0.3], &[0.3, 0.4, 0.3], &[0.3, 0.3, 0.4]]).unwrap();
        let t = make_topology(TopologyKind::Custom(p), 3).unwrap();
        let out = gossip_mix(&t, &input).unwrap();
        for (o, e) in out.iter().zip([1.9, 2.0, 2.1]) {
            assert!((o[(0, 0)] - e).abs() < 1e-14);
        }
    }

    #[test]
    fn gossip_rejects_wrong_count() {
        let t = make_topology(TopologyKind::Complete, 3).unwrap();
        assert!(gossip_mix(&t, &scalars(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn matrix_file_parsing() {
        let p = parse_matrix_text("3\n0.4 0.3 0.3\n0.3 0.4 0.3\n 0.3 0.3 0.4 \n").unwrap();
        assert_eq!(p.shape(), (3, 3));
        assert!(parse_matrix_text("2\n1 0\n").is_err());
        assert!(parse_matrix_text("2\n1 0\n0 1 0\n").is_err());
        assert!(parse_matrix_text("x\n").is_err());
    }
}
