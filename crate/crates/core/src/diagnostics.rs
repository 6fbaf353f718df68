//! Numerical checks of the structure behind the error analysis: the H-product
//! sandwich, zero-mean noise coupling under reverse order, and the decay of
//! the gap between the real and the coupled process.

use crate::error::{Error, Result};
use crate::estimator::BufferLayout;
use crate::lti::{sample_stationary, CoupledTrajectory, LtiSystem, NoiseKind, Simulator, Trajectory};
use crate::matlib::{self, Matrix};
use crate::rng::{Purpose, RngStream};

/// Tolerance on the minimum eigenvalue when testing a PSD ordering.
pub const PSD_TOL: f64 = -1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    Spectral,
    Frobenius,
}

/// `‖estimate − truth‖` in the spectral norm.
pub fn error_metric(estimate: &Matrix, truth: &Matrix) -> Result<f64> {
    error_metric_with(estimate, truth, Norm::Spectral)
}

pub fn error_metric_with(estimate: &Matrix, truth: &Matrix, norm: Norm) -> Result<f64> {
    let diff = estimate.sub(truth)?;
    Ok(match norm {
        Norm::Spectral => matlib::spectral_norm(&diff)?,
        Norm::Frobenius => diff.frobenius_norm(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Distance to the threshold; negative when failed.
    pub margin: f64,
    /// Informational checks never fail a report.
    pub hard: bool,
}

impl Check {
    pub fn hard(name: impl Into<String>, passed: bool, margin: f64) -> Self {
        Self {
            name: name.into(),
            passed,
            margin,
            hard: true,
        }
    }

    pub fn info(name: impl Into<String>, passed: bool, margin: f64) -> Self {
        Self {
            hard: false,
            ..Self::hard(name, passed, margin)
        }
    }
}

#[derive(Debug, Clone)]
pub struct McStatistic {
    pub name: String,
    pub mean: Matrix,
    pub std_err: Matrix,
}

#[derive(Debug, Clone)]
pub struct McReport {
    /// Replicas that entered the statistics.
    pub replicas: usize,
    /// Replicas rejected by the conditioning event.
    pub discarded: usize,
    pub statistics: Vec<McStatistic>,
    pub checks: Vec<Check>,
}

impl McReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.hard)
    }
}

/// Entrywise running mean and standard error.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    sum: Matrix,
    sum_sq: Matrix,
}

impl Moments {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            n: 0,
            sum: Matrix::zeros(rows, cols),
            sum_sq: Matrix::zeros(rows, cols),
        }
    }

    fn push(&mut self, x: &Matrix) {
        for ((s, q), &v) in self.sum.as_mut_slice().iter_mut().zip(self.sum_sq.as_mut_slice()).zip(x.as_slice()) {
            *s += v;
            *q += v * v;
        }
        self.n += 1;
    }

    fn finish(&self, name: &str) -> McStatistic {
        let n = self.n.max(1) as f64;
        let mean = self.sum.scale(1.0 / n);
        let mut std_err = Matrix::zeros(mean.rows(), mean.cols());
        for ((se, &s), &q) in std_err.as_mut_slice().iter_mut().zip(self.sum.as_slice()).zip(self.sum_sq.as_slice()) {
            let m = s / n;
            let var = if self.n > 1 { ((q - n * m * m) / (n - 1.0)).max(0.0) } else { 0.0 };
            *se = (var / n).sqrt();
        }
        McStatistic {
            name: name.to_string(),
            mean,
            std_err,
        }
    }
}

/// Ordered factors `P̃_{−s} = I − (2γ/m) Σ_k x̃^k_{−s} x̃^{kᵀ}_{−s}` for
/// `s = 0..B−1`.
#[derive(Debug, Clone)]
pub struct HProduct {
    factors: Vec<Matrix>,
    dim: usize,
}

impl HProduct {
    /// `features[s][k]` is agent `k`'s state at reverse index `−s`.
    pub fn new(features: &[Vec<&[f64]>], gamma: f64) -> Self {
        let dim = features.first().and_then(|f| f.first()).map_or(1, |x| x.len());
        let factors = features
            .iter()
            .map(|step| {
                let m = step.len() as f64;
                let mut f = Matrix::identity(dim);
                for x in step {
                    f.axpy(-2.0 * gamma / m, &matlib::outer(x, x)).expect("same shape");
                }
                f
            })
            .collect();
        Self { factors, dim }
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// `H̃_{i,j} = P̃_{−i} P̃_{−(i+1)} ⋯ P̃_{−j}`, or `I` when `i > j`.
    pub fn product(&self, i: usize, j: usize) -> Matrix {
        let mut h = Matrix::identity(self.dim);
        if i > j {
            return h;
        }
        for f in &self.factors[i..=j] {
            h = matlib::matmul(&h, f).expect("square factors");
        }
        h
    }
}

/// Parameters of [`contraction_check`].
#[derive(Debug, Clone, Copy)]
pub struct ContractionParams {
    pub agents: usize,
    pub gamma: f64,
    /// Bound on `‖x̃‖²` defining the conditioning event.
    pub radius: f64,
    /// Retained replicas wanted.
    pub replicas: usize,
    pub seed: u64,
}

/// Minimum eigenvalues of `H̃ᵀH̃ − lower` and `upper − H̃ᵀH̃` where
/// `lower/upper = I − (4γ/m)(1 ± 2γBR/(1−4γBR)) Σ_{i,k} x̃ x̃ᵀ`.
pub fn contraction_margins(features: &[Vec<&[f64]>], gamma: f64, radius: f64) -> Result<(f64, f64)> {
    let b = features.len() as f64;
    let m = features.first().map_or(1, Vec::len) as f64;
    let h = HProduct::new(features, gamma).product(0, features.len().saturating_sub(1));
    let hth = matlib::matmul(&h.transpose(), &h)?;
    let d = hth.rows();
    let mut scatter = Matrix::zeros(d, d);
    for step in features {
        for x in step {
            scatter.axpy(1.0, &matlib::outer(x, x))?;
        }
    }
    let c = 2.0 * gamma * b * radius / (1.0 - 4.0 * gamma * b * radius);
    let mut lower = Matrix::identity(d);
    lower.axpy(-4.0 * gamma / m * (1.0 + c), &scatter)?;
    let mut upper = Matrix::identity(d);
    upper.axpy(-4.0 * gamma / m * (1.0 - c), &scatter)?;
    let lo = matlib::symmetric_eigenvalues(&hth.sub(&lower)?.symmetrized()?)?;
    let hi = matlib::symmetric_eigenvalues(&upper.sub(&hth)?.symmetrized()?)?;
    Ok((lo[d - 1], hi[d - 1]))
}

/// Coupled buffers restarted from `π`: `agents` independent length-`S`
/// stationary sequences per replica, kept only when every feature state
/// satisfies `‖x̃‖² ≤ R`.
pub fn contraction_check(system: &LtiSystem, layout: &BufferLayout, params: ContractionParams) -> Result<McReport> {
    let ContractionParams {
        agents,
        gamma,
        radius,
        replicas,
        seed,
    } = params;
    let b = layout.updates();
    if agents == 0 || replicas == 0 {
        return Err(Error::InvalidArgument("need at least one agent and one replica".into()));
    }
    if !(gamma >= 0.0 && gamma * b as f64 * radius < 0.25) {
        return Err(Error::InvalidArgument(format!(
            "contraction check needs γBR < 1/4, got {}",
            gamma * b as f64 * radius
        )));
    }
    let d = system.dim();
    let s = layout.block();
    let max_attempts = 20 * replicas;
    let mut retained = 0;
    let mut discarded = 0;
    let mut worst_lo = f64::INFINITY;
    let mut worst_hi = f64::INFINITY;
    let mut moments = Moments::new(1, 2);
    let mut states = vec![vec![0.0; s * d]; agents];
    let mut attempt = 0;
    while retained < replicas && attempt < max_attempts {
        for (k, buf) in states.iter_mut().enumerate() {
            let stream = (attempt * agents + k) as u64;
            let x0 = sample_stationary(system, &mut RngStream::new(seed, stream, Purpose::Replica));
            let mut sim = Simulator::new(system, &x0, NoiseKind::Gaussian, RngStream::new(seed, stream, Purpose::Noise));
            for x in buf.chunks_exact_mut(d) {
                sim.next_into(x);
            }
        }
        attempt += 1;
        let features: Vec<Vec<&[f64]>> = (0..b)
            .map(|i| {
                let at = layout.reverse_index(i) * d;
                states.iter().map(|buf| &buf[at..at + d]).collect()
            })
            .collect();
        let inside = features.iter().flatten().all(|x| matlib::dot(x, x) <= radius);
        if !inside {
            discarded += 1;
            continue;
        }
        let (lo, hi) = contraction_margins(&features, gamma, radius)?;
        worst_lo = worst_lo.min(lo);
        worst_hi = worst_hi.min(hi);
        moments.push(&Matrix::new(1, 2, vec![lo, hi])?);
        retained += 1;
    }
    if retained == 0 {
        return Err(Error::EventNeverHeld { attempts: attempt });
    }
    Ok(McReport {
        replicas: retained,
        discarded,
        statistics: vec![moments.finish("min eigenvalue margins [lower, upper]")],
        checks: vec![
            Check::hard("H̃ᵀH̃ above lower bound", worst_lo >= PSD_TOL, worst_lo - PSD_TOL),
            Check::hard("H̃ᵀH̃ below upper bound", worst_hi >= PSD_TOL, worst_hi - PSD_TOL),
        ],
    })
}

/// The noise-coupling terms of forward and reverse SGD on one stationary
/// sequence `x_0..x_B` with noises `w_0..w_{B−1}`:
///
/// forward: `2γ Σ_s w_s x_sᵀ P_{s+1} P_{s+2} ⋯ P_{B−1}`
/// reverse: `2γ Σ_s w_s x_sᵀ P_{s−1} P_{s−2} ⋯ P_0`
///
/// with `P_l = I − 2γ x_l x_lᵀ`.
pub fn noise_coupling_terms(traj: &Trajectory, gamma: f64) -> Result<(Matrix, Matrix)> {
    let d = traj.dim();
    let b = traj.horizon();
    let factor = |l: usize| {
        let mut p = Matrix::identity(d);
        let x = traj.state(l);
        p.axpy(-2.0 * gamma, &matlib::outer(x, x)).expect("same shape");
        p
    };
    let mut forward = Matrix::zeros(d, d);
    let mut tail = Matrix::identity(d);
    for s in (0..b).rev() {
        let term = matlib::matmul(&matlib::outer(traj.noise(s), traj.state(s)), &tail)?;
        forward.axpy(2.0 * gamma, &term)?;
        tail = matlib::matmul(&factor(s), &tail)?;
    }
    let mut reverse = Matrix::zeros(d, d);
    let mut head = Matrix::identity(d);
    for s in 0..b {
        let term = matlib::matmul(&matlib::outer(traj.noise(s), traj.state(s)), &head)?;
        reverse.axpy(2.0 * gamma, &term)?;
        head = matlib::matmul(&factor(s), &head)?;
    }
    Ok((forward, reverse))
}

fn within_standard_errors(stat: &McStatistic, k: f64) -> (bool, f64) {
    let mut worst: f64 = 0.0;
    for (&m, &se) in stat.mean.as_slice().iter().zip(stat.std_err.as_slice()) {
        let z = if se > 0.0 {
            m.abs() / se
        } else if m == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    (worst <= k, k - worst)
}

/// Monte-Carlo means of the forward and reverse noise-coupling terms over
/// stationary-start sequences of length `B`. Only the reverse term is
/// asserted to be zero-mean (within 3 standard errors in every entry).
pub fn unbiasedness_mc(system: &LtiSystem, updates: usize, gamma: f64, replicas: usize, seed: u64) -> Result<McReport> {
    if replicas < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 replicas, got {replicas}")));
    }
    if updates == 0 {
        return Err(Error::InvalidArgument("need B >= 1".into()));
    }
    let d = system.dim();
    let mut fwd = Moments::new(d, d);
    let mut rev = Moments::new(d, d);
    for r in 0..replicas {
        let x0 = sample_stationary(system, &mut RngStream::new(seed, r as u64, Purpose::Replica));
        let traj = crate::lti::simulate(system, r, updates, &x0, NoiseKind::Gaussian, RngStream::new(seed, r as u64, Purpose::Noise))?;
        let (f, b) = noise_coupling_terms(&traj, gamma)?;
        fwd.push(&f);
        rev.push(&b);
    }
    let fwd = fwd.finish("forward noise coupling");
    let rev = rev.finish("reverse noise coupling");
    let (rev_ok, rev_margin) = within_standard_errors(&rev, 3.0);
    let (fwd_ok, fwd_margin) = within_standard_errors(&fwd, 3.0);
    Ok(McReport {
        replicas,
        discarded: 0,
        statistics: vec![fwd, rev],
        checks: vec![
            Check::hard("reverse term mean within 3 SE of 0", rev_ok, rev_margin),
            Check::info("forward term mean within 3 SE of 0", fwd_ok, fwd_margin),
        ],
    })
}

/// Worst ratio `‖x^t_i − x̃^t_i‖ / (‖Aⁱ‖ ‖x^t_0 − x̃^t_0‖ + ε)` over all buffers
/// and in-buffer indices. `ε = 1e-12 · max(1, ‖x^t_i‖, ‖x̃^t_i‖)` absorbs the
/// rounding of the two separately computed recursions.
pub fn coupled_gap(system: &LtiSystem, traj: &Trajectory, coupled: &CoupledTrajectory, layout: &BufferLayout) -> Result<f64> {
    let s = layout.block();
    if coupled.block() != s || coupled.buffer_count() != layout.buffer_count() {
        return Err(Error::InvalidArgument("coupled process does not match the layout".into()));
    }
    if traj.horizon() + 1 < layout.buffer_count() * s {
        return Err(Error::TrajectoryTooShort {
            needed: layout.buffer_count() * s,
            available: traj.horizon() + 1,
        });
    }
    let mut power_norms = Vec::with_capacity(s);
    let mut power = Matrix::identity(system.dim());
    for _ in 0..s {
        power_norms.push(matlib::spectral_norm(&power)?);
        power = matlib::matmul(&power, system.a())?;
    }
    let diff_norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut worst: f64 = 0.0;
    for t in 0..layout.buffer_count() {
        let delta0 = diff_norm(traj.state(s * t), coupled.state(t, 0));
        for (i, norm_pow) in power_norms.iter().enumerate() {
            let x = traj.state(s * t + i);
            let xc = coupled.state(t, i);
            let eps = 1e-12 * matlib::norm2(x).max(matlib::norm2(xc)).max(1.0);
            worst = worst.max(diff_norm(x, xc) / (norm_pow * delta0 + eps));
        }
    }
    Ok(worst)
}
