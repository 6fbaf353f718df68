//! DSGD-RER and its baselines.
//!
//! Every agent cuts its state stream into blocks of `S = B + u` samples. In
//! each block it takes `B` SGD steps over the transition pairs
//! `(x_τ, x_{τ+1})`, latest pair first, and after every step the agents
//! average their estimates through the mixing matrix. The last `u - 1` states
//! of the gap at the front of each block are never touched, which decorrelates
//! consecutive blocks. The output of each agent is the average of its
//! end-of-block iterates.

use serde::{Deserialize, Serialize};

use crate::diagnostics::error_metric;
use crate::error::{Error, Result};
use crate::harness::trace::{ErrorTrace, TraceRow};
use crate::lti::{InitialState, LtiSystem, NoiseKind, Simulator, Trajectory};
use crate::matlib::{self, Matrix};
use crate::network::{gossip_mix_into, Topology};

/// Entries beyond this magnitude abort the run as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferLayout {
    horizon: usize,
    updates: usize,
    gap: usize,
}

impl BufferLayout {
    /// `N = floor(T / (B + u))` blocks; trailing samples are dropped.
    pub fn new(horizon: usize, updates: usize, gap: usize) -> Result<Self> {
        if updates == 0 {
            return Err(Error::InvalidArgument("buffer must hold at least one update (B >= 1)".into()));
        }
        let block = updates + gap;
        if block < 2 || horizon < block {
            return Err(Error::HorizonTooShort { horizon, block });
        }
        Ok(Self { horizon, updates, gap })
    }

    /// `u = floor(sqrt(T / ln T))` and `B = multiplier * u`.
    pub fn from_horizon(horizon: usize, multiplier: usize) -> Result<Self> {
        let gap = default_gap(horizon)?;
        Self::new(horizon, multiplier * gap, gap)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `B`, the number of SGD updates per block.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// `u`, the number of samples separating consecutive blocks.
    pub fn gap(&self) -> usize {
        self.gap
    }

    /// `S = B + u`.
    pub fn block(&self) -> usize {
        self.updates + self.gap
    }

    /// `N`.
    pub fn buffer_count(&self) -> usize {
        self.horizon / self.block()
    }

    /// Position inside a block of the reverse index `-i`: `S - 1 - i`.
    pub fn reverse_index(&self, i: usize) -> usize {
        self.block() - 1 - i
    }

    /// Samples consumed after finishing block `t`.
    pub fn samples_after(&self, t: usize) -> usize {
        (t + 1) * self.block()
    }
}

pub fn plan_buffers(horizon: usize, updates: usize, gap: usize) -> Result<BufferLayout> {
    BufferLayout::new(horizon, updates, gap)
}

/// `floor(sqrt(T / ln T))`.
pub fn default_gap(horizon: usize) -> Result<usize> {
    if horizon < 3 {
        return Err(Error::InvalidArgument(format!("horizon {horizon} too small for the gap formula")));
    }
    let t = horizon as f64;
    Ok((t / t.ln()).sqrt().floor() as usize)
}

/// `floor(2 ln T)`, the number of leading samples used to estimate `R_k`.
pub fn radius_window(horizon: usize) -> usize {
    (2.0 * (horizon.max(1) as f64).ln()).floor() as usize
}

/// Sequential access to one agent's states `x_0, x_1, ...`.
pub trait StateSource: Clone {
    fn dim(&self) -> usize;
    fn next_into(&mut self, out: &mut [f64]) -> Result<()>;
}

impl StateSource for Simulator<'_> {
    fn dim(&self) -> usize {
        self.last_noise().len()
    }

    fn next_into(&mut self, out: &mut [f64]) -> Result<()> {
        Simulator::next_into(self, out);
        Ok(())
    }
}

/// Replays a stored trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryCursor<'a> {
    traj: &'a Trajectory,
    next: usize,
}

impl<'a> TrajectoryCursor<'a> {
    pub fn new(traj: &'a Trajectory) -> Self {
        Self { traj, next: 0 }
    }
}

impl StateSource for TrajectoryCursor<'_> {
    fn dim(&self) -> usize {
        self.traj.dim()
    }

    fn next_into(&mut self, out: &mut [f64]) -> Result<()> {
        if self.next > self.traj.horizon() {
            return Err(Error::TrajectoryTooShort {
                needed: self.next + 1,
                available: self.traj.horizon() + 1,
            });
        }
        out.copy_from_slice(self.traj.state(self.next));
        self.next += 1;
        Ok(())
    }
}

/// `R_k = Σ_{t < floor(2 ln T)} ‖x_t‖`.
pub fn estimate_radius(traj: &Trajectory, horizon: usize) -> Result<f64> {
    estimate_radius_from(&TrajectoryCursor::new(traj), horizon)
}

/// Same as [`estimate_radius`] on a source; the source itself is not advanced.
pub fn estimate_radius_from<S: StateSource>(source: &S, horizon: usize) -> Result<f64> {
    let window = radius_window(horizon);
    let mut peek = source.clone();
    let mut x = vec![0.0; source.dim()];
    let mut total = 0.0;
    for t in 0..window {
        peek.next_into(&mut x).map_err(|_| Error::TrajectoryTooShort {
            needed: window,
            available: t,
        })?;
        total += matlib::norm2(&x);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSizePolicy {
    /// One step size for every agent.
    Global(f64),
    /// `γ_k = 1 / (2 R_k)` from each agent's own leading samples.
    PerAgent,
}

impl StepSizePolicy {
    pub fn resolve<S: StateSource>(&self, sources: &[S], horizon: usize) -> Result<Vec<f64>> {
        match *self {
            StepSizePolicy::Global(gamma) => {
                if !(gamma >= 0.0 && gamma.is_finite()) {
                    return Err(Error::InvalidArgument(format!("step size {gamma} must be finite and >= 0")));
                }
                Ok(vec![gamma; sources.len()])
            }
            StepSizePolicy::PerAgent => sources
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let r = estimate_radius_from(s, horizon)?;
                    if r > 0.0 {
                        Ok(1.0 / (2.0 * r))
                    } else {
                        Err(Error::ZeroRadius { agent: k })
                    }
                })
                .collect(),
        }
    }
}

/// `estimate − 2γ (estimate · x_cur − x_next) x_curᵀ`.
///
/// `x_cur` is the regression feature and `x_next` the target; the caller
/// decides which states of a block they are.
pub fn reverse_sgd_step(estimate: &Matrix, x_cur: &[f64], x_next: &[f64], gamma: f64) -> Matrix {
    let mut out = estimate.clone();
    sgd_step_in_place(&mut out, x_cur, x_next, gamma);
    out
}

/// In-place form of [`reverse_sgd_step`]. Each row only reads itself, so the
/// rows can be updated one after another.
#[inline]
pub fn sgd_step_in_place(estimate: &mut Matrix, feature: &[f64], target: &[f64], gamma: f64) {
    let d = feature.len();
    debug_assert_eq!(estimate.shape(), (target.len(), d));
    let data = estimate.as_mut_slice();
    for (row, &y) in data.chunks_exact_mut(d).zip(target) {
        let residual = matlib::dot(row, feature) - y;
        let coef = 2.0 * gamma * residual;
        for (e, &x) in row.iter_mut().zip(feature) {
            *e -= coef * x;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Record {
    /// One row per agent after every block (or checkpoint).
    #[default]
    PerBuffer,
    /// Only the last block.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    pub record: Record,
    /// Leading blocks excluded from the tail average.
    pub burn_in: usize,
    pub init: InitialState,
    pub noise: NoiseKind,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: ErrorTrace,
    /// Tail-averaged estimate of each agent at the end of the run.
    pub tail_averages: Vec<Matrix>,
    /// Last iterate of each agent.
    pub last_iterates: Vec<Matrix>,
    pub step_sizes: Vec<f64>,
}

/// Running estimates for all agents: `current[k]` is `A^t_{i,k}` and
/// `tail_sum[k]` accumulates the end-of-block iterates.
#[derive(Debug, Clone)]
pub struct AgentEstimates {
    current: Vec<Matrix>,
    scratch: Vec<Matrix>,
    tail_sum: Vec<Matrix>,
    averaged: usize,
    buffers_done: usize,
}

impl AgentEstimates {
    /// All agents start from the zero matrix.
    pub fn zeros(m: usize, d: usize) -> Self {
        let z = Matrix::zeros(d, d);
        Self {
            current: vec![z.clone(); m],
            scratch: vec![z.clone(); m],
            tail_sum: vec![z; m],
            averaged: 0,
            buffers_done: 0,
        }
    }

    pub fn current(&self) -> &[Matrix] {
        &self.current
    }

    pub fn buffers_done(&self) -> usize {
        self.buffers_done
    }

    /// Number of iterates in the tail average.
    pub fn averaged(&self) -> usize {
        self.averaged
    }

    pub fn tail_average(&self, k: usize) -> Matrix {
        self.tail_sum[k].scale(1.0 / self.averaged as f64)
    }

    fn tail_averages(&self) -> Vec<Matrix> {
        (0..self.current.len()).map(|k| self.tail_average(k)).collect()
    }

    fn accumulate(&mut self) {
        for (sum, cur) in self.tail_sum.iter_mut().zip(&self.current) {
            for (s, &c) in sum.as_mut_slice().iter_mut().zip(cur.as_slice()) {
                *s += c;
            }
        }
        self.averaged += 1;
    }

    fn local_steps(&mut self, features: &[&[f64]], targets: &[&[f64]], gammas: &[f64]) {
        for (k, est) in self.current.iter_mut().enumerate() {
            sgd_step_in_place(est, features[k], targets[k], gammas[k]);
        }
    }

    fn mix(&mut self, topology: &Topology) -> Result<()> {
        gossip_mix_into(topology, &self.current, &mut self.scratch)?;
        std::mem::swap(&mut self.current, &mut self.scratch);
        Ok(())
    }

    fn check_finite(&self, buffer: usize, step: usize) -> Result<()> {
        for (agent, est) in self.current.iter().enumerate() {
            if est.as_slice().iter().any(|v| v.is_nan() || v.abs() > DIVERGENCE_LIMIT) {
                return Err(Error::Divergence { buffer, step, agent });
            }
        }
        Ok(())
    }
}

fn record_rows(trace: &mut ErrorTrace, est: &AgentEstimates, truth: &Matrix, buffer: usize, samples: usize) -> Result<()> {
    for k in 0..est.current.len() {
        let error = error_metric(&est.tail_average(k), truth)?;
        trace.rows.push(TraceRow {
            buffer,
            samples,
            agent: k,
            error,
        });
    }
    Ok(())
}

fn read_block<S: StateSource>(source: &mut S, block: &mut [f64]) -> Result<()> {
    let d = source.dim();
    for x in block.chunks_exact_mut(d) {
        source.next_into(x)?;
    }
    Ok(())
}

fn check_sources<S: StateSource>(sources: &[S], truth: &Matrix, agents: usize) -> Result<usize> {
    if sources.len() != agents {
        return Err(Error::InvalidArgument(format!("{} state sources for {agents} agents", sources.len())));
    }
    let d = truth.rows();
    if !truth.is_square() || sources.iter().any(|s| s.dim() != d) {
        return Err(Error::InvalidArgument("state dimension does not match A".into()));
    }
    Ok(d)
}

/// DSGD-RER over arbitrary state sources. `truth` is only used to score the
/// tail averages.
pub fn run_dsgd_rer_on<S: StateSource>(
    sources: &mut [S],
    truth: &Matrix,
    topology: &Topology,
    layout: &BufferLayout,
    step_sizes: &[f64],
    opts: &RunOptions,
) -> Result<RunOutput> {
    let m = topology.agents();
    let d = check_sources(sources, truth, m)?;
    if step_sizes.len() != m {
        return Err(Error::InvalidArgument(format!("{} step sizes for {m} agents", step_sizes.len())));
    }
    if layout.gap() == 0 {
        return Err(Error::InvalidArgument(
            "DSGD-RER needs u >= 1: the oldest pair of a block reaches one sample before its update window".into(),
        ));
    }
    let s = layout.block();
    let n = layout.buffer_count();
    if opts.burn_in >= n {
        return Err(Error::InvalidArgument(format!("burn-in {} leaves no block out of {n}", opts.burn_in)));
    }
    let mut blocks = vec![vec![0.0; s * d]; m];
    let mut est = AgentEstimates::zeros(m, d);
    let mut trace = ErrorTrace::new(if m == 1 { "sgd-rer" } else { "dsgd-rer" });

    for t in 0..n {
        for (src, block) in sources.iter_mut().zip(blocks.iter_mut()) {
            read_block(src, block)?;
        }
        for i in 0..layout.updates() {
            // Pair i: feature x_{-(i+1)}, target x_{-i}.
            let target_at = layout.reverse_index(i) * d;
            let feature_at = target_at - d;
            let features: Vec<&[f64]> = blocks.iter().map(|b| &b[feature_at..feature_at + d]).collect();
            let targets: Vec<&[f64]> = blocks.iter().map(|b| &b[target_at..target_at + d]).collect();
            est.local_steps(&features, &targets, step_sizes);
            est.mix(topology)?;
            est.check_finite(t, i)?;
        }
        est.buffers_done += 1;
        if t >= opts.burn_in {
            est.accumulate();
            if opts.record == Record::PerBuffer || t + 1 == n {
                record_rows(&mut trace, &est, truth, t, layout.samples_after(t))?;
            }
        }
    }
    Ok(RunOutput {
        trace,
        tail_averages: est.tail_averages(),
        last_iterates: est.current,
        step_sizes: step_sizes.to_vec(),
    })
}

/// Seeded simulators, one per agent.
pub fn agent_sources<'a>(system: &'a LtiSystem, m: usize, seed: u64, opts: &RunOptions) -> Vec<Simulator<'a>> {
    (0..m).map(|k| Simulator::for_agent(system, k, seed, opts.init, opts.noise)).collect()
}

/// DSGD-RER on freshly simulated trajectories of `system`.
pub fn run_dsgd_rer(
    system: &LtiSystem,
    topology: &Topology,
    layout: &BufferLayout,
    policy: StepSizePolicy,
    seed: u64,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let mut sources = agent_sources(system, topology.agents(), seed, opts);
    let gammas = policy.resolve(&sources, layout.horizon())?;
    let mut out = run_dsgd_rer_on(&mut sources, system.a(), topology, layout, &gammas, opts)?;
    out.trace.seed = seed;
    Ok(out)
}

/// Centralized SGD-RER on a single stream, written without any network
/// machinery.
pub fn run_sgd_rer<S: StateSource>(source: &mut S, truth: &Matrix, layout: &BufferLayout, gamma: f64, opts: &RunOptions) -> Result<RunOutput> {
    let d = check_sources(std::slice::from_ref(source), truth, 1)?;
    if layout.gap() == 0 {
        return Err(Error::InvalidArgument("SGD-RER needs u >= 1".into()));
    }
    let s = layout.block();
    let n = layout.buffer_count();
    let mut block = vec![0.0; s * d];
    let mut estimate = Matrix::zeros(d, d);
    let mut tail_sum = Matrix::zeros(d, d);
    let mut averaged = 0usize;
    let mut trace = ErrorTrace::new("sgd-rer");
    for t in 0..n {
        read_block(source, &mut block)?;
        // Walk the block backwards: pairs (x_{S-2}, x_{S-1}), (x_{S-3}, x_{S-2}), ...
        for i in 0..layout.updates() {
            let hi = (s - 1 - i) * d;
            let lo = hi - d;
            sgd_step_in_place(&mut estimate, &block[lo..hi], &block[hi..hi + d], gamma);
            if estimate.as_slice().iter().any(|v| v.is_nan() || v.abs() > DIVERGENCE_LIMIT) {
                return Err(Error::Divergence { buffer: t, step: i, agent: 0 });
            }
        }
        if t >= opts.burn_in {
            for (acc, &e) in tail_sum.as_mut_slice().iter_mut().zip(estimate.as_slice()) {
                *acc += e;
            }
            averaged += 1;
            if opts.record == Record::PerBuffer || t + 1 == n {
                let avg = tail_sum.scale(1.0 / averaged as f64);
                trace.rows.push(TraceRow {
                    buffer: t,
                    samples: layout.samples_after(t),
                    agent: 0,
                    error: error_metric(&avg, truth)?,
                });
            }
        }
    }
    Ok(RunOutput {
        trace,
        tail_averages: vec![tail_sum.scale(1.0 / averaged.max(1) as f64)],
        last_iterates: vec![estimate],
        step_sizes: vec![gamma],
    })
}

/// Forward-order distributed SGD: one local step per transition
/// `(x_t, x_{t+1})`, a gossip round after each, and the average of all
/// iterates as output. Errors are recorded every `checkpoint` samples.
pub fn run_vanilla_dsgd_on<S: StateSource>(
    sources: &mut [S],
    truth: &Matrix,
    topology: &Topology,
    horizon: usize,
    step_sizes: &[f64],
    checkpoint: usize,
    record: Record,
) -> Result<RunOutput> {
    let m = topology.agents();
    let d = check_sources(sources, truth, m)?;
    if step_sizes.len() != m || checkpoint == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("vanilla D-SGD needs m step sizes, a checkpoint >= 1 and T >= 1".into()));
    }
    let mut prev = vec![vec![0.0; d]; m];
    let mut next = vec![vec![0.0; d]; m];
    for (src, x) in sources.iter_mut().zip(prev.iter_mut()) {
        src.next_into(x)?;
    }
    let mut est = AgentEstimates::zeros(m, d);
    let mut trace = ErrorTrace::new("vanilla-dsgd");
    let mut checkpoint_index = 0;
    for t in 0..horizon {
        for (src, x) in sources.iter_mut().zip(next.iter_mut()) {
            src.next_into(x)?;
        }
        let features: Vec<&[f64]> = prev.iter().map(Vec::as_slice).collect();
        let targets: Vec<&[f64]> = next.iter().map(Vec::as_slice).collect();
        est.local_steps(&features, &targets, step_sizes);
        est.mix(topology)?;
        est.check_finite(checkpoint_index, t)?;
        est.accumulate();
        std::mem::swap(&mut prev, &mut next);
        let samples = t + 1;
        let at_checkpoint = samples % checkpoint == 0 || samples == horizon;
        if at_checkpoint {
            if record == Record::PerBuffer || samples == horizon {
                record_rows(&mut trace, &est, truth, checkpoint_index, samples)?;
            }
            checkpoint_index += 1;
        }
    }
    Ok(RunOutput {
        trace,
        tail_averages: est.tail_averages(),
        last_iterates: est.current,
        step_sizes: step_sizes.to_vec(),
    })
}

pub fn run_vanilla_dsgd(
    system: &LtiSystem,
    topology: &Topology,
    horizon: usize,
    policy: StepSizePolicy,
    seed: u64,
    checkpoint: usize,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let mut sources = agent_sources(system, topology.agents(), seed, opts);
    let gammas = policy.resolve(&sources, horizon)?;
    let mut out = run_vanilla_dsgd_on(&mut sources, system.a(), topology, horizon, &gammas, checkpoint, opts.record)?;
    out.trace.seed = seed;
    Ok(out)
}

/// Streaming normal equations `Σ x_{t+1} x_tᵀ` and `Σ x_t x_tᵀ`.
#[derive(Debug, Clone)]
pub struct OlsAccumulator {
    cross: Matrix,
    gram: Matrix,
    pairs: usize,
}

/// Largest accepted condition number of `Σ x_t x_tᵀ`.
pub const OLS_MAX_CONDITION: f64 = 1e12;

impl OlsAccumulator {
    pub fn new(d: usize) -> Self {
        Self {
            cross: Matrix::zeros(d, d),
            gram: Matrix::zeros(d, d),
            pairs: 0,
        }
    }

    pub fn push(&mut self, x: &[f64], x_next: &[f64]) {
        let d = x.len();
        let cross = self.cross.as_mut_slice();
        let gram = self.gram.as_mut_slice();
        for r in 0..d {
            for c in 0..d {
                cross[r * d + c] += x_next[r] * x[c];
                gram[r * d + c] += x[r] * x[c];
            }
        }
        self.pairs += 1;
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    /// `(Σ x_{t+1} x_tᵀ)(Σ x_t x_tᵀ)⁻¹` by a Cholesky solve per row.
    pub fn estimate(&self) -> Result<Matrix> {
        let eig = matlib::symmetric_eigenvalues(&self.gram)?;
        let (hi, lo) = (eig[0], eig[eig.len() - 1]);
        if lo.is_nan() || lo <= 0.0 || hi / lo >= OLS_MAX_CONDITION {
            return Err(Error::Singular(format!(
                "Σ x xᵀ has eigenvalues in [{lo:e}, {hi:e}] after {} pairs",
                self.pairs
            )));
        }
        let l = matlib::cholesky(&self.gram)?;
        let d = self.gram.rows();
        let mut out = Vec::with_capacity(d * d);
        for r in 0..d {
            out.extend(matlib::cholesky_solve(&l, self.cross.row(r))?);
        }
        Ok(Matrix::new(d, d, out)?)
    }
}

/// OLS over one or more trajectories, pooling all transitions.
pub fn ols_estimate(trajectories: &[&Trajectory]) -> Result<Matrix> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InvalidArgument("OLS needs at least one trajectory".into()))?;
    let mut acc = OlsAccumulator::new(first.dim());
    for traj in trajectories {
        if traj.dim() != first.dim() {
            return Err(Error::InvalidArgument("trajectories differ in dimension".into()));
        }
        for t in 0..traj.horizon() {
            acc.push(traj.state(t), traj.state(t + 1));
        }
    }
    acc.estimate()
}

/// Pooled OLS on the same simulated agents [`run_dsgd_rer`] would see.
pub fn ols_pooled(system: &LtiSystem, m: usize, horizon: usize, seed: u64, opts: &RunOptions) -> Result<Matrix> {
    let d = system.dim();
    let mut acc = OlsAccumulator::new(d);
    let mut x = vec![0.0; d];
    let mut x_next = vec![0.0; d];
    for mut src in agent_sources(system, m, seed, opts) {
        src.next_into(&mut x);
        for _ in 0..horizon {
            src.next_into(&mut x_next);
            acc.push(&x, &x_next);
            std::mem::swap(&mut x, &mut x_next);
        }
    }
    acc.estimate()
}
