//! Linear time-invariant systems `x_{t+1} = A x_t + w_t`, their trajectories,
//! the stationary law `π = N(0, G)`, and the coupled process that restarts
//! every buffer from `π` while reusing the real noise.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::BufferLayout;
use crate::matlib::{self, Matrix};
use crate::rng::{Purpose, RngStream};

/// Distribution of the normalized noise `z` in `w = chol(Σ) z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Standard normal coordinates.
    #[default]
    Gaussian,
    /// Independent ±1 coordinates. Bounded, same covariance, sub-Gaussian
    /// with variance proxy 1.
    Rademacher,
}

/// How `x_0` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    #[default]
    Zero,
    Stationary,
}

#[derive(Debug, Clone)]
pub struct LtiSystem {
    a: Matrix,
    sigma: Matrix,
    g: Matrix,
    sigma_chol: Matrix,
    g_chol: Matrix,
}

impl LtiSystem {
    /// Validates `‖A‖ < 1` and `Σ ≻ 0`, then derives `G` and both Cholesky
    /// factors.
    pub fn new(a: Matrix, sigma: Matrix) -> Result<Self> {
        if !a.is_square() || sigma.shape() != a.shape() {
            return Err(Error::InvalidArgument(format!(
                "A is {:?} and Σ is {:?}; both must be the same square shape",
                a.shape(),
                sigma.shape()
            )));
        }
        let sigma_chol = matlib::cholesky(&sigma)?;
        let g = matlib::solve_lyapunov(&a, &sigma)?;
        let g_chol = matlib::cholesky(&g.symmetrized()?)?;
        Ok(Self {
            a,
            sigma,
            g,
            sigma_chol,
            g_chol,
        })
    }

    /// A system with `Σ = 0`. Only meaningful for deterministic tests: the
    /// stationary law collapses to the origin.
    pub fn noiseless(a: Matrix) -> Result<Self> {
        let norm = matlib::spectral_norm(&a)?;
        if norm >= 1.0 {
            return Err(matlib::MatrixError::Unstable { norm }.into());
        }
        let d = a.rows();
        let zero = Matrix::zeros(d, d);
        Ok(Self {
            a,
            sigma: zero.clone(),
            g: zero.clone(),
            sigma_chol: zero.clone(),
            g_chol: zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    /// Stationary covariance `G = A G Aᵀ + Σ`.
    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn sigma_chol(&self) -> &Matrix {
        &self.sigma_chol
    }

    pub fn g_chol(&self) -> &Matrix {
        &self.g_chol
    }

    /// `A x + w` written into `out`.
    fn step_into(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = matlib::dot(self.a.row(r), x) + w[r];
        }
    }

    fn draw_noise(&self, kind: NoiseKind, rng: &mut RngStream, z: &mut [f64], out: &mut [f64]) {
        match kind {
            NoiseKind::Gaussian => rng.fill_standard_normal(z),
            NoiseKind::Rademacher => z.iter_mut().for_each(|v| *v = rng.rademacher()),
        }
        lower_mul_into(&self.sigma_chol, z, out);
    }
}

fn lower_mul_into(l: &Matrix, z: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = l.row(r)[..=r].iter().zip(z).map(|(a, b)| a * b).sum();
    }
}

/// Eigenvalue list for `d` coordinates on two levels: the first
/// `ceil(d/2)` entries at `first`, the rest at `second`.
pub fn two_level_spectrum(d: usize, first: f64, second: f64) -> Vec<f64> {
    let split = d.div_ceil(2);
    (0..d).map(|i| if i < split { first } else { second }).collect()
}

/// Builds `A = U Λ Uᵀ` with `U` a seeded random orthogonal matrix (QR of a
/// standard Gaussian matrix, `R` with positive diagonal) and `Λ` the given
/// eigenvalues.
pub fn make_system(d: usize, eigenvalues: &[f64], sigma: Matrix, seed: u64) -> Result<LtiSystem> {
    if d == 0 || eigenvalues.len() != d {
        return Err(Error::InvalidArgument(format!(
            "need {d} eigenvalues, got {}",
            eigenvalues.len()
        )));
    }
    if let Some(&bad) = eigenvalues.iter().find(|v| v.is_nan() || v.abs() >= 1.0) {
        return Err(Error::UnstableSpec(bad));
    }
    let u = random_orthogonal(d, seed)?;
    let a = matlib::matmul(&matlib::matmul(&u, &Matrix::from_diag(eigenvalues))?, &u.transpose())?;
    // Exact symmetry; the two triangles can differ in the last bit.
    let a = a.symmetrized()?;
    LtiSystem::new(a, sigma)
}

pub fn random_orthogonal(d: usize, seed: u64) -> Result<Matrix> {
    let mut rng = RngStream::new(seed, 0, Purpose::System);
    let mut z = vec![0.0; d * d];
    rng.fill_standard_normal(&mut z);
    let (q, _) = matlib::qr(&Matrix::new(d, d, z)?)?;
    Ok(q)
}

/// One agent's realized trajectory: states `x_0..x_T` and noises
/// `w_0..w_{T-1}`, both stored row-major with stride `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    agent: usize,
    dim: usize,
    states: Vec<f64>,
    noises: Vec<f64>,
}

impl Trajectory {
    /// Wraps raw states. Noises are left empty, which rules out coupling.
    pub fn from_states(agent: usize, dim: usize, states: Vec<f64>) -> Result<Self> {
        if dim == 0 || states.len() % dim != 0 || states.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form whole {dim}-vectors",
                states.len()
            )));
        }
        Ok(Self {
            agent,
            dim,
            states,
            noises: Vec::new(),
        })
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of transitions `T` (states hold `T + 1` vectors).
    pub fn horizon(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }

    pub fn has_noises(&self) -> bool {
        !self.noises.is_empty()
    }

    pub fn noise(&self, t: usize) -> &[f64] {
        &self.noises[t * self.dim..(t + 1) * self.dim]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    /// Binary dump: magic `LTITRAJ1`, then `d`, `T`, `k` as little-endian
    /// u64, then the `(T+1) x d` states as little-endian f64, row-major.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(TRAJ_MAGIC)?;
        for v in [self.dim, self.horizon(), self.agent] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in &self.states {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRAJ_MAGIC {
            return Err(Error::TrajectoryFormat("bad magic".into()));
        }
        let mut word = [0u8; 8];
        let mut header = [0u64; 3];
        for h in &mut header {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let [dim, horizon, agent] = header.map(|v| v as usize);
        let len = dim
            .checked_mul(horizon + 1)
            .filter(|&n| dim > 0 && n < (1 << 34))
            .ok_or_else(|| Error::TrajectoryFormat(format!("implausible header d={dim} T={horizon}")))?;
        let mut states = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)
                .map_err(|e| Error::TrajectoryFormat(format!("truncated states: {e}")))?;
            let v = f64::from_le_bytes(word);
            if !v.is_finite() {
                return Err(Error::TrajectoryFormat("non-finite state".into()));
            }
            states.push(v);
        }
        Self::from_states(agent, dim, states)
    }
}

const TRAJ_MAGIC: &[u8; 8] = b"LTITRAJ1";

/// Incremental trajectory generator. Produces exactly the states
/// [`simulate`] would, without storing them.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    system: &'a LtiSystem,
    noise_kind: NoiseKind,
    rng: RngStream,
    x: Vec<f64>,
    w: Vec<f64>,
    z: Vec<f64>,
    emitted_initial: bool,
}

impl<'a> Simulator<'a> {
    pub fn new(system: &'a LtiSystem, x0: &[f64], noise_kind: NoiseKind, rng: RngStream) -> Self {
        assert_eq!(x0.len(), system.dim(), "x0 dimension");
        let d = system.dim();
        Self {
            system,
            noise_kind,
            rng,
            x: x0.to_vec(),
            w: vec![0.0; d],
            z: vec![0.0; d],
            emitted_initial: false,
        }
    }

    /// Seeded generator for one agent, with `x0` chosen per `init`.
    pub fn for_agent(system: &'a LtiSystem, agent: usize, seed: u64, init: InitialState, noise_kind: NoiseKind) -> Self {
        let x0 = match init {
            InitialState::Zero => vec![0.0; system.dim()],
            InitialState::Stationary => {
                let mut rng = RngStream::new(seed, agent as u64, Purpose::InitialState);
                sample_stationary(system, &mut rng)
            }
        };
        Self::new(system, &x0, noise_kind, RngStream::new(seed, agent as u64, Purpose::Noise))
    }

    /// The most recent noise draw `w_{t-1}`.
    pub fn last_noise(&self) -> &[f64] {
        &self.w
    }

    /// Writes the next state into `out`. The first call yields `x_0`.
    pub fn next_into(&mut self, out: &mut [f64]) {
        if self.emitted_initial {
            self.system.draw_noise(self.noise_kind, &mut self.rng, &mut self.z, &mut self.w);
            self.system.step_into(&self.x, &self.w, out);
            self.x.copy_from_slice(out);
        } else {
            self.emitted_initial = true;
            out.copy_from_slice(&self.x);
        }
    }
}

pub fn simulate(system: &LtiSystem, agent: usize, horizon: usize, x0: &[f64], noise_kind: NoiseKind, rng: RngStream) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if x0.len() != system.dim() {
        return Err(Error::InvalidArgument(format!("x0 has {} entries, expected {}", x0.len(), system.dim())));
    }
    let d = system.dim();
    let mut sim = Simulator::new(system, x0, noise_kind, rng);
    let mut states = vec![0.0; (horizon + 1) * d];
    let mut noises = vec![0.0; horizon * d];
    sim.next_into(&mut states[..d]);
    for t in 0..horizon {
        sim.next_into(&mut states[(t + 1) * d..(t + 2) * d]);
        noises[t * d..(t + 1) * d].copy_from_slice(sim.last_noise());
    }
    Ok(Trajectory {
        agent,
        dim: d,
        states,
        noises,
    })
}

/// A draw from `π = N(0, G)` as `chol(G) z`.
pub fn sample_stationary(system: &LtiSystem, rng: &mut RngStream) -> Vec<f64> {
    let d = system.dim();
    let mut z = vec![0.0; d];
    rng.fill_standard_normal(&mut z);
    let mut out = vec![0.0; d];
    lower_mul_into(&system.g_chol, &z, &mut out);
    out
}

/// Per buffer `t`: `x̃_0 ~ π` drawn fresh, then
/// `x̃_{i+1} = A x̃_i + w_{S t + i}` with the real trajectory's noise.
#[derive(Debug, Clone)]
pub struct CoupledTrajectory {
    dim: usize,
    block: usize,
    buffers: Vec<Vec<f64>>,
}

impl CoupledTrajectory {
    pub fn buffer_count(&self) -> usize {
        self.buffers.len()
    }

    pub fn block(&self) -> usize {
        self.block
    }

    /// `x̃^{t}_i`.
    pub fn state(&self, buffer: usize, i: usize) -> &[f64] {
        &self.buffers[buffer][i * self.dim..(i + 1) * self.dim]
    }
}

pub fn make_coupled(system: &LtiSystem, traj: &Trajectory, layout: &BufferLayout, rng: &mut RngStream) -> Result<CoupledTrajectory> {
    let s = layout.block();
    let n = layout.buffer_count();
    if !traj.has_noises() {
        return Err(Error::InvalidArgument("coupling needs the trajectory's noise sequence".into()));
    }
    // The last buffer's final state uses noise index N*S - 2.
    if traj.horizon() < n * s - 1 {
        return Err(Error::TrajectoryTooShort {
            needed: n * s,
            available: traj.horizon() + 1,
        });
    }
    let d = system.dim();
    let mut buffers = Vec::with_capacity(n);
    for t in 0..n {
        let mut buf = vec![0.0; s * d];
        buf[..d].copy_from_slice(&sample_stationary(system, rng));
        for i in 0..s - 1 {
            let (done, rest) = buf.split_at_mut((i + 1) * d);
            system.step_into(&done[i * d..], traj.noise(s * t + i), &mut rest[..d]);
        }
        buffers.push(buf);
    }
    Ok(CoupledTrajectory { dim: d, block: s, buffers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> LtiSystem {
        LtiSystem::new(Matrix::from_rows(&[&[a]]).unwrap(), Matrix::identity(1)).unwrap()
    }

    #[test]
    fn two_level_system_shape() {
        let eig = two_level_spectrum(5, 0.9, 0.3);
        assert_eq!(eig, vec![0.9, 0.9, 0.9, 0.3, 0.3]);
        let sys = make_system(5, &eig, Matrix::identity(5), 11).unwrap();
        assert!((matlib::spectral_norm(sys.a()).unwrap() - 0.9).abs() < 1e-9);
        let mut ev = matlib::symmetric_eigenvalues(sys.a()).unwrap();
        ev.iter_mut().for_each(|v| *v = (*v * 1e9).round() / 1e9);
        assert_eq!(ev, eig);
    }

    #[test]
    fn scalar_system_sign_depends_on_u() {
        let sys = make_system(1, &[0.5], Matrix::identity(1), 3).unwrap();
        assert!((sys.a()[(0, 0)].abs() - 0.5).abs() < 1e-15);
        assert!((sys.g()[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_spec_rejected() {
        let err = make_system(1, &[1.0], Matrix::identity(1), 0).unwrap_err();
        assert!(matches!(err, Error::UnstableSpec(v) if v == 1.0));
        assert!(make_system(2, &[0.5, -1.2], Matrix::identity(2), 0).is_err());
    }

    #[test]
    fn indefinite_sigma_rejected() {
        let sigma = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        assert!(LtiSystem::new(Matrix::zeros(2, 2), sigma).is_err());
    }

    #[test]
    fn noiseless_contraction() {
        let sys = LtiSystem::noiseless(Matrix::scaled_identity(3, 0.5)).unwrap();
        let traj = simulate(&sys, 0, 6, &[1.0; 3], NoiseKind::Gaussian, RngStream::new(1, 0, Purpose::Noise)).unwrap();
        for t in 0..=6 {
            assert!(traj.state(t).iter().all(|&v| v == 0.5f64.powi(t as i32)));
        }
    }

    #[test]
    fn zero_dynamics_states_are_noise() {
        let sys = LtiSystem::new(Matrix::zeros(2, 2), Matrix::identity(2)).unwrap();
        let traj = simulate(&sys, 0, 10, &[3.0, -1.0], NoiseKind::Gaussian, RngStream::new(5, 0, Purpose::Noise)).unwrap();
        for t in 1..=10 {
            assert_eq!(traj.state(t), traj.noise(t - 1));
        }
    }

    #[test]
    fn trajectory_recursion_is_exact() {
        let sys = make_system(3, &[0.8, 0.1, -0.4], Matrix::identity(3), 2).unwrap();
        let traj = simulate(&sys, 4, 50, &[0.0; 3], NoiseKind::Rademacher, RngStream::new(9, 4, Purpose::Noise)).unwrap();
        let mut next = vec![0.0; 3];
        for t in 0..50 {
            sys.step_into(traj.state(t), traj.noise(t), &mut next);
            assert_eq!(next.as_slice(), traj.state(t + 1));
        }
        // Rademacher noise through chol(I) = I stays on the cube corners.
        assert!((0..50).all(|t| traj.noise(t).iter().all(|v| v.abs() == 1.0)));
    }

    #[test]
    fn simulate_is_deterministic() {
        let sys = scalar(0.5);
        let run = || simulate(&sys, 0, 100, &[0.0], NoiseKind::Gaussian, RngStream::new(42, 0, Purpose::Noise)).unwrap();
        let (a, b) = (run(), run());
        assert!(a.states().zip(b.states()).all(|(x, y)| x[0].to_bits() == y[0].to_bits()));
    }

    #[test]
    fn simulator_matches_simulate() {
        let sys = make_system(2, &[0.9, 0.3], Matrix::identity(2), 1).unwrap();
        let traj = simulate(&sys, 1, 30, &[0.0; 2], NoiseKind::Gaussian, RngStream::new(8, 1, Purpose::Noise)).unwrap();
        let mut sim = Simulator::for_agent(&sys, 1, 8, InitialState::Zero, NoiseKind::Gaussian);
        let mut x = [0.0; 2];
        for t in 0..=30 {
            sim.next_into(&mut x);
            assert_eq!(&x, traj.state(t));
        }
    }

    #[test]
    fn stationary_sample_covariance() {
        let sys = make_system(2, &[0.9, 0.3], Matrix::identity(2), 5).unwrap();
        let mut rng = RngStream::new(99, 0, Purpose::InitialState);
        let n = 1_000_000;
        let mut acc = [0.0; 4];
        for _ in 0..n {
            let x = sample_stationary(&sys, &mut rng);
            acc[0] += x[0] * x[0];
            acc[1] += x[0] * x[1];
            acc[2] += x[1] * x[0];
            acc[3] += x[1] * x[1];
        }
        let emp = Matrix::new(2, 2, acc.iter().map(|v| v / n as f64).collect()).unwrap();
        let g_norm = matlib::spectral_norm(sys.g()).unwrap();
        assert!(emp.sub(sys.g()).unwrap().max_abs() <= 5e-3 * g_norm, "{emp:?} vs {:?}", sys.g());
    }

    #[test]
    fn stationary_with_zero_dynamics_is_sigma() {
        let sigma = Matrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]).unwrap();
        let sys = LtiSystem::new(Matrix::zeros(2, 2), sigma.clone()).unwrap();
        assert_eq!(sys.g(), &sigma);
        let mut a = RngStream::new(3, 0, Purpose::Coupling);
        let mut b = a.clone();
        assert_eq!(sample_stationary(&sys, &mut a), sample_stationary(&sys, &mut b));
    }

    #[test]
    fn trajectory_file_round_trip() {
        let sys = scalar(0.7);
        let traj = simulate(&sys, 3, 20, &[0.0], NoiseKind::Gaussian, RngStream::new(1, 3, Purpose::Noise)).unwrap();
        let mut bytes = Vec::new();
        traj.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"LTITRAJ1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 20);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 32 + 21 * 8);
        let back = Trajectory::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.agent(), 3);
        assert!(back.states().eq(traj.states()));
        assert!(Trajectory::read_from(&bytes[..40]).is_err());
        assert!(Trajectory::read_from(&b"NOTATRAJ"[..]).is_err());
    }

    #[test]
    fn coupled_gap_unrolls() {
        let sys = make_system(3, &[0.9, 0.5, -0.3], Matrix::identity(3), 4).unwrap();
        let layout = BufferLayout::new(60, 8, 4).unwrap();
        let traj = simulate(&sys, 0, 60, &[0.0; 3], NoiseKind::Gaussian, RngStream::new(6, 0, Purpose::Noise)).unwrap();
        let coupled = make_coupled(&sys, &traj, &layout, &mut RngStream::new(6, 0, Purpose::Coupling)).unwrap();
        assert_eq!(coupled.buffer_count(), 5);
        for t in 0..5 {
            let x0 = traj.state(12 * t);
            let delta0: Vec<f64> = x0.iter().zip(coupled.state(t, 0)).map(|(a, b)| a - b).collect();
            for i in 0..12 {
                let diff: Vec<f64> = traj.state(12 * t + i).iter().zip(coupled.state(t, i)).map(|(a, b)| a - b).collect();
                let expect = sys.a().pow(i as u32).unwrap().mul_vec(&delta0).unwrap();
                let err: f64 = diff.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-12, "buffer {t} index {i}: {err}");
            }
        }
    }

    #[test]
    fn coupled_single_buffer_differs_only_initially() {
        let sys = LtiSystem::new(Matrix::zeros(1, 1), Matrix::identity(1)).unwrap();
        let layout = BufferLayout::new(5, 5, 0).unwrap();
        let traj = simulate(&sys, 0, 5, &[0.0], NoiseKind::Gaussian, RngStream::new(1, 0, Purpose::Noise)).unwrap();
        let coupled = make_coupled(&sys, &traj, &layout, &mut RngStream::new(1, 0, Purpose::Coupling)).unwrap();
        // With A = 0 every state after the first is exactly the shared noise.
        for i in 1..5 {
            assert_eq!(coupled.state(0, i), traj.state(i));
        }
        assert_ne!(coupled.state(0, 0), traj.state(0));
    }

    #[test]
    fn coupled_rejects_short_trajectory() {
        let sys = scalar(0.5);
        let layout = BufferLayout::new(100, 8, 2).unwrap();
        let traj = simulate(&sys, 0, 20, &[0.0], NoiseKind::Gaussian, RngStream::new(1, 0, Purpose::Noise)).unwrap();
        assert!(make_coupled(&sys, &traj, &layout, &mut RngStream::new(1, 0, Purpose::Coupling)).is_err());
    }
}
