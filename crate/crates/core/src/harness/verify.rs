//! The property suite behind the `verify` command.

use crate::diagnostics::{contraction_check, coupled_gap, unbiasedness_mc, Check, ContractionParams};
use crate::error::Result;
use crate::estimator::BufferLayout;
use crate::lti::{make_coupled, make_system, sample_stationary, simulate, two_level_spectrum, LtiSystem, NoiseKind};
use crate::matlib::{self, Matrix};
use crate::network::{gossip_mix, make_topology, mixing_bound_check, Topology, TopologyKind};
use crate::rng::{Purpose, RngStream};

const SEED: u64 = 20240;

fn standard_system() -> Result<LtiSystem> {
    make_system(5, &two_level_spectrum(5, 0.9, 0.3), Matrix::identity(5), 2024)
}

fn topologies(m: usize) -> Result<Vec<(&'static str, Topology)>> {
    Ok(vec![
        ("identity", make_topology(TopologyKind::Identity, m)?),
        (
            "cyclic",
            make_topology(
                TopologyKind::Cyclic {
                    degree: 2,
                    self_weight: 0.3,
                },
                m,
            )?,
        ),
        ("complete", make_topology(TopologyKind::Complete, m)?),
    ])
}

fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    let mut data = vec![0.0; rows * cols];
    rng.fill_standard_normal(&mut data);
    Matrix::new(rows, cols, data).expect("finite")
}

fn mean(ms: &[Matrix]) -> Matrix {
    let mut acc = Matrix::zeros(ms[0].rows(), ms[0].cols());
    for m in ms {
        acc.axpy(1.0 / ms.len() as f64, m).expect("same shape");
    }
    acc
}

fn rms_disagreement(ms: &[Matrix], centre: &Matrix) -> f64 {
    ms.iter()
        .map(|m| m.sub(centre).expect("same shape").frobenius_norm().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Doubly stochastic weights and `Σ_j |[Pᵏ]_{ji} − 1/m| ≤ √m βᵏ` for
/// `k ≤ 20`.
pub fn check_topologies() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (name, t) in topologies(5)? {
        let p = t.p();
        let m = t.agents();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            let row: f64 = (0..m).map(|j| p[(i, j)]).sum();
            let col: f64 = (0..m).map(|j| p[(j, i)]).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        let nonneg = p.as_slice().iter().all(|&v| v >= 0.0);
        checks.push(Check::hard(
            format!("{name}: doubly stochastic (beta = {:.4})", t.beta()),
            nonneg && worst <= 1e-12,
            1e-12 - worst,
        ));
        let ratio = mixing_bound_check(&t, 20)?;
        checks.push(Check::hard(format!("{name}: mixing bound, k <= 20"), ratio <= 1.0 + 1e-9, 1.0 + 1e-9 - ratio));
    }
    Ok(checks)
}

/// Gossip keeps the network average to 1e-12 and shrinks the RMS
/// disagreement by at least `β`.
pub fn check_gossip(inputs: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (name, t) in topologies(5)? {
        let mut rng = RngStream::new(SEED, 0, Purpose::Replica);
        let mut worst_avg: f64 = 0.0;
        let mut worst_ratio: f64 = 0.0;
        for _ in 0..inputs {
            let xs: Vec<Matrix> = (0..t.agents()).map(|_| random_matrix(5, 5, &mut rng)).collect();
            let before = mean(&xs);
            let out = gossip_mix(&t, &xs)?;
            let after = mean(&out);
            worst_avg = worst_avg.max(after.sub(&before)?.max_abs());
            let spread_in = rms_disagreement(&xs, &before);
            let spread_out = rms_disagreement(&out, &after);
            worst_ratio = worst_ratio.max(spread_out - t.beta() * spread_in * (1.0 + 1e-12));
        }
        checks.push(Check::hard(
            format!("{name}: gossip preserves the average ({inputs} inputs)"),
            worst_avg <= 1e-12,
            1e-12 - worst_avg,
        ));
        checks.push(Check::hard(
            format!("{name}: gossip contracts disagreement by beta"),
            worst_ratio <= 1e-12,
            0.0 - worst_ratio + 0.0,
        ));
    }
    Ok(checks)
}

/// H-product sandwich at `d = 5, B = 20, m = 3, γBR = 0.2`.
pub fn check_contraction(replicas: usize) -> Result<Vec<Check>> {
    let system = standard_system()?;
    let layout = BufferLayout::new(40, 20, 20)?;
    let radius = 80.0;
    let params = ContractionParams {
        agents: 3,
        gamma: 0.2 / (20.0 * radius),
        radius,
        replicas,
        seed: SEED,
    };
    let report = contraction_check(&system, &layout, params)?;
    Ok(report
        .checks
        .into_iter()
        .map(|mut c| {
            c.name = format!("contraction: {} ({} kept, {} discarded)", c.name, report.replicas, report.discarded);
            c
        })
        .collect())
}

/// Reverse-order noise coupling is zero-mean at `d = 1, a = 0.9, B = 50,
/// γ = 0.01`.
pub fn check_unbiasedness(replicas: usize, seed: u64) -> Result<Vec<Check>> {
    let system = LtiSystem::new(Matrix::from_rows(&[&[0.9]])?, Matrix::identity(1))?;
    let report = unbiasedness_mc(&system, 50, 0.01, replicas, seed)?;
    Ok(report
        .checks
        .into_iter()
        .map(|mut c| {
            c.name = format!("unbiasedness: {} ({replicas} replicas)", c.name);
            c
        })
        .collect())
}

/// Real and coupled processes differ by exactly `Aⁱ(x_0 − x̃_0)`.
pub fn check_coupled_gap(buffers: usize) -> Result<Vec<Check>> {
    let system = standard_system()?;
    let layout = BufferLayout::new(40 * buffers, 20, 20)?;
    let x0 = sample_stationary(&system, &mut RngStream::new(SEED, 0, Purpose::InitialState));
    let traj = simulate(&system, 0, layout.horizon(), &x0, NoiseKind::Gaussian, RngStream::new(SEED, 0, Purpose::Noise))?;
    let coupled = make_coupled(&system, &traj, &layout, &mut RngStream::new(SEED, 0, Purpose::Coupling))?;
    let ratio = coupled_gap(&system, &traj, &coupled, &layout)?;
    Ok(vec![Check::hard(
        format!("coupled gap ratio <= 1 + 1e-9 ({buffers} buffers, worst {ratio:.12})"),
        ratio <= 1.0 + 1e-9,
        1.0 + 1e-9 - ratio,
    )])
}

/// Lyapunov residual, Cholesky reconstruction and power iteration against
/// the SVD, each to 1e-8 relative.
pub fn check_linear_algebra(samples: usize) -> Result<Vec<Check>> {
    let mut rng = RngStream::new(SEED, 1, Purpose::Replica);
    let (mut lyap, mut chol, mut norm): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let raw = random_matrix(5, 5, &mut rng);
        let a = raw.scale(0.9 / matlib::spectral_norm(&raw)?);
        let b = random_matrix(5, 5, &mut rng);
        let mut sigma = matlib::matmul(&b, &b.transpose())?;
        sigma.axpy(0.1, &Matrix::identity(5))?;
        let g = matlib::solve_lyapunov(&a, &sigma)?;
        let residual = g.sub(&matlib::matmul(&matlib::matmul(&a, &g)?, &a.transpose())?)?.sub(&sigma)?;
        lyap = lyap.max(matlib::spectral_norm(&residual)? / matlib::spectral_norm(&g)?);
        let l = matlib::cholesky(&g)?;
        let back = matlib::matmul(&l, &l.transpose())?;
        chol = chol.max(back.sub(&g)?.max_abs() / g.max_abs());
        let power = matlib::spectral_norm(&b)?;
        let svd = matlib::singular_values(&b)?[0];
        norm = norm.max((power - svd).abs() / svd);
    }
    Ok(vec![
        Check::hard(format!("Lyapunov residual ({samples} systems, worst {lyap:.2e})"), lyap <= 1e-8, 1e-8 - lyap),
        Check::hard(format!("Cholesky reconstruction (worst {chol:.2e})"), chol <= 1e-8, 1e-8 - chol),
        Check::hard(format!("spectral norm vs SVD (worst {norm:.2e})"), norm <= 1e-8, 1e-8 - norm),
    ])
}

/// The full suite; `quick` shrinks the Monte-Carlo sizes.
pub fn run_verify(quick: bool) -> Result<Vec<Check>> {
    let mut checks = check_topologies()?;
    checks.extend(check_gossip(100)?);
    checks.extend(check_contraction(if quick { 50 } else { 200 })?);
    checks.extend(check_unbiasedness(if quick { 2000 } else { 10_000 }, SEED)?);
    checks.extend(check_coupled_gap(20)?);
    checks.extend(check_linear_algebra(if quick { 5 } else { 50 })?);
    Ok(checks)
}
