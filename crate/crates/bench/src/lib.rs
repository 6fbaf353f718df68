//! Fixtures shared by the kernel benchmarks.

use dsgd_rer::lti::{make_system, two_level_spectrum};
use dsgd_rer::network::{make_topology, Topology, TopologyKind};
use dsgd_rer::{LtiSystem, Matrix};

/// The standard two-level test system of dimension `d`.
pub fn system(d: usize) -> LtiSystem {
    make_system(d, &two_level_spectrum(d, 0.9, 0.3), Matrix::identity(d), 2024).expect("stable system")
}

pub fn cycle(m: usize) -> Topology {
    make_topology(
        TopologyKind::Cyclic {
            degree: 2,
            self_weight: 0.3,
        },
        m,
    )
    .expect("valid cycle")
}

/// `m` distinct `d×d` matrices with entries in (−1, 1).
pub fn estimates(m: usize, d: usize) -> Vec<Matrix> {
    (0..m)
        .map(|k| {
            let data = (0..d * d).map(|i| (((k * 31 + i * 17) % 97) as f64 / 48.5) - 1.0).collect();
            Matrix::new(d, d, data).expect("finite")
        })
        .collect()
}
