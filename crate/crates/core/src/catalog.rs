//! Small worked kernels used by the verification suites and the CLI.

use crate::discrete_general::{DiscreteTarget, GeneralKernel, MatrixProposal};
use crate::discrete_uniform::UniformKernel;

/// Reversible 4-state kernel, `Q = 3`.
pub fn reversible4() -> UniformKernel {
    UniformKernel::new(
        4,
        3,
        vec![
            2, 1, 0, 0, //
            1, 1, 1, 0, //
            0, 1, 1, 1, //
            0, 0, 1, 2,
        ],
    )
    .expect("valid kernel")
}

/// Non-reversible 4-state kernel, `Q = 4`.
pub fn nonreversible4() -> UniformKernel {
    UniformKernel::new(
        4,
        4,
        vec![
            2, 2, 0, 0, //
            1, 1, 1, 1, //
            0, 0, 2, 2, //
            1, 1, 1, 1,
        ],
    )
    .expect("valid kernel")
}

/// Three states with `pi = (0.3, 0.1, 0.6)` and a non-reversible kernel.
pub fn three_state() -> GeneralKernel {
    let third = 1.0 / 3.0;
    GeneralKernel::new(
        DiscreteTarget::new(vec![0.3, 0.1, 0.6]).expect("valid target"),
        vec![
            vec![third, third, third],
            vec![0.0, 0.0, 1.0],
            vec![third, 0.0, 2.0 * third],
        ],
    )
    .expect("valid kernel")
}

/// Four-state target `(1/3, 1/3, 2/9, 1/9)` with a nearest-neighbour proposal.
pub fn mh_four_state() -> (DiscreteTarget, MatrixProposal) {
    let target = DiscreteTarget::new(vec![1.0 / 3.0, 1.0 / 3.0, 2.0 / 9.0, 1.0 / 9.0]).expect("valid target");
    let (h, t) = (0.5, 1.0 / 3.0);
    let proposal = MatrixProposal::new(vec![
        vec![h, h, 0.0, 0.0],
        vec![t, t, t, 0.0],
        vec![0.0, t, t, t],
        vec![0.0, 0.0, h, h],
    ])
    .expect("valid proposal");
    (target, proposal)
}
