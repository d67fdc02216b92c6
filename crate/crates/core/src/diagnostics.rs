//! Empirical observability diagnostics.
//!
//! The quotient `E||z(0)||^2 / (dt sum_k E||zeta_k||^2)` over sampled
//! terminal data yields a lower bound on the discrete observability
//! constant. It is a logged diagnostic only; nothing in the solver asserts
//! a value for it.

use crate::control::ControlProblem;
use crate::error::{Error, Result};
use crate::tree::TerminalField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lower-bound estimate of the observability constant.
#[derive(Debug, Clone, Copy)]
pub struct ObservabilityEstimate {
    /// `max` of the sampled quotients; 0 when no admissible sample existed.
    pub lower_bound: f64,
    pub used: usize,
    /// Samples with zero observation energy (unbounded quotient), excluded.
    pub excluded: usize,
}

/// The quotient at one terminal datum, `None` when the observation energy
/// vanishes (the sample would be unbounded).
pub fn observability_ratio(pb: &ControlProblem, eta: &TerminalField) -> Option<f64> {
    let rec = pb.backward(eta);
    let z0 = rec.z.node(0, 0);
    let initial_energy = pb.grid.inner(z0, z0);
    let observed_energy = pb.control_energy(&rec.obs);
    if observed_energy <= 0.0 {
        return None;
    }
    Some(initial_energy / observed_energy)
}

/// Maximizes the quotient over `trials` seeded random terminal data.
/// Deterministic for a fixed seed; sample `s` draws from stream `s` of the
/// generator.
pub fn estimate_observability_constant(
    pb: &ControlProblem,
    trials: usize,
    seed: u64,
) -> Result<ObservabilityEstimate> {
    if trials == 0 {
        return Err(Error::config("observability estimation needs at least one trial"));
    }
    let n = pb.grid.n();
    let mut best = 0.0f64;
    let mut used = 0;
    let mut excluded = 0;
    for s in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64 + 1);
        let mut eta = TerminalField::zeros(pb.tree, n);
        for v in eta.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        match observability_ratio(pb, &eta) {
            Some(r) => {
                used += 1;
                best = best.max(r);
            }
            None => excluded += 1,
        }
    }
    Ok(ObservabilityEstimate {
        lower_bound: best,
        used,
        excluded,
    })
}
