//! Level-set rounding: recovering a classical indicator actuator from a
//! nonnegative actuation profile `H`.
//!
//! The threshold `c(alpha)` is the largest level whose super-level set still
//! carries the mass budget; cells strictly above it get 1, cells strictly
//! below get 0, and the remaining mass is filled from the tie set at the
//! threshold, with at most one fractional cell (a mirror pair may share
//! fractional mass under symmetric pairing). The construction maximizes
//! `sum_i theta_i H_i h` over the capped simplex exactly, so the rounded
//! density is optimal for the linear payoff even with the fractional cell.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::par::{map_indexed, pairwise_sum};
use crate::placement::{project_theta, ActuatorDensity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tie handling at the threshold level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Fill tie cells in ascending index order (deterministic default).
    LowestIndex,
    /// Fill mirror pairs (i, n-1-i) atomically, preserving reflection
    /// symmetry for symmetric profiles; an odd remainder goes to the center
    /// cell when one exists, otherwise it is split across the innermost
    /// remaining pair.
    SymmetricPairing,
}

/// Result of [`round_to_indicator`].
#[derive(Debug, Clone)]
pub struct LevelSetResult {
    pub c_alpha: f64,
    pub indicator: ActuatorDensity,
    /// Indices at the threshold level that received mass.
    pub tie_cells: Vec<usize>,
    /// Cells left strictly between 0 and 1 (at most one, except for a
    /// split mirror pair under symmetric pairing).
    pub fractional_cells: Vec<usize>,
    pub achieved_mass: f64,
}

fn validate_h(h_field: &[f64], grid: &Grid) -> Result<()> {
    if h_field.len() != grid.n() {
        return Err(Error::config("profile length does not match grid"));
    }
    if h_field.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::config("profile must be nonnegative and finite"));
    }
    Ok(())
}

/// Mass budget in cell units, snapped to the nearest integer when the
/// product `alpha * n` sits within roundoff of one.
fn cell_budget(n: usize, alpha: f64) -> f64 {
    let t = alpha * n as f64;
    let snapped = t.round();
    if (t - snapped).abs() <= 1e-9 * (1.0 + t) {
        snapped
    } else {
        t
    }
}

/// The threshold `c(alpha)`: the `ceil(alpha n)`-th largest value of `H`,
/// i.e. the largest level whose super-level set has discrete measure at
/// least `alpha n h`.
pub fn compute_c_alpha(grid: &Grid, h_field: &[f64], alpha: f64) -> Result<f64> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::config(format!(
            "mass fraction alpha must lie in (0, 1), got {alpha}"
        )));
    }
    validate_h(h_field, grid)?;
    let n = grid.n();
    let budget = cell_budget(n, alpha);
    let m = (budget.ceil() as usize).clamp(1, n);
    let mut sorted = h_field.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite values"));
    Ok(sorted[m - 1])
}

/// Rounds a profile to an indicator-like density with exact mass
/// `alpha * n * h`.
pub fn round_to_indicator(
    grid: &Grid,
    h_field: &[f64],
    alpha: f64,
    tie_break: TieBreak,
) -> Result<LevelSetResult> {
    let c = compute_c_alpha(grid, h_field, alpha)?;
    let n = grid.n();
    let budget = cell_budget(n, alpha);

    let mut theta = vec![0.0; n];
    let mut above = 0usize;
    let mut ties: Vec<usize> = Vec::new();
    for i in 0..n {
        if h_field[i] > c {
            theta[i] = 1.0;
            above += 1;
        } else if h_field[i] == c {
            ties.push(i);
        }
    }
    let mut remaining = budget - above as f64;
    debug_assert!(remaining >= -1e-12 && remaining <= ties.len() as f64 + 1e-12);
    remaining = remaining.clamp(0.0, ties.len() as f64);

    let mut tie_cells = Vec::new();
    let mut fractional_cells = Vec::new();
    match tie_break {
        TieBreak::LowestIndex => {
            for &i in &ties {
                if remaining <= 0.0 {
                    break;
                }
                let grant = remaining.min(1.0);
                theta[i] = grant;
                tie_cells.push(i);
                if grant < 1.0 {
                    fractional_cells.push(i);
                }
                remaining -= grant;
            }
        }
        TieBreak::SymmetricPairing => {
            // mirror pairs first (ascending lower index), center and
            // unpaired cells afterwards
            let in_ties = |i: usize| ties.binary_search(&i).is_ok();
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            let mut singles: Vec<usize> = Vec::new();
            for &i in &ties {
                let m = n - 1 - i;
                if i < m && in_ties(m) {
                    pairs.push((i, m));
                } else if i == m {
                    singles.push(i); // center cell
                } else if !in_ties(m) {
                    singles.push(i);
                }
            }
            for (a, b) in pairs {
                if remaining <= 0.0 {
                    break;
                }
                if remaining >= 2.0 {
                    theta[a] = 1.0;
                    theta[b] = 1.0;
                    tie_cells.push(a);
                    tie_cells.push(b);
                    remaining -= 2.0;
                } else {
                    let half = remaining * 0.5;
                    theta[a] = half;
                    theta[b] = half;
                    tie_cells.push(a);
                    tie_cells.push(b);
                    if half < 1.0 {
                        fractional_cells.push(a);
                        fractional_cells.push(b);
                    }
                    remaining = 0.0;
                }
            }
            for i in singles {
                if remaining <= 0.0 {
                    break;
                }
                let grant = remaining.min(1.0);
                theta[i] = grant;
                tie_cells.push(i);
                if grant < 1.0 {
                    fractional_cells.push(i);
                }
                remaining -= grant;
            }
        }
    }

    let achieved_mass = pairwise_sum(&theta) * grid.h();
    let indicator = ActuatorDensity::new(grid, theta, alpha)?;
    Ok(LevelSetResult {
        c_alpha: c,
        indicator,
        tie_cells,
        fractional_cells,
        achieved_mass,
    })
}

/// Certification report of [`verify_bang_bang`].
#[derive(Debug, Clone)]
pub struct BangBangReport {
    /// Largest violation `max(0, max_s (Sum theta_s H h - Sum theta* H h))`;
    /// must be at roundoff level.
    pub max_violation: f64,
    /// Optimality margins `Sum theta* H h - Sum theta_s H h`, one per
    /// sampled density, in sample order.
    pub margins: Vec<f64>,
    pub samples: usize,
}

impl BangBangReport {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn linear_payoff(grid: &Grid, theta: &[f64], h_field: &[f64]) -> f64 {
    let weighted: Vec<f64> = theta.iter().zip(h_field).map(|(t, h)| t * h).collect();
    pairwise_sum(&weighted) * grid.h()
}

/// Checks rearrangement optimality of a rounded density against `samples`
/// random densities (uniform fields projected onto the capped simplex) and
/// any extra densities supplied by the caller (e.g. the relaxed optimum).
pub fn verify_bang_bang(
    grid: &Grid,
    result: &LevelSetResult,
    h_field: &[f64],
    samples: usize,
    seed: u64,
    extra: &[&ActuatorDensity],
) -> Result<BangBangReport> {
    validate_h(h_field, grid)?;
    let alpha = result.indicator.alpha();
    let star = linear_payoff(grid, result.indicator.theta(), h_field);
    let n = grid.n();
    let mut margins = map_indexed(samples, n, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64 + 1);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let candidate = project_theta(grid, &v, alpha).expect("alpha validated");
        star - linear_payoff(grid, candidate.theta(), h_field)
    });
    for d in extra {
        margins.push(star - linear_payoff(grid, d.theta(), h_field));
    }
    let max_violation = margins
        .iter()
        .cloned()
        .fold(0.0f64, |acc, m| acc.max(-m));
    Ok(BangBangReport {
        max_violation,
        samples: margins.len(),
        margins,
    })
}
