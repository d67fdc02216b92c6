//! Spatial discretization on the interval (0, L): uniform interior grid,
//! weighted inner product, the 3-point Dirichlet Laplacian, and cached
//! one-step heat propagators.
//!
//! The discrete Laplacian has the classical eigenpairs
//! `v_j(x_i) = sin(j pi x_i / L)`, `lambda_j = -(4/h^2) sin^2(j pi / (2(n+1)))`,
//! which the spectral propagator uses directly. Propagator matrices are
//! assembled entry-symmetric and reflection-symmetric bit for bit, so the
//! backward recursion built on top of them is an exact algebraic adjoint.

use crate::error::{Error, Result};
use crate::par::pairwise_sum;
use std::f64::consts::PI;

/// Uniform grid of `n` interior nodes on (0, L) with spacing `h = L/(n+1)`.
///
/// All quadrature weights equal `h`; the discrete stand-in for |D| is `n*h`
/// (interior mass only), and every mass constraint in the crate is taken
/// relative to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    length: f64,
    h: f64,
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("grid node count must be at least 1"));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::config(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        let h = length / (n + 1) as f64;
        Ok(Grid { n, length, h })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Discrete measure of the domain, `n * h`.
    pub fn measure(&self) -> f64 {
        self.n as f64 * self.h
    }

    /// Position of interior node `i`, `x_i = (i+1) h`.
    pub fn position(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.position(i)).collect()
    }

    /// Per-node quadrature weights (all equal to `h`).
    pub fn weights(&self) -> Vec<f64> {
        vec![self.h; self.n]
    }

    /// Weighted inner product `h * sum_i f_i g_i`.
    ///
    /// Panics on length mismatch.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        assert_eq!(f.len(), self.n, "field length does not match grid");
        assert_eq!(g.len(), self.n, "field length does not match grid");
        let prods: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.h * pairwise_sum(&prods)
    }

    /// Weighted norm `sqrt(inner(f, f))`.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// 3-point Dirichlet Laplacian `(f_{i-1} - 2 f_i + f_{i+1}) / h^2` with
    /// zero boundary values.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n, "field length does not match grid");
        let inv_h2 = 1.0 / (self.h * self.h);
        (0..self.n)
            .map(|i| {
                let left = if i == 0 { 0.0 } else { f[i - 1] };
                let right = if i + 1 == self.n { 0.0 } else { f[i + 1] };
                (left - 2.0 * f[i] + right) * inv_h2
            })
            .collect()
    }

    /// `j`-th eigenvalue of the discrete Dirichlet Laplacian (0-based `j`),
    /// `lambda = -(4/h^2) sin^2((j+1) pi / (2(n+1)))`.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        assert!(j < self.n, "eigenvalue index out of range");
        let s = ((j + 1) as f64 * PI / (2.0 * (self.n + 1) as f64)).sin();
        -(4.0 / (self.h * self.h)) * s * s
    }

    /// `j`-th eigenvector, `sin((j+1) pi (i+1) / (n+1))` at node `i`.
    pub fn eigenvector(&self, j: usize) -> Vec<f64> {
        assert!(j < self.n, "eigenvector index out of range");
        let m = (self.n + 1) as f64;
        (0..self.n)
            .map(|i| ((j + 1) as f64 * (i + 1) as f64 * PI / m).sin())
            .collect()
    }
}

/// Time-stepping scheme for the one-step heat propagator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `exp(dt A)` through the exact eigenpairs of the discrete Laplacian.
    ExactSpectral,
    /// `(I - dt A)^{-1}`, assembled through the same eigenpairs.
    ImplicitEuler,
}

/// One heat step `E_h` as a dense symmetric positive-definite matrix,
/// assembled once per (grid, dt) and reused.
///
/// Entries are filled for `i <= j` and mirrored, and the sine table is
/// reflection-symmetrized, so the matrix is transpose- and
/// reflection-symmetric exactly (bit for bit), not merely up to roundoff.
#[derive(Debug, Clone)]
pub struct Propagator {
    n: usize,
    dt: f64,
    scheme: Scheme,
    matrix: Vec<f64>, // row-major n x n
}

/// Sine eigenvector table `s[i*n + k] = sin((i+1)(k+1) pi / (n+1))` with the
/// identity `s[n-1-i][k] = (-1)^k s[i][k]` enforced exactly.
fn sine_table(n: usize) -> Vec<f64> {
    let m = (n + 1) as f64;
    let mut s = vec![0.0; n * n];
    for i in 0..n / 2 {
        let ri = n - 1 - i;
        for k in 0..n {
            let v = ((i + 1) as f64 * (k + 1) as f64 * PI / m).sin();
            s[i * n + k] = v;
            s[ri * n + k] = if k % 2 == 0 { v } else { -v };
        }
    }
    if n % 2 == 1 {
        // Center row is the exact pattern sin((k+1) pi / 2) = 1, 0, -1, 0, ...
        let c = (n - 1) / 2;
        for k in 0..n {
            s[c * n + k] = match k % 4 {
                0 => 1.0,
                2 => -1.0,
                _ => 0.0,
            };
        }
    }
    s
}

impl Propagator {
    pub fn new(grid: &Grid, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config(format!(
                "time step must be positive and finite, got {dt}"
            )));
        }
        let n = grid.n();
        let s = sine_table(n);
        let gains: Vec<f64> = (0..n)
            .map(|k| {
                let lam = grid.eigenvalue(k);
                match scheme {
                    Scheme::ExactSpectral => (dt * lam).exp(),
                    Scheme::ImplicitEuler => 1.0 / (1.0 - dt * lam),
                }
            })
            .collect();
        let scale = 2.0 / (n + 1) as f64;
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for k in 0..n {
                    // sine product first: commutativity then makes mirrored
                    // entries bit-identical, not just close
                    acc += (s[i * n + k] * s[j * n + k]) * gains[k];
                }
                let v = scale * acc;
                matrix[i * n + j] = v;
                matrix[j * n + i] = v;
            }
        }
        Ok(Propagator {
            n,
            dt,
            scheme,
            matrix,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Row-major dense matrix; exposed for test oracles.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(f, &mut out);
        out
    }

    /// `out = E_h f`; `f` and `out` must not alias.
    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.n, "field length does not match propagator");
        assert_eq!(out.len(), self.n, "output length does not match propagator");
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for (m, x) in row.iter().zip(f) {
                acc += m * x;
            }
            *o = acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_construction_and_invariants() {
        let g = Grid::new(4, 1.0).unwrap();
        assert_relative_eq!(g.h(), 0.2, max_relative = 1e-15);
        assert_relative_eq!(g.measure(), 0.8, max_relative = 1e-15);
        assert!(g.weights().iter().all(|&w| w == g.h()));

        let g1 = Grid::new(1, 1.0).unwrap();
        assert_relative_eq!(g1.h(), 0.5, max_relative = 1e-15);

        assert!(Grid::new(0, 1.0).is_err());
        assert!(Grid::new(4, 0.0).is_err());
        assert!(Grid::new(4, -1.0).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let g = Grid::new(4, 1.0).unwrap();
        let ones = vec![1.0; 4];
        assert_relative_eq!(g.inner(&ones, &ones), 0.8, max_relative = 1e-14);
        assert_eq!(g.inner(&[0.0; 4], &ones), 0.0);

        let g2 = Grid::new(2, 1.0).unwrap();
        assert_relative_eq!(
            g2.inner(&[1.0, 2.0], &[3.0, 4.0]),
            11.0 / 3.0,
            max_relative = 1e-14
        );
    }

    #[test]
    #[should_panic(expected = "field length does not match grid")]
    fn inner_product_rejects_mismatched_lengths() {
        let g = Grid::new(4, 1.0).unwrap();
        g.inner(&[1.0; 3], &[1.0; 4]);
    }

    #[test]
    fn laplacian_examples() {
        let g = Grid::new(4, 1.0).unwrap();
        let e2 = vec![0.0, 1.0, 0.0, 0.0];
        let lf = g.laplacian(&e2);
        assert_relative_eq!(lf[0], 25.0, max_relative = 1e-13);
        assert_relative_eq!(lf[1], -50.0, max_relative = 1e-13);
        assert_relative_eq!(lf[2], 25.0, max_relative = 1e-13);
        assert_eq!(lf[3], 0.0);

        assert!(g.laplacian(&[0.0; 4]).iter().all(|&v| v == 0.0));

        let g1 = Grid::new(1, 1.0).unwrap();
        assert_relative_eq!(g1.laplacian(&[1.0])[0], -8.0, max_relative = 1e-14);
    }

    #[test]
    fn laplacian_matches_eigenpairs() {
        for n in [1, 2, 5, 16, 33] {
            let g = Grid::new(n, 1.3).unwrap();
            for j in 0..n {
                let v = g.eigenvector(j);
                let lv = g.laplacian(&v);
                let lam = g.eigenvalue(j);
                for i in 0..n {
                    assert_relative_eq!(lv[i], lam * v[i], max_relative = 1e-10, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn scalar_propagator_values() {
        let g = Grid::new(1, 1.0).unwrap();
        let spectral = Propagator::new(&g, 0.1, Scheme::ExactSpectral).unwrap();
        assert_relative_eq!(spectral.matrix()[0], (-0.8f64).exp(), max_relative = 1e-14);
        let euler = Propagator::new(&g, 0.1, Scheme::ImplicitEuler).unwrap();
        assert_relative_eq!(euler.matrix()[0], 1.0 / 1.8, max_relative = 1e-14);
    }

    #[test]
    fn tiny_dt_is_near_identity() {
        let g = Grid::new(1, 1.0).unwrap();
        let p = Propagator::new(&g, 1e-8, Scheme::ExactSpectral).unwrap();
        let f = vec![0.7];
        let pf = p.apply(&f);
        assert_relative_eq!(pf[0], f[0], max_relative = 1e-6);
    }

    #[test]
    fn propagator_rejects_bad_dt() {
        let g = Grid::new(4, 1.0).unwrap();
        assert!(Propagator::new(&g, 0.0, Scheme::ExactSpectral).is_err());
        assert!(Propagator::new(&g, -0.1, Scheme::ExactSpectral).is_err());
        assert!(Propagator::new(&g, f64::NAN, Scheme::ExactSpectral).is_err());
    }

    #[test]
    fn matrix_is_bitwise_symmetric() {
        for n in [3, 8, 32] {
            let g = Grid::new(n, 2.0).unwrap();
            for scheme in [Scheme::ExactSpectral, Scheme::ImplicitEuler] {
                let p = Propagator::new(&g, 0.01, scheme).unwrap();
                let m = p.matrix();
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(m[i * n + j].to_bits(), m[j * n + i].to_bits());
                        // reflection symmetry, also exact by construction
                        assert_eq!(
                            m[i * n + j].to_bits(),
                            m[(n - 1 - i) * n + (n - 1 - j)].to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn implicit_euler_matches_tridiagonal_solve() {
        // Thomas-algorithm oracle for (I - dt A) x = e_j, checked column by
        // column against the spectrally assembled inverse.
        let n = 9;
        let g = Grid::new(n, 1.0).unwrap();
        let dt = 0.05;
        let p = Propagator::new(&g, dt, Scheme::ImplicitEuler).unwrap();
        let r = dt / (g.h() * g.h());
        let diag = 1.0 + 2.0 * r;
        let off = -r;
        for j in 0..n {
            let mut rhs = vec![0.0; n];
            rhs[j] = 1.0;
            // forward sweep
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            c[0] = off / diag;
            d[0] = rhs[0] / diag;
            for i in 1..n {
                let m = diag - off * c[i - 1];
                c[i] = off / m;
                d[i] = (rhs[i] - off * d[i - 1]) / m;
            }
            let mut x = vec![0.0; n];
            x[n - 1] = d[n - 1];
            for i in (0..n - 1).rev() {
                x[i] = d[i] - c[i] * x[i + 1];
            }
            for i in 0..n {
                assert_relative_eq!(
                    p.matrix()[i * n + j],
                    x[i],
                    max_relative = 1e-12,
                    epsilon = 1e-13
                );
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn propagator_is_self_adjoint_and_contractive(
            n in 1usize..64,
            seed in 0u64..1000,
            spectral in proptest::bool::ANY,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::new(n, 1.0).unwrap();
            let scheme = if spectral { Scheme::ExactSpectral } else { Scheme::ImplicitEuler };
            let p = Propagator::new(&g, 0.02, scheme).unwrap();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = g.inner(&p.apply(&f), &h);
            let rhs = g.inner(&f, &p.apply(&h));
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            proptest::prop_assert!(g.norm(&p.apply(&f)) <= g.norm(&f) * (1.0 + 1e-13));
        }

        #[test]
        fn spectral_propagator_preserves_positivity(
            n in 1usize..48,
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::new(n, 1.0).unwrap();
            let p = Propagator::new(&g, 0.01, Scheme::ExactSpectral).unwrap();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let pf = p.apply(&f);
            proptest::prop_assert!(pf.iter().all(|&v| v >= -1e-12));
        }
    }
}
