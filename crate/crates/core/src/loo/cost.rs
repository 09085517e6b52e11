//! Leading-order flop counts for LOOCV along a k-step path.
//!
//! A multiply-add counts as two flops. With `m = min(n, p)`:
//!
//! * naive: each of the `n` refits takes `k` steps of two matrix-vector
//!   products with the `(n-1) x p` matrix, `4 n (n-1) p k`;
//! * spectral shortcut: Gram matrix `2 n m max(n, p)`, symmetric
//!   eigendecomposition `9 m^3`, the full path plus fitted values `6 n p k`,
//!   and the per-row recursion `5 n m k`;
//! * monomial shortcut: the same set-up plus `2 n k^2` for the `B` triangle and
//!   `2 n m k` for the quadratic forms.

/// Flop counts for one `(n, p, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub naive_flops: f64,
    pub shortcut_flops: f64,
    pub monomial_flops: f64,
}

pub fn cost_model(n: usize, p: usize, k: usize) -> CostModel {
    let (n, p, k) = (n as f64, p as f64, k as f64);
    let m = n.min(p);
    let setup = 2.0 * n * m * n.max(p) + 9.0 * m.powi(3);
    let path = 6.0 * n * p * k;
    CostModel {
        naive_flops: 4.0 * n * (n - 1.0) * p * k,
        shortcut_flops: setup + path + 5.0 * n * m * k,
        monomial_flops: setup + path + 2.0 * n * k * k + 2.0 * n * m * k,
    }
}
