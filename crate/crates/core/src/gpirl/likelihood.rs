//! Preference-edge likelihoods and the probit helpers behind them.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::DVector;

use super::latent::{latent_q, LatentQContext};
use crate::observations::PreferenceGraph;

/// Below this argument the probit helpers switch to a continued fraction.
pub const ASYMPTOTIC_BRANCH: f64 = -6.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// `T(x) = 1/(x + 2/(x + 3/(x + …)))`, so the Mills ratio is `1/(x + T(x))`.
fn mills_tail(x: f64) -> f64 {
    let mut t = 0.0;
    for k in (2..=60).rev() {
        t = k as f64 / (x + t);
    }
    1.0 / (x + t)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `log Φ(z)`.
pub fn log_phi(z: f64) -> f64 {
    if z < ASYMPTOTIC_BRANCH {
        let x = -z;
        -0.5 * z * z - LN_SQRT_2PI - (x + mills_tail(x)).ln()
    } else if z > 0.0 {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else {
        std_normal_cdf(z).ln()
    }
}

/// Inverse Mills ratio `λ(z) = φ(z)/Φ(z)` and `z + λ(z)`, the two factors of
/// `−d²/dz² log Φ(z) = λ(z)(z + λ(z))`.
pub fn inverse_mills(z: f64) -> (f64, f64) {
    if z < ASYMPTOTIC_BRANCH {
        let t = mills_tail(-z);
        (-z + t, t)
    } else {
        let lambda = std_normal_pdf(z) / std_normal_cdf(z);
        (lambda, z + lambda)
    }
}

/// Per-edge terms of the negative log-likelihood as a function of `f = Q(u) − Q(v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeTerm {
    /// Contribution to `U`.
    pub value: f64,
    /// `d/df`.
    pub slope: f64,
    /// `d²/df²`, nonnegative.
    pub curvature: f64,
}

/// `−log Φ(f/(√2σ))`.
pub fn strict_term(f: f64, sigma: f64) -> EdgeTerm {
    let c = SQRT_2 * sigma;
    let z = f / c;
    let (lambda, z_plus) = inverse_mills(z);
    EdgeTerm { value: -log_phi(z), slope: -lambda / c, curvature: (lambda * z_plus / (c * c)).max(0.0) }
}

/// `½ f²`.
pub fn equiv_term(f: f64) -> EdgeTerm {
    EdgeTerm { value: 0.5 * f * f, slope: f, curvature: 1.0 }
}

/// `log Φ(z)` for strict edge `(u → v)` (node indices) of the graph of
/// observed state `graph_index`.
pub fn strict_edge_loglik(
    ctx: &LatentQContext,
    r: &DVector<f64>,
    graph_index: usize,
    graph: &PreferenceGraph,
    edge: (usize, usize),
    sigma: f64,
) -> f64 {
    let i = graph_index;
    let f = latent_q(ctx, r, i, graph.node_action(edge.0)) - latent_q(ctx, r, i, graph.node_action(edge.1));
    log_phi(f / (SQRT_2 * sigma))
}

/// `−½ (Q(u) − Q(v))²` for equivalence edge `(u ↔ v)`.
pub fn equiv_edge_loglik(
    ctx: &LatentQContext,
    r: &DVector<f64>,
    graph_index: usize,
    graph: &PreferenceGraph,
    edge: (usize, usize),
) -> f64 {
    let i = graph_index;
    let f = latent_q(ctx, r, i, graph.node_action(edge.0)) - latent_q(ctx, r, i, graph.node_action(edge.1));
    -0.5 * f * f
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integration of the standard normal density on [−40, z].
    fn phi_by_quadrature(z: f64) -> f64 {
        let n = 400_000;
        let a = -40.0;
        let h = (z - a) / n as f64;
        let mut s = std_normal_pdf(a) + std_normal_pdf(z);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * std_normal_pdf(a + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn log_phi_reference_points() {
        assert!((log_phi(0.0) - 0.5_f64.ln()).abs() < 1e-15);
        assert!((log_phi(1.0) - phi_by_quadrature(1.0).ln()).abs() < 1e-10);
        assert!((log_phi(1.0) + 0.172_753_779_023_450_2).abs() < 1e-12);
        assert!(log_phi(40.0) == 0.0 || log_phi(40.0).abs() < 1e-300);
        assert!(log_phi(9.0) < 0.0);
    }

    #[test]
    fn branches_agree_at_the_switch() {
        for z in [-5.999, -6.0, -6.001] {
            let direct = std_normal_cdf(z).ln();
            assert!((log_phi(z) - direct).abs() < 1e-10, "z={z}");
            let (l, zp) = inverse_mills(z);
            let d = std_normal_pdf(z) / std_normal_cdf(z);
            assert!((l - d).abs() / d < 1e-10);
            assert!((zp - (z + d)).abs() < 1e-8);
        }
        // Deep tail stays finite where erfc underflows.
        let z = -60.0;
        assert!(log_phi(z).is_finite() && log_phi(z) < -1700.0);
        let (l, zp) = inverse_mills(z);
        assert!((l - 60.0).abs() < 0.02 && zp > 0.0);
    }

    #[test]
    fn term_derivatives_match_differences() {
        let h = 1e-5;
        for &f in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            for &sigma in &[0.1, 1.0] {
                let t = strict_term(f, sigma);
                let num_slope = (strict_term(f + h, sigma).value - strict_term(f - h, sigma).value) / (2.0 * h);
                let num_curv = (strict_term(f + h, sigma).slope - strict_term(f - h, sigma).slope) / (2.0 * h);
                assert!((t.slope - num_slope).abs() <= 1e-6 * (1.0 + t.slope.abs()), "f={f} s={sigma}");
                assert!((t.curvature - num_curv).abs() <= 1e-5 * (1.0 + t.curvature.abs()), "f={f} s={sigma}");
            }
        }
    }
}
