//! Scalar forms of the edge-weighting and activation functions.
//!
//! The network evaluates the same formulas with tape primitives; these
//! versions are used for reporting, limit checks and as test references.

use super::NetworkError;

/// Floor applied to `c_s * edge` before the negative power in [`fc_f`].
pub const BASE_EPS: f64 = 1e-6;
/// Finite stand-in for an infinite age weight when `q_t == q_g`.
pub const PSI_MAX: f64 = 1e6;

/// Cosine similarity. Returns `(0, true)` when either vector is all zeros.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> (f64, bool) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    (dot / (na * nb), false)
}

/// SC edge weighting: `w_z * c_s * edge`.
pub fn fc_sc(edge: f64, c_s: f64, w_z: f64) -> f64 {
    w_z * c_s * edge
}

/// Facial edge weighting: `w_f / (1 + max(c_s * edge, eps)^(-gamma))`.
pub fn fc_f(edge: f64, c_s: f64, w_f: f64, gamma: u32, k_max: u32) -> Result<f64, NetworkError> {
    if gamma < 1 || gamma > k_max {
        return Err(NetworkError::Contract(format!(
            "gamma {gamma} outside [1, {k_max}]"
        )));
    }
    let u = (c_s * edge).max(BASE_EPS);
    Ok(w_f / (1.0 + u.powi(-(gamma as i32))))
}

/// Adaptive logistic activation `w / (1 + alpha * exp(-psi * x))` with the
/// exponent clamped to `[-50, 50]`.
pub fn phi(x: f64, w: f64, psi: f64, alpha: f64) -> f64 {
    let arg = (-psi * x).clamp(-crate::tensor::EXP_CLAMP, crate::tensor::EXP_CLAMP);
    w / (1.0 + alpha * arg.exp())
}

/// Training-time age weight `1 / |t - q_g|`, capped at [`PSI_MAX`].
pub fn psi_for(t: u32, q_g: u32) -> f64 {
    let gap = (t as f64 - q_g as f64).abs();
    if gap == 0.0 {
        PSI_MAX
    } else {
        (1.0 / gap).min(PSI_MAX)
    }
}

/// Norm smoothing inside the layer's cosine matrix.
pub const COSINE_EPS: f64 = 1e-2;

/// Correlations closer than this rank as equal.
pub const GAMMA_TIE_TOL: f64 = 1e-9;

/// Neighbour exponents for one row: the most correlated neighbour gets
/// `k_max`, the next `k_max - 1`, and so on down to 1. Returns `(column, gamma)`.
///
/// Correlations are snapped to a grid of [`GAMMA_TIE_TOL`] before sorting and
/// ties go to the lower column, so rounding noise cannot reorder neighbours
/// whose correlations are mathematically equal.
pub fn gamma_ranks(c_s_row: &[f64], support: &[bool], k_max: u32) -> Vec<(usize, u32)> {
    let key = |j: usize| (c_s_row[j] / GAMMA_TIE_TOL).round() as i64;
    let mut nbrs: Vec<usize> = (0..c_s_row.len()).filter(|&j| support[j]).collect();
    nbrs.sort_by(|&a, &b| key(b).cmp(&key(a)).then(a.cmp(&b)));
    nbrs.into_iter()
        .enumerate()
        .map(|(rank, j)| (j, k_max.saturating_sub(rank as u32).max(1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cosine_cases() {
        let v = [1.0, 2.0, -0.5];
        assert_relative_eq!(cosine_sim(&v, &v).0, 1.0, epsilon = 1e-15);
        let scaled: Vec<f64> = v.iter().map(|x| 7.5 * x).collect();
        assert_relative_eq!(cosine_sim(&v, &scaled).0, 1.0, epsilon = 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 3.0]).0, 0.0);
        assert_eq!(cosine_sim(&[0.0; 3], &[0.0; 3]), (0.0, true));
    }

    #[test]
    fn fc_sc_cases() {
        assert_eq!(fc_sc(1.0, 1.0, 1.0), 1.0);
        assert_eq!(fc_sc(0.7, 0.0, 2.0), 0.0);
    }

    #[test]
    fn fc_f_midpoint_and_asymptote() {
        for g in 1..=5 {
            assert_relative_eq!(fc_f(1.0, 1.0, 3.0, g, 5).unwrap(), 1.5, epsilon = 1e-15);
        }
        assert!((fc_f(1e6, 1.0, 3.0, 1, 5).unwrap() - 3.0).abs() < 1e-5);
        assert!(fc_f(-1.0, 1.0, 3.0, 1, 5).unwrap() < 1e-5);
        assert!(fc_f(1.0, 1.0, 1.0, 0, 5).is_err());
        assert!(fc_f(1.0, 1.0, 1.0, 6, 5).is_err());
    }

    #[test]
    fn phi_at_zero_is_exact() {
        for psi in [1e-6, 1.0, 3.0, 1e6] {
            assert_eq!(phi(0.0, 2.0, psi, 2.0), 2.0 / 3.0);
        }
    }

    #[test]
    fn psi_weights() {
        assert_eq!(psi_for(5, 5), PSI_MAX);
        assert_eq!(psi_for(3, 5), 0.5);
        assert_eq!(psi_for(9, 5), 0.25);
    }

    #[test]
    fn gamma_order_descends_with_correlation() {
        let cs = [0.0, 0.2, 0.9, 0.5, 0.9, 0.1, 0.3];
        let support = [false, true, true, true, true, true, true];
        let g = gamma_ranks(&cs, &support, 5);
        assert_eq!(g, vec![(2, 5), (4, 4), (3, 3), (6, 2), (1, 1), (5, 1)]);
    }

    #[test]
    fn rounding_noise_is_a_tie() {
        let cs = [1.0 - 2e-16, 1.0, 1.0 + 2e-16];
        let g = gamma_ranks(&cs, &[true; 3], 5);
        assert_eq!(g, vec![(0, 5), (1, 4), (2, 3)]);
    }
}
