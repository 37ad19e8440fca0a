//! RBF kernel machinery for kernel mean matching: pairwise squared
//! distances, the quantile bandwidth heuristic, the ridge-stabilized kernel
//! matrix, and the cross-kernel vector against the validation batch.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How the RBF scale is derived from the distance quantile `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaRule {
    /// `gamma = 1 / q`; dimensionally consistent with `exp(-gamma d^2)`.
    Reciprocal,
    /// `gamma = q`; the literal reading of the quantile heuristic.
    Direct,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Quantile level in (0, 1] of the positive squared pairwise training
    /// distances used to derive the RBF scale.
    #[serde(default = "default_gamma_quantile")]
    pub gamma_quantile: f64,
    #[serde(default = "default_gamma_rule")]
    pub gamma_rule: GammaRule,
    /// Fixed RBF scale; bypasses the quantile heuristic when set.
    #[serde(default)]
    pub gamma_override: Option<f64>,
    /// Diagonal stabilizer added to the kernel matrix.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Upper box bound on individual importance weights.
    #[serde(default = "default_box_bound")]
    pub box_bound: f64,
    /// Slack on the mean-one constraint; kept for fidelity experiments, the
    /// default pipeline renormalizes the mean instead.
    #[serde(default = "default_slack")]
    pub slack: f64,
}

fn default_gamma_quantile() -> f64 {
    0.01
}

fn default_gamma_rule() -> GammaRule {
    GammaRule::Reciprocal
}

fn default_ridge() -> f64 {
    1e-5
}

fn default_box_bound() -> f64 {
    10.0
}

fn default_slack() -> f64 {
    0.01
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            gamma_quantile: default_gamma_quantile(),
            gamma_rule: default_gamma_rule(),
            gamma_override: None,
            ridge: default_ridge(),
            box_bound: default_box_bound(),
            slack: default_slack(),
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma_quantile && self.gamma_quantile <= 1.0) {
            return Err(Error::Config(format!(
                "gamma quantile must lie in (0, 1], got {}",
                self.gamma_quantile
            )));
        }
        if let Some(g) = self.gamma_override {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Config(format!(
                    "gamma must be finite and positive, got {g}"
                )));
            }
        }
        if self.ridge < 0.0 || !self.ridge.is_finite() {
            return Err(Error::Config(format!(
                "ridge must be nonnegative, got {}",
                self.ridge
            )));
        }
        if self.box_bound <= 0.0 || !self.box_bound.is_finite() {
            return Err(Error::Config(format!(
                "box bound must be positive, got {}",
                self.box_bound
            )));
        }
        if self.slack < 0.0 {
            return Err(Error::Config(format!(
                "slack must be nonnegative, got {}",
                self.slack
            )));
        }
        Ok(())
    }

    /// RBF scale for the given squared training distances: the override if
    /// set, otherwise the quantile heuristic under the configured rule.
    pub fn resolve_gamma(&self, sq_dists: &Array2<f64>) -> Result<f64> {
        self.validate()?;
        if let Some(g) = self.gamma_override {
            return Ok(g);
        }
        let q = positive_quantile(sq_dists, self.gamma_quantile)?;
        let gamma = match self.gamma_rule {
            GammaRule::Reciprocal => 1.0 / q,
            GammaRule::Direct => q,
        };
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Degenerate(format!(
                "resolved gamma {gamma} from quantile value {q}"
            )));
        }
        Ok(gamma)
    }
}

/// Entry `(i, j)` is the squared Euclidean distance between row `i` of `a`
/// and row `j` of `b`. Exactly zero on the diagonal and bit-symmetric when
/// both arguments are the same matrix.
pub fn pairwise_sq_dists(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Input(format!(
            "feature widths differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let mut out = Array2::<f64>::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.rows().into_iter().enumerate() {
        for (j, rb) in b.rows().into_iter().enumerate() {
            let mut acc = 0.0;
            for (x, y) in ra.iter().zip(rb.iter()) {
                let d = x - y;
                acc += d * d;
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}

/// Nearest-rank quantile of the strictly positive entries.
fn positive_quantile(sq_dists: &Array2<f64>, quantile: f64) -> Result<f64> {
    let mut positive: Vec<f64> = sq_dists.iter().copied().filter(|&d| d > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::Degenerate(
            "all pairwise distances are zero; cannot resolve a bandwidth".into(),
        ));
    }
    positive.sort_by(|x, y| x.partial_cmp(y).expect("distances are finite"));
    let rank = ((quantile * positive.len() as f64).ceil() as usize).clamp(1, positive.len());
    Ok(positive[rank - 1])
}

/// Bandwidth heuristic: `gamma = 1 / q` with `q` the nearest-rank quantile
/// of the strictly positive squared distances.
pub fn resolve_bandwidth(sq_dists: &Array2<f64>, quantile: f64) -> Result<f64> {
    if !(0.0 < quantile && quantile <= 1.0) {
        return Err(Error::Config(format!(
            "quantile must lie in (0, 1], got {quantile}"
        )));
    }
    Ok(1.0 / positive_quantile(sq_dists, quantile)?)
}

/// `K_ij = exp(-gamma ||z_i - z_j||^2) + ridge * [i == j]`.
pub fn rbf_kernel_matrix(features: &Array2<f64>, gamma: f64, ridge: f64) -> Result<Array2<f64>> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("nonfinite feature values".into()));
    }
    let mut k = pairwise_sq_dists(features, features)?;
    k.mapv_inplace(|d| (-gamma * d).exp());
    for i in 0..k.nrows() {
        k[[i, i]] += ridge;
    }
    Ok(k)
}

/// Cross-kernel vector of the matching objective:
/// `k_i = (n_tr / n_v) * sum_j exp(-gamma ||z_i^tr - z_j^v||^2)`.
pub fn cross_kernel_vector(
    train_features: &Array2<f64>,
    val_features: &Array2<f64>,
    gamma: f64,
) -> Result<Array1<f64>> {
    if val_features.nrows() == 0 {
        return Err(Error::Input("validation feature block is empty".into()));
    }
    if train_features
        .iter()
        .chain(val_features.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Input("nonfinite feature values".into()));
    }
    let dists = pairwise_sq_dists(train_features, val_features)?;
    let scale = train_features.nrows() as f64 / val_features.nrows() as f64;
    let mut out = Array1::<f64>::zeros(train_features.nrows());
    for (i, row) in dists.rows().into_iter().enumerate() {
        out[i] = scale * row.iter().map(|&d| (-gamma * d).exp()).sum::<f64>();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn self_distances_have_zero_diagonal() {
        let a = array![[0.3, -1.2], [5.0, 2.0], [0.0, 0.0]];
        let d = pairwise_sq_dists(&a, &a).unwrap();
        for i in 0..3 {
            assert_eq!(d[[i, i]], 0.0);
        }
    }

    #[test]
    fn one_dimensional_distance_arithmetic() {
        let a = array![[0.0]];
        let b = array![[3.0]];
        let d = pairwise_sq_dists(&a, &b).unwrap();
        assert_eq!(d[[0, 0]], 9.0);
    }

    #[test]
    fn width_mismatch_is_input_error() {
        let a = array![[0.0, 1.0]];
        let b = array![[3.0]];
        assert!(matches!(pairwise_sq_dists(&a, &b), Err(Error::Input(_))));
    }

    /// Gram-expansion route: `||a||^2 + ||b||^2 - 2 a.b`.
    fn gram_expansion_dists(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((a.nrows(), b.nrows()));
        for i in 0..a.nrows() {
            for j in 0..b.nrows() {
                let na: f64 = a.row(i).iter().map(|v| v * v).sum();
                let nb: f64 = b.row(j).iter().map(|v| v * v).sum();
                let dot: f64 = a
                    .row(i)
                    .iter()
                    .zip(b.row(j).iter())
                    .map(|(x, y)| x * y)
                    .sum();
                out[[i, j]] = (na + nb - 2.0 * dot).max(0.0);
            }
        }
        out
    }

    #[test]
    fn matches_gram_expansion_route() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-2.0..2.0));
        let b = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-2.0..2.0));
        let direct = pairwise_sq_dists(&a, &b).unwrap();
        let expanded = gram_expansion_dists(&a, &b);
        for (x, y) in direct.iter().zip(expanded.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_distances_fix_gamma() {
        // two points at squared distance 4: every positive distance is 4
        let z = array![[0.0], [2.0]];
        let d = pairwise_sq_dists(&z, &z).unwrap();
        for q in [0.01, 0.5, 1.0] {
            assert_eq!(resolve_bandwidth(&d, q).unwrap(), 0.25);
        }
    }

    #[test]
    fn nearest_rank_median_of_four() {
        // positive squared distances {1, 4, 9, 16}; nearest-rank median is
        // the ceil(0.5 * 4) = 2nd order statistic, i.e. 4
        let d = array![[0.0, 1.0], [4.0, 9.0], [16.0, 0.0]];
        let gamma = resolve_bandwidth(&d, 0.5).unwrap();
        assert_eq!(gamma, 1.0 / 4.0);
    }

    #[test]
    fn full_quantile_is_reciprocal_max() {
        let d = array![[0.0, 2.0], [8.0, 0.5]];
        assert_eq!(resolve_bandwidth(&d, 1.0).unwrap(), 1.0 / 8.0);
    }

    #[test]
    fn all_zero_distances_are_degenerate() {
        let d = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            resolve_bandwidth(&d, 0.5),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn kernel_diagonal_carries_ridge() {
        let z = array![[0.1, 0.2], [1.0, -1.0], [3.0, 0.0]];
        let k = rbf_kernel_matrix(&z, 0.7, 1e-5).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(k[[i, i]], 1.0 + 1e-5, epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_points_have_unit_kernel_off_diagonal() {
        let z = array![[2.0, 3.0], [2.0, 3.0]];
        let k = rbf_kernel_matrix(&z, 1.3, 1e-5).unwrap();
        assert_eq!(k[[0, 1]], 1.0);
        assert_eq!(k[[1, 0]], 1.0);
    }

    #[test]
    fn unit_distance_kernel_value() {
        let z = array![[0.0], [1.0]];
        let k = rbf_kernel_matrix(&z, 2.0, 0.0).unwrap();
        assert_abs_diff_eq!(k[[0, 1]], (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn nonfinite_features_rejected() {
        let z = array![[f64::NAN]];
        assert!(matches!(
            rbf_kernel_matrix(&z, 1.0, 0.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn cross_kernel_identical_single_point() {
        let z = array![[0.5, 0.5]];
        let k = cross_kernel_vector(&z, &z, 3.0).unwrap();
        assert_eq!(k[0], 1.0);
    }

    #[test]
    fn cross_kernel_scale_factor() {
        // two training points identical to the single validation point:
        // k_i = (2/1) * 1 = 2
        let tr = array![[1.0], [1.0]];
        let v = array![[1.0]];
        let k = cross_kernel_vector(&tr, &v, 0.9).unwrap();
        assert_eq!(k[0], 2.0);
        assert_eq!(k[1], 2.0);
    }

    #[test]
    fn distant_validation_points_vanish() {
        let tr = array![[0.0]];
        let v = array![[1e6]];
        let k = cross_kernel_vector(&tr, &v, 1.0).unwrap();
        assert_eq!(k[0], 0.0);
    }

    #[test]
    fn empty_validation_block_rejected() {
        let tr = array![[0.0]];
        let v = Array2::<f64>::zeros((0, 1));
        assert!(matches!(
            cross_kernel_vector(&tr, &v, 1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn kernel_matrix_is_positive_definite_with_ridge() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let z = Array2::from_shape_fn((12, 2), |_| rng.gen_range(-1.0..1.0));
        let ridge = 1e-5;
        let k = rbf_kernel_matrix(&z, 0.8, ridge).unwrap();
        // strict positive definiteness: Cholesky succeeds after removing
        // slightly less than the full ridge
        let mut shifted = k.clone();
        for i in 0..shifted.nrows() {
            shifted[[i, i]] -= ridge - 1e-10;
        }
        assert!(crate::linalg::cholesky(&shifted).is_ok());
    }

    #[test]
    fn power_of_two_feature_scaling_leaves_kernel_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let z = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0));
        let scaled = z.mapv(|v| 4.0 * v);
        let cfg = KernelConfig::default();
        let d = pairwise_sq_dists(&z, &z).unwrap();
        let ds = pairwise_sq_dists(&scaled, &scaled).unwrap();
        let gamma = cfg.resolve_gamma(&d).unwrap();
        let gamma_s = cfg.resolve_gamma(&ds).unwrap();
        assert_eq!(gamma_s, gamma / 16.0);
        let k = rbf_kernel_matrix(&z, gamma, cfg.ridge).unwrap();
        let ks = rbf_kernel_matrix(&scaled, gamma_s, cfg.ridge).unwrap();
        assert_eq!(k, ks);
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_bounded(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let z = Array2::from_shape_vec((6, 2), values).unwrap();
            let k = rbf_kernel_matrix(&z, 0.3, 0.0).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert!((k[[i, j]] - k[[j, i]]).abs() <= 1e-12);
                    prop_assert!(k[[i, j]] > 0.0 && k[[i, j]] <= 1.0);
                }
            }
        }
    }
}
