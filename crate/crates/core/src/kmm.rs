//! Weight estimation by kernel mean matching: the finite-sample squared-MMD
//! quadratic objective `w'Kw - 2k'w` minimized over the box `0 <= w_i <= B`
//! with projected gradient descent, followed by mean-one renormalization.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::kernels::{cross_kernel_vector, pairwise_sq_dists, rbf_kernel_matrix, KernelConfig};
use crate::{Error, Result};

/// One finite-sample matching instance: ridge-stabilized kernel matrix,
/// cross-kernel vector, and the weight upper bound.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub kernel: Array2<f64>,
    pub cross: Array1<f64>,
    pub box_bound: f64,
}

impl QpProblem {
    pub fn len(&self) -> usize {
        self.cross.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cross.is_empty()
    }
}

/// Per-example nonnegative importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    normalized: bool,
}

impl WeightVector {
    /// Wraps raw weights; rejects negative or nonfinite entries.
    pub fn from_raw(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Input(
                "weights must be finite and nonnegative".into(),
            ));
        }
        Ok(WeightVector {
            values,
            normalized: false,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Outcome of one projected-gradient solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_objective: f64,
    /// Max-norm of the projected gradient at the returned point.
    pub kkt_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_tolerance() -> f64 {
    1e-6
}

fn default_max_iterations() -> usize {
    20_000
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
        }
    }
}

/// `w'Kw - 2k'w`, the matching objective with its additive constant dropped.
pub fn qp_objective(problem: &QpProblem, weights: &[f64]) -> f64 {
    assert_eq!(weights.len(), problem.len(), "weight length mismatch");
    let w = ndarray::ArrayView1::from(weights);
    let kw = problem.kernel.dot(&w);
    w.dot(&kw) - 2.0 * problem.cross.dot(&w)
}

/// Componentwise projected gradient: the gradient with descent directions
/// blocked by an active box face zeroed out. Its max-norm is the KKT
/// residual of the box-constrained problem.
fn projected_gradient(weights: &Array1<f64>, gradient: &Array1<f64>, bound: f64) -> Array1<f64> {
    let mut pg = gradient.clone();
    for i in 0..pg.len() {
        if weights[i] <= 0.0 {
            pg[i] = pg[i].min(0.0);
        } else if weights[i] >= bound {
            pg[i] = pg[i].max(0.0);
        }
    }
    pg
}

/// Projected gradient descent with the fixed step `1 / L`, where `L` is the
/// largest-row-sum bound on the spectral norm of `K`, doubled for safety.
///
/// Starts from all-ones clipped to the box. Stops when the projected
/// gradient max-norm falls below the tolerance or the iteration cap is hit;
/// the objective is non-increasing across iterations either way, so the
/// last iterate is also the best one.
pub fn solve_box_qp(problem: &QpProblem, solver: &SolverConfig) -> Result<(WeightVector, SolveReport)> {
    let n = problem.len();
    if problem.kernel.nrows() != n || problem.kernel.ncols() != n {
        return Err(Error::Input(format!(
            "kernel matrix {}x{} does not match cross-kernel length {n}",
            problem.kernel.nrows(),
            problem.kernel.ncols()
        )));
    }
    if !(problem.box_bound > 0.0 && problem.box_bound.is_finite()) {
        return Err(Error::Config(format!(
            "box bound must be positive, got {}",
            problem.box_bound
        )));
    }

    let bound = problem.box_bound;
    let max_row_sum = problem
        .kernel
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    // gradient of w'Kw - 2k'w is 2(Kw - k); its Lipschitz constant is
    // 2 lambda_max(K) <= 2 * max_row_sum
    let step = 1.0 / (2.0 * max_row_sum.max(f64::MIN_POSITIVE));

    let mut w = Array1::from_elem(n, 1.0f64.min(bound));
    let mut kw = problem.kernel.dot(&w);
    let mut objective = w.dot(&kw) - 2.0 * problem.cross.dot(&w);
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..=solver.max_iterations {
        let gradient = (&kw - &problem.cross) * 2.0;
        let pg = projected_gradient(&w, &gradient, bound);
        kkt = pg.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        iterations = iter;
        if kkt <= solver.tolerance {
            converged = true;
            break;
        }
        if iter == solver.max_iterations {
            break;
        }
        w.zip_mut_with(&gradient, |wi, &g| *wi = (*wi - step * g).clamp(0.0, bound));
        kw = problem.kernel.dot(&w);
        let next = w.dot(&kw) - 2.0 * problem.cross.dot(&w);
        debug_assert!(
            next <= objective + 1e-9 * (1.0 + objective.abs()),
            "objective increased: {objective} -> {next}"
        );
        objective = next;
    }

    let weights = WeightVector {
        values: w.to_vec(),
        normalized: false,
    };
    Ok((
        weights,
        SolveReport {
            iterations,
            final_objective: objective,
            kkt_residual: kkt,
            converged,
        },
    ))
}

/// Rescales so the mean is exactly one and marks the vector normalized.
pub fn normalize_mean(weights: WeightVector) -> Result<WeightVector> {
    let sum: f64 = weights.values.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Degenerate(
            "all weights are zero; cannot normalize the mean".into(),
        ));
    }
    let scale = weights.values.len() as f64 / sum;
    let values = weights.values.into_iter().map(|w| w * scale).collect();
    Ok(WeightVector {
        values,
        normalized: true,
    })
}

/// Optional fidelity projection onto the slack band
/// `|mean(w) - 1| <= slack`: weights are rescaled toward mean one only as
/// far as the band requires, then re-clipped to the box.
pub fn project_mean_slack(weights: WeightVector, slack: f64, box_bound: f64) -> WeightVector {
    let mean = weights.mean();
    if (mean - 1.0).abs() <= slack || mean <= 0.0 {
        return weights;
    }
    let target = if mean > 1.0 { 1.0 + slack } else { 1.0 - slack };
    let scale = target / mean;
    let values = weights
        .values
        .into_iter()
        .map(|w| (w * scale).clamp(0.0, box_bound))
        .collect();
    WeightVector {
        values,
        normalized: false,
    }
}

/// Full weight-estimation composition: distances, bandwidth, kernel matrix
/// and cross-kernel vector, box-QP solve, mean normalization.
pub fn kmm_estimate_detailed(
    train_features: &Array2<f64>,
    val_features: &Array2<f64>,
    cfg: &KernelConfig,
    solver: &SolverConfig,
) -> Result<(WeightVector, SolveReport)> {
    if train_features.nrows() == 0 {
        return Err(Error::Input("training feature block is empty".into()));
    }
    let sq_dists = pairwise_sq_dists(train_features, train_features)?;
    let gamma = cfg.resolve_gamma(&sq_dists)?;
    let mut kernel = sq_dists;
    kernel.mapv_inplace(|d| (-gamma * d).exp());
    for i in 0..kernel.nrows() {
        kernel[[i, i]] += cfg.ridge;
    }
    let cross = cross_kernel_vector(train_features, val_features, gamma)?;
    let problem = QpProblem {
        kernel,
        cross,
        box_bound: cfg.box_bound,
    };
    let (raw, report) = solve_box_qp(&problem, solver)?;
    Ok((normalize_mean(raw)?, report))
}

/// `kmm_estimate_detailed` with default solver settings, discarding the
/// solve report.
pub fn kmm_estimate(
    train_features: &Array2<f64>,
    val_features: &Array2<f64>,
    cfg: &KernelConfig,
) -> Result<WeightVector> {
    kmm_estimate_detailed(train_features, val_features, cfg, &SolverConfig::default())
        .map(|(w, _)| w)
}

/// Assembles the matching problem without solving it; used by tests and
/// diagnostics that examine the QP itself.
pub fn assemble_problem(
    train_features: &Array2<f64>,
    val_features: &Array2<f64>,
    cfg: &KernelConfig,
) -> Result<QpProblem> {
    let sq_dists = pairwise_sq_dists(train_features, train_features)?;
    let gamma = cfg.resolve_gamma(&sq_dists)?;
    Ok(QpProblem {
        kernel: rbf_kernel_matrix(train_features, gamma, cfg.ridge)?,
        cross: cross_kernel_vector(train_features, val_features, gamma)?,
        box_bound: cfg.box_bound,
    })
}
