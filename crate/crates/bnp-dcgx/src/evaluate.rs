//! Structure-recovery metrics, cluster alignment, and function-recovery
//! diagnostics.
//!
//! Edge metrics operate on directed adjacency matrices and count only
//! off-diagonal decisions. Cluster alignment resolves label switching with a
//! maximal-overlap assignment so that accuracy is invariant under relabeling
//! of either side.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, Hyperparams, Trace};
use crate::predict::predict_b;
use crate::sampler::SamplerError;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("adjacency shapes differ: {est_rows}x{est_cols} vs {truth_rows}x{truth_cols}")]
    ShapeMismatch {
        est_rows: usize,
        est_cols: usize,
        truth_rows: usize,
        truth_cols: usize,
    },
}

/// Directed-edge confusion counts over the p^2 - p off-diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Count edge decisions between an estimated and a true adjacency matrix.
/// Diagonals are ignored; any nonzero entry counts as an edge.
pub fn confusion(
    est: &DMatrix<u8>,
    truth: &DMatrix<u8>,
) -> Result<ConfusionCounts, EvaluateError> {
    if est.shape() != truth.shape() || est.nrows() != est.ncols() {
        return Err(EvaluateError::ShapeMismatch {
            est_rows: est.nrows(),
            est_cols: est.ncols(),
            truth_rows: truth.nrows(),
            truth_cols: truth.ncols(),
        });
    }
    let p = est.nrows();
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for j in 0..p {
        for k in 0..p {
            if j == k {
                continue;
            }
            match (est[(j, k)] != 0, truth[(j, k)] != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

fn ratio(num: i64, den: i64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// True positive rate, false discovery rate, and Matthews correlation.
/// Degenerate 0/0 ratios return 0. The correlation uses the square-rooted
/// denominator, which is the form bounded in [-1, 1].
pub fn tpr_fdr_mcc(c: &ConfusionCounts) -> (f64, f64, f64) {
    let (tp, fp, tn, fn_) = (c.tp as i64, c.fp as i64, c.tn as i64, c.fn_ as i64);
    let tpr = ratio(tp, tp + fn_);
    let fdr = ratio(fp, tp + fp);
    let denom_sq = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if denom_sq == 0 {
        0.0
    } else {
        (tn * tp - fn_ * fp) as f64 / (denom_sq as f64).sqrt()
    };
    (tpr, fdr, mcc)
}

const ASSIGN_INF: i64 = i64::MAX / 4;

/// Minimum-cost perfect matching on a square cost matrix; returns the column
/// assigned to each row. Potentials-based shortest augmenting paths, O(n^3).
fn hungarian_min_cost(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    // p[j]: 1-based row currently matched to column j; column 0 is virtual.
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![ASSIGN_INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = ASSIGN_INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Walk the augmenting path back to the virtual column.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assigned = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assigned[p[j] - 1] = j - 1;
        }
    }
    assigned
}

/// Match estimated cluster labels to true labels by maximal overlap on the
/// contingency table. Returns, per estimated label, the matched true label
/// (None when the estimate has more labels than the truth and the label was
/// paired with a padding column), plus the fraction of units whose mapped
/// label agrees with the truth.
pub fn align_clusters(est_xi: &[usize], true_xi: &[usize]) -> (Vec<Option<usize>>, f64) {
    assert_eq!(est_xi.len(), true_xi.len(), "label vectors differ in length");
    assert!(!est_xi.is_empty(), "empty label vectors");
    let n = est_xi.len();
    let ke = est_xi.iter().max().unwrap() + 1;
    let kt = true_xi.iter().max().unwrap() + 1;
    let k = ke.max(kt);
    let mut count = vec![vec![0i64; k]; k];
    for i in 0..n {
        count[est_xi[i]][true_xi[i]] += 1;
    }
    let top = count.iter().flatten().copied().max().unwrap();
    let cost: Vec<Vec<i64>> = count
        .iter()
        .map(|row| row.iter().map(|&c| top - c).collect())
        .collect();
    let assigned = hungarian_min_cost(&cost);
    let mut mapping = vec![None; ke];
    let mut matched = 0i64;
    for (a, &b) in assigned.iter().enumerate().take(ke) {
        if b < kt {
            mapping[a] = Some(b);
        }
        matched += count[a][b];
    }
    (mapping, matched as f64 / n as f64)
}

/// Function-recovery summary over a covariate grid, restricted to the
/// entries where the truth is nonzero somewhere on the grid.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRecovery {
    /// Active (target, source) entries in row-major order.
    pub entries: Vec<(usize, usize)>,
    /// Per-entry root mean squared error of the posterior mean vs the truth.
    pub rmse: Vec<f64>,
    /// Per-entry fraction of grid points with the truth inside the posterior
    /// mean plus or minus two posterior standard deviations.
    pub coverage: Vec<f64>,
}

/// Predict at each grid point and compare the posterior mean curve against
/// the true coefficient function.
pub fn curve_recovery<F>(
    trace: &Trace,
    data: &Dataset,
    hp: &Hyperparams,
    truth_fn: F,
    grid: &[DVector<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<CurveRecovery, SamplerError>
where
    F: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    assert!(!grid.is_empty(), "empty evaluation grid");
    let p = data.p;
    let mut sq_err: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut hits: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut active = DMatrix::from_element(p, p, false);
    for x in grid {
        let pred = predict_b(x, trace, data, hp, rng)?;
        let sd = pred.b_sd();
        let truth = truth_fn(x);
        assert_eq!(truth.shape(), (p, p), "truth function shape mismatch");
        for j in 0..p {
            for k in 0..p {
                let err = pred.b_mean[(j, k)] - truth[(j, k)];
                sq_err[(j, k)] += err * err;
                if (truth[(j, k)] - pred.b_mean[(j, k)]).abs() <= 2.0 * sd[(j, k)] {
                    hits[(j, k)] += 1.0;
                }
                if truth[(j, k)] != 0.0 {
                    active[(j, k)] = true;
                }
            }
        }
    }
    let g = grid.len() as f64;
    let mut entries = Vec::new();
    let mut rmse = Vec::new();
    let mut coverage = Vec::new();
    for j in 0..p {
        for k in 0..p {
            if active[(j, k)] {
                entries.push((j, k));
                rmse.push((sq_err[(j, k)] / g).sqrt());
                coverage.push(hits[(j, k)] / g);
            }
        }
    }
    Ok(CurveRecovery {
        entries,
        rmse,
        coverage,
    })
}
