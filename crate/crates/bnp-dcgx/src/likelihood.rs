//! Cluster sufficient statistics and the likelihood kernels: the
//! observed-data log likelihood of a cluster, and the two collapsed
//! predictive densities (expression given a candidate cluster with the
//! baseline integrated out, coordinates given a candidate cluster with its
//! centroid and dispersion integrated out).
//!
//! Residual convention: for unit i under parameters (B, M), coordinate j has
//! residual r_ij = y_ij - sum_k B_jk y_ik - M_j, i.e. rows of Y - Y B' - 1 M'.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::distributions::{self, DistError};
use crate::model::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("I - B is singular")]
    SingularJacobian,
    #[error("existing cluster has no members")]
    EmptyCluster,
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// How to interpret det(I - B) in the observed-data likelihood. The absolute
/// value is well-defined on the whole stable region; the signed variant
/// produces NaN on the negative-determinant part of it, which the sampler
/// treats as a rejection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetMode {
    AbsoluteValue,
    Signed,
}

/// Running sums for one cluster. `members` stays sorted ascending so that
/// every reduction over the cluster happens in a fixed order no matter how
/// the cluster was assembled.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSuffStats {
    pub members: Vec<usize>,
    /// Sum of coordinate rows, length q.
    pub sum_x: DVector<f64>,
    /// Sum of coordinate outer products, q x q.
    pub sum_xxt: DMatrix<f64>,
    /// Sum of expression rows, length p.
    pub sum_y: DVector<f64>,
}

impl ClusterSuffStats {
    pub fn empty(p: usize, q: usize) -> Self {
        ClusterSuffStats {
            members: Vec::new(),
            sum_x: DVector::zeros(q),
            sum_xxt: DMatrix::zeros(q, q),
            sum_y: DVector::zeros(p),
        }
    }

    pub fn from_members(data: &Dataset, members: &[usize]) -> Self {
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        let mut s = Self::empty(data.p, data.q);
        for &i in &sorted {
            s.accumulate(data, i, 1.0);
        }
        s.members = sorted;
        s
    }

    /// One stats struct per label; labels must be contiguous from zero.
    pub fn build_all(xi: &[usize], data: &Dataset) -> Vec<Self> {
        let l = crate::model::n_clusters(xi);
        let mut per_cluster: Vec<Vec<usize>> = vec![Vec::new(); l];
        for (i, &lab) in xi.iter().enumerate() {
            per_cluster[lab].push(i);
        }
        debug_assert!(per_cluster.iter().all(|m| !m.is_empty()), "labels must be contiguous");
        per_cluster
            .into_iter()
            .map(|m| Self::from_members(data, &m))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn add(&mut self, data: &Dataset, i: usize) {
        let pos = self.members.binary_search(&i).unwrap_err();
        self.members.insert(pos, i);
        self.accumulate(data, i, 1.0);
    }

    pub fn remove(&mut self, data: &Dataset, i: usize) {
        let pos = self
            .members
            .binary_search(&i)
            .expect("removing a unit that is not a member");
        self.members.remove(pos);
        self.accumulate(data, i, -1.0);
    }

    fn accumulate(&mut self, data: &Dataset, i: usize, w: f64) {
        for a in 0..data.q {
            let xa = data.x[(i, a)];
            self.sum_x[a] += w * xa;
            for b in 0..data.q {
                self.sum_xxt[(a, b)] += w * xa * data.x[(i, b)];
            }
        }
        for j in 0..data.p {
            self.sum_y[j] += w * data.y[(i, j)];
        }
    }
}

/// Rows of `m` selected by index, in the given order.
pub fn member_rows(m: &DMatrix<f64>, members: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(members.len(), m.ncols(), |r, c| m[(members[r], c)])
}

/// Residual matrix R = Y - Y B' - 1 M' for the given rows.
pub fn residual_matrix(
    y_cluster: &DMatrix<f64>,
    b: &DMatrix<f64>,
    m: &DVector<f64>,
) -> DMatrix<f64> {
    let mut r = y_cluster - y_cluster * b.transpose();
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            r[(i, j)] -= m[j];
        }
    }
    r
}

/// ln det(I - B) with the determinant taken per `mode`: the absolute value,
/// or the signed value (NaN when the sign is not positive). An exactly
/// singular I - B is an error in either mode.
pub fn log_det_i_minus_b(b: &DMatrix<f64>, mode: DetMode) -> Result<f64, LikelihoodError> {
    let p = b.nrows();
    let a = DMatrix::identity(p, p) - b;
    let lu = a.lu();
    let u_diag = lu.u().diagonal();
    let mut ln_abs = 0.0;
    for d in u_diag.iter() {
        if *d == 0.0 {
            return Err(LikelihoodError::SingularJacobian);
        }
        ln_abs += d.abs().ln();
    }
    match mode {
        DetMode::AbsoluteValue => Ok(ln_abs),
        DetMode::Signed => {
            if lu.determinant() > 0.0 {
                Ok(ln_abs)
            } else {
                Ok(f64::NAN)
            }
        }
    }
}

/// Observed-data log likelihood of one cluster with the latent rescalings
/// integrated out: |S| ln det(I - B) plus the heavy-tailed residual terms.
pub fn sem_marginal_loglik(
    y_cluster: &DMatrix<f64>,
    b: &DMatrix<f64>,
    m: &DVector<f64>,
    sigma: &DVector<f64>,
    mode: DetMode,
) -> Result<f64, LikelihoodError> {
    let ln_det = log_det_i_minus_b(b, mode)?;
    let r = residual_matrix(y_cluster, b, m);
    let mut total = y_cluster.nrows() as f64 * ln_det;
    for i in 0..r.nrows() {
        let row = r.row(i).transpose();
        total += distributions::laplace_loglik_vector(&row, sigma)?;
    }
    Ok(total)
}

/// Predictive log density of one expression row under a candidate cluster,
/// with the cluster baseline integrated out against its N(0, lambda I)
/// prior. Conditioning is on the cluster's coefficient matrix, its noise
/// scales combined with the unit's current rescalings (`sigma_li`, the
/// diagonal of the unit's noise covariance), and the expression rows already
/// in the cluster (`count`, `sum_y`); a new cluster has count 0 and zero sums.
///
/// In transformed coordinates z = (I - B) y the density is diagonal normal:
/// mean (A sum_y)_j / (N + s_j/lambda) and, by default, variance
/// (N + 1 + s_j/lambda) / (N + s_j/lambda) per coordinate, times the
/// Jacobian |det(I - B)|. With `scaled_spread` the variance carries a
/// leading s_j factor, making it the exact conjugate result when every
/// member shares the unit's noise diagonal: s_j plus the baseline's
/// posterior variance. The mean is the same either way.
#[allow(clippy::too_many_arguments)]
pub fn y_collapsed_predictive_logpdf(
    y_i: &DVector<f64>,
    count: usize,
    sum_y: &DVector<f64>,
    b: &DMatrix<f64>,
    sigma_li: &DVector<f64>,
    lambda: f64,
    scaled_spread: bool,
    is_new: bool,
) -> Result<f64, LikelihoodError> {
    if !is_new && count == 0 {
        return Err(LikelihoodError::EmptyCluster);
    }
    debug_assert!(!is_new || count == 0, "a new cluster has no members");
    if sigma_li.iter().any(|s| !(*s > 0.0)) {
        return Err(LikelihoodError::Dist(DistError::NonPositiveSigma));
    }
    let p = y_i.len();
    let n = count as f64;
    let a = DMatrix::identity(p, p) - b;
    let z = &a * y_i;
    let az_sum = &a * sum_y;
    let ln_det = log_det_i_minus_b(b, DetMode::AbsoluteValue)?;
    let mut logpdf = ln_det - 0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln();
    for j in 0..p {
        let s_over_lambda = sigma_li[j] / lambda;
        let mean = if count == 0 {
            0.0
        } else {
            az_sum[j] / (n + s_over_lambda)
        };
        let mut var = (n + 1.0 + s_over_lambda) / (n + s_over_lambda);
        if scaled_spread {
            var *= sigma_li[j];
        }
        let dev = z[j] - mean;
        logpdf += -0.5 * var.ln() - 0.5 * dev * dev / var;
    }
    Ok(logpdf)
}

/// Predictive log density of one coordinate row under a candidate cluster,
/// with the cluster centroid and dispersion integrated out. This is the
/// standard conjugate multivariate-t: an empty cluster gives
/// t_1(0, (1 + omega) I_q); a cluster with N members gives df N + 1,
/// location (omega / (1 + N omega)) sum_x, and scale
/// ((omega + 1 + N omega) / ((N + 1)(1 + N omega)))
///   [I_q - (omega / (1 + N omega)) sum_x sum_x' + sum_xxt].
pub fn x_collapsed_predictive_logpdf(
    x_i: &DVector<f64>,
    count: usize,
    sum_x: &DVector<f64>,
    sum_xxt: &DMatrix<f64>,
    omega: f64,
    is_new: bool,
) -> Result<f64, LikelihoodError> {
    if !is_new && count == 0 {
        return Err(LikelihoodError::EmptyCluster);
    }
    let q = x_i.len();
    let n = count as f64;
    let shrink = omega / (1.0 + n * omega);
    let loc = sum_x * shrink;
    let factor = (omega + 1.0 + n * omega) / ((n + 1.0) * (1.0 + n * omega));
    let scale =
        (DMatrix::identity(q, q) - sum_x * sum_x.transpose() * shrink + sum_xxt) * factor;
    Ok(distributions::mvt_logpdf(x_i, n + 1.0, &loc, &scale)?)
}

/// Collapsed log marginal of all coordinate rows in a cluster, assembled by
/// the chain rule over members in ascending order. Used in swap decisions
/// when coordinate information is included.
pub fn x_cluster_marginal_loglik(
    data: &Dataset,
    members: &[usize],
    omega: f64,
) -> Result<f64, LikelihoodError> {
    debug_assert!(members.windows(2).all(|w| w[0] < w[1]), "members must be sorted");
    let mut stats = ClusterSuffStats::empty(data.p, data.q);
    let mut total = 0.0;
    for (k, &i) in members.iter().enumerate() {
        let x_i = data.x.row(i).transpose();
        total += x_collapsed_predictive_logpdf(
            &x_i,
            stats.count(),
            &stats.sum_x,
            &stats.sum_xxt,
            omega,
            k == 0,
        )?;
        stats.add(data, i);
    }
    Ok(total)
}
