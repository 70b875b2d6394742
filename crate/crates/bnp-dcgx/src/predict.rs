//! Posterior prediction of the graph at arbitrary covariate points, and
//! fitted per-unit graphs from a retained trace.
//!
//! Prediction treats a query point as unit n + 1: for each retained sample,
//! it is assigned to an existing cluster or a fresh prior draw with
//! probability proportional to the partition weight times the collapsed
//! coordinate predictive, and that cluster's coefficient matrix becomes one
//! prediction sample. Averaging over the trace integrates over partitions.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::likelihood::{self, ClusterSuffStats};
use crate::model::{Dataset, Hyperparams, Trace};
use crate::sampler::{self, SamplerError};
use crate::stability;

/// Prediction at one covariate point.
#[derive(Debug, Clone)]
pub struct GraphPrediction {
    /// Entrywise mean of `b_samples`.
    pub b_mean: DMatrix<f64>,
    /// One coefficient matrix per retained sample.
    pub b_samples: Vec<DMatrix<f64>>,
    /// Posterior probability of each directed edge: the mean of the chosen
    /// clusters' inclusion indicators.
    pub edge_prob: DMatrix<f64>,
    /// Every sample passed the stability predicate (checked exhaustively).
    pub all_stable: bool,
}

impl GraphPrediction {
    /// Entrywise sample standard deviation of `b_samples` with the n - 1
    /// denominator; zero when fewer than two samples exist.
    pub fn b_sd(&self) -> DMatrix<f64> {
        let p = self.b_mean.nrows();
        let t = self.b_samples.len();
        if t < 2 {
            return DMatrix::zeros(p, p);
        }
        let mut acc = DMatrix::zeros(p, p);
        for s in &self.b_samples {
            let d = s - &self.b_mean;
            acc += d.component_mul(&d);
        }
        (acc / (t - 1) as f64).map(f64::sqrt)
    }
}

/// Unnormalized log weights for assigning a query point: one entry per
/// existing cluster (occupancy times the collapsed coordinate predictive)
/// plus a final entry for a fresh cluster (concentration times the empty
/// predictive).
pub(crate) fn assignment_logweights(
    x_new: &DVector<f64>,
    stats: &[ClusterSuffStats],
    q: usize,
    hp: &Hyperparams,
) -> Result<Vec<f64>, SamplerError> {
    let mut logw = Vec::with_capacity(stats.len() + 1);
    for s in stats {
        let lx = likelihood::x_collapsed_predictive_logpdf(
            x_new,
            s.count(),
            &s.sum_x,
            &s.sum_xxt,
            hp.omega,
            false,
        )?;
        logw.push((s.count() as f64).ln() + lx);
    }
    let lx_new = likelihood::x_collapsed_predictive_logpdf(
        x_new,
        0,
        &DVector::zeros(q),
        &DMatrix::zeros(q, q),
        hp.omega,
        true,
    )?;
    logw.push(hp.alpha.ln() + lx_new);
    Ok(logw)
}

/// Draw one prediction sample per retained trace sample at covariate point
/// `x_new` (length q). The same generator always yields the same prediction
/// for the same trace.
pub fn predict_b(
    x_new: &DVector<f64>,
    trace: &Trace,
    data: &Dataset,
    hp: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<GraphPrediction, SamplerError> {
    assert_eq!(x_new.len(), data.q, "query point dimension mismatch");
    if trace.samples.is_empty() {
        return Err(SamplerError::Config("trace has no retained samples".into()));
    }
    let p = data.p;

    let mut b_samples = Vec::with_capacity(trace.samples.len());
    let mut b_mean = DMatrix::zeros(p, p);
    let mut edge_prob = DMatrix::zeros(p, p);
    let mut all_stable = true;

    for sample in &trace.samples {
        let stats = ClusterSuffStats::build_all(&sample.xi, data);
        let logw = assignment_logweights(x_new, &stats, data.q, hp)?;
        let choice = sampler::sample_log_categorical(&logw, rng)?;
        let (b, gamma) = if choice < stats.len() {
            let c = &sample.clusters[choice];
            (c.b.clone(), c.gamma.clone())
        } else {
            let fresh = sampler::draw_aux_params(p, hp, rng)?;
            (fresh.b, fresh.gamma)
        };
        if !matches!(stability::is_stable(&b, hp.eps_stab), Ok(true)) {
            all_stable = false;
        }
        b_mean += &b;
        for j in 0..p {
            for k in 0..p {
                edge_prob[(j, k)] += gamma[(j, k)] as f64;
            }
        }
        b_samples.push(b);
    }

    let t = b_samples.len() as f64;
    Ok(GraphPrediction {
        b_mean: b_mean / t,
        b_samples,
        edge_prob: edge_prob / t,
        all_stable,
    })
}

/// Fitted graphs for the observed units.
#[derive(Debug, Clone)]
pub struct FittedGraphs {
    /// Per-unit posterior edge probabilities: mean over samples of the
    /// assigned cluster's inclusion indicators.
    pub unit_edge_prob: Vec<DMatrix<f64>>,
    /// Per-unit edge sets after thresholding (strictly above `threshold`),
    /// as (target, source) pairs in row-major order.
    pub unit_edges: Vec<Vec<(usize, usize)>>,
    /// Fraction of units whose thresholded graph includes each edge.
    pub union_freq: DMatrix<f64>,
    pub threshold: f64,
}

/// Aggregate each unit's edge probabilities over the trace and threshold
/// them into per-unit graphs plus the union graph's edge frequencies.
pub fn fitted_graphs(trace: &Trace, data: &Dataset, threshold: f64) -> FittedGraphs {
    assert!(!trace.samples.is_empty(), "trace has no retained samples");
    let (n, p) = (data.n, data.p);
    let mut unit_edge_prob = vec![DMatrix::zeros(p, p); n];
    for sample in &trace.samples {
        for i in 0..n {
            let gamma = &sample.clusters[sample.xi[i]].gamma;
            let acc = &mut unit_edge_prob[i];
            for j in 0..p {
                for k in 0..p {
                    acc[(j, k)] += gamma[(j, k)] as f64;
                }
            }
        }
    }
    let t = trace.samples.len() as f64;
    let mut union_freq = DMatrix::zeros(p, p);
    let mut unit_edges = Vec::with_capacity(n);
    for acc in unit_edge_prob.iter_mut() {
        *acc /= t;
        let mut edges = Vec::new();
        for j in 0..p {
            for k in 0..p {
                if acc[(j, k)] > threshold {
                    edges.push((j, k));
                    union_freq[(j, k)] += 1.0;
                }
            }
        }
        unit_edges.push(edges);
    }
    union_freq /= n as f64;
    FittedGraphs {
        unit_edge_prob,
        unit_edges,
        union_freq,
        threshold,
    }
}
