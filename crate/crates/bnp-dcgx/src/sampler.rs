//! Single-chain MCMC kernel: the conditional updates for cluster parameters,
//! the latent noise rescalings, and the cluster assignments, composed into
//! one sweep at a fixed temperature.
//!
//! Update order within a sweep is fixed: inclusion probability, noise
//! scales, baseline, edge indicators, slab variance, coefficient matrix
//! (each applied cluster by cluster), then the rescalings, then the
//! assignments. Only two updates see the temperature: coefficient
//! acceptances are raised to the power 1/T, and (by default) the
//! reassignment weights are tempered the same way. All other conditionals
//! use their untempered parameters.
//!
//! Reassignment uses auxiliary-parameter candidates: each unit is detached,
//! a detached singleton's parameters occupy the first auxiliary slot, the
//! remaining slots get fresh prior draws, and the unit picks among existing
//! clusters and the slots. Every draw consumed here comes from the chain's
//! own generator, so a chain's trajectory is a pure function of its seed,
//! stream, and data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distributions::{self, DistError};
use crate::likelihood::{self, ClusterSuffStats, DetMode, LikelihoodError};
use crate::model::{ChainState, ClusterParams, Dataset, Hyperparams};
use crate::stability::{self, StabilityError};

/// Cap on joint prior-draw attempts for one auxiliary candidate. The vague
/// slab-variance prior makes most attempts unstable, so the expected count
/// is tens, not thousands; hitting the cap indicates a misconfiguration.
const AUX_TRY_CAP: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("no stable prior draw within {tries} attempts")]
    AuxDrawExhausted { tries: usize },
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Eigen(#[from] StabilityError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("reassignment weights degenerated to a non-finite maximum")]
    DegenerateWeights,
}

impl DetMode {
    pub fn from_signed(signed: bool) -> DetMode {
        if signed {
            DetMode::Signed
        } else {
            DetMode::AbsoluteValue
        }
    }
}

/// Beta posterior parameters for the edge inclusion probability.
fn phi_posterior(gamma: &DMatrix<u8>, hp: &Hyperparams) -> (f64, f64) {
    let p = gamma.nrows();
    let total = (p * p - p) as f64;
    let active: f64 = gamma.iter().map(|g| *g as f64).sum();
    (active + hp.a_phi, total - active + hp.b_phi)
}

pub fn update_phi<R: Rng + ?Sized>(cluster: &mut ClusterParams, hp: &Hyperparams, rng: &mut R) {
    let (a, b) = phi_posterior(&cluster.gamma, hp);
    cluster.phi = distributions::sample_beta(a, b, rng);
}

/// Inverse-gamma posterior parameters for one gene's noise scale given the
/// member residuals and rescalings for that gene.
fn sigma_posterior(
    resid_col: &[f64],
    tau_col: &[f64],
    hp: &Hyperparams,
) -> (f64, f64) {
    let shape = hp.a_sigma + resid_col.len() as f64 / 2.0;
    let rate = hp.b_sigma
        + 0.5
            * resid_col
                .iter()
                .zip(tau_col)
                .map(|(r, t)| r * r / t)
                .sum::<f64>();
    (shape, rate)
}

pub fn update_sigma<R: Rng + ?Sized>(
    cluster: &mut ClusterParams,
    data: &Dataset,
    members: &[usize],
    tau: &DMatrix<f64>,
    hp: &Hyperparams,
    rng: &mut R,
) {
    let y_s = likelihood::member_rows(&data.y, members);
    let resid = likelihood::residual_matrix(&y_s, &cluster.b, &cluster.m);
    for j in 0..data.p {
        let rc: Vec<f64> = (0..members.len()).map(|r| resid[(r, j)]).collect();
        let tc: Vec<f64> = members.iter().map(|&i| tau[(i, j)]).collect();
        let (shape, rate) = sigma_posterior(&rc, &tc, hp);
        cluster.sigma[j] = distributions::sample_inv_gamma(shape, rate, rng);
    }
}

/// Normal posterior (mean, variance) for one baseline coordinate given the
/// sums of z/s and 1/s over members, where z is the residual without the
/// baseline and s the per-observation noise variance.
fn baseline_posterior(z_over_s: f64, inv_s: f64, lambda: f64) -> (f64, f64) {
    let v = 1.0 / (1.0 / lambda + inv_s);
    (v * z_over_s, v)
}

pub fn update_m<R: Rng + ?Sized>(
    cluster: &mut ClusterParams,
    data: &Dataset,
    members: &[usize],
    tau: &DMatrix<f64>,
    hp: &Hyperparams,
    rng: &mut R,
) {
    let y_s = likelihood::member_rows(&data.y, members);
    // Residual without the baseline: rows of Y - Y B'.
    let z = &y_s - &y_s * cluster.b.transpose();
    for j in 0..data.p {
        let mut z_over_s = 0.0;
        let mut inv_s = 0.0;
        for (r, &i) in members.iter().enumerate() {
            let s = cluster.sigma[j] * tau[(i, j)];
            z_over_s += z[(r, j)] / s;
            inv_s += 1.0 / s;
        }
        let (mean, var) = baseline_posterior(z_over_s, inv_s, hp.lambda);
        cluster.m[j] = Normal::new(mean, var.sqrt()).unwrap().sample(rng);
    }
}

/// Probability that a coefficient belongs to the slab rather than the spike,
/// given the current inclusion probability and variances.
pub fn slab_assignment_probability(b: f64, phi: f64, eta: f64, nu0: f64) -> f64 {
    let log_slab = phi.ln() - 0.5 * eta.ln() - 0.5 * b * b / eta;
    let log_spike = (1.0 - phi).ln() - 0.5 * (nu0 * eta).ln() - 0.5 * b * b / (nu0 * eta);
    let d = log_slab - log_spike;
    1.0 / (1.0 + (-d).exp())
}

pub fn update_gamma<R: Rng + ?Sized>(cluster: &mut ClusterParams, hp: &Hyperparams, rng: &mut R) {
    let p = cluster.b.nrows();
    for j in 0..p {
        for k in 0..p {
            if j == k {
                continue;
            }
            let theta =
                slab_assignment_probability(cluster.b[(j, k)], cluster.phi, cluster.eta, hp.nu0);
            cluster.gamma[(j, k)] = u8::from(rng.random::<f64>() < theta);
        }
    }
}

/// Inverse-gamma posterior parameters for the slab variance: spike
/// coefficients are rescaled by 1/sqrt(nu0) so both mixture components
/// contribute on the slab's scale.
fn eta_posterior(b: &DMatrix<f64>, gamma: &DMatrix<u8>, hp: &Hyperparams) -> (f64, f64) {
    let p = b.nrows();
    let mut sum_sq = 0.0;
    for j in 0..p {
        for k in 0..p {
            if j == k {
                continue;
            }
            let v = b[(j, k)];
            sum_sq += if gamma[(j, k)] == 1 {
                v * v
            } else {
                v * v / hp.nu0
            };
        }
    }
    (hp.a_eta + (p * p - p) as f64 / 2.0, hp.b_eta + 0.5 * sum_sq)
}

pub fn update_eta<R: Rng + ?Sized>(cluster: &mut ClusterParams, hp: &Hyperparams, rng: &mut R) {
    let (shape, rate) = eta_posterior(&cluster.b, &cluster.gamma, hp);
    cluster.eta = distributions::sample_inv_gamma(shape, rate, rng);
}

/// Entrywise random-walk update of the coefficient matrix. Each off-diagonal
/// entry gets one proposal; a proposal failing the stability predicate is
/// rejected outright, and otherwise the acceptance ratio is the cluster
/// likelihood ratio raised to 1/T. Returns (proposed, accepted) counts.
///
/// Changing entry (j, k) shifts only residual column j, by delta times
/// expression column k, so the likelihood ratio needs one determinant and
/// one column pass rather than a full evaluation.
pub fn update_b<R: Rng + ?Sized>(
    cluster: &mut ClusterParams,
    data: &Dataset,
    members: &[usize],
    hp: &Hyperparams,
    temperature: f64,
    prop_sd: f64,
    rng: &mut R,
) -> Result<(u64, u64), SamplerError> {
    let p = data.p;
    let mode = DetMode::from_signed(hp.signed_det);
    let y_s = likelihood::member_rows(&data.y, members);
    let mut resid = likelihood::residual_matrix(&y_s, &cluster.b, &cluster.m);
    let mut col_abs: Vec<f64> = (0..p)
        .map(|j| (0..members.len()).map(|i| resid[(i, j)].abs()).sum())
        .collect();
    let weight: Vec<f64> = (0..p).map(|j| (2.0 / cluster.sigma[j]).sqrt()).collect();
    let mut ln_det = likelihood::log_det_i_minus_b(&cluster.b, mode)?;
    let size = members.len() as f64;
    let step = Normal::new(0.0, prop_sd).unwrap();
    let (mut proposed, mut accepted) = (0u64, 0u64);

    for j in 0..p {
        for k in 0..p {
            if j == k {
                continue;
            }
            proposed += 1;
            let delta: f64 = step.sample(rng);
            let u: f64 = rng.random();
            let old = cluster.b[(j, k)];
            cluster.b[(j, k)] = old + delta;
            let stable = matches!(stability::is_stable(&cluster.b, hp.eps_stab), Ok(true));
            if !stable {
                cluster.b[(j, k)] = old;
                continue;
            }
            let ln_det_new = likelihood::log_det_i_minus_b(&cluster.b, mode)?;
            let col_new: f64 = (0..members.len())
                .map(|i| (resid[(i, j)] - delta * y_s[(i, k)]).abs())
                .sum();
            let log_ratio = size * (ln_det_new - ln_det) - weight[j] * (col_new - col_abs[j]);
            // NaN (signed-determinant mode crossing zero) compares false.
            if u.ln() < log_ratio / temperature {
                for i in 0..members.len() {
                    resid[(i, j)] -= delta * y_s[(i, k)];
                }
                col_abs[j] = col_new;
                ln_det = ln_det_new;
                accepted += 1;
            } else {
                cluster.b[(j, k)] = old;
            }
        }
    }
    Ok((proposed, accepted))
}

/// Refresh every latent rescaling from its conditional given the assigned
/// cluster's parameters.
pub fn update_tau<R: Rng + ?Sized>(
    xi: &[usize],
    clusters: &[ClusterParams],
    data: &Dataset,
    tau: &mut DMatrix<f64>,
    rng: &mut R,
) -> Result<(), SamplerError> {
    for i in 0..data.n {
        let c = &clusters[xi[i]];
        let y_i = data.y.row(i).transpose();
        let z = &y_i - &c.b * &y_i;
        for j in 0..data.p {
            let r = z[j] - c.m[j];
            let chi = r * r / c.sigma[j];
            tau[(i, j)] = distributions::sample_gig_half(chi, rng)?;
        }
    }
    Ok(())
}

/// One fresh cluster-parameter candidate from the stability-truncated prior.
/// Indicators and coefficients are redrawn jointly on every attempt, so the
/// accepted tuple is an exact draw from the truncated cascade. The baseline
/// is materialized only if the candidate is selected.
pub(crate) fn draw_aux_params<R: Rng + ?Sized>(
    p: usize,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<ClusterParams, SamplerError> {
    for _ in 0..AUX_TRY_CAP {
        let phi = distributions::sample_beta(hp.a_phi, hp.b_phi, rng);
        let eta = distributions::sample_inv_gamma(hp.a_eta, hp.b_eta, rng);
        let mut gamma = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in 0..p {
                if j != k {
                    gamma[(j, k)] = u8::from(rng.random::<f64>() < phi);
                }
            }
        }
        match distributions::sample_stable_spike_slab(&gamma, eta, hp.nu0, hp.eps_stab, 1, rng) {
            Ok(b) => {
                let sigma = DVector::from_fn(p, |_, _| {
                    distributions::sample_inv_gamma(hp.a_sigma, hp.b_sigma, rng)
                });
                return Ok(ClusterParams {
                    b,
                    m: DVector::zeros(p),
                    sigma,
                    gamma,
                    eta,
                    phi,
                });
            }
            Err(DistError::StabilityRejectionExhausted { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(SamplerError::AuxDrawExhausted { tries: AUX_TRY_CAP })
}

/// Draw the baseline of a newly created singleton cluster from its exact
/// conditional given its one member.
fn impute_singleton_baseline<R: Rng + ?Sized>(
    params: &mut ClusterParams,
    y_i: &DVector<f64>,
    tau_i: &DVector<f64>,
    hp: &Hyperparams,
    rng: &mut R,
) {
    let z = y_i - &params.b * y_i;
    for j in 0..y_i.len() {
        let s = params.sigma[j] * tau_i[j];
        let (mean, var) = baseline_posterior(z[j] / s, 1.0 / s, hp.lambda);
        params.m[j] = Normal::new(mean, var.sqrt()).unwrap().sample(rng);
    }
}

/// Categorical draw from unnormalized log weights. Errors when no weight is
/// finite (max of NaN or +-inf), which signals a degenerate upstream state
/// rather than a samplable distribution.
pub(crate) fn sample_log_categorical<R: Rng + ?Sized>(
    logw: &[f64],
    rng: &mut R,
) -> Result<usize, SamplerError> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(SamplerError::DegenerateWeights);
    }
    let probs: Vec<f64> = logw.iter().map(|w| (w - m).exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (idx, pr) in probs.iter().enumerate() {
        u -= pr;
        if u <= 0.0 {
            return Ok(idx);
        }
    }
    Ok(logw.len() - 1)
}

/// Sequential reassignment of every unit. For each unit in index order: the
/// unit is detached (a cluster it leaves empty is deleted, its parameters
/// seeding the first auxiliary slot), weights over existing clusters use
/// sizes times the two collapsed predictives, auxiliary slots carry weight
/// alpha / m_aux times the new-cluster predictives, and the unit joins the
/// drawn choice. Labels stay contiguous: deletions shift higher labels down,
/// and a chosen auxiliary slot becomes the next fresh label.
#[allow(clippy::too_many_arguments)]
pub fn update_xi(
    xi: &mut [usize],
    clusters: &mut Vec<ClusterParams>,
    stats: &mut Vec<ClusterSuffStats>,
    tau: &DMatrix<f64>,
    data: &Dataset,
    hp: &Hyperparams,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), SamplerError> {
    let t_eff = if hp.temper_xi { temperature } else { 1.0 };
    let (p, q) = (data.p, data.q);
    let zero_q = DVector::zeros(q);
    let zero_qq = DMatrix::zeros(q, q);
    let zero_p = DVector::zeros(p);
    let crp_new = (hp.alpha / hp.m_aux as f64).ln();

    for i in 0..data.n {
        let y_i = data.y.row(i).transpose();
        let x_i = data.x.row(i).transpose();
        let tau_i = tau.row(i).transpose();

        let cur = xi[i];
        stats[cur].remove(data, i);
        let orphan = if stats[cur].count() == 0 {
            stats.remove(cur);
            let params = clusters.remove(cur);
            for lab in xi.iter_mut() {
                if *lab > cur {
                    *lab -= 1;
                }
            }
            Some(params)
        } else {
            None
        };

        let orphan_in_first_slot = orphan.is_some();
        let mut aux: Vec<ClusterParams> = Vec::with_capacity(hp.m_aux);
        if let Some(o) = orphan {
            aux.push(o);
        }
        while aux.len() < hp.m_aux {
            aux.push(draw_aux_params(p, hp, rng)?);
        }

        let l = clusters.len();
        let mut logw = Vec::with_capacity(l + hp.m_aux);
        for (c, s) in clusters.iter().zip(stats.iter()) {
            let sigma_li = DVector::from_fn(p, |j, _| c.sigma[j] * tau_i[j]);
            let ly = likelihood::y_collapsed_predictive_logpdf(
                &y_i,
                s.count(),
                &s.sum_y,
                &c.b,
                &sigma_li,
                hp.lambda,
                hp.scaled_predictive,
                false,
            )?;
            let lx = likelihood::x_collapsed_predictive_logpdf(
                &x_i,
                s.count(),
                &s.sum_x,
                &s.sum_xxt,
                hp.omega,
                false,
            )?;
            logw.push((s.count() as f64).ln() + (ly + lx) / t_eff);
        }
        let lx_new = likelihood::x_collapsed_predictive_logpdf(
            &x_i, 0, &zero_q, &zero_qq, hp.omega, true,
        )?;
        for cand in &aux {
            let sigma_li = DVector::from_fn(p, |j, _| cand.sigma[j] * tau_i[j]);
            let ly = likelihood::y_collapsed_predictive_logpdf(
                &y_i,
                0,
                &zero_p,
                &cand.b,
                &sigma_li,
                hp.lambda,
                hp.scaled_predictive,
                true,
            )?;
            logw.push(crp_new + (ly + lx_new) / t_eff);
        }

        let choice = sample_log_categorical(&logw, rng)?;
        if choice < l {
            xi[i] = choice;
            stats[choice].add(data, i);
        } else {
            let slot = choice - l;
            let mut params = aux.swap_remove(slot);
            // A reused orphan already carries a baseline conditioned on this
            // unit; only fresh candidates need one materialized.
            if !(orphan_in_first_slot && slot == 0) {
                impute_singleton_baseline(&mut params, &y_i, &tau_i, hp, rng);
            }
            xi[i] = l;
            clusters.push(params);
            stats.push(ClusterSuffStats::from_members(data, &[i]));
        }
    }
    Ok(())
}

/// One full sweep over all conditionals, in the fixed update order.
pub fn sweep(state: &mut ChainState, data: &Dataset, hp: &Hyperparams) -> Result<(), SamplerError> {
    let mut stats = ClusterSuffStats::build_all(&state.xi, data);

    for c in state.clusters.iter_mut() {
        update_phi(c, hp, &mut state.rng);
    }
    for (c, s) in state.clusters.iter_mut().zip(stats.iter()) {
        update_sigma(c, data, &s.members, &state.tau, hp, &mut state.rng);
    }
    for (c, s) in state.clusters.iter_mut().zip(stats.iter()) {
        update_m(c, data, &s.members, &state.tau, hp, &mut state.rng);
    }
    for c in state.clusters.iter_mut() {
        update_gamma(c, hp, &mut state.rng);
    }
    for c in state.clusters.iter_mut() {
        update_eta(c, hp, &mut state.rng);
    }
    for (c, s) in state.clusters.iter_mut().zip(stats.iter()) {
        let (prop, acc) = update_b(
            c,
            data,
            &s.members,
            hp,
            state.temperature,
            state.prop_sd,
            &mut state.rng,
        )?;
        state.b_proposed += prop;
        state.b_accepted += acc;
    }
    update_tau(&state.xi, &state.clusters, data, &mut state.tau, &mut state.rng)?;
    update_xi(
        &mut state.xi,
        &mut state.clusters,
        &mut stats,
        &state.tau,
        data,
        hp,
        state.temperature,
        &mut state.rng,
    )
}
