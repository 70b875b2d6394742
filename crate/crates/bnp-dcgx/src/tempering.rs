//! Parallel tempering around the single-chain kernel: W replicas at fixed
//! temperatures sweep independently (in parallel), adjacent replicas
//! periodically propose to exchange their sampled state, and the
//! unit-temperature replica is the one recorded.
//!
//! Exchanges move only the sampled state (assignments, cluster parameters,
//! rescalings). Temperature, generator, and proposal-scale bookkeeping stay
//! attached to the replica slot, so a chain's randomness never depends on
//! the swap history and a run is reproducible for any thread count.

use rayon::prelude::*;

use crate::likelihood::{self, ClusterSuffStats, DetMode};
use crate::model::{
    chain_rng, init_state, ChainState, Dataset, Hyperparams, SwapStats, Trace, TraceSample,
};
use crate::sampler::{self, SamplerError};
use rand::Rng;

/// Adjacent swap pairs for one exchange block, alternating parity: even
/// blocks pair (0,1), (2,3), ...; odd blocks pair (1,2), (3,4), ...
pub fn swap_pairs(w: usize, block: usize) -> Vec<(usize, usize)> {
    let start = block % 2;
    (start..w.saturating_sub(1))
        .step_by(2)
        .map(|i| (i, i + 1))
        .collect()
}

/// Observed-data log likelihood of a full state: sum of cluster marginal
/// log likelihoods under the current partition.
pub fn total_y_loglik(
    state: &ChainState,
    data: &Dataset,
    mode: DetMode,
) -> Result<f64, SamplerError> {
    let stats = ClusterSuffStats::build_all(&state.xi, data);
    let mut total = 0.0;
    for (c, s) in state.clusters.iter().zip(&stats) {
        let y_s = likelihood::member_rows(&data.y, &s.members);
        total += likelihood::sem_marginal_loglik(&y_s, &c.b, &c.m, &c.sigma, mode)?;
    }
    Ok(total)
}

/// Collapsed coordinate log marginal of a full state: per-cluster chain-rule
/// products over members in ascending order.
pub fn total_x_loglik(state: &ChainState, data: &Dataset, omega: f64) -> Result<f64, SamplerError> {
    let stats = ClusterSuffStats::build_all(&state.xi, data);
    let mut total = 0.0;
    for s in &stats {
        total += likelihood::x_cluster_marginal_loglik(data, &s.members, omega)?;
    }
    Ok(total)
}

/// Log acceptance ratio for exchanging the states of two replicas:
/// (1/T_b - 1/T_a) times the difference of their data log likelihoods.
/// Symmetric in its arguments, and exactly zero for identical states.
pub fn swap_log_ratio(
    a: &ChainState,
    b: &ChainState,
    data: &Dataset,
    mode: DetMode,
    include_x: bool,
    omega: f64,
) -> Result<f64, SamplerError> {
    let mut la = total_y_loglik(a, data, mode)?;
    let mut lb = total_y_loglik(b, data, mode)?;
    if include_x {
        la += total_x_loglik(a, data, omega)?;
        lb += total_x_loglik(b, data, omega)?;
    }
    Ok((1.0 / b.temperature - 1.0 / a.temperature) * (la - lb))
}

/// Exchange the sampled state between two replica slots.
fn swap_states(a: &mut ChainState, b: &mut ChainState) {
    std::mem::swap(&mut a.xi, &mut b.xi);
    std::mem::swap(&mut a.clusters, &mut b.clusters);
    std::mem::swap(&mut a.tau, &mut b.tau);
}

/// Thread count for the replica pool: the configured cap, bounded by the
/// number of replicas and at least one.
fn pool_threads(w: usize, requested: Option<usize>) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |v| v.get());
    requested.unwrap_or(available).min(w).max(1)
}

/// Run the full tempered sampler and return the retained trace.
///
/// Replica i draws from generator stream i (hottest first, unit temperature
/// last); swap decisions draw from stream W. With a single unit-temperature
/// replica the run is bit-identical to sweeping one chain directly.
pub fn run_tempered(
    data: &Dataset,
    hp: &Hyperparams,
    threads: Option<usize>,
    mut on_iteration: impl FnMut(usize),
) -> Result<Trace, SamplerError> {
    hp.validate()
        .map_err(|e| SamplerError::Config(e.to_string()))?;
    let mode = DetMode::from_signed(hp.signed_det);
    let temps = hp.sorted_temperatures();
    let w = temps.len();
    let mut chains: Vec<ChainState> = temps
        .iter()
        .enumerate()
        .map(|(i, &t)| init_state(data, hp, t, chain_rng(hp.seed, i as u64)))
        .collect();
    let mut swap_rng = chain_rng(hp.seed, w as u64);
    let mut swap_stats: Vec<SwapStats> = (0..w.saturating_sub(1))
        .map(|i| SwapStats {
            pair: (i, i + 1),
            proposed: 0,
            accepted: 0,
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pool_threads(w, threads))
        .build()
        .map_err(|e| SamplerError::Config(format!("thread pool: {e}")))?;

    let cold = w - 1;
    let mut samples = Vec::with_capacity(hp.n_iter - hp.n_burn);
    let mut adapt_marks: Vec<(u64, u64)> = vec![(0, 0); w];

    for iter in 1..=hp.n_iter {
        pool.install(|| {
            chains
                .par_iter_mut()
                .try_for_each(|c| sampler::sweep(c, data, hp))
        })?;

        if hp.adapt_tau_prop && iter <= hp.n_burn {
            // Robbins-Monro on the log proposal scale, targeting 0.3
            // acceptance; frozen after burn-in so retained samples come from
            // a fixed kernel.
            let step = (iter as f64).powf(-0.6);
            for (c, mark) in chains.iter_mut().zip(adapt_marks.iter_mut()) {
                let proposed = c.b_proposed - mark.0;
                let accepted = c.b_accepted - mark.1;
                *mark = (c.b_proposed, c.b_accepted);
                if proposed > 0 {
                    let rate = accepted as f64 / proposed as f64;
                    c.prop_sd = (c.prop_sd.ln() + step * (rate - 0.3))
                        .exp()
                        .clamp(1e-4, 10.0);
                }
            }
        }

        if iter % hp.swap_interval == 0 {
            let block = iter / hp.swap_interval;
            for (lo, hi) in swap_pairs(w, block) {
                let r = swap_log_ratio(
                    &chains[lo],
                    &chains[hi],
                    data,
                    mode,
                    hp.include_x_in_swap,
                    hp.omega,
                )?;
                let u: f64 = swap_rng.random();
                swap_stats[lo].proposed += 1;
                if r >= 0.0 || u.ln() < r {
                    let (head, tail) = chains.split_at_mut(hi);
                    swap_states(&mut head[lo], &mut tail[0]);
                    swap_stats[lo].accepted += 1;
                }
            }
        }

        if iter > hp.n_burn {
            let c = &chains[cold];
            samples.push(TraceSample {
                iteration: iter,
                xi: c.xi.clone(),
                clusters: c.clusters.clone(),
                tau: c.tau.clone(),
                loglik: total_y_loglik(c, data, mode)?,
            });
        }
        on_iteration(iter);
    }

    Ok(Trace {
        samples,
        hyperparams: hp.clone(),
        swap_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn toy_dataset(n: usize) -> Dataset {
        let y = DMatrix::from_fn(n, 2, |i, j| {
            ((i * 3 + j) % 5) as f64 * 0.4 - 0.8 + if i < n / 2 { 0.5 } else { -0.5 }
        });
        let x = DMatrix::from_fn(n, 1, |i, _| if i < n / 2 { -1.0 } else { 1.0 });
        Dataset::from_parts(y, x, None)
    }

    fn quick_hp(n_iter: usize, n_burn: usize, temps: Vec<f64>) -> Hyperparams {
        Hyperparams {
            n_iter,
            n_burn,
            temperatures: temps,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn swap_pairs_alternate_parity() {
        assert_eq!(swap_pairs(4, 2), vec![(0, 1), (2, 3)]);
        assert_eq!(swap_pairs(4, 3), vec![(1, 2)]);
        assert_eq!(swap_pairs(2, 1), Vec::<(usize, usize)>::new());
        assert_eq!(swap_pairs(2, 2), vec![(0, 1)]);
        assert_eq!(swap_pairs(1, 2), Vec::<(usize, usize)>::new());
    }

    #[test]
    fn identical_states_swap_with_log_ratio_exactly_zero() {
        let data = toy_dataset(6);
        let hp = Hyperparams::default();
        let mut a = init_state(&data, &hp, 2.0, chain_rng(1, 0));
        let mut b = init_state(&data, &hp, 1.0, chain_rng(1, 0));
        for _ in 0..5 {
            sampler::sweep(&mut a, &data, &hp).unwrap();
        }
        b.xi = a.xi.clone();
        b.clusters = a.clusters.clone();
        b.tau = a.tau.clone();
        let r = swap_log_ratio(&a, &b, &data, DetMode::AbsoluteValue, false, hp.omega).unwrap();
        assert_eq!(r, 0.0);
        let r_x = swap_log_ratio(&a, &b, &data, DetMode::AbsoluteValue, true, hp.omega).unwrap();
        assert_eq!(r_x, 0.0);
    }

    #[test]
    fn swap_ratio_is_symmetric_in_its_arguments() {
        let data = toy_dataset(6);
        let hp = Hyperparams::default();
        let mut a = init_state(&data, &hp, 2.5, chain_rng(2, 0));
        let mut b = init_state(&data, &hp, 1.0, chain_rng(2, 1));
        for _ in 0..4 {
            sampler::sweep(&mut a, &data, &hp).unwrap();
            sampler::sweep(&mut b, &data, &hp).unwrap();
        }
        let ab = swap_log_ratio(&a, &b, &data, DetMode::AbsoluteValue, false, hp.omega).unwrap();
        let ba = swap_log_ratio(&b, &a, &data, DetMode::AbsoluteValue, false, hp.omega).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn single_replica_run_matches_plain_sweeping_bit_for_bit() {
        let data = toy_dataset(8);
        let mut hp = quick_hp(20, 5, vec![1.0]);
        hp.seed = 42;
        let trace = run_tempered(&data, &hp, Some(1), |_| {}).unwrap();

        let mut state = init_state(&data, &hp, 1.0, chain_rng(42, 0));
        let mut manual: Vec<(usize, Vec<usize>)> = Vec::new();
        for iter in 1..=hp.n_iter {
            sampler::sweep(&mut state, &data, &hp).unwrap();
            if iter > hp.n_burn {
                manual.push((iter, state.xi.clone()));
            }
        }
        assert_eq!(trace.samples.len(), manual.len());
        for (s, (iter, xi)) in trace.samples.iter().zip(&manual) {
            assert_eq!(s.iteration, *iter);
            assert_eq!(&s.xi, xi);
        }
        let last = trace.samples.last().unwrap();
        for (ct, cm) in last.clusters.iter().zip(&state.clusters) {
            assert_eq!(ct.b, cm.b);
            assert_eq!(ct.m, cm.m);
            assert_eq!(ct.sigma, cm.sigma);
        }
        assert_eq!(last.tau, state.tau);
    }

    #[test]
    fn runs_are_identical_across_thread_counts() {
        let data = toy_dataset(8);
        let mut hp = quick_hp(30, 10, vec![2.0, 1.5, 1.0]);
        hp.seed = 7;
        let t1 = run_tempered(&data, &hp, Some(1), |_| {}).unwrap();
        let t4 = run_tempered(&data, &hp, Some(4), |_| {}).unwrap();
        assert_eq!(t1.samples.len(), t4.samples.len());
        for (a, b) in t1.samples.iter().zip(&t4.samples) {
            assert_eq!(a.xi, b.xi);
            assert_eq!(a.loglik, b.loglik);
            assert_eq!(a.tau, b.tau);
            assert_eq!(a.clusters.len(), b.clusters.len());
            for (ca, cb) in a.clusters.iter().zip(&b.clusters) {
                assert_eq!(ca.b, cb.b);
            }
        }
        assert_eq!(t1.swap_stats, t4.swap_stats);
    }

    #[test]
    fn trace_covers_exactly_the_post_burn_iterations() {
        let data = toy_dataset(6);
        let mut hp = quick_hp(25, 10, vec![1.5, 1.0]);
        hp.seed = 3;
        let mut seen = Vec::new();
        let trace = run_tempered(&data, &hp, Some(2), |i| seen.push(i)).unwrap();
        assert_eq!(trace.samples.len(), 15);
        let iters: Vec<usize> = trace.samples.iter().map(|s| s.iteration).collect();
        assert_eq!(iters, (11..=25).collect::<Vec<_>>());
        assert_eq!(seen, (1..=25).collect::<Vec<_>>());
        // Two replicas, interval 10: blocks 1 (odd, no pair) and 2 (even,
        // one pair).
        assert_eq!(trace.swap_stats.len(), 1);
        assert_eq!(trace.swap_stats[0].proposed, 1);
    }

    #[test]
    fn swap_moves_state_but_not_replica_bookkeeping() {
        let data = toy_dataset(6);
        let hp = Hyperparams::default();
        let mut a = init_state(&data, &hp, 2.0, chain_rng(5, 0));
        let mut b = init_state(&data, &hp, 1.0, chain_rng(5, 1));
        let a_xi_tag = {
            let mut s = a.clone();
            s.xi[0] = 9;
            s.xi
        };
        a.xi = a_xi_tag.clone();
        let b_rng_before = b.rng.clone();
        swap_states(&mut a, &mut b);
        assert_eq!(b.xi, a_xi_tag);
        assert_eq!(a.temperature, 2.0);
        assert_eq!(b.temperature, 1.0);
        let mut b_rng_after = b.rng.clone();
        let mut b_rng_want = b_rng_before.clone();
        use rand::RngCore;
        assert_eq!(b_rng_after.next_u64(), b_rng_want.next_u64());
    }
}
