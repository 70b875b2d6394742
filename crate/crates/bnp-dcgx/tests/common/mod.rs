//! Shared numerical oracles for the integration suites: composite Simpson
//! quadrature (linear and log axis), independent marginal-likelihood
//! integrals for the cluster model, and the exhaustive partition posterior
//! at three units.
//!
//! Everything here derives its answers from the model densities directly,
//! never from the production likelihood code, so agreement is evidence
//! rather than tautology.

#![allow(dead_code)]

use bnp_dcgx::model::Hyperparams;

/// Composite Simpson rule on [a, b] with `intervals` subintervals (rounded
/// up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    assert!(b >= a);
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Integral of f over (0, inf) via the substitution s = exp(u) on
/// [lo_u, hi_u]: the integrand picks up a factor exp(u).
pub fn simpson_log_axis<F: Fn(f64) -> f64>(f: F, lo_u: f64, hi_u: f64, intervals: usize) -> f64 {
    simpson(|u| f(u.exp()) * u.exp(), lo_u, hi_u, intervals)
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

/// Centered double-exponential density with variance-style scale: the noise
/// model's per-coordinate log density.
pub fn laplace_logpdf(r: f64, sigma: f64) -> f64 {
    -0.5 * (2.0 * sigma).ln() - (2.0 / sigma).sqrt() * r.abs()
}

/// Inverse-gamma log density with pdf proportional to
/// s^(-shape-1) exp(-rate / s).
pub fn inv_gamma_logpdf(s: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * s.ln() - rate / s
}

/// Lanczos log-gamma, accurate to ~1e-13 for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Marginal log likelihood of one cluster's responses at a single gene:
/// the double-exponential likelihood with the shared baseline and the noise
/// scale integrated against their priors. The baseline axis is split at the
/// data points so each Simpson panel is smooth.
pub fn y_cluster_marginal_quadrature(ys: &[f64], lambda: f64, a_sigma: f64, b_sigma: f64) -> f64 {
    let inner = |m: f64| {
        simpson_log_axis(
            |sigma| {
                let mut lp = inv_gamma_logpdf(sigma, a_sigma, b_sigma);
                for &y in ys {
                    lp += laplace_logpdf(y - m, sigma);
                }
                lp.exp()
            },
            -16.0,
            8.0,
            700,
        )
    };
    let mut cuts: Vec<f64> = ys.to_vec();
    cuts.sort_by(f64::total_cmp);
    let lo = (-30.0_f64).min(cuts[0] - 5.0);
    let hi = 30.0_f64.max(cuts[cuts.len() - 1] + 5.0);
    cuts.insert(0, lo);
    cuts.push(hi);
    cuts.dedup();
    let prior_var = lambda;
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        total += simpson(
            |m| normal_logpdf(m, 0.0, prior_var).exp() * inner(m),
            pair[0],
            pair[1],
            320,
        );
    }
    total.ln()
}

/// Marginal log likelihood of one cluster's scalar coordinates under the
/// conjugate normal model: fully numeric double integral over the centroid
/// and the dispersion (prior: dispersion ~ inverse-gamma(1/2, 1/2), centroid
/// ~ normal(0, omega * dispersion)). The centroid panel adapts to the
/// conditional posterior so narrow integrands stay resolved.
pub fn x_cluster_marginal_quadrature(xs: &[f64], omega: f64) -> f64 {
    let n = xs.len() as f64;
    let sum: f64 = xs.iter().sum();
    simpson_log_axis(
        |v| {
            let center = sum / (n + 1.0 / omega);
            let sd = (v / (n + 1.0 / omega)).sqrt();
            let inner = simpson(
                |mu| {
                    let mut lp = normal_logpdf(mu, 0.0, omega * v);
                    for &x in xs {
                        lp += normal_logpdf(x, mu, v);
                    }
                    lp.exp()
                },
                center - 12.0 * sd,
                center + 12.0 * sd,
                320,
            );
            inv_gamma_logpdf(v, 0.5, 0.5).exp() * inner
        },
        -16.0,
        16.0,
        900,
    )
    .ln()
}

/// The five partitions of three units, as sorted member lists.
pub const PARTITIONS3: [&[&[usize]]; 5] = [
    &[&[0, 1, 2]],
    &[&[0], &[1, 2]],
    &[&[1], &[0, 2]],
    &[&[2], &[0, 1]],
    &[&[0], &[1], &[2]],
];

/// Exact posterior over the five partitions of three (response, coordinate)
/// pairs in one dimension: partition weight times the product over clusters
/// of both marginal likelihoods, normalized.
pub fn partition_posterior3(y: &[f64; 3], x: &[f64; 3], hp: &Hyperparams) -> [f64; 5] {
    let mut logw = [0.0_f64; 5];
    for (k, partition) in PARTITIONS3.iter().enumerate() {
        let mut lp = partition.len() as f64 * hp.alpha.ln();
        for cluster in *partition {
            lp += ln_gamma(cluster.len() as f64);
            let ys: Vec<f64> = cluster.iter().map(|&i| y[i]).collect();
            let xs: Vec<f64> = cluster.iter().map(|&i| x[i]).collect();
            lp += y_cluster_marginal_quadrature(&ys, hp.lambda, hp.a_sigma, hp.b_sigma);
            lp += x_cluster_marginal_quadrature(&xs, hp.omega);
        }
        logw[k] = lp;
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w = [0.0_f64; 5];
    let mut total = 0.0;
    for k in 0..5 {
        w[k] = (logw[k] - max).exp();
        total += w[k];
    }
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Collapse partition probabilities to cluster-count probabilities
/// (counts 1, 2, 3).
pub fn cluster_count_distribution(partition_probs: &[f64; 5]) -> [f64; 3] {
    [
        partition_probs[0],
        partition_probs[1] + partition_probs[2] + partition_probs[3],
        partition_probs[4],
    ]
}

/// One pass/fail line per acceptance criterion; panics on failure after
/// printing so the verdict is visible either way.
pub fn report(num: u8, name: &str, pass: bool, details: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {num:02} {name}: {verdict} - {details}");
    assert!(pass, "ACCEPTANCE {num:02} {name}: {verdict} - {details}");
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        // Simpson is exact through cubics.
        let val = simpson(|t| t * t * t - 2.0 * t + 1.0, -1.0, 3.0, 2);
        let exact = |t: f64| t.powi(4) / 4.0 - t * t + t;
        assert!((val - (exact(3.0) - exact(-1.0))).abs() < 1e-12);
    }

    #[test]
    fn log_axis_recovers_a_gamma_integral() {
        // integral of s^2 exp(-s) over (0, inf) = Gamma(3) = 2.
        let val = simpson_log_axis(|s| s * s * (-s).exp(), -30.0, 8.0, 1200);
        assert!((val - 2.0).abs() < 1e-10, "got {val}");
    }

    #[test]
    fn ln_gamma_matches_factorials_and_half() {
        assert!((ln_gamma(5.0) - 24.0_f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn densities_normalize() {
        let ig = simpson_log_axis(|s| inv_gamma_logpdf(s, 2.0, 2.0).exp(), -16.0, 14.0, 1400);
        assert!((ig - 1.0).abs() < 1e-9, "inverse gamma mass {ig}");
        let half = simpson_log_axis(|s| inv_gamma_logpdf(s, 0.5, 0.5).exp(), -16.0, 20.0, 1600);
        assert!((half - 1.0).abs() < 1e-4, "heavy-tailed mass {half}");
        // Split at the kink so each Simpson panel is smooth; the step must
        // satisfy h^4/180 < 1e-10 for a unit-curvature exponential.
        let lap = simpson(|r| laplace_logpdf(r, 2.0).exp(), -60.0, 0.0, 8000)
            + simpson(|r| laplace_logpdf(r, 2.0).exp(), 0.0, 60.0, 8000);
        assert!((lap - 1.0).abs() < 1e-10, "laplace mass {lap}");
    }
}
