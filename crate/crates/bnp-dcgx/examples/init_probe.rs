// Scratch diagnostic: how does the sampler behave on the smooth benchmark
// when started from singletons instead of the shipped single-cluster init?
// Not part of the deliverable; run manually, then delete.

use bnp_dcgx::model::{chain_rng, ChainState, ClusterParams, Hyperparams, TraceSample};
use bnp_dcgx::predict::{predict_b, Trace};
use bnp_dcgx::sampler::sweep;
use bnp_dcgx::simulate::gen_scenario2;
use bnp_dcgx::{distributions, likelihood};
use nalgebra::{DMatrix, DVector};

fn main() {
    let n = 800;
    let (data, _truth) = gen_scenario2(n, 42).unwrap();
    let hp = Hyperparams::default();
    let mut rng = chain_rng(42, 0);

    let p = data.p;
    let clusters: Vec<ClusterParams> = (0..n)
        .map(|_| {
            let sigma = DVector::from_fn(p, |_, _| {
                distributions::sample_inv_gamma(hp.a_sigma, hp.b_sigma, &mut rng)
            });
            let eta = distributions::sample_inv_gamma(hp.a_eta, hp.b_eta, &mut rng);
            let phi = distributions::sample_beta(hp.a_phi, hp.b_phi, &mut rng);
            ClusterParams::empty_graph(p, sigma, eta, phi)
        })
        .collect();
    let mut state = ChainState {
        xi: (0..n).collect(),
        clusters,
        tau: DMatrix::from_element(n, p, 1.0),
        temperature: 1.0,
        rng: chain_rng(42, 1),
        prop_sd: hp.tau_prop,
        b_proposed: 0,
        b_accepted: 0,
    };

    let mut samples = Vec::new();
    for it in 1..=hp.n_iter {
        sweep(&mut state, &data, &hp).unwrap();
        let k = state.clusters.len();
        if it % 50 == 0 || it <= 5 {
            let ll = likelihood::total_y_loglik(&state, &data, &hp).unwrap();
            eprintln!("sweep {it:4}: K = {k:3}  y-loglik {ll:10.1}");
        }
        if it > hp.n_burn {
            samples.push(TraceSample {
                iteration: it,
                xi: state.xi.clone(),
                clusters: state.clusters.clone(),
                tau: state.tau.clone(),
                loglik: 0.0,
            });
        }
    }
    let trace = Trace { samples };

    let f = |z: f64| ((3.0 * z).exp() - (3.0 * (1.0 - z)).exp())
        / ((3.0 * z).exp() + (3.0 * (1.0 - z)).exp())
        + 0.1;
    let mut rng_pred = chain_rng(42, 1 << 33);
    let mut sq = [0.0f64; 3];
    let mut m = 0;
    println!(" x1    b10_hat  b10_true  b02_hat  b02_true  b21_hat  b21_true");
    for i in 0..10 {
        let x1 = 0.05 + 0.1 * i as f64;
        let x2 = 0.5;
        let x_new = DVector::from_column_slice(&[x1, x2]);
        let pred = predict_b(&x_new, &trace, &data, &hp, &mut rng_pred).unwrap();
        let t10 = f((x1 * x2).sqrt());
        let t02 = f(((x1 * x1 + x2 * x2) / 2.0).sqrt());
        let t21 = f((x1 + x2) / 2.0);
        let bm = &pred.b_mean;
        println!(
            "{x1:5.2}  {:8.3} {t10:8.3}  {:8.3} {t02:8.3}  {:8.3} {t21:8.3}",
            bm[(1, 0)],
            bm[(0, 2)],
            bm[(2, 1)]
        );
        sq[0] += (bm[(1, 0)] - t10) * (bm[(1, 0)] - t10);
        sq[1] += (bm[(0, 2)] - t02) * (bm[(0, 2)] - t02);
        sq[2] += (bm[(2, 1)] - t21) * (bm[(2, 1)] - t21);
        m += 1;
    }
    for (name, s) in ["b10", "b02", "b21"].iter().zip(sq) {
        println!("slice RMSE {name}: {:.3}", (s / m as f64).sqrt());
    }
}
