//! Closed-form KL terms of a pair posterior against the homophilic priors.
//!
//! Run with `cargo run --example kl_divergence`.

use vhe::latent::{cholesky_factor, kl_bernoulli, kl_linked, kl_mixture, kl_unlinked, PairPosterior};

fn main() -> vhe::Result<()> {
    let lambda = 0.99;
    let pi0 = 0.02;

    let at_prior = PairPosterior::standard(2, lambda);
    println!("KL(q1 || p1) at the prior itself: {:e}", kl_linked(&at_prior, lambda));

    let post = PairPosterior {
        mu_i: vec![0.3, -0.2],
        mu_j: vec![0.25, -0.1],
        logvar_i: vec![-0.5, -0.3],
        logvar_j: vec![-0.4, -0.6],
        gamma: vec![0.9, 0.7],
        mu0_i: vec![0.1, 0.4],
        mu0_j: vec![-0.3, 0.0],
        logvar0_i: vec![-0.2, 0.1],
        logvar0_j: vec![0.0, -0.1],
        pi: Some(0.3),
    };
    post.validate()?;

    for (k, block) in cholesky_factor(&post.sigma_i(), &post.sigma_j(), &post.gamma)?.iter().enumerate() {
        println!("dim {k}: L = [[{:.4}, 0], [{:.4}, {:.4}]]", block.l11, block.l21, block.l22);
    }

    let linked = kl_linked(&post, lambda);
    let unlinked = kl_unlinked(&post);
    let bern = kl_bernoulli(0.3, pi0);
    println!("linked {linked:.6}  unlinked {unlinked:.6}  bernoulli {bern:.6}");
    println!("mixture {:.6}", kl_mixture(&post, lambda, pi0)?);
    println!("0.3*linked + 0.7*unlinked + bernoulli = {:.6}", 0.3 * linked + 0.7 * unlinked + bern);

    for l in [0.0, 0.5, 0.9, 0.99] {
        println!("lambda {l:<4}: KL(q1 || p1) = {:.4}", kl_linked(&post, l));
    }
    Ok(())
}
