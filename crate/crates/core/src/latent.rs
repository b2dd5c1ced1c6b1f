//! Homophilic priors, the correlated pair posterior, reparameterized sampling and
//! closed-form KL divergences.
//!
//! Every quantity exists twice: as plain `f64` functions on [`PairPosterior`] and as
//! differentiable graph builders on [`PosteriorNodes`]. The two are kept numerically
//! identical so either can serve as an oracle for the other.

use crate::autodiff::{Graph, NodeId, ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Clamp margin for γ and π.
pub const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomophilicPrior {
    pub d: usize,
    pub lambda: f64,
    pub pi0: f64,
}

impl HomophilicPrior {
    pub fn new(d: usize, lambda: f64, pi0: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} not in [0, 1)")));
        }
        if !(pi0 > 0.0 && pi0 < 1.0) {
            return Err(Error::InvalidArgument(format!("pi0 {pi0} not in (0, 1)")));
        }
        Ok(HomophilicPrior { d, lambda, pi0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Linked,
    Unlinked,
}

/// Posterior over a pair's latent codes. The `*0_*` fields parameterize the
/// unlinked branch; `pi` is the edge probability for pairs with unknown edge state.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPosterior {
    pub mu_i: Vec<f64>,
    pub mu_j: Vec<f64>,
    pub logvar_i: Vec<f64>,
    pub logvar_j: Vec<f64>,
    pub gamma: Vec<f64>,
    pub mu0_i: Vec<f64>,
    pub mu0_j: Vec<f64>,
    pub logvar0_i: Vec<f64>,
    pub logvar0_j: Vec<f64>,
    pub pi: Option<f64>,
}

/// Per-dimension lower-triangular factor `[[l11, 0], [l21, l22]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyBlock {
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl CholeskyBlock {
    /// `L Lᵀ` as `[[a, b], [b, c]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let b = self.l11 * self.l21;
        [
            [self.l11 * self.l11, b],
            [b, self.l21 * self.l21 + self.l22 * self.l22],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub z_i: Vec<f64>,
    pub z_j: Vec<f64>,
}

pub fn cholesky_factor(sigma_i: &[f64], sigma_j: &[f64], gamma: &[f64]) -> Result<Vec<CholeskyBlock>> {
    if sigma_i.len() != gamma.len() || sigma_j.len() != gamma.len() {
        return Err(Error::shape("cholesky_factor", &[&[sigma_i.len()], &[sigma_j.len()], &[gamma.len()]]));
    }
    sigma_i
        .iter()
        .zip(sigma_j)
        .zip(gamma)
        .map(|((&si, &sj), &g)| {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::invalid("cholesky_factor", format!("gamma {g} not in [0, 1)")));
            }
            if !(si > 0.0 && sj > 0.0) {
                return Err(Error::invalid("cholesky_factor", "sigma must be positive"));
            }
            Ok(CholeskyBlock {
                l11: si,
                l21: g * sj,
                l22: (1.0 - g * g).sqrt() * sj,
            })
        })
        .collect()
}

impl PairPosterior {
    /// A posterior with every mean 0, every variance 1 and the given γ.
    pub fn standard(d: usize, gamma: f64) -> Self {
        PairPosterior {
            mu_i: vec![0.0; d],
            mu_j: vec![0.0; d],
            logvar_i: vec![0.0; d],
            logvar_j: vec![0.0; d],
            gamma: vec![gamma; d],
            mu0_i: vec![0.0; d],
            mu0_j: vec![0.0; d],
            logvar0_i: vec![0.0; d],
            logvar0_j: vec![0.0; d],
            pi: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu_i.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let fields = [
            &self.mu_j,
            &self.logvar_i,
            &self.logvar_j,
            &self.gamma,
            &self.mu0_i,
            &self.mu0_j,
            &self.logvar0_i,
            &self.logvar0_j,
        ];
        if fields.iter().any(|f| f.len() != d) {
            return Err(Error::invalid("posterior", "field lengths differ"));
        }
        if self.gamma.iter().any(|g| !(0.0..1.0).contains(g)) {
            return Err(Error::invalid("posterior", "gamma outside [0, 1)"));
        }
        if let Some(p) = self.pi {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid("posterior", format!("pi {p} not in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn sigma_i(&self) -> Vec<f64> {
        self.logvar_i.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    pub fn sigma_j(&self) -> Vec<f64> {
        self.logvar_j.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    /// Analytic 2×2 covariance of `(z_i[k], z_j[k])` under `branch`.
    pub fn covariance(&self, k: usize, branch: Branch) -> [[f64; 2]; 2] {
        match branch {
            Branch::Linked => {
                let si = (0.5 * self.logvar_i[k]).exp();
                let sj = (0.5 * self.logvar_j[k]).exp();
                let c = self.gamma[k] * si * sj;
                [[si * si, c], [c, sj * sj]]
            }
            Branch::Unlinked => [[self.logvar0_i[k].exp(), 0.0], [0.0, self.logvar0_j[k].exp()]],
        }
    }

    /// Mean of `z_i` under the edge-state mixture: `π μ_i + (1 − π) μ̂_i`.
    pub fn mixture_mean_i(&self) -> Result<Vec<f64>> {
        let pi = self.require_pi("mixture_mean_i")?;
        Ok(self
            .mu_i
            .iter()
            .zip(&self.mu0_i)
            .map(|(a, b)| pi * a + (1.0 - pi) * b)
            .collect())
    }

    fn require_pi(&self, op: &'static str) -> Result<f64> {
        self.pi
            .ok_or_else(|| Error::invalid(op, "posterior has no edge probability"))
    }

    /// Parameter store holding every field under its own name (`pi` as a 1×1 tensor),
    /// for differentiating the KL terms directly with respect to posterior parameters.
    pub fn to_store(&self) -> ParameterStore {
        let mut s = ParameterStore::new();
        let fields: [(&str, &Vec<f64>); 9] = [
            ("mu_i", &self.mu_i),
            ("mu_j", &self.mu_j),
            ("logvar_i", &self.logvar_i),
            ("logvar_j", &self.logvar_j),
            ("gamma", &self.gamma),
            ("mu0_i", &self.mu0_i),
            ("mu0_j", &self.mu0_j),
            ("logvar0_i", &self.logvar0_i),
            ("logvar0_j", &self.logvar0_j),
        ];
        for (name, v) in fields {
            s.insert(name, Tensor::column(v.clone()));
        }
        if let Some(p) = self.pi {
            s.insert("pi", Tensor::column(vec![p]));
        }
        s
    }
}

/// Reparameterized draw. `eps` holds `2d` standard normal values: `ε₁` then `ε₂`.
pub fn sample_pair(post: &PairPosterior, branch: Branch, eps: &[f64]) -> Result<LatentPair> {
    let d = post.dim();
    if eps.len() != 2 * d {
        return Err(Error::shape("sample_pair", &[&[eps.len()], &[2 * d]]));
    }
    let (e1, e2) = eps.split_at(d);
    let (z_i, z_j) = match branch {
        Branch::Linked => {
            let si = post.sigma_i();
            let sj = post.sigma_j();
            let z_i = (0..d).map(|k| post.mu_i[k] + si[k] * e1[k]).collect();
            let z_j = (0..d)
                .map(|k| {
                    let g = post.gamma[k];
                    post.mu_j[k] + g * sj[k] * e1[k] + (1.0 - g * g).sqrt() * sj[k] * e2[k]
                })
                .collect();
            (z_i, z_j)
        }
        Branch::Unlinked => {
            let z_i = (0..d)
                .map(|k| post.mu0_i[k] + (0.5 * post.logvar0_i[k]).exp() * e1[k])
                .collect();
            let z_j = (0..d)
                .map(|k| post.mu0_j[k] + (0.5 * post.logvar0_j[k]).exp() * e2[k])
                .collect();
            (z_i, z_j)
        }
    };
    Ok(LatentPair { z_i, z_j })
}

fn kl_correlated(
    mu_i: &[f64],
    mu_j: &[f64],
    logvar_i: &[f64],
    logvar_j: &[f64],
    gamma: &[f64],
    lambda: f64,
) -> f64 {
    let one_m_l2 = 1.0 - lambda * lambda;
    let mut total = 0.0;
    for k in 0..mu_i.len() {
        let (vi, vj) = (logvar_i[k].exp(), logvar_j[k].exp());
        let (si, sj) = ((0.5 * logvar_i[k]).exp(), (0.5 * logvar_j[k]).exp());
        let g = gamma[k];
        total += one_m_l2.ln() - (1.0 - g * g).ln() - logvar_i[k] - logvar_j[k] - 2.0
            + (vi + vj - 2.0 * lambda * g * si * sj) / one_m_l2
            + (mu_i[k] * mu_i[k] + mu_j[k] * mu_j[k] - 2.0 * lambda * mu_i[k] * mu_j[k]) / one_m_l2;
    }
    0.5 * total
}

/// KL(q₁ ‖ p₁) for the linked branch under homophily factor `lambda`.
pub fn kl_linked(post: &PairPosterior, lambda: f64) -> f64 {
    kl_correlated(&post.mu_i, &post.mu_j, &post.logvar_i, &post.logvar_j, &post.gamma, lambda)
}

/// KL(q₀ ‖ p₀): two independent diagonal Gaussians against the standard normal.
pub fn kl_unlinked(post: &PairPosterior) -> f64 {
    let diag = |mu: &[f64], lv: &[f64]| -> f64 {
        mu.iter()
            .zip(lv)
            .map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l))
            .sum()
    };
    diag(&post.mu0_i, &post.logvar0_i) + diag(&post.mu0_j, &post.logvar0_j)
}

/// KL between Bernoulli(π) and Bernoulli(π₀), both clamped to `[EPS, 1 − EPS]`.
pub fn kl_bernoulli(pi: f64, pi0: f64) -> f64 {
    let p = pi.clamp(EPS, 1.0 - EPS);
    let q = pi0.clamp(EPS, 1.0 - EPS);
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// `π KL(q₁‖p₁) + (1 − π) KL(q₀‖p₀) + KL(Bern(π) ‖ Bern(π₀))`.
pub fn kl_mixture(post: &PairPosterior, lambda: f64, pi0: f64) -> Result<f64> {
    let pi = post.require_pi("kl_mixture")?;
    Ok(pi * kl_linked(post, lambda) + (1.0 - pi) * kl_unlinked(post) + kl_bernoulli(pi, pi0))
}

/// Graph nodes for every posterior field; each is a `[d, 1]` column (`pi` is `[1, 1]`).
#[derive(Debug, Clone, Copy)]
pub struct PosteriorNodes {
    pub mu_i: NodeId,
    pub mu_j: NodeId,
    pub logvar_i: NodeId,
    pub logvar_j: NodeId,
    pub gamma: NodeId,
    pub mu0_i: NodeId,
    pub mu0_j: NodeId,
    pub logvar0_i: NodeId,
    pub logvar0_j: NodeId,
    pub pi: Option<NodeId>,
}

impl PosteriorNodes {
    /// Bind to parameters named as in [`PairPosterior::to_store`].
    pub fn from_store(g: &mut Graph, store: &ParameterStore) -> Result<Self> {
        Ok(PosteriorNodes {
            mu_i: g.param_from(store, "mu_i")?,
            mu_j: g.param_from(store, "mu_j")?,
            logvar_i: g.param_from(store, "logvar_i")?,
            logvar_j: g.param_from(store, "logvar_j")?,
            gamma: g.param_from(store, "gamma")?,
            mu0_i: g.param_from(store, "mu0_i")?,
            mu0_j: g.param_from(store, "mu0_j")?,
            logvar0_i: g.param_from(store, "logvar0_i")?,
            logvar0_j: g.param_from(store, "logvar0_j")?,
            pi: if store.contains("pi") {
                Some(g.param_from(store, "pi")?)
            } else {
                None
            },
        })
    }

    pub fn values(&self, g: &Graph) -> PairPosterior {
        let v = |id: NodeId| g.value(id).data().to_vec();
        PairPosterior {
            mu_i: v(self.mu_i),
            mu_j: v(self.mu_j),
            logvar_i: v(self.logvar_i),
            logvar_j: v(self.logvar_j),
            gamma: v(self.gamma),
            mu0_i: v(self.mu0_i),
            mu0_j: v(self.mu0_j),
            logvar0_i: v(self.logvar0_i),
            logvar0_j: v(self.logvar0_j),
            pi: self.pi.map(|p| g.value(p).data()[0]),
        }
    }

    /// Reparameterized sample; `eps1`, `eps2` are `[d, 1]` noise constants.
    pub fn sample(&self, g: &mut Graph, branch: Branch, eps1: NodeId, eps2: NodeId) -> Result<(NodeId, NodeId)> {
        match branch {
            Branch::Linked => {
                let si = std_dev(g, self.logvar_i)?;
                let sj = std_dev(g, self.logvar_j)?;
                let noise_i = g.mul(si, eps1)?;
                let z_i = g.add(self.mu_i, noise_i)?;
                let g_sj = g.mul(self.gamma, sj)?;
                let shared = g.mul(g_sj, eps1)?;
                let g2 = g.square(self.gamma)?;
                let rest = g.one_minus(g2)?;
                let rest = g.sqrt(rest)?;
                let rest = g.mul(rest, sj)?;
                let own = g.mul(rest, eps2)?;
                let z_j = g.add(self.mu_j, shared)?;
                let z_j = g.add(z_j, own)?;
                Ok((z_i, z_j))
            }
            Branch::Unlinked => {
                let si = std_dev(g, self.logvar0_i)?;
                let sj = std_dev(g, self.logvar0_j)?;
                let ni = g.mul(si, eps1)?;
                let nj = g.mul(sj, eps2)?;
                Ok((g.add(self.mu0_i, ni)?, g.add(self.mu0_j, nj)?))
            }
        }
    }

    pub fn kl_linked(&self, g: &mut Graph, lambda: f64) -> Result<NodeId> {
        let one_m_l2 = 1.0 - lambda * lambda;
        let inv = 1.0 / one_m_l2;
        let g2 = g.square(self.gamma)?;
        let one_m_g2 = g.one_minus(g2)?;
        let log_one_m_g2 = g.log(one_m_g2)?;
        let vi = g.exp(self.logvar_i)?;
        let vj = g.exp(self.logvar_j)?;
        let si = std_dev(g, self.logvar_i)?;
        let sj = std_dev(g, self.logvar_j)?;
        let cross = g.mul(si, sj)?;
        let cross = g.mul(cross, self.gamma)?;
        let cross = g.scale(cross, -2.0 * lambda)?;
        let var_term = g.add(vi, vj)?;
        let var_term = g.add(var_term, cross)?;
        let var_term = g.scale(var_term, inv)?;
        let mi2 = g.square(self.mu_i)?;
        let mj2 = g.square(self.mu_j)?;
        let mij = g.mul(self.mu_i, self.mu_j)?;
        let mij = g.scale(mij, -2.0 * lambda)?;
        let mean_term = g.add(mi2, mj2)?;
        let mean_term = g.add(mean_term, mij)?;
        let mean_term = g.scale(mean_term, inv)?;
        let t = g.add(var_term, mean_term)?;
        let t = g.sub(t, log_one_m_g2)?;
        let t = g.sub(t, self.logvar_i)?;
        let t = g.sub(t, self.logvar_j)?;
        let t = g.add_scalar(t, one_m_l2.ln() - 2.0)?;
        let s = g.sum(t)?;
        g.scale(s, 0.5)
    }

    pub fn kl_unlinked(&self, g: &mut Graph) -> Result<NodeId> {
        let a = diag_kl(g, self.mu0_i, self.logvar0_i)?;
        let b = diag_kl(g, self.mu0_j, self.logvar0_j)?;
        g.add(a, b)
    }

    pub fn kl_mixture(&self, g: &mut Graph, lambda: f64, pi0: f64) -> Result<NodeId> {
        let pi = self
            .pi
            .ok_or_else(|| Error::invalid("kl_mixture", "posterior has no edge probability"))?;
        let k1 = self.kl_linked(g, lambda)?;
        let k0 = self.kl_unlinked(g)?;
        let a = g.mul(pi, k1)?;
        let one_m_pi = g.one_minus(pi)?;
        let b = g.mul(one_m_pi, k0)?;
        let kb = kl_bernoulli_node(g, pi, pi0)?;
        let s = g.add(a, b)?;
        g.add(s, kb)
    }
}

fn std_dev(g: &mut Graph, logvar: NodeId) -> Result<NodeId> {
    let half = g.scale(logvar, 0.5)?;
    g.exp(half)
}

fn diag_kl(g: &mut Graph, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
    let m2 = g.square(mu)?;
    let v = g.exp(logvar)?;
    let t = g.add(m2, v)?;
    let t = g.sub(t, logvar)?;
    let t = g.add_scalar(t, -1.0)?;
    let s = g.sum(t)?;
    g.scale(s, 0.5)
}

/// Differentiable KL(Bern(π) ‖ Bern(π₀)) for a `[1, 1]` node already inside `(0, 1)`.
pub fn kl_bernoulli_node(g: &mut Graph, pi: NodeId, pi0: f64) -> Result<NodeId> {
    let q = pi0.clamp(EPS, 1.0 - EPS);
    let log_p = g.log(pi)?;
    let a = g.add_scalar(log_p, -q.ln())?;
    let a = g.mul(pi, a)?;
    let one_m = g.one_minus(pi)?;
    let log_1mp = g.log(one_m)?;
    let b = g.add_scalar(log_1mp, -(1.0 - q).ln())?;
    let b = g.mul(one_m, b)?;
    let s = g.add(a, b)?;
    g.sum(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, GradCheckOptions};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_posterior(rng: &mut impl Rng, d: usize, with_pi: bool) -> PairPosterior {
        let mut v = |lo: f64, hi: f64| -> Vec<f64> { (0..d).map(|_| rng.random_range(lo..hi)).collect() };
        let mut p = PairPosterior {
            mu_i: v(-1.5, 1.5),
            mu_j: v(-1.5, 1.5),
            logvar_i: v(-1.0, 1.0),
            logvar_j: v(-1.0, 1.0),
            gamma: v(0.0, 0.95),
            mu0_i: v(-1.5, 1.5),
            mu0_j: v(-1.5, 1.5),
            logvar0_i: v(-1.0, 1.0),
            logvar0_j: v(-1.0, 1.0),
            pi: None,
        };
        if with_pi {
            p.pi = Some(rng.random_range(0.05..0.95));
        }
        p
    }

    #[test]
    fn cholesky_independent_and_exact_cases() {
        let f = cholesky_factor(&[2.0], &[3.0], &[0.0]).unwrap()[0];
        assert_eq!((f.l11, f.l21, f.l22), (2.0, 0.0, 3.0));
        let f = cholesky_factor(&[1.0], &[1.0], &[0.6]).unwrap()[0];
        assert_abs_diff_eq!(f.l21, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(f.l22, 0.8, epsilon = 1e-15);
        assert!(cholesky_factor(&[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn sample_mean_recovery_and_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_posterior(&mut rng, 3, false);
        let z = sample_pair(&p, Branch::Linked, &[0.0; 6]).unwrap();
        assert_eq!((z.z_i, z.z_j), (p.mu_i.clone(), p.mu_j.clone()));
        p.gamma = vec![0.0; 3];
        let a = sample_pair(&p, Branch::Linked, &[1.0, 2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        let b = sample_pair(&p, Branch::Linked, &[-4.0, 0.0, 9.0, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(a.z_j, b.z_j);
    }

    #[test]
    fn kl_fixed_points_and_reductions() {
        let p = PairPosterior::standard(4, 0.99);
        assert_abs_diff_eq!(kl_linked(&p, 0.99), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_unlinked(&p), 0.0, epsilon = 1e-15);
        let mut q = PairPosterior::standard(3, 0.0);
        q.mu0_i[0] = 1.0;
        assert_abs_diff_eq!(kl_unlinked(&q), 0.5, epsilon = 1e-15);
        assert!(kl_linked(&PairPosterior::standard(2, 0.5), 0.99) > 1e-3);
    }

    #[test]
    fn kl_bernoulli_cases() {
        assert_abs_diff_eq!(kl_bernoulli(0.3, 0.3), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_bernoulli(0.5, 0.5), 0.0, epsilon = 1e-15);
        let brute = 0.9 * (0.9f64 / 0.1).ln() + 0.1 * (0.1f64 / 0.9).ln();
        assert_abs_diff_eq!(kl_bernoulli(0.9, 0.1), brute, epsilon = 1e-14);
    }

    #[test]
    fn kl_mixture_boundary_and_missing_pi() {
        let mut p = PairPosterior::standard(2, 0.9);
        assert!(kl_mixture(&p, 0.9, 0.1).is_err());
        p.pi = Some(1.0 - EPS);
        let expect = kl_bernoulli(1.0 - EPS, 0.1);
        assert_abs_diff_eq!(kl_mixture(&p, 0.9, 0.1).unwrap(), expect, epsilon = 1e-12);
        p.pi = Some(0.1);
        assert_abs_diff_eq!(kl_mixture(&p, 0.9, 0.1).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn graph_matches_plain_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_posterior(&mut rng, 3, true);
            let store = p.to_store();
            let mut g = Graph::new();
            let nodes = PosteriorNodes::from_store(&mut g, &store).unwrap();
            assert_eq!(nodes.values(&g), p);
            let k1 = nodes.kl_linked(&mut g, 0.7).unwrap();
            let k0 = nodes.kl_unlinked(&mut g).unwrap();
            let km = nodes.kl_mixture(&mut g, 0.7, 0.2).unwrap();
            assert_abs_diff_eq!(g.value(k1).item(), kl_linked(&p, 0.7), epsilon = 1e-12);
            assert_abs_diff_eq!(g.value(k0).item(), kl_unlinked(&p), epsilon = 1e-12);
            assert_abs_diff_eq!(g.value(km).item(), kl_mixture(&p, 0.7, 0.2).unwrap(), epsilon = 1e-12);
            let eps: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let e1 = g.constant(Tensor::column(eps[..3].to_vec())).unwrap();
            let e2 = g.constant(Tensor::column(eps[3..].to_vec())).unwrap();
            for branch in [Branch::Linked, Branch::Unlinked] {
                let (zi, zj) = nodes.sample(&mut g, branch, e1, e2).unwrap();
                let z = sample_pair(&p, branch, &eps).unwrap();
                for (a, b) in g.value(zi).data().iter().zip(&z.z_i).chain(g.value(zj).data().iter().zip(&z.z_j)) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn kl_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_posterior(&mut rng, 2, true);
        let store = p.to_store();
        for lambda in [0.0, 0.5, 0.99] {
            let report = check_gradients(
                &store,
                |g, s| {
                    let n = PosteriorNodes::from_store(g, s)?;
                    n.kl_mixture(g, lambda, 0.1)
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passed(), "lambda {lambda}\n{report}");
        }
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(seed in any::<u64>(), lambda in 0.0f64..0.995) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_posterior(&mut rng, 3, true);
            prop_assert!(kl_linked(&p, lambda) >= -1e-10);
            prop_assert!(kl_unlinked(&p) >= -1e-10);
            prop_assert!(kl_mixture(&p, lambda, 0.05).unwrap() >= -1e-10);
        }

        #[test]
        fn kl_linked_vanishes_only_at_prior(k in 0usize..5, delta in 0.01f64..0.5, lambda in 0.0f64..0.95) {
            let field = k;
            let mut p = PairPosterior::standard(2, lambda);
            prop_assert!(kl_linked(&p, lambda).abs() < 1e-12);
            match field {
                0 => p.mu_i[1] += delta,
                1 => p.mu_j[0] -= delta,
                2 => p.logvar_i[0] += delta,
                3 => p.logvar_j[1] -= delta,
                _ => p.gamma[0] = (lambda + delta).min(0.999),
            }
            prop_assert!(kl_linked(&p, lambda) > 1e-8);
        }

        #[test]
        fn unlinked_is_linked_without_correlation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_posterior(&mut rng, 4, false);
            let mut hat = PairPosterior::standard(4, 0.0);
            hat.mu_i = p.mu0_i.clone();
            hat.mu_j = p.mu0_j.clone();
            hat.logvar_i = p.logvar0_i.clone();
            hat.logvar_j = p.logvar0_j.clone();
            prop_assert!((kl_unlinked(&p) - kl_linked(&hat, 0.0)).abs() < 1e-12);
        }
    }
}
