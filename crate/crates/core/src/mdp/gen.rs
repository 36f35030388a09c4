//! Seeded random instances for tests and studies.
//!
//! Transition rows, reward probabilities, policies and exploratory state
//! weights are drawn Dirichlet(1); reward values are uniform atoms in
//! `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{DataDistribution, Policy, TabularMdp};
use crate::error::Result;
use crate::linalg;

/// One Dirichlet(1) draw of the given length (normalized Exp(1) variates).
pub fn dirichlet_row<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
    row
}

pub fn random_mdp<R: Rng>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    reward_atoms: usize,
) -> TabularMdp {
    let n = n_states * n_actions;
    let mut transition = DMatrix::zeros(n, n_states);
    for i in 0..n {
        let row = dirichlet_row(rng, n_states);
        for (s_next, p) in row.into_iter().enumerate() {
            transition[(i, s_next)] = p;
        }
    }
    let rewards = (0..n)
        .map(|_| {
            let probs = dirichlet_row(rng, reward_atoms);
            probs
                .into_iter()
                .map(|p| (rng.random::<f64>(), p))
                .collect()
        })
        .collect();
    let d0 = DVector::from_vec(dirichlet_row(rng, n_states));
    TabularMdp {
        n_states,
        n_actions,
        transition,
        rewards,
        d0,
        gamma,
        r_max: 1.0,
    }
}

pub fn random_policy<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> Policy {
    let mut probs = DMatrix::zeros(n_states, n_actions);
    for s in 0..n_states {
        let row = dirichlet_row(rng, n_actions);
        for (a, p) in row.into_iter().enumerate() {
            probs[(s, a)] = p;
        }
    }
    Policy { probs }
}

/// Random exploratory data law with full support.
///
/// `floor` in `[0, 1]` mixes the Dirichlet draws with the uniform
/// distribution, keeping density ratios bounded away from infinity.
pub fn random_data_distribution<R: Rng>(
    rng: &mut R,
    mdp: &TabularMdp,
    floor: f64,
) -> DataDistribution {
    let uniform_s = 1.0 / mdp.n_states as f64;
    let raw = dirichlet_row(rng, mdp.n_states);
    let state_weights = DVector::from_fn(mdp.n_states, |s, _| {
        floor * uniform_s + (1.0 - floor) * raw[s]
    });
    let uniform_a = 1.0 / mdp.n_actions as f64;
    let mut probs = DMatrix::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        let row = dirichlet_row(rng, mdp.n_actions);
        for (a, p) in row.into_iter().enumerate() {
            probs[(s, a)] = floor * uniform_a + (1.0 - floor) * p;
        }
    }
    DataDistribution::new(state_weights, Policy { probs })
        .expect("generated distribution is stochastic")
}

/// Stationary state distribution of the kernel
/// `K(s'|s) = sum_a pi_b(a|s) P(s'|s,a)`.
pub fn stationary_state_distribution(mdp: &TabularMdp, pi_b: &Policy) -> Result<DVector<f64>> {
    let n = mdp.n_states;
    let mut kernel = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let i = mdp.idx(s, a);
            for s_next in 0..n {
                kernel[(s, s_next)] += pi_b.probs[(s, a)] * mdp.transition[(i, s_next)];
            }
        }
    }
    // Solve p^T K = p^T with the normalization sum(p) = 1: replace the last
    // equation of (K^T - I) p = 0 by the all-ones row.
    let mut a = kernel.transpose() - DMatrix::<f64>::identity(n, n);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let p = linalg::lu_solve(&a, &b, "stationary distribution solve")?;
    Ok(DVector::from_fn(n, |s, _| p[s].max(0.0)))
}

/// Data law whose state marginal is stationary for the behavior kernel,
/// so `P_{S'} = P_S` and `C_m = 1`.
pub fn stationary_data_distribution(mdp: &TabularMdp, pi_b: &Policy) -> Result<DataDistribution> {
    let mut p = stationary_state_distribution(mdp, pi_b)?;
    p /= p.sum();
    DataDistribution::new(p, pi_b.clone())
}

/// A linear MDP: `P(s'|s,a) = sum_j phi_j(s,a) mu_j(s')` with simplex-valued
/// features and Dirichlet anchor distributions, and mean reward linear in
/// the same features. Returns the MDP together with its feature matrix.
pub fn linear_mdp<R: Rng>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    d: usize,
    gamma: f64,
) -> (TabularMdp, DMatrix<f64>) {
    let n = n_states * n_actions;
    let mut features = DMatrix::zeros(n, d);
    for i in 0..n {
        let row = dirichlet_row(rng, d);
        for (j, p) in row.into_iter().enumerate() {
            features[(i, j)] = p;
        }
    }
    let mut anchors = DMatrix::zeros(d, n_states);
    for j in 0..d {
        let row = dirichlet_row(rng, n_states);
        for (s_next, p) in row.into_iter().enumerate() {
            anchors[(j, s_next)] = p;
        }
    }
    let transition = &features * &anchors;
    let theta_r = DVector::from_fn(d, |_, _| rng.random::<f64>());
    let rewards = (0..n)
        .map(|i| {
            let mean: f64 = (0..d).map(|j| features[(i, j)] * theta_r[j]).sum();
            vec![(1.0, mean), (0.0, 1.0 - mean)]
        })
        .collect();
    let d0 = DVector::from_vec(dirichlet_row(rng, n_states));
    let mdp = TabularMdp {
        n_states,
        n_actions,
        transition,
        rewards,
        d0,
        gamma,
        r_max: 1.0,
    };
    (mdp, features)
}
