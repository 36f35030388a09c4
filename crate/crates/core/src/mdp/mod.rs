//! Finite MDPs, policies, the offline data law, and exact population
//! quantities computed by dense linear algebra.
//!
//! Functions on the state-action space are stored as vectors indexed by
//! `s * n_actions + a`. All solves are dense LU with partial pivoting.

pub mod gen;

use nalgebra::{DMatrix, DVector};

use crate::error::{OpeError, Result};
use crate::linalg;

/// Tolerance for stochasticity checks on stored distributions.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite discounted MDP with finite-support reward distributions.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Transition probabilities; row `s * n_actions + a`, column `s'`.
    pub transition: DMatrix<f64>,
    /// Reward distribution per (s, a): a list of `(value, probability)` atoms.
    pub rewards: Vec<Vec<(f64, f64)>>,
    /// Initial state distribution.
    pub d0: DVector<f64>,
    /// Discount factor in `[0, 1)`.
    pub gamma: f64,
    /// Upper bound on the reward support.
    pub r_max: f64,
}

impl TabularMdp {
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    #[inline]
    pub fn idx(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// Mean reward per (s, a).
    pub fn mean_reward(&self) -> DVector<f64> {
        DVector::from_fn(self.n_pairs(), |i, _| {
            self.rewards[i].iter().map(|(v, p)| v * p).sum()
        })
    }

    /// Reward variance per (s, a).
    pub fn reward_variance(&self) -> DVector<f64> {
        DVector::from_fn(self.n_pairs(), |i, _| {
            let mean: f64 = self.rewards[i].iter().map(|(v, p)| v * p).sum();
            let second: f64 = self.rewards[i].iter().map(|(v, p)| v * v * p).sum();
            (second - mean * mean).max(0.0)
        })
    }

    /// State-action transition matrix under `pi`:
    /// `P[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')`.
    pub fn p_pi(&self, pi: &Policy) -> DMatrix<f64> {
        let n = self.n_pairs();
        let na = self.n_actions;
        DMatrix::from_fn(n, n, |row, col| {
            let s_next = col / na;
            let a_next = col % na;
            self.transition[(row, s_next)] * pi.probs[(s_next, a_next)]
        })
    }

    /// Initial distribution over (s, a) pairs, `d0(s) pi(a|s)`.
    pub fn initial_pair_distribution(&self, pi: &Policy) -> DVector<f64> {
        DVector::from_fn(self.n_pairs(), |i, _| {
            let s = i / self.n_actions;
            let a = i % self.n_actions;
            self.d0[s] * pi.probs[(s, a)]
        })
    }
}

/// A stationary stochastic policy; row `s`, column `a`.
#[derive(Debug, Clone)]
pub struct Policy {
    pub probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        let pi = Policy { probs };
        pi.validate()?;
        Ok(pi)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in 0..self.probs.nrows() {
            let mut sum = 0.0;
            for a in 0..self.probs.ncols() {
                let p = self.probs[(s, a)];
                if p < 0.0 {
                    return Err(OpeError::Invalid(format!(
                        "negative probability pi({a}|{s}) = {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(OpeError::Invalid(format!(
                    "policy row not stochastic at s={s}: sums to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// The offline data law: `P_{S,A}(s,a) = P_S(s) pi_b(a|s)`.
#[derive(Debug, Clone)]
pub struct DataDistribution {
    pub state_weights: DVector<f64>,
    pub behavior: Policy,
    /// Joint marginal over (s, a).
    pub joint: DVector<f64>,
}

impl DataDistribution {
    pub fn new(state_weights: DVector<f64>, behavior: Policy) -> Result<Self> {
        let n_states = state_weights.len();
        if behavior.probs.nrows() != n_states {
            return Err(OpeError::Shape(format!(
                "behavior policy has {} states, state weights {}",
                behavior.probs.nrows(),
                n_states
            )));
        }
        behavior.validate()?;
        let mut sum = 0.0;
        for s in 0..n_states {
            let p = state_weights[s];
            if p < 0.0 {
                return Err(OpeError::Invalid(format!(
                    "negative probability P_S({s}) = {p}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(OpeError::Invalid(format!(
                "state weights not stochastic: sum to {sum}"
            )));
        }
        let n_actions = behavior.probs.ncols();
        let joint = DVector::from_fn(n_states * n_actions, |i, _| {
            let s = i / n_actions;
            let a = i % n_actions;
            state_weights[s] * behavior.probs[(s, a)]
        });
        Ok(DataDistribution {
            state_weights,
            behavior,
            joint,
        })
    }

    pub fn full_support(&self) -> bool {
        self.joint.iter().all(|&p| p > 0.0)
    }

    /// First zero-support cell, if any.
    pub fn zero_support_cell(&self, n_actions: usize) -> Option<(usize, usize)> {
        self.joint
            .iter()
            .position(|&p| p <= 0.0)
            .map(|i| (i / n_actions, i % n_actions))
    }

    /// Marginal of the next state `s'` under the data law.
    pub fn next_state_marginal(&self, mdp: &TabularMdp) -> DVector<f64> {
        let mut out = DVector::zeros(mdp.n_states);
        for i in 0..mdp.n_pairs() {
            let p = self.joint[i];
            if p == 0.0 {
                continue;
            }
            for s_next in 0..mdp.n_states {
                out[s_next] += p * mdp.transition[(i, s_next)];
            }
        }
        out
    }

    /// True when `P_S` equals the next-state marginal `P_{S'}` within `tol`.
    pub fn is_stationary(&self, mdp: &TabularMdp, tol: f64) -> bool {
        let next = self.next_state_marginal(mdp);
        (&next - &self.state_weights).amax() <= tol
    }
}

/// Exact population quantities for one (mdp, pi_e, data law) triple.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    /// q-function over (s, a).
    pub q: DVector<f64>,
    /// State value `v(s) = q(s, pi_e)`.
    pub v: DVector<f64>,
    /// Discounted occupancy over (s, a); sums to one.
    pub occupancy: DVector<f64>,
    /// Marginal importance weight `occupancy / P_{S,A}`.
    pub w: DVector<f64>,
    /// Normalized policy value.
    pub j: f64,
}

impl ExactSolution {
    pub fn solve(mdp: &TabularMdp, pi_e: &Policy, dist: &DataDistribution) -> Result<Self> {
        let q = solve_q(mdp, pi_e)?;
        let v = state_values(mdp, pi_e, &q);
        let occupancy = discounted_occupancy(mdp, pi_e)?;
        let w = weight_from_occupancy(mdp, &occupancy, dist)?;
        let j = occupancy.dot(&mdp.mean_reward());
        Ok(ExactSolution {
            q,
            v,
            occupancy,
            w,
            j,
        })
    }
}

/// Checks every invariant of the MDP, reporting the first violation with
/// its indices.
pub fn validate(mdp: &TabularMdp) -> Result<()> {
    if mdp.n_states == 0 || mdp.n_actions == 0 {
        return Err(OpeError::Invalid(
            "state and action spaces must be nonempty".into(),
        ));
    }
    if !(0.0..1.0).contains(&mdp.gamma) {
        return Err(OpeError::Invalid(format!(
            "gamma must lie in [0, 1), got {}",
            mdp.gamma
        )));
    }
    if !mdp.r_max.is_finite() || mdp.r_max <= 0.0 {
        return Err(OpeError::Invalid(format!(
            "r_max must be positive, got {}",
            mdp.r_max
        )));
    }
    let n = mdp.n_pairs();
    if mdp.transition.nrows() != n || mdp.transition.ncols() != mdp.n_states {
        return Err(OpeError::Shape(format!(
            "transition is {}x{}, expected {}x{}",
            mdp.transition.nrows(),
            mdp.transition.ncols(),
            n,
            mdp.n_states
        )));
    }
    if mdp.rewards.len() != n {
        return Err(OpeError::Shape(format!(
            "rewards has {} entries, expected {}",
            mdp.rewards.len(),
            n
        )));
    }
    if mdp.d0.len() != mdp.n_states {
        return Err(OpeError::Shape(format!(
            "d0 has {} entries, expected {}",
            mdp.d0.len(),
            mdp.n_states
        )));
    }
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let i = mdp.idx(s, a);
            let mut sum = 0.0;
            for s_next in 0..mdp.n_states {
                let p = mdp.transition[(i, s_next)];
                if p < 0.0 {
                    return Err(OpeError::Invalid(format!(
                        "negative probability P({s_next}|{s},{a}) = {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(OpeError::Invalid(format!(
                    "transition row not stochastic at (s={s}, a={a}): sums to {sum}"
                )));
            }
            if mdp.rewards[i].is_empty() {
                return Err(OpeError::Invalid(format!(
                    "empty reward distribution at (s={s}, a={a})"
                )));
            }
            let mut rsum = 0.0;
            for &(value, prob) in &mdp.rewards[i] {
                if prob < 0.0 {
                    return Err(OpeError::Invalid(format!(
                        "negative probability {prob} in reward distribution at (s={s}, a={a})"
                    )));
                }
                if !(0.0..=mdp.r_max).contains(&value) {
                    return Err(OpeError::Invalid(format!(
                        "reward value {value} outside [0, {}] at (s={s}, a={a})",
                        mdp.r_max
                    )));
                }
                rsum += prob;
            }
            if (rsum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(OpeError::Invalid(format!(
                    "reward distribution not stochastic at (s={s}, a={a}): sums to {rsum}"
                )));
            }
        }
    }
    let mut dsum = 0.0;
    for s in 0..mdp.n_states {
        let p = mdp.d0[s];
        if p < 0.0 {
            return Err(OpeError::Invalid(format!(
                "negative probability d0({s}) = {p}"
            )));
        }
        dsum += p;
    }
    if (dsum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(OpeError::Invalid(format!(
            "initial distribution not stochastic: sums to {dsum}"
        )));
    }
    Ok(())
}

/// Solves the q-function fixed point `(I - gamma P_pi) q = r_bar`.
pub fn solve_q(mdp: &TabularMdp, pi: &Policy) -> Result<DVector<f64>> {
    let n = mdp.n_pairs();
    let a = DMatrix::identity(n, n) - mdp.p_pi(pi) * mdp.gamma;
    linalg::lu_solve(&a, &mdp.mean_reward(), "q-function solve")
}

/// `v(s) = sum_a pi(a|s) q(s, a)`.
pub fn state_values(mdp: &TabularMdp, pi: &Policy, q: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(mdp.n_states, |s, _| {
        (0..mdp.n_actions)
            .map(|a| pi.probs[(s, a)] * q[mdp.idx(s, a)])
            .sum()
    })
}

/// Discounted occupancy `d_{pi,gamma}`, the solution of
/// `d (I - gamma P_pi) = (1 - gamma) (d0 x pi)`.
pub fn discounted_occupancy(mdp: &TabularMdp, pi: &Policy) -> Result<DVector<f64>> {
    let n = mdp.n_pairs();
    let a = DMatrix::identity(n, n) - mdp.p_pi(pi).transpose() * mdp.gamma;
    let rhs = mdp.initial_pair_distribution(pi) * (1.0 - mdp.gamma);
    linalg::lu_solve(&a, &rhs, "occupancy solve")
}

/// Normalized policy value `J = <d_{pi,gamma}, r_bar>`.
pub fn policy_value(mdp: &TabularMdp, pi_e: &Policy) -> Result<f64> {
    let occupancy = discounted_occupancy(mdp, pi_e)?;
    Ok(occupancy.dot(&mdp.mean_reward()))
}

/// Marginal importance weight `w = d_{pi_e,gamma} / P_{S,A}` entrywise.
pub fn weight_function(
    mdp: &TabularMdp,
    pi_e: &Policy,
    dist: &DataDistribution,
) -> Result<DVector<f64>> {
    let occupancy = discounted_occupancy(mdp, pi_e)?;
    weight_from_occupancy(mdp, &occupancy, dist)
}

fn weight_from_occupancy(
    mdp: &TabularMdp,
    occupancy: &DVector<f64>,
    dist: &DataDistribution,
) -> Result<DVector<f64>> {
    if let Some((s, a)) = dist.zero_support_cell(mdp.n_actions) {
        return Err(OpeError::ZeroSupport { s, a });
    }
    Ok(DVector::from_fn(mdp.n_pairs(), |i, _| {
        occupancy[i] / dist.joint[i]
    }))
}

/// Instantaneous ratio `eta(s,a) = pi_e(a|s) / pi_b(a|s)`.
///
/// Cells where both policies place zero mass return 0; a cell with
/// `pi_b = 0 < pi_e` is an error.
pub fn instantaneous_ratio(pi_e: &Policy, pi_b: &Policy) -> Result<DVector<f64>> {
    let n_states = pi_e.probs.nrows();
    let n_actions = pi_e.probs.ncols();
    if pi_b.probs.nrows() != n_states || pi_b.probs.ncols() != n_actions {
        return Err(OpeError::Shape(
            "policies have mismatched shapes".to_string(),
        ));
    }
    let mut out = DVector::zeros(n_states * n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            let pe = pi_e.probs[(s, a)];
            let pb = pi_b.probs[(s, a)];
            out[s * n_actions + a] = if pb > 0.0 {
                pe / pb
            } else if pe == 0.0 {
                0.0
            } else {
                return Err(OpeError::UnboundedRatio { s, a });
            };
        }
    }
    Ok(out)
}
