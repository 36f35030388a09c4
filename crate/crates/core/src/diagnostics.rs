//! Problem constants and exact structural checks: concentrability, the
//! efficiency bound, the recovery constant, norm equivalence, and the
//! population saddle-point identity.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{OpeError, Result};
use crate::estimators::{dr_value, ValueSource};
use crate::linalg;
use crate::mdp::{instantaneous_ratio, DataDistribution, ExactSolution, Policy, TabularMdp};
use crate::operators::{Embedding, OperatorSet};

/// Concentrability constants of one (mdp, pi_e, data law) triple.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrabilityReport {
    /// `max w_pi`.
    pub c_w: f64,
    /// `max eta`.
    pub c_eta: f64,
    /// `max P_{S'} / P_S`.
    pub c_m: f64,
    /// `gamma sqrt(c_m c_eta)`, the sandwich modulus.
    pub gamma_contraction: f64,
    /// True when `P_S` is stationary for the behavior kernel, in which case
    /// `c_m = 1` up to numerics.
    pub p_s_stationary: bool,
}

pub fn concentrability(
    mdp: &TabularMdp,
    pi_e: &Policy,
    dist: &DataDistribution,
) -> Result<ConcentrabilityReport> {
    let exact = ExactSolution::solve(mdp, pi_e, dist)?;
    let eta = instantaneous_ratio(pi_e, &dist.behavior)?;
    let next = dist.next_state_marginal(mdp);
    let mut c_m = f64::NEG_INFINITY;
    for s in 0..mdp.n_states {
        let ps = dist.state_weights[s];
        if ps <= 0.0 {
            return Err(OpeError::ZeroSupport { s, a: 0 });
        }
        c_m = c_m.max(next[s] / ps);
    }
    let c_eta = eta.max();
    let c_w = exact.w.max();
    Ok(ConcentrabilityReport {
        c_w,
        c_eta,
        c_m,
        gamma_contraction: mdp.gamma * (c_m * c_eta).sqrt(),
        p_s_stationary: dist.is_stationary(mdp, 1e-9),
    })
}

/// The asymptotic efficiency bound
/// `EB = E[w_pi^2 (r - q_pi + gamma v_pi(s'))^2]`, as an exact sum over the
/// discrete law.
#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyReport {
    pub eb: f64,
    /// Per-(s,a) contribution to the sum.
    #[serde(skip)]
    pub per_cell: DVector<f64>,
    /// Largest squared Bellman-mean residual
    /// `(r_bar - q_pi + gamma E[v_pi(s')])^2`; zero up to solver noise, kept
    /// as a self-check.
    pub max_mean_residual_sq: f64,
}

pub fn efficiency_bound(
    mdp: &TabularMdp,
    pi_e: &Policy,
    dist: &DataDistribution,
) -> Result<EfficiencyReport> {
    if let Some((s, a)) = dist.zero_support_cell(mdp.n_actions) {
        return Err(OpeError::ZeroSupport { s, a });
    }
    let exact = ExactSolution::solve(mdp, pi_e, dist)?;
    let r_bar = mdp.mean_reward();
    let var_r = mdp.reward_variance();
    let n = mdp.n_pairs();
    let mut per_cell = DVector::zeros(n);
    let mut max_mean_residual_sq = 0.0_f64;
    for i in 0..n {
        let mut mean_v = 0.0;
        let mut second_v = 0.0;
        for s_next in 0..mdp.n_states {
            let p = mdp.transition[(i, s_next)];
            mean_v += p * exact.v[s_next];
            second_v += p * exact.v[s_next] * exact.v[s_next];
        }
        let var_v = (second_v - mean_v * mean_v).max(0.0);
        // r and s' are conditionally independent given (s,a), so the cross
        // term vanishes; the Bellman equation kills the mean term.
        let mean_term = r_bar[i] - exact.q[i] + mdp.gamma * mean_v;
        max_mean_residual_sq = max_mean_residual_sq.max(mean_term * mean_term);
        per_cell[i] = dist.joint[i]
            * exact.w[i]
            * exact.w[i]
            * (var_r[i] + mdp.gamma * mdp.gamma * var_v + mean_term * mean_term);
    }
    Ok(EfficiencyReport {
        eb: per_cell.sum(),
        per_cell,
        max_mean_residual_sq,
    })
}

/// The recovery constant translating Bellman residual norms into L2 norms
/// over a linear class.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    /// `C_iota = sigma_max((Mbar X Mbar^T)^{-1/2} X (Mbar X Mbar^T)^{-1/2})^{1/2}`.
    pub c_iota: f64,
    /// `Mbar = gamma M^T - I` for the class embedding `M`.
    pub m_bar: DMatrix<f64>,
    /// Per-direction extremal norm ratios (square roots of the spectrum of
    /// the congruence-transformed Gram), largest first.
    pub singular_values: Vec<f64>,
}

/// Computes the recovery constant from an exact operator embedding. The
/// q-side uses the forward embedding, the w-side the adjoint one.
pub fn recovery_constant(embedding: &Embedding, gamma: f64) -> Result<RecoveryReport> {
    if !embedding.exists {
        return Err(OpeError::NotClosed {
            operator: "embedding for recovery constant".into(),
            residual: embedding.max_residual,
        });
    }
    let d = embedding.matrix.nrows();
    if gamma > 0.0 {
        let target = 1.0 / gamma;
        let min_gap = embedding
            .matrix
            .complex_eigenvalues()
            .iter()
            .map(|lam| ((lam.re - target).powi(2) + lam.im.powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        if min_gap <= 1e-10 {
            return Err(OpeError::Singular {
                context: format!(
                    "recovery constant: embedding has an eigenvalue within {min_gap:.3e} of 1/gamma"
                ),
                cond: f64::INFINITY,
            });
        }
    }
    let m_bar = embedding.matrix.transpose() * gamma - DMatrix::<f64>::identity(d, d);
    let shifted = &m_bar * &embedding.gram * m_bar.transpose();
    let inv_sqrt = linalg::sym_inv_sqrt(&shifted, 1e-14);
    let congruence = &inv_sqrt * &embedding.gram * &inv_sqrt;
    let mut eigs: Vec<f64> = nalgebra::SymmetricEigen::new(congruence)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(RecoveryReport {
        c_iota: eigs[0],
        m_bar,
        singular_values: eigs,
    })
}

/// Pass/fail record of the two-sided norm-equivalence sandwich
/// `(1 -+ gamma sqrt(c_m c_eta)) ||f - f_pi|| <= ||Bf - f|| <=
/// (1 + gamma sqrt(c_m c_eta)) ||f - f_pi||` on random probes.
#[derive(Debug, Clone, Serialize)]
pub struct NormEquivalenceReport {
    pub contraction: f64,
    pub checked: usize,
    pub violations: usize,
    pub max_violation: f64,
    pub pass: bool,
}

const NORM_EQUIV_SLACK: f64 = 1e-9;

/// Probes the sandwich with `samples` random q functions and `samples`
/// random w functions.
pub fn norm_equivalence_check(
    opset: &OperatorSet,
    exact: &ExactSolution,
    c_m: f64,
    c_eta: f64,
    samples: usize,
    seed: u64,
) -> NormEquivalenceReport {
    let contraction = opset.gamma * (c_m * c_eta).sqrt();
    let lower = 1.0 - contraction;
    let upper = 1.0 + contraction;
    let n = opset.n_pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut max_violation = 0.0_f64;
    let mut probe = |truth: &DVector<f64>, backward: bool, rng: &mut ChaCha8Rng| {
        let f = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let distance = opset.norm_x(&(&f - truth));
        let residual = if backward {
            opset.norm_x(&(opset.apply_b_prime(&f) - &f))
        } else {
            opset.norm_x(&(opset.apply_b(&f) - &f))
        };
        let lower_gap = lower * distance - residual;
        let upper_gap = residual - upper * distance;
        let violation = lower_gap.max(upper_gap);
        if violation > NORM_EQUIV_SLACK {
            violations += 1;
        }
        max_violation = max_violation.max(violation);
    };
    for _ in 0..samples {
        probe(&exact.q, false, &mut rng);
    }
    for _ in 0..samples {
        probe(&exact.w, true, &mut rng);
    }
    NormEquivalenceReport {
        contraction,
        checked: 2 * samples,
        violations,
        max_violation,
        pass: violations == 0,
    }
}

/// Residual of the population saddle-point identity: the population DR
/// value at `(w, q)` minus `J + <w - w_pi, T_gamma (q - q_pi)>_X`.
pub fn minimax_identity_check(
    mdp: &TabularMdp,
    pi_e: &Policy,
    dist: &DataDistribution,
    w: &DVector<f64>,
    q: &DVector<f64>,
) -> Result<f64> {
    let exact = ExactSolution::solve(mdp, pi_e, dist)?;
    let lhs = dr_value(w, q, mdp, pi_e, ValueSource::Population(dist)).j_hat;
    let dq = q - &exact.q;
    let t_gamma_dq = mdp.p_pi(pi_e) * &dq * mdp.gamma - &dq;
    let product: f64 = (0..mdp.n_pairs())
        .map(|i| dist.joint[i] * (w[i] - exact.w[i]) * t_gamma_dq[i])
        .sum();
    Ok((lhs - (exact.j + product)).abs())
}
