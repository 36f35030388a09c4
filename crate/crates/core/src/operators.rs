//! Matrix representations of the transition operator, its adjoint under the
//! data-weighted inner product, the forward and backward Bellman operators,
//! and their embeddings into linear function classes.
//!
//! Functions on S x A are value vectors indexed by `s * n_actions + a`. The
//! inner product is always the `P_{S,A}`-weighted one.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{OpeError, Result};
use crate::linalg;
use crate::mdp::{instantaneous_ratio, DataDistribution, Policy, TabularMdp};

/// Which operator an embedding or check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    Forward,
    Adjoint,
}

/// Matrix forms of T, T', B, B' for one (mdp, pi_e, data law) triple.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub gamma: f64,
    /// Forward transition matrix: `p_pi[(s,a),(s',a')] = P(s'|s,a) pi_e(a'|s')`.
    pub p_pi: DMatrix<f64>,
    /// Adjoint transition matrix `X^{-1} p_pi^T X` acting on value vectors.
    pub adjoint: DMatrix<f64>,
    /// Mean reward, the affine part of B.
    pub mean_reward: DVector<f64>,
    /// Affine part of B': `(1-gamma) d0(s) pi_e(a|s) / P_{S,A}(s,a)`.
    pub b_prime_offset: DVector<f64>,
    /// Diagonal of `X = diag(P_{S,A})`.
    pub x_weight: DVector<f64>,
}

impl OperatorSet {
    pub fn n_pairs(&self) -> usize {
        self.x_weight.len()
    }

    pub fn apply_t(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.p_pi * f
    }

    pub fn apply_t_adjoint(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.adjoint * f
    }

    /// `B f = r_bar + gamma T f`.
    pub fn apply_b(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.mean_reward + self.apply_t(f) * self.gamma
    }

    /// `B' f = offset + gamma T' f`.
    pub fn apply_b_prime(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.b_prime_offset + self.apply_t_adjoint(f) * self.gamma
    }

    /// `T_gamma f = gamma T f - f`.
    pub fn t_gamma(&self, f: &DVector<f64>) -> DVector<f64> {
        self.apply_t(f) * self.gamma - f
    }

    /// `T'_gamma f = gamma T' f - f`.
    pub fn t_gamma_adjoint(&self, f: &DVector<f64>) -> DVector<f64> {
        self.apply_t_adjoint(f) * self.gamma - f
    }

    pub fn inner_x(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        linalg::inner_x(f, g, &self.x_weight)
    }

    pub fn norm_x(&self, f: &DVector<f64>) -> f64 {
        linalg::norm_x(f, &self.x_weight)
    }

    /// Value-vector matrix of the chosen operator.
    pub fn matrix(&self, which: OperatorKind) -> &DMatrix<f64> {
        match which {
            OperatorKind::Forward => &self.p_pi,
            OperatorKind::Adjoint => &self.adjoint,
        }
    }
}

/// Builds the operator set. Fails on any zero-support cell: B' divides by
/// `P_{S,A}`.
pub fn build_operators(
    mdp: &TabularMdp,
    pi_e: &Policy,
    dist: &DataDistribution,
) -> Result<OperatorSet> {
    if let Some((s, a)) = dist.zero_support_cell(mdp.n_actions) {
        return Err(OpeError::ZeroSupport { s, a });
    }
    let n = mdp.n_pairs();
    let p_pi = mdp.p_pi(pi_e);
    debug_assert!(
        (0..n).all(|i| (p_pi.row(i).sum() - 1.0).abs() < 1e-12),
        "p_pi rows must be stochastic"
    );
    let x = dist.joint.clone();
    let mut adjoint = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            adjoint[(i, j)] = p_pi[(j, i)] * x[j] / x[i];
        }
    }
    let d0_pi = mdp.initial_pair_distribution(pi_e);
    let b_prime_offset = DVector::from_fn(n, |i, _| (1.0 - mdp.gamma) * d0_pi[i] / x[i]);
    // eta must be bounded for the adjoint to exist in L2(P_{S,A}).
    instantaneous_ratio(pi_e, &dist.behavior)?;
    Ok(OperatorSet {
        gamma: mdp.gamma,
        p_pi,
        adjoint,
        mean_reward: mdp.mean_reward(),
        b_prime_offset,
        x_weight: x,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorNormReport {
    /// X-weighted operator norm of T, by power iteration.
    pub norm: f64,
    /// `sqrt(C_m C_eta)`.
    pub bound: f64,
    pub pass: bool,
}

/// Checks `||T|| <= sqrt(C_m C_eta)` in the X-weighted norm by power
/// iteration on `X^{1/2} T X^{-1/2}`.
pub fn operator_norm_check(opset: &OperatorSet, c_m: f64, c_eta: f64) -> OperatorNormReport {
    let n = opset.n_pairs();
    let a = DMatrix::from_fn(n, n, |i, j| {
        opset.p_pi[(i, j)] * opset.x_weight[i].sqrt() / opset.x_weight[j].sqrt()
    });
    let norm = linalg::spectral_norm(&a);
    let bound = (c_m * c_eta).sqrt();
    OperatorNormReport {
        norm,
        bound,
        pass: norm <= bound + 1e-9,
    }
}

/// A matrix mean embedding of an operator into a linear class:
/// `Op(Phi beta) = Phi (matrix beta)` column-exactly when `exists`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub which: OperatorKind,
    /// Coefficient action `M` solving `Phi M = Op Phi` in X-weighted least
    /// squares.
    pub matrix: DMatrix<f64>,
    /// Class Gram matrix `Phi^T X Phi`.
    pub gram: DMatrix<f64>,
    /// Largest X-weighted column residual of `Op Phi - Phi M`.
    pub max_residual: f64,
    /// True when every column of `Op Phi` lies in the span of `Phi`.
    pub exists: bool,
}

/// Residual below which a least-squares fit counts as span membership.
pub const EMBED_TOL: f64 = 1e-8;

/// Embeds the chosen operator into the span of `features`.
pub fn embed(
    opset: &OperatorSet,
    features: &DMatrix<f64>,
    which: OperatorKind,
) -> Result<Embedding> {
    let x = &opset.x_weight;
    let sqrt_x_phi = linalg::scale_rows(features, &x.map(f64::sqrt));
    let (sigma_min, _) = linalg::singular_value_range(&sqrt_x_phi);
    if sigma_min <= 1e-10 {
        return Err(OpeError::RankDeficient {
            class: "embedding features".into(),
            sigma_min,
        });
    }
    let target = opset.matrix(which) * features;
    let gram = linalg::weighted_gram(features, x);
    let rhs = features.transpose() * linalg::scale_rows(&target, x);
    let matrix = linalg::lu_solve_mat(&gram, &rhs, "embedding gram solve")?;
    let residual_mat = &target - features * &matrix;
    let mut max_residual = 0.0_f64;
    for j in 0..residual_mat.ncols() {
        let col = residual_mat.column(j).into_owned();
        max_residual = max_residual.max(linalg::norm_x(&col, x));
    }
    Ok(Embedding {
        which,
        matrix,
        gram,
        max_residual,
        exists: max_residual < EMBED_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{gen, solve_q, weight_function, ExactSolution};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_setup(
        seed: u64,
        n_states: usize,
        n_actions: usize,
        gamma: f64,
    ) -> (TabularMdp, Policy, DataDistribution) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = gen::random_mdp(&mut rng, n_states, n_actions, gamma, 2);
        let pi_e = gen::random_policy(&mut rng, n_states, n_actions);
        let dist = gen::random_data_distribution(&mut rng, &mdp, 0.3);
        (mdp, pi_e, dist)
    }

    fn random_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn constant_functions_are_fixed_by_t() {
        let (mdp, pi_e, dist) = random_setup(1, 5, 3, 0.9);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let ones = DVector::from_element(mdp.n_pairs(), 1.0);
        assert!((ops.apply_t(&ones) - &ones).amax() < 1e-12);
    }

    #[test]
    fn bellman_fixed_points() {
        let (mdp, pi_e, dist) = random_setup(2, 6, 2, 0.85);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let q_pi = solve_q(&mdp, &pi_e).unwrap();
        let w_pi = weight_function(&mdp, &pi_e, &dist).unwrap();
        assert!((ops.apply_b(&q_pi) - &q_pi).amax() < 1e-9);
        assert!((ops.apply_b_prime(&w_pi) - &w_pi).amax() < 1e-9);
    }

    #[test]
    fn adjointness_on_random_pairs() {
        let (mdp, pi_e, dist) = random_setup(3, 4, 3, 0.7);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let f = random_vec(&mut rng, mdp.n_pairs());
            let g = random_vec(&mut rng, mdp.n_pairs());
            let lhs = ops.inner_x(&f, &ops.apply_t(&g));
            let rhs = ops.inner_x(&ops.apply_t_adjoint(&f), &g);
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_closed_form_is_x_conjugation() {
        let (mdp, pi_e, dist) = random_setup(4, 3, 2, 0.9);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let n = mdp.n_pairs();
        for i in 0..n {
            for j in 0..n {
                let expected = ops.p_pi[(j, i)] * ops.x_weight[j] / ops.x_weight[i];
                assert!((ops.adjoint[(i, j)] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn double_adjoint_returns_original() {
        let (mdp, pi_e, dist) = random_setup(5, 4, 2, 0.8);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let n = mdp.n_pairs();
        let x = &ops.x_weight;
        let mut twice = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                twice[(i, j)] = ops.adjoint[(j, i)] * x[j] / x[i];
            }
        }
        assert!((twice - &ops.p_pi).amax() < 1e-10);
    }

    #[test]
    fn bellman_shift_identities() {
        let (mdp, pi_e, dist) = random_setup(6, 5, 2, 0.9);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let exact = ExactSolution::solve(&mdp, &pi_e, &dist).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let q = random_vec(&mut rng, mdp.n_pairs());
            let lhs = ops.apply_b(&q) - &q;
            let rhs = ops.t_gamma(&(q - &exact.q));
            assert!((lhs - rhs).amax() < 1e-9);

            let w = random_vec(&mut rng, mdp.n_pairs());
            let lhs = ops.apply_b_prime(&w) - &w;
            let rhs = ops.t_gamma_adjoint(&(w - &exact.w));
            assert!((lhs - rhs).amax() < 1e-9);
        }
    }

    #[test]
    fn norm_check_holds_on_random_instances() {
        for seed in 10..20 {
            let (mdp, pi_e, dist) = random_setup(seed, 4, 2, 0.9);
            let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
            let eta = instantaneous_ratio(&pi_e, &dist.behavior).unwrap();
            let c_eta = eta.max();
            let ps_next = dist.next_state_marginal(&mdp);
            let c_m = (0..mdp.n_states)
                .map(|s| ps_next[s] / dist.state_weights[s])
                .fold(f64::MIN, f64::max);
            let report = operator_norm_check(&ops, c_m, c_eta);
            assert!(report.pass, "norm {} > bound {}", report.norm, report.bound);
        }
    }

    #[test]
    fn norm_bound_with_stationary_exploration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mdp = gen::random_mdp(&mut rng, 5, 2, 0.9, 2);
        let pi_b = gen::random_policy(&mut rng, 5, 2);
        let dist = gen::stationary_data_distribution(&mdp, &pi_b).unwrap();
        // pi_e = pi_b and stationary P_S: C_m = C_eta = 1, so ||T|| <= 1.
        let ops = build_operators(&mdp, &pi_b, &dist).unwrap();
        let report = operator_norm_check(&ops, 1.0, 1.0);
        assert!(report.pass, "norm {} exceeds 1", report.norm);
    }

    #[test]
    fn one_hot_embedding_recovers_p_pi() {
        let (mdp, pi_e, dist) = random_setup(30, 3, 2, 0.8);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let eye = DMatrix::<f64>::identity(mdp.n_pairs(), mdp.n_pairs());
        let emb = embed(&ops, &eye, OperatorKind::Forward).unwrap();
        assert!(emb.exists);
        assert!((&emb.matrix - &ops.p_pi).amax() < 1e-10);
        let emb_adj = embed(&ops, &eye, OperatorKind::Adjoint).unwrap();
        assert!(emb_adj.exists);
        assert!((&emb_adj.matrix - &ops.adjoint).amax() < 1e-10);
    }

    #[test]
    fn exact_embedding_reproduces_operator_action() {
        // When the embedding exists, T(Phi beta) = Phi (M beta) pointwise.
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let (mdp, features) = gen::linear_mdp(&mut rng, 5, 2, 3, 0.9);
        let pi_e = gen::random_policy(&mut rng, 5, 2);
        let dist = gen::random_data_distribution(&mut rng, &mdp, 0.3);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let emb = embed(&ops, &features, OperatorKind::Forward).unwrap();
        assert!(emb.exists, "linear MDP span is T-closed");
        for _ in 0..20 {
            let beta = random_vec(&mut rng, 3);
            let lhs = &ops.p_pi * (&features * &beta);
            let rhs = &features * (&emb.matrix * &beta);
            assert!((lhs - rhs).amax() < 1e-9);
        }
    }

    #[test]
    fn constant_feature_embeds_to_identity() {
        let (mdp, pi_e, dist) = random_setup(31, 4, 2, 0.9);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let phi = DMatrix::from_element(mdp.n_pairs(), 1, 1.0);
        let emb = embed(&ops, &phi, OperatorKind::Forward).unwrap();
        assert!(emb.exists);
        assert!((emb.matrix[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_two_feature_class_is_not_closed() {
        let (mdp, pi_e, dist) = random_setup(32, 4, 2, 0.9);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let phi = DMatrix::from_fn(mdp.n_pairs(), 2, |_, _| rng.random::<f64>());
        let emb = embed(&ops, &phi, OperatorKind::Forward).unwrap();
        // Brute-force check of the least-squares verdict via the projector.
        let x = &ops.x_weight;
        let target = &ops.p_pi * &phi;
        let mut max_res = 0.0_f64;
        for j in 0..2 {
            let col = target.column(j).into_owned();
            let coeffs = linalg::weighted_projection_coeffs(&phi, &col, x, "projector").unwrap();
            let res = linalg::norm_x(&(&col - &phi * coeffs), x);
            max_res = max_res.max(res);
        }
        assert!((emb.max_residual - max_res).abs() < 1e-10);
        assert!(!emb.exists, "a random 2-dim span should not be T-closed");
    }

    #[test]
    fn embedding_rejects_rank_deficient_features() {
        let (mdp, pi_e, dist) = random_setup(33, 3, 2, 0.9);
        let ops = build_operators(&mdp, &pi_e, &dist).unwrap();
        let mut phi = DMatrix::zeros(mdp.n_pairs(), 2);
        for i in 0..mdp.n_pairs() {
            phi[(i, 0)] = 1.0;
            phi[(i, 1)] = 2.0;
        }
        assert!(matches!(
            embed(&ops, &phi, OperatorKind::Forward),
            Err(OpeError::RankDeficient { .. })
        ));
    }

    #[test]
    fn build_operators_requires_full_support() {
        let (mdp, pi_e, _) = random_setup(34, 2, 2, 0.9);
        let behavior = Policy {
            probs: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]),
        };
        let dist = DataDistribution::new(DVector::from_vec(vec![0.5, 0.5]), behavior).unwrap();
        assert!(matches!(
            build_operators(&mdp, &pi_e, &dist),
            Err(OpeError::ZeroSupport { .. })
        ));
    }
}
