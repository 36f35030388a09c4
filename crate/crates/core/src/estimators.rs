//! Value and nuisance estimators: the stabilized minimax q/w learners with
//! closed-form linear saddle points, the DM/IS/DR values, cross-fitted DR,
//! sample-split FQI, and exact minimax enumeration over finite
//! dictionaries.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::classes::LinearClass;
use crate::error::{OpeError, Result};
use crate::linalg;
use crate::mdp::{state_values, DataDistribution, Policy, TabularMdp};
use crate::sampling::{moments_empirical, split_bins, split_half, MomentSet, TransitionDataset};

/// Stabilizer and conditioning knobs.
///
/// `lambda_w` multiplies the `||Jq||^2_{2,n}` penalty in the weight
/// objective and `lambda_q` the `||w||^2_{2,n}` penalty in the q objective.
/// Positive values select the weighted closed-form saddle point; zero
/// selects the least-squares solution of the moment system, the limit of
/// the stabilized solution on consistent systems. The defaults of 1.0 are
/// untuned constants; any fixed positive value gives the same estimator up
/// to conditioning.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StabilizerConfig {
    pub lambda_w: f64,
    pub lambda_q: f64,
    /// User ridge added to the inner Gram matrix. Independently of this, a
    /// ridge of `1e-10 trace/d` is applied when the conditioning exceeds
    /// 1e12.
    pub ridge: f64,
}

impl Default for StabilizerConfig {
    fn default() -> Self {
        StabilizerConfig {
            lambda_w: 1.0,
            lambda_q: 1.0,
            ridge: 0.0,
        }
    }
}

impl StabilizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_w < 0.0 || self.lambda_q < 0.0 || self.ridge < 0.0 {
            return Err(OpeError::Invalid(
                "stabilizer coefficients must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NuisanceKind {
    Q,
    W,
}

/// A fitted nuisance function `values = Phi coeffs`.
#[derive(Debug, Clone)]
pub struct NuisanceEstimate {
    pub kind: NuisanceKind,
    pub coeffs: DVector<f64>,
    pub values: DVector<f64>,
    pub objective_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    Dm,
    Is,
    Dr,
    DrCrossfit,
    Fqi,
    Mdl,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Dm => "dm",
            Variant::Is => "is",
            Variant::Dr => "dr",
            Variant::DrCrossfit => "drcf",
            Variant::Fqi => "fqi",
            Variant::Mdl => "mdl",
        };
        f.write_str(s)
    }
}

/// Per-fold record of a cross-fitted estimate.
#[derive(Debug, Clone)]
pub struct FoldDetail {
    pub fold: usize,
    pub n_eval: usize,
    pub j_fold: f64,
    pub dm_term: f64,
    pub correction_term: f64,
    pub w_coeffs: DVector<f64>,
    pub q_coeffs: DVector<f64>,
}

/// A point estimate of the policy value with its reconstructable parts:
/// `j_hat = dm_term + correction_term`, and for cross-fitting
/// `j_hat = mean(fold j's)`.
#[derive(Debug, Clone)]
pub struct OpeEstimate {
    pub j_hat: f64,
    pub variant: Variant,
    pub dm_term: f64,
    pub correction_term: f64,
    pub nuisances: Vec<NuisanceEstimate>,
    pub fold_details: Vec<FoldDetail>,
    /// Selected dictionary indices for enumeration estimators.
    pub indices: Option<(usize, usize)>,
}

impl OpeEstimate {
    fn plain(j_hat: f64, variant: Variant, dm_term: f64, correction_term: f64) -> Self {
        OpeEstimate {
            j_hat,
            variant,
            dm_term,
            correction_term,
            nuisances: Vec::new(),
            fold_details: Vec::new(),
            indices: None,
        }
    }
}

/// Where value estimators average the influence term.
#[derive(Clone, Copy)]
pub enum ValueSource<'a> {
    Empirical(&'a TransitionDataset),
    Population(&'a DataDistribution),
}

fn ridge_for(mat: &DMatrix<f64>, user: f64) -> f64 {
    if linalg::condition_estimate(mat) > 1e12 {
        let d = mat.nrows().max(1) as f64;
        user.max(1e-10 * mat.trace() / d)
    } else {
        user
    }
}

fn spd_solve_pair(
    mat: &DMatrix<f64>,
    rhs_mat: &DMatrix<f64>,
    rhs_vec: &DVector<f64>,
    context: &str,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let chol = mat.clone().cholesky().ok_or_else(|| OpeError::Singular {
        context: format!("{context}: inner Gram not positive definite"),
        cond: linalg::condition_estimate(mat),
    })?;
    Ok((chol.solve(rhs_mat), chol.solve(rhs_vec)))
}

fn full_rank_lsq(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let (smin, smax) = linalg::singular_value_range(a);
    if smin <= smax * 1e-12 {
        return Err(OpeError::Singular {
            context: format!("{context}: moment matrix rank-deficient"),
            cond: if smin > 0.0 {
                smax / smin
            } else {
                f64::INFINITY
            },
        });
    }
    linalg::svd_lsq(a, b, context)
}

/// Minimax q-learning over the moment pair.
///
/// With `lambda_q > 0` the inner maximization is quadratic and the saddle
/// point is `theta = (M^T G~^{-1} M)^{-1} M^T G~^{-1} b`; the value of
/// `lambda_q` rescales the objective but not its argmin. With
/// `lambda_q = 0` the estimator is the least-squares solution of
/// `M theta = b`.
pub fn mql(moments: &MomentSet, stab: &StabilizerConfig) -> Result<NuisanceEstimate> {
    stab.validate()?;
    let (coeffs, objective_value) = if stab.lambda_q > 0.0 {
        let d = moments.g.nrows();
        let ridge = ridge_for(&moments.g, stab.ridge);
        let g_tilde = &moments.g + DMatrix::<f64>::identity(d, d) * ridge;
        let (ginv_m, ginv_b) = spd_solve_pair(&g_tilde, &moments.m, &moments.b, "mql")?;
        let normal = moments.m.transpose() * &ginv_m;
        let rhs = moments.m.transpose() * &ginv_b;
        let theta = linalg::lu_solve(&normal, &rhs, "mql normal equations")?;
        let resid = &moments.b - &moments.m * &theta;
        let chol = g_tilde.cholesky().expect("checked above");
        let obj = resid.dot(&chol.solve(&resid)) / (4.0 * stab.lambda_q);
        (theta, obj)
    } else {
        let theta = full_rank_lsq(&moments.m, &moments.b, "mql moment system")?;
        let obj = (&moments.m * &theta - &moments.b).norm();
        (theta, obj)
    };
    let values = moments.cls_q.values(&coeffs);
    Ok(NuisanceEstimate {
        kind: NuisanceKind::Q,
        coeffs,
        values,
        objective_value,
    })
}

/// Minimax weight learning over the moment pair.
///
/// With `c(beta) = N beta + (1-gamma) mu0` and `N = -M^T`: for
/// `lambda_w > 0` the saddle point is
/// `beta = -(N^T H~^{-1} N)^{-1} N^T H~^{-1} (1-gamma) mu0`; for
/// `lambda_w = 0` the least-squares solution of
/// `N beta = -(1-gamma) mu0`.
pub fn mwl(moments: &MomentSet, stab: &StabilizerConfig) -> Result<NuisanceEstimate> {
    stab.validate()?;
    let n_mat = moments.n_mat();
    let c0 = &moments.mu0 * (1.0 - moments.gamma);
    let (coeffs, objective_value) = if stab.lambda_w > 0.0 {
        let d = moments.h.nrows();
        let ridge = ridge_for(&moments.h, stab.ridge);
        let h_tilde = &moments.h + DMatrix::<f64>::identity(d, d) * ridge;
        let (hinv_n, hinv_c) = spd_solve_pair(&h_tilde, &n_mat, &c0, "mwl")?;
        let normal = n_mat.transpose() * &hinv_n;
        let rhs = -(n_mat.transpose() * &hinv_c);
        let beta = linalg::lu_solve(&normal, &rhs, "mwl normal equations")?;
        let resid = &n_mat * &beta + &c0;
        let chol = h_tilde.cholesky().expect("checked above");
        let obj = resid.dot(&chol.solve(&resid)) / (4.0 * stab.lambda_w);
        (beta, obj)
    } else {
        let rhs = -&c0;
        let beta = full_rank_lsq(&n_mat, &rhs, "mwl moment system")?;
        let obj = (&n_mat * &beta + &c0).norm();
        (beta, obj)
    };
    let values = moments.cls_w.values(&coeffs);
    Ok(NuisanceEstimate {
        kind: NuisanceKind::W,
        coeffs,
        values,
        objective_value,
    })
}

/// Direct-method value `(1-gamma) E_{d0}[q(s0, pi_e)]`.
pub fn dm_value(q_vals: &DVector<f64>, mdp: &TabularMdp, pi_e: &Policy) -> OpeEstimate {
    let v = state_values(mdp, pi_e, q_vals);
    let dm = (1.0 - mdp.gamma) * mdp.d0.dot(&v);
    OpeEstimate::plain(dm, Variant::Dm, dm, 0.0)
}

/// Importance-sampling value `E[w(s,a) r]`.
pub fn is_value(w_vals: &DVector<f64>, mdp: &TabularMdp, source: ValueSource) -> OpeEstimate {
    let j = match source {
        ValueSource::Empirical(data) => {
            let sum: f64 = data
                .tuples
                .iter()
                .map(|t| w_vals[mdp.idx(t.s, t.a)] * t.r)
                .sum();
            sum / data.len() as f64
        }
        ValueSource::Population(dist) => {
            let r_bar = mdp.mean_reward();
            (0..mdp.n_pairs())
                .map(|i| dist.joint[i] * w_vals[i] * r_bar[i])
                .sum()
        }
    };
    OpeEstimate::plain(j, Variant::Is, 0.0, j)
}

/// The doubly robust influence average
/// `E[w (r - q + gamma v(s'))] + (1-gamma) E_{d0}[v]`, split into its
/// correction and DM parts.
fn dr_terms(
    w_vals: &DVector<f64>,
    q_vals: &DVector<f64>,
    mdp: &TabularMdp,
    pi_e: &Policy,
    source: ValueSource,
) -> (f64, f64) {
    let v = state_values(mdp, pi_e, q_vals);
    let dm = (1.0 - mdp.gamma) * mdp.d0.dot(&v);
    let correction = match source {
        ValueSource::Empirical(data) => {
            let sum: f64 = data
                .tuples
                .iter()
                .map(|t| {
                    let i = mdp.idx(t.s, t.a);
                    w_vals[i] * (t.r - q_vals[i] + mdp.gamma * v[t.s_next])
                })
                .sum();
            sum / data.len() as f64
        }
        ValueSource::Population(dist) => {
            let r_bar = mdp.mean_reward();
            let t_q = &mdp.transition * &v;
            (0..mdp.n_pairs())
                .map(|i| dist.joint[i] * w_vals[i] * (r_bar[i] - q_vals[i] + mdp.gamma * t_q[i]))
                .sum()
        }
    };
    (dm, correction)
}

/// Doubly robust value of a (w, q) nuisance pair.
pub fn dr_value(
    w_vals: &DVector<f64>,
    q_vals: &DVector<f64>,
    mdp: &TabularMdp,
    pi_e: &Policy,
    source: ValueSource,
) -> OpeEstimate {
    let (dm, correction) = dr_terms(w_vals, q_vals, mdp, pi_e, source);
    OpeEstimate::plain(dm + correction, Variant::Dr, dm, correction)
}

/// Cross-fitted doubly robust estimate with nuisances produced by `fit` on
/// the opposite fold:
/// split in half, fit on each fold, average the influence term of each
/// fold's estimates over the other fold, and average the two results.
pub fn crossfit_dr_with<F>(
    dataset: &TransitionDataset,
    mdp: &TabularMdp,
    pi_e: &Policy,
    seed: u64,
    mut fit: F,
) -> Result<OpeEstimate>
where
    F: FnMut(&TransitionDataset) -> Result<(NuisanceEstimate, NuisanceEstimate)>,
{
    if dataset.len() < 4 {
        return Err(OpeError::Empty(
            "cross-fitting needs at least four tuples".into(),
        ));
    }
    let (fold0, fold1) = split_half(dataset, seed)?;
    let mut fold_details = Vec::with_capacity(2);
    let mut nuisances = Vec::with_capacity(4);
    for (k, (fit_set, eval_set)) in [(&fold0, &fold1), (&fold1, &fold0)].into_iter().enumerate() {
        let (w_est, q_est) = fit(fit_set).map_err(|e| OpeError::Fold {
            fold: k,
            source: Box::new(e),
        })?;
        let (dm, correction) = dr_terms(
            &w_est.values,
            &q_est.values,
            mdp,
            pi_e,
            ValueSource::Empirical(eval_set),
        );
        fold_details.push(FoldDetail {
            fold: k,
            n_eval: eval_set.len(),
            j_fold: dm + correction,
            dm_term: dm,
            correction_term: correction,
            w_coeffs: w_est.coeffs.clone(),
            q_coeffs: q_est.coeffs.clone(),
        });
        nuisances.push(w_est);
        nuisances.push(q_est);
    }
    let j_hat = 0.5 * (fold_details[0].j_fold + fold_details[1].j_fold);
    let dm_term = 0.5 * (fold_details[0].dm_term + fold_details[1].dm_term);
    let correction_term = 0.5 * (fold_details[0].correction_term + fold_details[1].correction_term);
    Ok(OpeEstimate {
        j_hat,
        variant: Variant::DrCrossfit,
        dm_term,
        correction_term,
        nuisances,
        fold_details,
        indices: None,
    })
}

/// Cross-fitted DR with MWL/MQL nuisances fit per fold.
///
/// `cls_w1` and `cls_q1` are the outer classes the weight and q estimates
/// live in. The adversary of each saddle point is separate: `cls_q_inner`
/// is the inner q class of the weight objective and `cls_w_inner` the
/// inner weight class of the q objective, so a misspecified outer class
/// leaves the other estimate identified.
#[allow(clippy::too_many_arguments)]
pub fn crossfit_dr(
    dataset: &TransitionDataset,
    mdp: &TabularMdp,
    pi_e: &Policy,
    cls_w1: &LinearClass,
    cls_q1: &LinearClass,
    cls_w_inner: &LinearClass,
    cls_q_inner: &LinearClass,
    stab: &StabilizerConfig,
    seed: u64,
) -> Result<OpeEstimate> {
    crossfit_dr_with(dataset, mdp, pi_e, seed, |fold| {
        let mwl_moments = moments_empirical(fold, cls_w1, cls_q_inner, pi_e, mdp)?;
        let mql_moments = moments_empirical(fold, cls_w_inner, cls_q1, pi_e, mdp)?;
        Ok((mwl(&mwl_moments, stab)?, mql(&mql_moments, stab)?))
    })
}

/// Cross-fitted DR with one shared weight class and one shared q class on
/// both sides of each saddle point.
pub fn crossfit_dr_shared(
    dataset: &TransitionDataset,
    mdp: &TabularMdp,
    pi_e: &Policy,
    cls_w: &LinearClass,
    cls_q: &LinearClass,
    stab: &StabilizerConfig,
    seed: u64,
) -> Result<OpeEstimate> {
    crossfit_dr(dataset, mdp, pi_e, cls_w, cls_q, cls_w, cls_q, stab, seed)
}

/// Fitted-q iteration over `t_iters` disjoint bins.
#[derive(Debug, Clone)]
pub struct FqiOutcome {
    pub coeffs: DVector<f64>,
    pub values: DVector<f64>,
    pub estimate: OpeEstimate,
    /// True when any per-bin design needed the ridge fallback.
    pub ridged: bool,
}

/// `f_t = argmin_q sum_{j in bin t} (r_j + gamma f_{t-1}(s'_j, pi_e) -
/// q(s_j, a_j))^2`, estimate `(1-gamma) E_{d0}[f_T(s0, pi_e)]`.
pub fn fqi(
    dataset: &TransitionDataset,
    mdp: &TabularMdp,
    pi_e: &Policy,
    cls_q: &LinearClass,
    t_iters: usize,
    f0: &DVector<f64>,
) -> Result<FqiOutcome> {
    let bins = split_bins(dataset, t_iters)?;
    let d = cls_q.dim();
    let mut values = f0.clone();
    let mut coeffs = DVector::zeros(d);
    let mut ridged = false;
    for bin in &bins {
        let v_prev = state_values(mdp, pi_e, &values);
        let mut design = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        for t in &bin.tuples {
            let i = mdp.idx(t.s, t.a);
            let y = t.r + mdp.gamma * v_prev[t.s_next];
            let phi = cls_q.features.row(i);
            for p in 0..d {
                rhs[p] += phi[p] * y;
                for q in 0..d {
                    design[(p, q)] += phi[p] * phi[q];
                }
            }
        }
        let nb = bin.len() as f64;
        design /= nb;
        rhs /= nb;
        let ridge = ridge_for(&design, 0.0);
        if ridge > 0.0 {
            ridged = true;
            design += DMatrix::<f64>::identity(d, d) * ridge;
        }
        coeffs = linalg::lu_solve(&design, &rhs, "fqi bin regression")?;
        values = cls_q.values(&coeffs);
    }
    let estimate = OpeEstimate {
        variant: Variant::Fqi,
        ..dm_value(&values, mdp, pi_e)
    };
    Ok(FqiOutcome {
        coeffs,
        values,
        estimate,
        ridged,
    })
}

/// FQI iterated with exact conditional means: each step is the X-weighted
/// projection of `B f_{t-1}` onto the class.
#[derive(Debug, Clone)]
pub struct FqiPopulationOutcome {
    pub coeffs: DVector<f64>,
    pub values: DVector<f64>,
    pub estimate: OpeEstimate,
    /// Measured per-step regression residuals `||f_t - B f_{t-1}||_X`.
    pub step_residuals: Vec<f64>,
}

pub fn fqi_population(
    mdp: &TabularMdp,
    dist: &DataDistribution,
    pi_e: &Policy,
    cls_q: &LinearClass,
    t_iters: usize,
    f0: &DVector<f64>,
) -> Result<FqiPopulationOutcome> {
    let x = &dist.joint;
    let r_bar = mdp.mean_reward();
    let mut values = f0.clone();
    let mut coeffs = DVector::zeros(cls_q.dim());
    let mut step_residuals = Vec::with_capacity(t_iters);
    for _ in 0..t_iters {
        let v_prev = state_values(mdp, pi_e, &values);
        let target = &r_bar + &mdp.transition * &v_prev * mdp.gamma;
        coeffs = linalg::weighted_projection_coeffs(&cls_q.features, &target, x, "fqi projection")?;
        values = cls_q.values(&coeffs);
        step_residuals.push(linalg::norm_x(&(&values - &target), x));
    }
    let estimate = OpeEstimate {
        variant: Variant::Fqi,
        ..dm_value(&values, mdp, pi_e)
    };
    Ok(FqiPopulationOutcome {
        coeffs,
        values,
        estimate,
        step_residuals,
    })
}

/// Exact minimax direct learning over finite dictionaries:
/// `min_w max_q E[w (r - q + gamma v(s'))] + (1-gamma) E_{d0}[v]`,
/// enumerated.
pub fn mdl(
    dict_w: &[DVector<f64>],
    dict_q: &[DVector<f64>],
    mdp: &TabularMdp,
    pi_e: &Policy,
    source: ValueSource,
) -> Result<OpeEstimate> {
    if dict_w.is_empty() || dict_q.is_empty() {
        return Err(OpeError::Empty("mdl dictionaries must be nonempty".into()));
    }
    let mut best: Option<(f64, usize, usize, f64, f64)> = None;
    for (k, w) in dict_w.iter().enumerate() {
        let mut inner: Option<(f64, usize, f64, f64)> = None;
        for (l, q) in dict_q.iter().enumerate() {
            let (dm, correction) = dr_terms(w, q, mdp, pi_e, source);
            let value = dm + correction;
            if inner.is_none_or(|(v, ..)| value > v) {
                inner = Some((value, l, dm, correction));
            }
        }
        let (value, l, dm, correction) = inner.expect("nonempty dictionary");
        if best.is_none_or(|(v, ..)| value < v) {
            best = Some((value, k, l, dm, correction));
        }
    }
    let (j_hat, k, l, dm, correction) = best.expect("nonempty dictionary");
    Ok(OpeEstimate {
        j_hat,
        variant: Variant::Mdl,
        dm_term: dm,
        correction_term: correction,
        nuisances: vec![
            dictionary_estimate(NuisanceKind::W, dict_w, k),
            dictionary_estimate(NuisanceKind::Q, dict_q, l),
        ],
        fold_details: Vec::new(),
        indices: Some((k, l)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MinimaxObjective {
    Mwl,
    Mql,
}

/// Exact unstabilized min-max of the absolute empirical objective over
/// finite dictionaries; the adversary class enters through the inner
/// maximum.
pub fn minimax_enumerate(
    dict_w: &[DVector<f64>],
    dict_q: &[DVector<f64>],
    objective: MinimaxObjective,
    mdp: &TabularMdp,
    pi_e: &Policy,
    source: ValueSource,
) -> Result<(usize, NuisanceEstimate)> {
    if dict_w.is_empty() || dict_q.is_empty() {
        return Err(OpeError::Empty(
            "enumeration dictionaries must be nonempty".into(),
        ));
    }
    match objective {
        MinimaxObjective::Mwl => {
            // min_w max_q |E[w Jq] + (1-gamma) E_{d0}[v]|.
            let scored = dict_w.iter().map(|w| {
                dict_q
                    .iter()
                    .map(|q| {
                        let (dm, correction) = dr_terms(w, q, mdp, pi_e, source);
                        let reward_part = is_value(w, mdp, source).j_hat;
                        // E[w Jq] + (1-gamma)E_{d0}[v] = DR value minus the
                        // reward term.
                        (dm + correction - reward_part).abs()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            let (k, score) = argmin(scored);
            Ok((
                k,
                dictionary_estimate_scored(NuisanceKind::W, dict_w, k, score),
            ))
        }
        MinimaxObjective::Mql => {
            // min_q max_w |E[w (r - q + gamma v(s'))]|.
            let scored = dict_q.iter().map(|q| {
                dict_w
                    .iter()
                    .map(|w| dr_terms(w, q, mdp, pi_e, source).1.abs())
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            let (l, score) = argmin(scored);
            Ok((
                l,
                dictionary_estimate_scored(NuisanceKind::Q, dict_q, l, score),
            ))
        }
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

fn dictionary_estimate(
    kind: NuisanceKind,
    dict: &[DVector<f64>],
    index: usize,
) -> NuisanceEstimate {
    dictionary_estimate_scored(kind, dict, index, 0.0)
}

fn dictionary_estimate_scored(
    kind: NuisanceKind,
    dict: &[DVector<f64>],
    index: usize,
    objective_value: f64,
) -> NuisanceEstimate {
    let mut coeffs = DVector::zeros(dict.len());
    coeffs[index] = 1.0;
    NuisanceEstimate {
        kind,
        coeffs,
        values: dict[index].clone(),
        objective_value,
    }
}
