//! Linear-span hypothesis classes over S x A and their realizability and
//! completeness checks.
//!
//! A class is the span of the columns of a feature matrix; the tabular
//! one-hot basis is the special case `Phi = I`. All projections and
//! residuals use the `P_{S,A}`-weighted norm.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{OpeError, Result};
use crate::linalg;
use crate::mdp::{instantaneous_ratio, DataDistribution, Policy, TabularMdp};
use crate::operators::{embed, Embedding, OperatorKind, OperatorSet};

/// Default residual tolerance for span-membership tests.
pub const SPAN_TOL: f64 = 1e-8;

/// A linear span of functions on S x A.
#[derive(Debug, Clone)]
pub struct LinearClass {
    /// Feature matrix, one row per (s, a) pair indexed `s * n_actions + a`.
    pub features: DMatrix<f64>,
    pub name: String,
}

impl LinearClass {
    pub fn new(features: DMatrix<f64>, name: impl Into<String>) -> Self {
        LinearClass {
            features,
            name: name.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_pairs(&self) -> usize {
        self.features.nrows()
    }

    /// Columns must be linearly independent under the data weighting:
    /// smallest singular value of `X^{1/2} Phi` above 1e-10.
    pub fn validate(&self, x_weight: &DVector<f64>) -> Result<()> {
        let scaled = linalg::scale_rows(&self.features, &x_weight.map(f64::sqrt));
        let (sigma_min, _) = linalg::singular_value_range(&scaled);
        if sigma_min <= 1e-10 {
            return Err(OpeError::RankDeficient {
                class: self.name.clone(),
                sigma_min,
            });
        }
        Ok(())
    }

    pub fn values(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.features * coeffs
    }
}

/// The tabular one-hot basis: the identity feature matrix.
pub fn one_hot(mdp: &TabularMdp) -> LinearClass {
    LinearClass::new(DMatrix::identity(mdp.n_pairs(), mdp.n_pairs()), "one-hot")
}

#[derive(Debug, Clone, Serialize)]
pub struct SpanCheck {
    pub contained: bool,
    /// X-weighted least-squares residual.
    pub residual: f64,
    #[serde(skip)]
    pub coeffs: DVector<f64>,
}

/// X-weighted projection test: is `vec` in the span of the class?
pub fn span_contains(
    cls: &LinearClass,
    vec: &DVector<f64>,
    x_weight: &DVector<f64>,
    tol: f64,
) -> Result<SpanCheck> {
    let coeffs =
        linalg::weighted_projection_coeffs(&cls.features, vec, x_weight, "span projection")?;
    let residual = linalg::norm_x(&(vec - cls.values(&coeffs)), x_weight);
    Ok(SpanCheck {
        contained: residual < tol,
        residual,
        coeffs,
    })
}

/// Joint realizability and completeness verdict.
#[derive(Debug, Clone, Serialize)]
pub struct CompletenessReport {
    /// Residual of the true function against its own class.
    pub realizability_residual: f64,
    pub realizable: bool,
    /// Largest X-weighted residual of the shifted-operator columns against
    /// the partner class.
    pub closure_residual: f64,
    pub closed: bool,
    pub pass: bool,
}

/// q-completeness: `q_pi` in span(Q) and `T_gamma(Q - q_pi)` inside span(W).
///
/// Both conditions are set inclusions of spans, so the shift by `q_pi`
/// reduces to checking every column of `T_gamma Phi_Q` against span(W).
pub fn check_q_completeness(
    cls_q: &LinearClass,
    cls_w: &LinearClass,
    opset: &OperatorSet,
    q_pi: &DVector<f64>,
) -> Result<CompletenessReport> {
    let x = &opset.x_weight;
    let realizability = span_contains(cls_q, q_pi, x, SPAN_TOL)?;
    let shifted = &opset.p_pi * &cls_q.features * opset.gamma - &cls_q.features;
    let closure_residual = max_column_residual(cls_w, &shifted, x)?;
    let closed = closure_residual < SPAN_TOL;
    Ok(CompletenessReport {
        realizability_residual: realizability.residual,
        realizable: realizability.contained,
        closure_residual,
        closed,
        pass: realizability.contained && closed,
    })
}

/// w-completeness: `w_pi` in span(W) and `T'_gamma(W - w_pi)` inside span(Q).
pub fn check_w_completeness(
    cls_w: &LinearClass,
    cls_q: &LinearClass,
    opset: &OperatorSet,
    w_pi: &DVector<f64>,
) -> Result<CompletenessReport> {
    let x = &opset.x_weight;
    let realizability = span_contains(cls_w, w_pi, x, SPAN_TOL)?;
    let shifted = &opset.adjoint * &cls_w.features * opset.gamma - &cls_w.features;
    let closure_residual = max_column_residual(cls_q, &shifted, x)?;
    let closed = closure_residual < SPAN_TOL;
    Ok(CompletenessReport {
        realizability_residual: realizability.residual,
        realizable: realizability.contained,
        closure_residual,
        closed,
        pass: realizability.contained && closed,
    })
}

fn max_column_residual(cls: &LinearClass, targets: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    let mut max_res = 0.0_f64;
    for j in 0..targets.ncols() {
        let col = targets.column(j).into_owned();
        let check = span_contains(cls, &col, x, SPAN_TOL)?;
        max_res = max_res.max(check.residual);
    }
    Ok(max_res)
}

#[derive(Debug, Clone, Serialize)]
pub struct AdjointCompletenessReport {
    /// Distance from `1/gamma` to the nearest eigenvalue of the embedding;
    /// infinite at `gamma = 0`.
    pub spectral_gap: f64,
    /// Residual of the embedding used for the spectrum.
    pub embedding_residual: f64,
    pub pass: bool,
}

/// Adjoint q-completeness `(Q - q_pi) subset T'_gamma Q`, verified through
/// the spectrum of the forward embedding: it holds iff `1/gamma` is not an
/// eigenvalue of `M_pi` (and the class Gram is nonsingular).
pub fn check_adjoint_q_completeness(
    cls: &LinearClass,
    opset: &OperatorSet,
) -> Result<AdjointCompletenessReport> {
    spectral_shift_check(cls, opset, OperatorKind::Forward)
}

/// Adjoint w-completeness `(W - w_pi) subset T_gamma W`, through the
/// spectrum of the adjoint embedding.
pub fn check_adjoint_w_completeness(
    cls: &LinearClass,
    opset: &OperatorSet,
) -> Result<AdjointCompletenessReport> {
    spectral_shift_check(cls, opset, OperatorKind::Adjoint)
}

fn spectral_shift_check(
    cls: &LinearClass,
    opset: &OperatorSet,
    which: OperatorKind,
) -> Result<AdjointCompletenessReport> {
    cls.validate(&opset.x_weight)?;
    let emb = embed(opset, &cls.features, which)?;
    if !emb.exists {
        return Err(OpeError::NotClosed {
            operator: match which {
                OperatorKind::Forward => "forward transition operator".into(),
                OperatorKind::Adjoint => "adjoint transition operator".into(),
            },
            residual: emb.max_residual,
        });
    }
    Ok(spectral_gap_report(&emb, opset.gamma))
}

/// The `1/gamma`-versus-spectrum verdict for an existing embedding.
pub fn spectral_gap_report(emb: &Embedding, gamma: f64) -> AdjointCompletenessReport {
    if gamma == 0.0 {
        return AdjointCompletenessReport {
            spectral_gap: f64::INFINITY,
            embedding_residual: emb.max_residual,
            pass: true,
        };
    }
    let target = 1.0 / gamma;
    let eigs = emb.matrix.complex_eigenvalues();
    let gap = eigs
        .iter()
        .map(|lam| ((lam.re - target).powi(2) + lam.im.powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min);
    AdjointCompletenessReport {
        spectral_gap: gap,
        embedding_residual: emb.max_residual,
        pass: gap > 1e-8,
    }
}

/// Sufficient condition for a bounded spectrum: nonnegative entries with
/// unit row sums or unit column sums bound the spectral radius by one
/// (`rho(M) = rho(M^T) <= min(norm_inf, norm_1)`), so `1/gamma` cannot be
/// an eigenvalue for any `gamma < 1`.
pub fn is_stochastic_embedding(matrix: &DMatrix<f64>, tol: f64) -> bool {
    if matrix.iter().any(|&v| v < -tol) {
        return false;
    }
    let rows = (0..matrix.nrows()).all(|i| (matrix.row(i).sum() - 1.0).abs() <= tol);
    let cols = (0..matrix.ncols()).all(|j| (matrix.column(j).sum() - 1.0).abs() <= tol);
    rows || cols
}

/// The posterior-linear w-class: features `eta(s,a) psi_j(s)` with `psi`
/// the one-hot state basis.
///
/// The class contains `w_pi` for any data law; its closure under the
/// shifted backward operator additionally needs `P_{S'} = P_S`, so the
/// returned flag reports whether the law is stationary.
pub fn posterior_w_class(
    mdp: &TabularMdp,
    pi_e: &Policy,
    dist: &DataDistribution,
) -> Result<(LinearClass, bool)> {
    let eta = instantaneous_ratio(pi_e, &dist.behavior)?;
    let n = mdp.n_pairs();
    let mut features = DMatrix::zeros(n, mdp.n_states);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let i = mdp.idx(s, a);
            features[(i, s)] = eta[i];
        }
    }
    let stationary = dist.is_stationary(mdp, 1e-9);
    Ok((LinearClass::new(features, "posterior eta-psi"), stationary))
}
