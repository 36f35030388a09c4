//! Monte-Carlo study harness: rate, CLT, robustness, and FQI-decay studies
//! with seeded replications, CSV/JSON outputs, and an optional SVG plot.
//!
//! Replications are independent tasks keyed by `(n_index, replication)`
//! with derived seeds, so parallel and serial execution produce identical
//! row sets.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classes::LinearClass;
use crate::diagnostics::efficiency_bound;
use crate::error::{OpeError, Result};
use crate::estimators::{
    crossfit_dr, dm_value, dr_value, fqi_population, is_value, mql, mwl, StabilizerConfig,
    ValueSource,
};
use crate::linalg;
use crate::mdp::{DataDistribution, ExactSolution, Policy, TabularMdp};
use crate::sampling::{
    child_seed, draw_dataset, moments_empirical, moments_population, splitmix64,
};

/// 97.5% normal quantile for two-sided 95% intervals.
pub const Z_975: f64 = 1.959963984540054;

/// EB below this is treated as degenerate and standardization is skipped.
pub const EB_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyVariant {
    /// MQL nuisance, direct-method value.
    MqlDm,
    /// MWL nuisance, importance-sampling value.
    MwlIs,
    /// Cross-fitted doubly robust value.
    DrCrossfit,
}

/// A fully resolved study: model, law, classes, estimator, and grid.
#[derive(Debug, Clone)]
pub struct Study {
    pub mdp: TabularMdp,
    pub pi_e: Policy,
    pub dist: DataDistribution,
    pub variant: StudyVariant,
    pub stab: StabilizerConfig,
    /// Outer weight class (the span the weight estimate lives in).
    pub cls_w: LinearClass,
    /// Outer q class.
    pub cls_q: LinearClass,
    /// Inner adversary classes for the two saddle points.
    pub cls_w_inner: LinearClass,
    pub cls_q_inner: LinearClass,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub parallel: bool,
}

impl Study {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mdp: TabularMdp,
        pi_e: Policy,
        dist: DataDistribution,
        variant: StudyVariant,
        stab: StabilizerConfig,
        cls_w: LinearClass,
        cls_q: LinearClass,
        n_grid: Vec<usize>,
        replications: usize,
        base_seed: u64,
    ) -> Result<Self> {
        if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OpeError::Invalid(
                "n_grid must be nonempty and strictly increasing".into(),
            ));
        }
        if replications < 2 {
            return Err(OpeError::Invalid("need at least two replications".into()));
        }
        Ok(Study {
            mdp,
            pi_e,
            dist,
            variant,
            stab,
            cls_w_inner: cls_w.clone(),
            cls_q_inner: cls_q.clone(),
            cls_w,
            cls_q,
            n_grid,
            replications,
            base_seed,
            parallel: true,
        })
    }

    /// Task seed for `(n_index, replication)`, frozen.
    pub fn task_seed(&self, n_index: usize, replication: usize) -> u64 {
        child_seed(
            self.base_seed,
            ((n_index as u64) << 32) | replication as u64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub j_hat: f64,
    pub j_true: f64,
    pub error: f64,
    /// `sqrt(n) error / sqrt(EB)`; absent when EB is degenerate or the
    /// replication failed.
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RmsePoint {
    pub n: usize,
    pub rmse: f64,
    pub successes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltPoint {
    pub n: usize,
    /// Empirical variance of the standardized errors relative to EB.
    pub var_ratio: f64,
    /// Fraction of replications whose 95% EB-interval covers the truth.
    pub coverage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub j_true: f64,
    pub eb: f64,
    pub degenerate_eb: bool,
    pub rmse: Vec<RmsePoint>,
    /// Log-log slope of RMSE against n, with its standard error; absent for
    /// single-point grids.
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    /// CLT statistics at the largest n.
    pub var_ratio: Option<f64>,
    pub coverage: Option<f64>,
    pub clt: Vec<CltPoint>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub summary: StudySummary,
}

fn estimate_once(study: &Study, n: usize, seed: u64) -> Result<f64> {
    let data = draw_dataset(&study.mdp, &study.dist, n, seed);
    match study.variant {
        StudyVariant::MqlDm => {
            let mom = moments_empirical(
                &data,
                &study.cls_w_inner,
                &study.cls_q,
                &study.pi_e,
                &study.mdp,
            )?;
            let q_hat = mql(&mom, &study.stab)?;
            Ok(dm_value(&q_hat.values, &study.mdp, &study.pi_e).j_hat)
        }
        StudyVariant::MwlIs => {
            let mom = moments_empirical(
                &data,
                &study.cls_w,
                &study.cls_q_inner,
                &study.pi_e,
                &study.mdp,
            )?;
            let w_hat = mwl(&mom, &study.stab)?;
            Ok(is_value(&w_hat.values, &study.mdp, ValueSource::Empirical(&data)).j_hat)
        }
        StudyVariant::DrCrossfit => {
            let split_seed = splitmix64(seed);
            let est = crossfit_dr(
                &data,
                &study.mdp,
                &study.pi_e,
                &study.cls_w,
                &study.cls_q,
                &study.cls_w_inner,
                &study.cls_q_inner,
                &study.stab,
                split_seed,
            )?;
            Ok(est.j_hat)
        }
    }
}

/// Runs the replication grid and aggregates. This is the single runner
/// behind the rate and CLT entry points; they differ only in which summary
/// fields matter.
pub fn run_study(study: &Study) -> Result<StudyResult> {
    let exact = ExactSolution::solve(&study.mdp, &study.pi_e, &study.dist)?;
    let eb = efficiency_bound(&study.mdp, &study.pi_e, &study.dist)?.eb;
    let degenerate_eb = eb < EB_FLOOR;
    let tasks: Vec<(usize, usize)> = study
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(ni, _)| (0..study.replications).map(move |r| (ni, r)))
        .collect();
    let run_task = |&(ni, rep): &(usize, usize)| -> StudyRow {
        let n = study.n_grid[ni];
        let seed = study.task_seed(ni, rep);
        match estimate_once(study, n, seed) {
            Ok(j_hat) => {
                let error = j_hat - exact.j;
                let std_error = if degenerate_eb {
                    None
                } else {
                    Some((n as f64).sqrt() * error / eb.sqrt())
                };
                StudyRow {
                    n,
                    replication: rep,
                    seed,
                    j_hat,
                    j_true: exact.j,
                    error,
                    std_error,
                }
            }
            Err(_) => StudyRow {
                n,
                replication: rep,
                seed,
                j_hat: f64::NAN,
                j_true: exact.j,
                error: f64::NAN,
                std_error: None,
            },
        }
    };
    let rows: Vec<StudyRow> = if study.parallel {
        tasks.par_iter().map(run_task).collect()
    } else {
        tasks.iter().map(run_task).collect()
    };
    let summary = summarize(study, &rows, exact.j, eb, degenerate_eb);
    Ok(StudyResult { rows, summary })
}

/// Rate study: log-log RMSE slope against the n grid.
pub fn run_rate_study(study: &Study) -> Result<StudyResult> {
    run_study(study)
}

/// CLT study: standardized errors against the exact efficiency bound.
pub fn run_clt_study(study: &Study) -> Result<StudyResult> {
    run_study(study)
}

fn summarize(
    study: &Study,
    rows: &[StudyRow],
    j_true: f64,
    eb: f64,
    degenerate_eb: bool,
) -> StudySummary {
    let mut rmse = Vec::with_capacity(study.n_grid.len());
    let mut clt = Vec::with_capacity(study.n_grid.len());
    let mut failures = 0;
    for &n in &study.n_grid {
        let errors: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.error).collect();
        let ok: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
        failures += errors.len() - ok.len();
        let mse = ok.iter().map(|e| e * e).sum::<f64>() / ok.len().max(1) as f64;
        rmse.push(RmsePoint {
            n,
            rmse: mse.sqrt(),
            successes: ok.len(),
        });
        if !degenerate_eb && !ok.is_empty() {
            let std_errs: Vec<f64> = ok
                .iter()
                .map(|e| (n as f64).sqrt() * e / eb.sqrt())
                .collect();
            let mean = std_errs.iter().sum::<f64>() / std_errs.len() as f64;
            let var = std_errs
                .iter()
                .map(|z| (z - mean) * (z - mean))
                .sum::<f64>()
                / (std_errs.len() - 1).max(1) as f64;
            let half_width = Z_975 * (eb / n as f64).sqrt();
            let covered = ok.iter().filter(|e| e.abs() <= half_width).count();
            clt.push(CltPoint {
                n,
                var_ratio: var,
                coverage: covered as f64 / ok.len() as f64,
            });
        }
    }
    let (slope, slope_se) = fit_loglog_slope(&rmse);
    StudySummary {
        j_true,
        eb,
        degenerate_eb,
        slope,
        slope_se,
        var_ratio: clt.last().map(|c| c.var_ratio),
        coverage: clt.last().map(|c| c.coverage),
        rmse,
        clt,
        failures,
    }
}

/// Equal-weight least squares of `ln rmse` on `ln n`.
fn fit_loglog_slope(points: &[RmsePoint]) -> (Option<f64>, Option<f64>) {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.rmse > 0.0 && p.successes > 0)
        .map(|p| ((p.n as f64).ln(), p.rmse.ln()))
        .collect();
    if usable.len() < 2 {
        return (None, None);
    }
    let k = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / k;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / k;
    let sxx: f64 = usable
        .iter()
        .map(|(x, _)| (x - mean_x) * (x - mean_x))
        .sum();
    let sxy: f64 = usable
        .iter()
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    if usable.len() == 2 {
        return (Some(slope), None);
    }
    let rss: f64 = usable
        .iter()
        .map(|(x, y)| {
            let fitted = mean_y + slope * (x - mean_x);
            (y - fitted) * (y - fitted)
        })
        .sum();
    let se = (rss / (k - 2.0) / sxx).sqrt();
    (Some(slope), Some(se))
}

/// One arm of the robustness study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessArm {
    BothCorrect,
    WCorrectOnly,
    QCorrectOnly,
    BothWrong,
}

impl RobustnessArm {
    pub const ALL: [RobustnessArm; 4] = [
        RobustnessArm::BothCorrect,
        RobustnessArm::WCorrectOnly,
        RobustnessArm::QCorrectOnly,
        RobustnessArm::BothWrong,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            RobustnessArm::BothCorrect => "both_correct",
            RobustnessArm::WCorrectOnly => "w_correct_only",
            RobustnessArm::QCorrectOnly => "q_correct_only",
            RobustnessArm::BothWrong => "both_wrong",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub arm: RobustnessArm,
    pub rows: Vec<StudyRow>,
    pub rmse: Vec<RmsePoint>,
    /// Exactly computed population bias of the arm's limit nuisances.
    pub population_bias: f64,
}

#[derive(Debug, Clone)]
pub struct RobustnessResult {
    pub arms: Vec<ArmResult>,
    pub j_true: f64,
}

/// Four-arm robustness study: cross-fitted DR with correct/misspecified
/// outer classes. The inner adversary classes stay at the (rich) classes of
/// the base study so each saddle point remains identified.
pub fn run_robustness_study(
    base: &Study,
    wrong_w: &LinearClass,
    wrong_q: &LinearClass,
) -> Result<RobustnessResult> {
    let exact = ExactSolution::solve(&base.mdp, &base.pi_e, &base.dist)?;
    let mut arms = Vec::with_capacity(4);
    for arm in RobustnessArm::ALL {
        let (cls_w, cls_q) = match arm {
            RobustnessArm::BothCorrect => (base.cls_w.clone(), base.cls_q.clone()),
            RobustnessArm::WCorrectOnly => (base.cls_w.clone(), wrong_q.clone()),
            RobustnessArm::QCorrectOnly => (wrong_w.clone(), base.cls_q.clone()),
            RobustnessArm::BothWrong => (wrong_w.clone(), wrong_q.clone()),
        };
        let mut study = base.clone();
        study.variant = StudyVariant::DrCrossfit;
        study.cls_w = cls_w;
        study.cls_q = cls_q;
        let result = run_study(&study)?;
        let population_bias = population_dr_bias(&study, &exact)?;
        arms.push(ArmResult {
            arm,
            rows: result.rows,
            rmse: result.summary.rmse,
            population_bias,
        });
    }
    Ok(RobustnessResult {
        arms,
        j_true: exact.j,
    })
}

/// Population limit of the arm's DR estimate minus J: fit both nuisances on
/// exact moments and evaluate the population DR value.
fn population_dr_bias(study: &Study, exact: &ExactSolution) -> Result<f64> {
    let mwl_moments = moments_population(
        &study.mdp,
        &study.dist,
        &study.cls_w,
        &study.cls_q_inner,
        &study.pi_e,
    )?;
    let w_star = mwl(&mwl_moments, &study.stab)?;
    let mql_moments = moments_population(
        &study.mdp,
        &study.dist,
        &study.cls_w_inner,
        &study.cls_q,
        &study.pi_e,
    )?;
    let q_star = mql(&mql_moments, &study.stab)?;
    let value = dr_value(
        &w_star.values,
        &q_star.values,
        &study.mdp,
        &study.pi_e,
        ValueSource::Population(&study.dist),
    );
    Ok(value.j_hat - exact.j)
}

/// File-driven study description; paths are used as given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub mdp: String,
    pub pi_e: String,
    pub pi_b: String,
    pub ps: String,
    #[serde(default = "default_variant")]
    pub variant: StudyVariant,
    #[serde(default)]
    pub w_class: Option<String>,
    #[serde(default)]
    pub q_class: Option<String>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lambda")]
    pub lambda_q: f64,
    #[serde(default)]
    pub ridge: f64,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub output_dir: String,
    #[serde(default = "default_true")]
    pub parallel: bool,
    /// Iteration depths for the FQI decay study.
    #[serde(default)]
    pub t_grid: Option<Vec<usize>>,
    /// Misspecified classes for the robustness study; generated when absent.
    #[serde(default)]
    pub wrong_w_class: Option<String>,
    #[serde(default)]
    pub wrong_q_class: Option<String>,
}

fn default_variant() -> StudyVariant {
    StudyVariant::DrCrossfit
}

fn default_lambda() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl StudyConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn load_class(spec: &Option<String>, mdp: &TabularMdp, name: &str) -> Result<LinearClass> {
        match spec {
            Some(path) => Ok(LinearClass::new(
                crate::io::load_features_csv(std::path::Path::new(path))?,
                name,
            )),
            None => Ok(crate::classes::one_hot(mdp)),
        }
    }

    /// Loads the referenced files and validates the grid.
    pub fn resolve(&self) -> Result<Study> {
        let mdp = crate::io::load_mdp(std::path::Path::new(&self.mdp))?;
        let pi_e = crate::io::load_policy(std::path::Path::new(&self.pi_e))?;
        let dist = crate::io::load_data_distribution(
            std::path::Path::new(&self.ps),
            std::path::Path::new(&self.pi_b),
        )?;
        let cls_w = Self::load_class(&self.w_class, &mdp, "w-class")?;
        let cls_q = Self::load_class(&self.q_class, &mdp, "q-class")?;
        let stab = StabilizerConfig {
            lambda_w: self.lambda,
            lambda_q: self.lambda_q,
            ridge: self.ridge,
        };
        let mut study = Study::new(
            mdp,
            pi_e,
            dist,
            self.variant,
            stab,
            cls_w,
            cls_q,
            self.n_grid.clone(),
            self.replications,
            self.base_seed,
        )?;
        study.parallel = self.parallel;
        Ok(study)
    }
}

/// A seeded random low-dimensional span that provably excludes `truth`:
/// feature draws are retried until the X-weighted projection residual of
/// `truth` is at least `margin` times its norm.
pub fn misspecified_class(
    n_pairs: usize,
    x_weight: &DVector<f64>,
    truth: &DVector<f64>,
    seed: u64,
    name: &str,
) -> Result<LinearClass> {
    use rand::Rng;
    use rand::SeedableRng;
    let d = (n_pairs / 2).max(1);
    let margin = 0.05;
    let truth_norm = linalg::norm_x(truth, x_weight).max(1e-12);
    for attempt in 0..64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(child_seed(seed, attempt));
        let features =
            nalgebra::DMatrix::from_fn(n_pairs, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let cls = LinearClass::new(features, name);
        if cls.validate(x_weight).is_err() {
            continue;
        }
        let check = crate::classes::span_contains(&cls, truth, x_weight, 1e-8)?;
        if check.residual >= margin * truth_norm {
            return Ok(cls);
        }
    }
    Err(OpeError::Invalid(format!(
        "could not draw a span excluding the target for {name}"
    )))
}

#[derive(Debug, Clone, Serialize)]
pub struct FqiDecayRow {
    pub t: usize,
    pub dm_error: f64,
    /// Measured worst per-step regression residual at this depth.
    pub eps_max: f64,
    /// `(1 - gamma^{T/2})(1 + gamma^{1/2}) / sqrt(1-gamma) ||w||_2 eps
    ///  + 2 gamma^{T/2} (1-gamma) C_Q`.
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct FqiDecayResult {
    pub rows: Vec<FqiDecayRow>,
    pub j_true: f64,
}

/// FQI decay study in population-regression mode: the direct-method error
/// against the iteration-depth bound.
pub fn run_fqi_decay(
    mdp: &TabularMdp,
    dist: &DataDistribution,
    pi_e: &Policy,
    cls_q: &LinearClass,
    t_grid: &[usize],
    c_q: f64,
) -> Result<FqiDecayResult> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(OpeError::Invalid(
            "t_grid must be nonempty and strictly increasing".into(),
        ));
    }
    let exact = ExactSolution::solve(mdp, pi_e, dist)?;
    let w_norm = linalg::norm_x(&exact.w, &dist.joint);
    let gamma = mdp.gamma;
    let f0 = DVector::zeros(mdp.n_pairs());
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let partial = fqi_population(mdp, dist, pi_e, cls_q, t, &f0)?;
        let eps_max = partial
            .step_residuals
            .iter()
            .copied()
            .fold(0.0_f64, f64::max);
        let dm_error = (partial.estimate.j_hat - exact.j).abs();
        let tf = t as f64;
        let bound = (1.0 - gamma.powf(tf / 2.0)) * (1.0 + gamma.sqrt()) / (1.0 - gamma).sqrt()
            * w_norm
            * eps_max
            + 2.0 * gamma.powf(tf / 2.0) * (1.0 - gamma) * c_q;
        rows.push(FqiDecayRow {
            t,
            dm_error,
            eps_max,
            bound,
        });
    }
    Ok(FqiDecayResult {
        rows,
        j_true: exact.j,
    })
}

/// Writes the per-replication table; floats in shortest round-trip form so
/// reruns are byte-identical.
pub fn write_rows_csv(path: &std::path::Path, rows: &[StudyRow]) -> Result<()> {
    let mut out = String::from("n,replication,seed,j_hat,j_true,error,std_error\n");
    for r in rows {
        let std_err = r.std_error.map(|z| z.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n, r.replication, r.seed, r.j_hat, r.j_true, r.error, std_err
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_summary_json(path: &std::path::Path, summary: &StudySummary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Minimal SVG of log10 RMSE against log10 n.
pub fn write_rmse_svg(path: &std::path::Path, points: &[RmsePoint]) -> Result<()> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.rmse > 0.0)
        .map(|p| ((p.n as f64).log10(), p.rmse.log10()))
        .collect();
    if usable.is_empty() {
        return Err(OpeError::Empty("no positive RMSE points to plot".into()));
    }
    let (w, h, margin) = (640.0, 480.0, 60.0);
    let (x_min, x_max) = usable
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), (x, _)| {
            (lo.min(*x), hi.max(*x))
        });
    let (y_min, y_max) = usable
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), (_, y)| {
            (lo.min(*y), hi.max(*y))
        });
    let x_span = (x_max - x_min).max(1e-9);
    let y_span = (y_max - y_min).max(1e-9);
    let map = |(x, y): (f64, f64)| {
        (
            margin + (x - x_min) / x_span * (w - 2.0 * margin),
            h - margin - (y - y_min) / y_span * (h - 2.0 * margin),
        )
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{margin}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{margin}\" y1=\"{margin}\" x2=\"{margin}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">log10 n</text>\n\
         <text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">log10 RMSE</text>\n",
        h - margin,
        w - margin,
        h - margin,
        h - margin,
        w / 2.0,
        h - 15.0,
        h / 2.0,
        h / 2.0,
    );
    let path_points: Vec<String> = usable
        .iter()
        .map(|&p| {
            let (px, py) = map(p);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>\n",
        path_points.join(" ")
    ));
    for &p in &usable {
        let (px, py) = map(p);
        svg.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"4\" fill=\"steelblue\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
