//! `ope`: exact solutions, sampling, estimation, diagnostics, and
//! Monte-Carlo studies for off-policy evaluation on finite MDPs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

use ope_core::classes::{
    check_adjoint_q_completeness, check_adjoint_w_completeness, check_q_completeness,
    check_w_completeness, one_hot, LinearClass,
};
use ope_core::diagnostics::{
    concentrability, efficiency_bound, minimax_identity_check, norm_equivalence_check,
    recovery_constant,
};
use ope_core::estimators::{
    crossfit_dr_shared, dm_value, dr_value, fqi, is_value, mdl, mql, mwl, OpeEstimate,
    StabilizerConfig, ValueSource,
};
use ope_core::experiments::{
    misspecified_class, run_clt_study, run_fqi_decay, run_rate_study, run_robustness_study,
    write_rmse_svg, write_rows_csv, write_summary_json, StudyConfig,
};
use ope_core::io;
use ope_core::mdp::{DataDistribution, ExactSolution, Policy, TabularMdp};
use ope_core::operators::{build_operators, embed, operator_norm_check, OperatorKind};
use ope_core::sampling::{draw_dataset, moments_empirical, splitmix64};

#[derive(Parser)]
#[command(name = "ope", about = "Off-policy evaluation on finite MDPs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProblemArgs {
    /// MDP JSON file.
    #[arg(long)]
    mdp: PathBuf,
    /// Evaluation policy JSON (nested [s][a] array).
    #[arg(long = "pi-e")]
    pi_e: PathBuf,
    /// Behavior policy JSON.
    #[arg(long = "pi-b")]
    pi_b: PathBuf,
    /// Exploratory state weights JSON (array over states).
    #[arg(long)]
    ps: PathBuf,
}

struct Problem {
    mdp: TabularMdp,
    pi_e: Policy,
    dist: DataDistribution,
}

impl ProblemArgs {
    fn load(&self) -> Result<Problem> {
        let mdp = io::load_mdp(&self.mdp).context("loading MDP")?;
        let pi_e = io::load_policy(&self.pi_e).context("loading evaluation policy")?;
        let dist = io::load_data_distribution(&self.ps, &self.pi_b).context("loading data law")?;
        Ok(Problem { mdp, pi_e, dist })
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum EstimateVariant {
    Mql,
    Mwl,
    Dm,
    Is,
    Dr,
    Drcf,
    Fqi,
    Mdl,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the exact population quantities and print J, q, w.
    Exact(ProblemArgs),
    /// Draw an i.i.d. dataset from the offline law into a CSV file.
    Sample {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long = "pi-b")]
        pi_b: PathBuf,
        #[arg(long)]
        ps: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one estimator on a dataset and print the point estimate.
    Estimate {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        variant: EstimateVariant,
        /// Dataset CSV (columns s,a,r,s_prime).
        #[arg(long)]
        data: PathBuf,
        /// Feature CSV for the q class; one-hot when omitted.
        #[arg(long = "q-class")]
        q_class: Option<PathBuf>,
        /// Feature CSV for the w class; one-hot when omitted.
        #[arg(long = "w-class")]
        w_class: Option<PathBuf>,
        /// Stabilizer on the weight objective.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Stabilizer on the q objective.
        #[arg(long = "lambda-q", default_value_t = 1.0)]
        lambda_q: f64,
        #[arg(long, default_value_t = 0.0)]
        ridge: f64,
        /// Seed for the cross-fitting split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Iteration count for FQI.
        #[arg(long = "fqi-iters", default_value_t = 10)]
        fqi_iters: usize,
        /// Dictionary CSV for MDL weights (one column per element).
        #[arg(long = "dict-w")]
        dict_w: Option<PathBuf>,
        /// Dictionary CSV for MDL q functions.
        #[arg(long = "dict-q")]
        dict_q: Option<PathBuf>,
    },
    /// Structural diagnostics.
    #[command(subcommand)]
    Diagnose(DiagnoseCommand),
    /// Rate study from a JSON config.
    Rates {
        #[arg(long)]
        config: PathBuf,
        /// Also write an SVG of log RMSE against log n.
        #[arg(long)]
        plot: bool,
    },
    /// CLT / efficiency study from a JSON config.
    Clt {
        #[arg(long)]
        config: PathBuf,
    },
    /// Four-arm double-robustness study from a JSON config.
    Robustness {
        #[arg(long)]
        config: PathBuf,
    },
    /// FQI decay study from a JSON config.
    Fqi {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OperatorCheck {
    Adjoint,
    Fixedpoint,
    Norm,
}

#[derive(Subcommand)]
enum DiagnoseCommand {
    /// Operator identities: adjointness, fixed points, or the norm bound.
    Operators {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        check: OperatorCheck,
    },
    /// Realizability and completeness of a (q, w) class pair.
    Completeness {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long = "q-class")]
        q_class: Option<PathBuf>,
        #[arg(long = "w-class")]
        w_class: Option<PathBuf>,
    },
    /// Full report: concentrability, EB, recovery constants, norm
    /// equivalence.
    All {
        #[command(flatten)]
        problem: ProblemArgs,
    },
}

fn load_class(path: &Option<PathBuf>, mdp: &TabularMdp, name: &str) -> Result<LinearClass> {
    Ok(match path {
        Some(p) => LinearClass::new(io::load_features_csv(p)?, name),
        None => one_hot(mdp),
    })
}

fn load_dictionary(path: &Path) -> Result<Vec<DVector<f64>>> {
    let mat = io::load_features_csv(path)?;
    Ok((0..mat.ncols())
        .map(|j| mat.column(j).into_owned())
        .collect())
}

fn vec_json(v: &DVector<f64>) -> serde_json::Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn estimate_json(est: &OpeEstimate) -> serde_json::Value {
    json!({
        "j_hat": est.j_hat,
        "variant": est.variant.to_string(),
        "diagnostics": {
            "dm_term": est.dm_term,
            "correction_term": est.correction_term,
            "folds": est.fold_details.iter().map(|f| json!({
                "fold": f.fold,
                "n_eval": f.n_eval,
                "j_fold": f.j_fold,
            })).collect::<Vec<_>>(),
            "indices": est.indices,
            "nuisance_objectives": est.nuisances.iter()
                .map(|n| n.objective_value).collect::<Vec<_>>(),
        },
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Exact(args) => {
            let p = args.load()?;
            let exact = ExactSolution::solve(&p.mdp, &p.pi_e, &p.dist)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "j": exact.j,
                    "q": vec_json(&exact.q),
                    "v": vec_json(&exact.v),
                    "w": vec_json(&exact.w),
                    "occupancy": vec_json(&exact.occupancy),
                }))?
            );
        }
        Command::Sample {
            mdp,
            pi_b,
            ps,
            n,
            seed,
            out,
        } => {
            let mdp = io::load_mdp(&mdp)?;
            let dist = io::load_data_distribution(&ps, &pi_b)?;
            let data = draw_dataset(&mdp, &dist, n, seed);
            io::save_dataset_csv(&out, &data)?;
            println!(
                "{}",
                json!({"written": out.display().to_string(), "n": n, "seed": seed})
            );
        }
        Command::Estimate {
            problem,
            variant,
            data,
            q_class,
            w_class,
            lambda,
            lambda_q,
            ridge,
            seed,
            fqi_iters,
            dict_w,
            dict_q,
        } => {
            let p = problem.load()?;
            let dataset = io::load_dataset_csv(&data, &p.mdp, &p.dist)?;
            let cls_q = load_class(&q_class, &p.mdp, "q-class")?;
            let cls_w = load_class(&w_class, &p.mdp, "w-class")?;
            let stab = StabilizerConfig {
                lambda_w: lambda,
                lambda_q,
                ridge,
            };
            let est = match variant {
                EstimateVariant::Mql | EstimateVariant::Dm => {
                    let mom = moments_empirical(&dataset, &cls_w, &cls_q, &p.pi_e, &p.mdp)?;
                    let q_hat = mql(&mom, &stab)?;
                    let mut est = dm_value(&q_hat.values, &p.mdp, &p.pi_e);
                    est.nuisances.push(q_hat);
                    est
                }
                EstimateVariant::Mwl | EstimateVariant::Is => {
                    let mom = moments_empirical(&dataset, &cls_w, &cls_q, &p.pi_e, &p.mdp)?;
                    let w_hat = mwl(&mom, &stab)?;
                    let mut est = is_value(&w_hat.values, &p.mdp, ValueSource::Empirical(&dataset));
                    est.nuisances.push(w_hat);
                    est
                }
                EstimateVariant::Dr => {
                    let mom = moments_empirical(&dataset, &cls_w, &cls_q, &p.pi_e, &p.mdp)?;
                    let w_hat = mwl(&mom, &stab)?;
                    let q_hat = mql(&mom, &stab)?;
                    let mut est = dr_value(
                        &w_hat.values,
                        &q_hat.values,
                        &p.mdp,
                        &p.pi_e,
                        ValueSource::Empirical(&dataset),
                    );
                    est.nuisances.push(w_hat);
                    est.nuisances.push(q_hat);
                    est
                }
                EstimateVariant::Drcf => crossfit_dr_shared(
                    &dataset,
                    &p.mdp,
                    &p.pi_e,
                    &cls_w,
                    &cls_q,
                    &stab,
                    splitmix64(seed),
                )?,
                EstimateVariant::Fqi => {
                    let f0 = DVector::zeros(p.mdp.n_pairs());
                    let out = fqi(&dataset, &p.mdp, &p.pi_e, &cls_q, fqi_iters, &f0)?;
                    out.estimate
                }
                EstimateVariant::Mdl => {
                    let (Some(wp), Some(qp)) = (&dict_w, &dict_q) else {
                        bail!("--variant mdl needs --dict-w and --dict-q");
                    };
                    let dw = load_dictionary(wp)?;
                    let dq = load_dictionary(qp)?;
                    mdl(&dw, &dq, &p.mdp, &p.pi_e, ValueSource::Empirical(&dataset))?
                }
            };
            println!("{}", serde_json::to_string_pretty(&estimate_json(&est))?);
        }
        Command::Diagnose(cmd) => diagnose(cmd)?,
        Command::Rates { config, plot } => {
            let cfg = StudyConfig::load(&config)?;
            let study = cfg.resolve()?;
            let result = run_rate_study(&study)?;
            let out = ensure_output_dir(&cfg.output_dir)?;
            write_rows_csv(&out.join("rows.csv"), &result.rows)?;
            write_summary_json(&out.join("summary.json"), &result.summary)?;
            if plot {
                write_rmse_svg(&out.join("rmse.svg"), &result.summary.rmse)?;
            }
            println!(
                "{}",
                json!({
                    "slope": result.summary.slope,
                    "slope_se": result.summary.slope_se,
                    "rmse": result.summary.rmse,
                    "output_dir": out.display().to_string(),
                })
            );
        }
        Command::Clt { config } => {
            let cfg = StudyConfig::load(&config)?;
            let study = cfg.resolve()?;
            let result = run_clt_study(&study)?;
            let out = ensure_output_dir(&cfg.output_dir)?;
            write_rows_csv(&out.join("rows.csv"), &result.rows)?;
            write_summary_json(&out.join("summary.json"), &result.summary)?;
            println!(
                "{}",
                json!({
                    "eb": result.summary.eb,
                    "degenerate_eb": result.summary.degenerate_eb,
                    "var_ratio": result.summary.var_ratio,
                    "coverage": result.summary.coverage,
                    "output_dir": out.display().to_string(),
                })
            );
        }
        Command::Robustness { config } => {
            let cfg = StudyConfig::load(&config)?;
            let study = cfg.resolve()?;
            let exact = ExactSolution::solve(&study.mdp, &study.pi_e, &study.dist)?;
            let wrong_w = match &cfg.wrong_w_class {
                Some(p) => LinearClass::new(io::load_features_csv(Path::new(p))?, "wrong-w"),
                None => misspecified_class(
                    study.mdp.n_pairs(),
                    &study.dist.joint,
                    &exact.w,
                    cfg.base_seed ^ 0x57,
                    "wrong-w",
                )?,
            };
            let wrong_q = match &cfg.wrong_q_class {
                Some(p) => LinearClass::new(io::load_features_csv(Path::new(p))?, "wrong-q"),
                None => misspecified_class(
                    study.mdp.n_pairs(),
                    &study.dist.joint,
                    &exact.q,
                    cfg.base_seed ^ 0x9c,
                    "wrong-q",
                )?,
            };
            let result = run_robustness_study(&study, &wrong_w, &wrong_q)?;
            let out = ensure_output_dir(&cfg.output_dir)?;
            let mut arms_json = Vec::new();
            for arm in &result.arms {
                write_rows_csv(&out.join(format!("rows_{}.csv", arm.arm.name())), &arm.rows)?;
                arms_json.push(json!({
                    "arm": arm.arm.name(),
                    "population_bias": arm.population_bias,
                    "rmse": arm.rmse,
                }));
            }
            let report = json!({"j_true": result.j_true, "arms": arms_json});
            std::fs::write(
                out.join("robustness.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            println!("{report}");
        }
        Command::Fqi { config } => {
            let cfg = StudyConfig::load(&config)?;
            let study = cfg.resolve()?;
            let t_grid = cfg.t_grid.clone().unwrap_or_else(|| vec![1, 2, 4, 8, 16]);
            let c_q = study.mdp.r_max / (1.0 - study.mdp.gamma);
            let result = run_fqi_decay(
                &study.mdp,
                &study.dist,
                &study.pi_e,
                &study.cls_q,
                &t_grid,
                c_q,
            )?;
            let out = ensure_output_dir(&cfg.output_dir)?;
            let mut csv = String::from("t,dm_error,eps_max,bound\n");
            for row in &result.rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.t, row.dm_error, row.eps_max, row.bound
                ));
            }
            std::fs::write(out.join("fqi.csv"), csv)?;
            let report = json!({"j_true": result.j_true, "rows": result.rows});
            std::fs::write(out.join("fqi.json"), serde_json::to_string_pretty(&report)?)?;
            println!("{report}");
        }
    }
    Ok(())
}

fn ensure_output_dir(dir: &str) -> Result<PathBuf> {
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path)?;
    Ok(path)
}

fn diagnose(cmd: DiagnoseCommand) -> Result<()> {
    match cmd {
        DiagnoseCommand::Operators { problem, check } => {
            let p = problem.load()?;
            let ops = build_operators(&p.mdp, &p.pi_e, &p.dist)?;
            let exact = ExactSolution::solve(&p.mdp, &p.pi_e, &p.dist)?;
            let report = match check {
                OperatorCheck::Adjoint => {
                    use rand::Rng;
                    use rand::SeedableRng;
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xD1A6);
                    let n = p.mdp.n_pairs();
                    let mut max_res = 0.0_f64;
                    for _ in 0..50 {
                        let f = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                        let g = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                        let lhs = ops.inner_x(&f, &ops.apply_t(&g));
                        let rhs = ops.inner_x(&ops.apply_t_adjoint(&f), &g);
                        max_res = max_res.max((lhs - rhs).abs());
                    }
                    json!({"check": "adjoint", "max_residual": max_res,
                           "pass": max_res < 1e-9})
                }
                OperatorCheck::Fixedpoint => {
                    let q_res = (ops.apply_b(&exact.q) - &exact.q).amax();
                    let w_res = (ops.apply_b_prime(&exact.w) - &exact.w).amax();
                    json!({"check": "fixedpoint", "q_residual": q_res,
                           "w_residual": w_res,
                           "pass": q_res < 1e-9 && w_res < 1e-9})
                }
                OperatorCheck::Norm => {
                    let con = concentrability(&p.mdp, &p.pi_e, &p.dist)?;
                    let norm = operator_norm_check(&ops, con.c_m, con.c_eta);
                    json!({"check": "norm", "norm": norm.norm, "bound": norm.bound,
                           "pass": norm.pass})
                }
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        DiagnoseCommand::Completeness {
            problem,
            q_class,
            w_class,
        } => {
            let p = problem.load()?;
            let ops = build_operators(&p.mdp, &p.pi_e, &p.dist)?;
            let exact = ExactSolution::solve(&p.mdp, &p.pi_e, &p.dist)?;
            let cls_q = load_class(&q_class, &p.mdp, "q-class")?;
            let cls_w = load_class(&w_class, &p.mdp, "w-class")?;
            let q_rep = check_q_completeness(&cls_q, &cls_w, &ops, &exact.q)?;
            let w_rep = check_w_completeness(&cls_w, &cls_q, &ops, &exact.w)?;
            let aq = check_adjoint_q_completeness(&cls_q, &ops);
            let aw = check_adjoint_w_completeness(&cls_w, &ops);
            let report = json!({
                "q_completeness": q_rep,
                "w_completeness": w_rep,
                "adjoint_q_completeness": aq.map_err(|e| e.to_string()).ok(),
                "adjoint_w_completeness": aw.map_err(|e| e.to_string()).ok(),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        DiagnoseCommand::All { problem } => {
            let p = problem.load()?;
            let ops = build_operators(&p.mdp, &p.pi_e, &p.dist)?;
            let exact = ExactSolution::solve(&p.mdp, &p.pi_e, &p.dist)?;
            let con = concentrability(&p.mdp, &p.pi_e, &p.dist)?;
            let eb = efficiency_bound(&p.mdp, &p.pi_e, &p.dist)?;
            let cls = one_hot(&p.mdp);
            let emb_fwd = embed(&ops, &cls.features, OperatorKind::Forward)?;
            let emb_adj = embed(&ops, &cls.features, OperatorKind::Adjoint)?;
            let c_iota_q = recovery_constant(&emb_fwd, p.mdp.gamma)?.c_iota;
            let c_iota_w = recovery_constant(&emb_adj, p.mdp.gamma)?.c_iota;
            let norm_equiv = norm_equivalence_check(&ops, &exact, con.c_m, con.c_eta, 100, 0x40E);
            let identity = minimax_identity_check(
                &p.mdp,
                &p.pi_e,
                &p.dist,
                &DVector::zeros(p.mdp.n_pairs()),
                &DVector::zeros(p.mdp.n_pairs()),
            )?;
            let report = json!({
                "j": exact.j,
                "concentrability": con,
                "eb": eb.eb,
                "c_iota_q": c_iota_q,
                "c_iota_w": c_iota_w,
                "norm_equiv": norm_equiv,
                "minimax_identity_residual_at_zero": identity,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
