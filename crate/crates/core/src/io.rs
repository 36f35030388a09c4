//! File formats: MDP and policy JSON, feature-matrix CSV, and dataset CSV.
//!
//! The MDP file is JSON with fields `n_states`, `n_actions`, `gamma`, `d0`,
//! `transition` (nested `[s][a][s']` arrays) and `rewards` (one list of
//! `[value, prob]` pairs per (s,a) pair in `s * n_actions + a` order).
//! Policies are bare nested arrays `[s][a]`; state weights bare arrays.
//! Feature CSVs hold one row per (s,a) pair in the same order. Dataset CSVs
//! have columns `s,a,r,s_prime`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OpeError, Result};
use crate::mdp::{validate, DataDistribution, Policy, TabularMdp};
use crate::sampling::{Transition, TransitionDataset};

#[derive(Debug, Serialize, Deserialize)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    d0: Vec<f64>,
    transition: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<(f64, f64)>>,
    #[serde(default)]
    r_max: Option<f64>,
}

pub fn load_mdp(path: &Path) -> Result<TabularMdp> {
    let text = std::fs::read_to_string(path)?;
    let file: MdpFile = serde_json::from_str(&text)?;
    let n = file.n_states * file.n_actions;
    if file.transition.len() != file.n_states {
        return Err(OpeError::Shape(format!(
            "transition has {} state blocks, expected {}",
            file.transition.len(),
            file.n_states
        )));
    }
    let mut transition = DMatrix::zeros(n, file.n_states);
    for (s, per_action) in file.transition.iter().enumerate() {
        if per_action.len() != file.n_actions {
            return Err(OpeError::Shape(format!(
                "transition[{s}] has {} action rows, expected {}",
                per_action.len(),
                file.n_actions
            )));
        }
        for (a, row) in per_action.iter().enumerate() {
            if row.len() != file.n_states {
                return Err(OpeError::Shape(format!(
                    "transition[{s}][{a}] has {} entries, expected {}",
                    row.len(),
                    file.n_states
                )));
            }
            for (s_next, &p) in row.iter().enumerate() {
                transition[(s * file.n_actions + a, s_next)] = p;
            }
        }
    }
    let r_max = file.r_max.unwrap_or_else(|| {
        file.rewards
            .iter()
            .flatten()
            .map(|&(v, _)| v)
            .fold(0.0_f64, f64::max)
            .max(1.0)
    });
    let mdp = TabularMdp {
        n_states: file.n_states,
        n_actions: file.n_actions,
        transition,
        rewards: file.rewards,
        d0: DVector::from_vec(file.d0),
        gamma: file.gamma,
        r_max,
    };
    validate(&mdp)?;
    Ok(mdp)
}

pub fn save_mdp(path: &Path, mdp: &TabularMdp) -> Result<()> {
    let transition = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|a| {
                    (0..mdp.n_states)
                        .map(|s_next| mdp.transition[(s * mdp.n_actions + a, s_next)])
                        .collect()
                })
                .collect()
        })
        .collect();
    let file = MdpFile {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        gamma: mdp.gamma,
        d0: mdp.d0.iter().copied().collect(),
        transition,
        rewards: mdp.rewards.clone(),
        r_max: Some(mdp.r_max),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text)?;
    if rows.is_empty() {
        return Err(OpeError::Empty(format!("policy file {}", path.display())));
    }
    let n_actions = rows[0].len();
    if rows.iter().any(|r| r.len() != n_actions) {
        return Err(OpeError::Shape("ragged policy rows".into()));
    }
    let probs = DMatrix::from_fn(rows.len(), n_actions, |s, a| rows[s][a]);
    Policy::new(probs)
}

pub fn save_policy(path: &Path, policy: &Policy) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..policy.probs.nrows())
        .map(|s| {
            (0..policy.probs.ncols())
                .map(|a| policy.probs[(s, a)])
                .collect()
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

pub fn load_state_weights(path: &Path) -> Result<DVector<f64>> {
    let text = std::fs::read_to_string(path)?;
    let values: Vec<f64> = serde_json::from_str(&text)?;
    Ok(DVector::from_vec(values))
}

pub fn save_state_weights(path: &Path, weights: &DVector<f64>) -> Result<()> {
    let values: Vec<f64> = weights.iter().copied().collect();
    std::fs::write(path, serde_json::to_string_pretty(&values)?)?;
    Ok(())
}

pub fn load_data_distribution(ps_path: &Path, pi_b_path: &Path) -> Result<DataDistribution> {
    let weights = load_state_weights(ps_path)?;
    let behavior = load_policy(pi_b_path)?;
    DataDistribution::new(weights, behavior)
}

/// Feature CSV: one row per (s,a) pair, comma-separated columns.
pub fn load_features_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| OpeError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(OpeError::Empty(format!("feature file {}", path.display())));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(OpeError::Shape("ragged feature rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

pub fn save_features_csv(path: &Path, features: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..features.nrows() {
        let row: Vec<String> = (0..features.ncols())
            .map(|j| features[(i, j)].to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Dataset CSV with header `s,a,r,s_prime`.
pub fn save_dataset_csv(path: &Path, dataset: &TransitionDataset) -> Result<()> {
    let mut out = String::from("s,a,r,s_prime\n");
    for t in &dataset.tuples {
        out.push_str(&format!("{},{},{},{}\n", t.s, t.a, t.r, t.s_next));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a dataset CSV back; the tuples are validated against the MDP and
/// re-attached to the given law.
pub fn load_dataset_csv(
    path: &Path,
    mdp: &TabularMdp,
    dist: &DataDistribution,
) -> Result<TransitionDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut tuples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line.trim() != "s,a,r,s_prime" {
                return Err(OpeError::Parse(format!(
                    "{}: expected header s,a,r,s_prime",
                    path.display()
                )));
            }
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(OpeError::Parse(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                lineno + 1
            )));
        }
        let parse_idx = |tok: &str, what: &str| -> Result<usize> {
            tok.trim().parse::<usize>().map_err(|e| {
                OpeError::Parse(format!("{}:{}: {what}: {e}", path.display(), lineno + 1))
            })
        };
        let s = parse_idx(fields[0], "s")?;
        let a = parse_idx(fields[1], "a")?;
        let r: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| OpeError::Parse(format!("{}:{}: r: {e}", path.display(), lineno + 1)))?;
        let s_next = parse_idx(fields[3], "s_prime")?;
        if s >= mdp.n_states || s_next >= mdp.n_states || a >= mdp.n_actions {
            return Err(OpeError::Parse(format!(
                "{}:{}: index out of range",
                path.display(),
                lineno + 1
            )));
        }
        let in_support = mdp.rewards[s * mdp.n_actions + a]
            .iter()
            .any(|&(v, _)| (v - r).abs() <= 1e-12);
        if !in_support {
            return Err(OpeError::Parse(format!(
                "{}:{}: reward {r} not in the support of (s={s}, a={a})",
                path.display(),
                lineno + 1
            )));
        }
        tuples.push(Transition { s, a, r, s_next });
    }
    Ok(TransitionDataset {
        tuples,
        seed: 0,
        dist: dist.clone(),
    })
}
