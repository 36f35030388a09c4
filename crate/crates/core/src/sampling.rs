//! I.i.d. batch data from the offline law, sample splits, and the moment
//! matrices feeding the closed-form minimax solves.
//!
//! All randomness flows through seeded ChaCha8 streams. Child seeds are
//! derived with a splitmix64 finalizer, frozen here for reproducibility:
//! `child_seed(base, i) = splitmix64(base ^ splitmix64(i))`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classes::LinearClass;
use crate::error::{OpeError, Result};
use crate::mdp::{DataDistribution, Policy, TabularMdp};

/// The splitmix64 finalizer.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derived seed for sub-stream `i` of `base`.
pub fn child_seed(base: u64, i: u64) -> u64 {
    splitmix64(base ^ splitmix64(i))
}

/// One observed quadruplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// An i.i.d. batch dataset together with the law it was drawn from.
#[derive(Debug, Clone)]
pub struct TransitionDataset {
    pub tuples: Vec<Transition>,
    pub seed: u64,
    pub dist: DataDistribution,
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }
}

/// Inverse-CDF draw from a probability slice; the iteration order is part
/// of the frozen reproducibility contract.
fn sample_categorical<R: Rng>(rng: &mut R, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// Draws `n` i.i.d. quadruplets `s ~ P_S, a ~ pi_b(.|s), r ~ P_{R|S,A},
/// s' ~ P(.|s,a)`; bit-reproducible given the seed.
pub fn draw_dataset(
    mdp: &TabularMdp,
    dist: &DataDistribution,
    n: usize,
    seed: u64,
) -> TransitionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tuples = Vec::with_capacity(n);
    for _ in 0..n {
        let s = sample_categorical(&mut rng, dist.state_weights.iter().copied());
        let a = sample_categorical(
            &mut rng,
            (0..mdp.n_actions).map(|a| dist.behavior.probs[(s, a)]),
        );
        let i = mdp.idx(s, a);
        let atom = sample_categorical(&mut rng, mdp.rewards[i].iter().map(|&(_, p)| p));
        let r = mdp.rewards[i][atom].0;
        let s_next =
            sample_categorical(&mut rng, (0..mdp.n_states).map(|t| mdp.transition[(i, t)]));
        tuples.push(Transition { s, a, r, s_next });
    }
    TransitionDataset {
        tuples,
        seed,
        dist: dist.clone(),
    }
}

/// Random even split: disjoint halves whose union is the dataset, sizes
/// differing by at most one.
pub fn split_half(
    dataset: &TransitionDataset,
    seed: u64,
) -> Result<(TransitionDataset, TransitionDataset)> {
    let n = dataset.len();
    if n < 2 {
        return Err(OpeError::Empty(
            "split_half needs at least two tuples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let half = n / 2;
    let make = |idx: &[usize]| TransitionDataset {
        tuples: idx.iter().map(|&i| dataset.tuples[i]).collect(),
        seed,
        dist: dataset.dist.clone(),
    };
    Ok((make(&order[..half]), make(&order[half..])))
}

/// Contiguous bins of near-equal size (the first `n mod t` bins get the
/// extra tuple).
pub fn split_bins(dataset: &TransitionDataset, t: usize) -> Result<Vec<TransitionDataset>> {
    let n = dataset.len();
    if t == 0 || t > n {
        return Err(OpeError::Shape(format!(
            "cannot split {n} tuples into {t} bins"
        )));
    }
    let base = n / t;
    let extra = n % t;
    let mut bins = Vec::with_capacity(t);
    let mut start = 0;
    for k in 0..t {
        let size = base + usize::from(k < extra);
        bins.push(TransitionDataset {
            tuples: dataset.tuples[start..start + size].to_vec(),
            seed: dataset.seed,
            dist: dataset.dist.clone(),
        });
        start += size;
    }
    Ok(bins)
}

/// Moment matrices for one (W-class, Q-class) pair, either empirical
/// averages or exact expectations under the discrete law.
///
/// With `phi_w`, `phi_q` the class features and
/// `phi_q'(i) = sum_a' pi_e(a'|s'_i) phi_q(s'_i, a')`:
/// `g = E[phi_w phi_w^T]`, `h = E[(-phi_q + gamma phi_q')(..)^T]`,
/// `m = E[phi_w (phi_q - gamma phi_q')^T]`, `b = E[phi_w r]`,
/// `mu0 = E_{d0}[phi_q(s0, pi_e)]`.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
    pub mu0: DVector<f64>,
    /// Sample count; `None` marks exact population moments.
    pub n: Option<usize>,
    pub gamma: f64,
    pub cls_w: LinearClass,
    pub cls_q: LinearClass,
}

impl MomentSet {
    /// The MWL moment matrix `E[(-phi_q + gamma phi_q') phi_w^T] = -m^T`.
    pub fn n_mat(&self) -> DMatrix<f64> {
        -self.m.transpose()
    }
}

/// Per-state pi_e-averaged Q-features: row `s` is
/// `sum_a pi_e(a|s) phi_q(s, a)`.
fn averaged_q_features(cls_q: &LinearClass, pi_e: &Policy, n_actions: usize) -> DMatrix<f64> {
    let n_states = pi_e.probs.nrows();
    let d = cls_q.dim();
    let mut out = DMatrix::zeros(n_states, d);
    for s in 0..n_states {
        for a in 0..n_actions {
            let w = pi_e.probs[(s, a)];
            if w == 0.0 {
                continue;
            }
            for j in 0..d {
                out[(s, j)] += w * cls_q.features[(s * n_actions + a, j)];
            }
        }
    }
    out
}

/// Empirical moments over a dataset. The initial distribution enters only
/// through `mu0`, which is exact (`d0` is known, not estimated).
pub fn moments_empirical(
    dataset: &TransitionDataset,
    cls_w: &LinearClass,
    cls_q: &LinearClass,
    pi_e: &Policy,
    mdp: &TabularMdp,
) -> Result<MomentSet> {
    if dataset.is_empty() {
        return Err(OpeError::Empty("moment matrices need data".into()));
    }
    let d_w = cls_w.dim();
    let d_q = cls_q.dim();
    let avg_q = averaged_q_features(cls_q, pi_e, mdp.n_actions);
    let mut g = DMatrix::zeros(d_w, d_w);
    let mut h = DMatrix::zeros(d_q, d_q);
    let mut m = DMatrix::zeros(d_w, d_q);
    let mut b = DVector::zeros(d_w);
    for t in &dataset.tuples {
        let i = mdp.idx(t.s, t.a);
        let fw = cls_w.features.row(i);
        let fq = cls_q.features.row(i);
        let fq_next = avg_q.row(t.s_next);
        // jq = -phi_q + gamma phi_q'
        for p in 0..d_w {
            let fwp = fw[p];
            b[p] += fwp * t.r;
            for q in 0..d_w {
                g[(p, q)] += fwp * fw[q];
            }
            for q in 0..d_q {
                m[(p, q)] += fwp * (fq[q] - mdp.gamma * fq_next[q]);
            }
        }
        for p in 0..d_q {
            let jp = -fq[p] + mdp.gamma * fq_next[p];
            for q in 0..d_q {
                h[(p, q)] += jp * (-fq[q] + mdp.gamma * fq_next[q]);
            }
        }
    }
    let n = dataset.len() as f64;
    g /= n;
    h /= n;
    m /= n;
    b /= n;
    let mu0 = initial_feature_mean(cls_q, pi_e, mdp);
    Ok(MomentSet {
        g,
        h,
        m,
        b,
        mu0,
        n: Some(dataset.len()),
        gamma: mdp.gamma,
        cls_w: cls_w.clone(),
        cls_q: cls_q.clone(),
    })
}

/// Exact population moments: sums over the discrete law, no sampling.
pub fn moments_population(
    mdp: &TabularMdp,
    dist: &DataDistribution,
    cls_w: &LinearClass,
    cls_q: &LinearClass,
    pi_e: &Policy,
) -> Result<MomentSet> {
    let d_w = cls_w.dim();
    let d_q = cls_q.dim();
    let avg_q = averaged_q_features(cls_q, pi_e, mdp.n_actions);
    let r_bar = mdp.mean_reward();
    let mut g = DMatrix::zeros(d_w, d_w);
    let mut h = DMatrix::zeros(d_q, d_q);
    let mut m = DMatrix::zeros(d_w, d_q);
    let mut b = DVector::zeros(d_w);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let i = mdp.idx(s, a);
            let weight = dist.joint[i];
            if weight == 0.0 {
                continue;
            }
            let fw = cls_w.features.row(i);
            let fq = cls_q.features.row(i);
            // E[phi_q' | s, a].
            let mut fq_next_mean = DVector::<f64>::zeros(d_q);
            for s_next in 0..mdp.n_states {
                let p = mdp.transition[(i, s_next)];
                if p == 0.0 {
                    continue;
                }
                for j in 0..d_q {
                    fq_next_mean[j] += p * avg_q[(s_next, j)];
                }
            }
            for p in 0..d_w {
                let fwp = fw[p];
                b[p] += weight * fwp * r_bar[i];
                for q in 0..d_w {
                    g[(p, q)] += weight * fwp * fw[q];
                }
                for q in 0..d_q {
                    m[(p, q)] += weight * fwp * (fq[q] - mdp.gamma * fq_next_mean[q]);
                }
            }
            // H integrates the outer product over s' | (s, a).
            for s_next in 0..mdp.n_states {
                let p = mdp.transition[(i, s_next)];
                if p == 0.0 {
                    continue;
                }
                let wp = weight * p;
                for pi_ in 0..d_q {
                    let jp = -fq[pi_] + mdp.gamma * avg_q[(s_next, pi_)];
                    for q in 0..d_q {
                        let jq = -fq[q] + mdp.gamma * avg_q[(s_next, q)];
                        h[(pi_, q)] += wp * jp * jq;
                    }
                }
            }
        }
    }
    let mu0 = initial_feature_mean(cls_q, pi_e, mdp);
    Ok(MomentSet {
        g,
        h,
        m,
        b,
        mu0,
        n: None,
        gamma: mdp.gamma,
        cls_w: cls_w.clone(),
        cls_q: cls_q.clone(),
    })
}

/// `mu0 = E_{d0}[phi_q(s0, pi_e)]`.
fn initial_feature_mean(cls_q: &LinearClass, pi_e: &Policy, mdp: &TabularMdp) -> DVector<f64> {
    let avg_q = averaged_q_features(cls_q, pi_e, mdp.n_actions);
    let mut mu0 = DVector::zeros(cls_q.dim());
    for s in 0..mdp.n_states {
        let w = mdp.d0[s];
        if w == 0.0 {
            continue;
        }
        for j in 0..cls_q.dim() {
            mu0[j] += w * avg_q[(s, j)];
        }
    }
    mu0
}
