//! Independent reference implementations used as test oracles, plus
//! fixture builders. Nothing here calls into the crate's algorithms.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lcprobe::expert::{ExpertAnnotations, Orientation, OrientationLabel, RelevanceRating, StrategySelection};
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;

/// Inclusion-probability marginal of sequential weighted sampling without
/// replacement, by exhaustive enumeration of ordered draws. Returns
/// `P(a selected) / k`, which sums to one.
pub fn inclusion_policy(weights: &BTreeMap<String, f64>, k: usize) -> BTreeMap<String, f64> {
    let items: Vec<(&String, f64)> = weights.iter().filter(|(_, w)| **w > 0.0).map(|(n, w)| (n, *w)).collect();
    let mut incl = vec![0.0; items.len()];
    let mut taken = vec![false; items.len()];
    fn walk(items: &[(&String, f64)], taken: &mut [bool], depth: usize, k: usize, p: f64, incl: &mut [f64]) {
        if depth == k {
            for (i, t) in taken.iter().enumerate() {
                if *t {
                    incl[i] += p;
                }
            }
            return;
        }
        let remaining: f64 = items.iter().zip(taken.iter()).filter(|(_, t)| !**t).map(|((_, w), _)| *w).sum();
        for i in 0..items.len() {
            if taken[i] {
                continue;
            }
            taken[i] = true;
            walk(items, taken, depth + 1, k, p * items[i].1 / remaining, incl);
            taken[i] = false;
        }
    }
    let k = k.min(items.len());
    walk(&items, &mut taken, 0, k, 1.0, &mut incl);
    let mut out: BTreeMap<String, f64> = weights.keys().map(|n| (n.clone(), 0.0)).collect();
    for ((n, _), p) in items.iter().zip(incl) {
        out.insert((*n).clone(), p / k as f64);
    }
    out
}

pub fn tvd_map(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let keys: BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    0.5 * keys.iter().map(|k| (p.get(*k).unwrap_or(&0.0) - q.get(*k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// `(1 - alpha) * normalize(w) + alpha * normalize(toward)`.
pub fn mix(w: &BTreeMap<String, f64>, alpha: f64, toward: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let sw: f64 = w.values().sum();
    let st: f64 = toward.values().sum();
    let mut out: BTreeMap<String, f64> = w.iter().map(|(k, v)| (k.clone(), (1.0 - alpha) * v / sw)).collect();
    for (k, v) in toward {
        *out.entry(k.clone()).or_insert(0.0) += alpha * v / st;
    }
    out
}

/// Multivariate normal sampler with a hand-rolled Cholesky factor and
/// Box-Muller normals, independent of the crate's sampler.
pub fn mvn_samples(mean: &[f64], sd: &[f64], corr: &[Vec<f64>], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = mean.len();
    let cov: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| sd[i] * corr[i][j] * sd[j]).collect()).collect();
    let l = cholesky(&cov);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut normal = || {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    (0..n)
        .map(|_| {
            let g: Vec<f64> = (0..m).map(|_| normal()).collect();
            (0..m).map(|i| mean[i] + (0..=i).map(|j| l[i][j] * g[j]).sum::<f64>()).collect()
        })
        .collect()
}

pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
#[allow(clippy::needless_range_loop)] // rotations update two columns of the same matrix
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (a[p][r], a[q][r]);
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Average ranks by counting: `1 + #less + (#equal - 1) / 2`.
pub fn count_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&count_ranks(xs), &count_ranks(ys))
}

/// Krippendorff's alpha straight from its pairwise definition: observed
/// disagreement over within-unit pairs weighted by `1/(m_u - 1)`, expected
/// disagreement over all pairs of pairable values. `ordinal` selects
/// the ordinal metric when true.
pub fn alpha_oracle(raters: &[Vec<Option<f64>>], ordinal: bool) -> f64 {
    let units = raters[0].len();
    let unit_values: Vec<Vec<f64>> = (0..units)
        .map(|u| raters.iter().filter_map(|r| r[u]).collect::<Vec<f64>>())
        .filter(|v| v.len() >= 2)
        .collect();
    let all: Vec<f64> = unit_values.iter().flatten().copied().collect();
    let n = all.len() as f64;

    let mut categories: Vec<f64> = all.clone();
    categories.sort_by(f64::total_cmp);
    categories.dedup();
    let freq = |c: f64| all.iter().filter(|v| **v == c).count() as f64;
    let delta = |a: f64, b: f64| -> f64 {
        if a == b {
            return 0.0;
        }
        if !ordinal {
            return 1.0;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let inner: f64 = categories.iter().filter(|c| **c >= lo && **c <= hi).map(|c| freq(*c)).sum();
        let d = inner - (freq(lo) + freq(hi)) / 2.0;
        d * d
    };

    let mut d_o = 0.0;
    for vals in &unit_values {
        let m = vals.len() as f64;
        for i in 0..vals.len() {
            for j in 0..vals.len() {
                if i != j {
                    d_o += delta(vals[i], vals[j]) / (m - 1.0);
                }
            }
        }
    }
    d_o /= n;
    let mut d_e = 0.0;
    for i in 0..all.len() {
        for j in 0..all.len() {
            if i != j {
                d_e += delta(all[i], all[j]);
            }
        }
    }
    d_e /= n * (n - 1.0);
    if d_e == 0.0 {
        1.0
    } else {
        1.0 - d_o / d_e
    }
}

/// Two-rater annotation fixture. Strategies in `favored` are labelled
/// learner-centered by both raters, every other strategy content-centered.
/// Task 2 and task 3 entries are copied for both raters.
pub fn annotations(
    strategies: &[&str],
    favored: &[&str],
    picks: &BTreeMap<String, Vec<String>>,
    relevance: &BTreeMap<String, i64>,
) -> ExpertAnnotations {
    let raters = vec!["r1".to_string(), "r2".to_string()];
    let t1: BTreeMap<String, OrientationLabel> = strategies
        .iter()
        .map(|s| {
            let label = if favored.contains(s) { Orientation::LearnerCentered } else { Orientation::ContentCentered };
            (s.to_string(), OrientationLabel { label, justification: String::new() })
        })
        .collect();
    let t2: BTreeMap<String, StrategySelection> = picks
        .iter()
        .map(|(c, p)| (c.clone(), StrategySelection { strategies: p.clone(), justification: String::new() }))
        .collect();
    let t3: BTreeMap<String, RelevanceRating> = relevance
        .iter()
        .map(|(c, r)| (c.clone(), RelevanceRating { rating: *r, justification: String::new() }))
        .collect();
    ExpertAnnotations {
        schema_version: 1,
        raters: raters.clone(),
        task1: raters.iter().map(|r| (r.clone(), t1.clone())).collect(),
        task2: raters.iter().map(|r| (r.clone(), t2.clone())).collect(),
        task3: raters.iter().map(|r| (r.clone(), t3.clone())).collect(),
    }
}

pub fn weights(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}
