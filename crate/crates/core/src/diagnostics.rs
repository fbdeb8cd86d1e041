//! Timestamp perturbation, span buckets, energy-decay ordering, operator
//! mixing statistics and span-conditioned modality mixtures.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Interaction, TemporalSplit, TrainView};
use crate::error::{Error, Result};
use crate::eval::RankingReport;
use crate::model::Forward;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    /// Permute each user's train timestamps across that user's train interactions.
    Shuffle,
    /// Every train timestamp becomes the global maximum train timestamp.
    Constant,
    /// Uniform jitter in `±noise_scale * user span`, clamped at zero.
    Noise,
}

impl FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffle" => Ok(Self::Shuffle),
            "constant" => Ok(Self::Constant),
            "noise" => Ok(Self::Noise),
            other => Err(Error::InvalidArgument(format!("unknown perturbation mode `{other}`"))),
        }
    }
}

impl PerturbMode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Shuffle => "Shuffle",
            Self::Constant => "Constant",
            Self::Noise => "Noise",
        }
    }
}

/// Perturbs train timestamps only; interactions and held-out items are unchanged.
pub fn perturb_timestamps(split: &TemporalSplit, mode: PerturbMode, seed: u64, noise_scale: f64) -> Result<TemporalSplit> {
    if !(noise_scale >= 0.0) {
        return Err(Error::InvalidArgument("noise scale must be >= 0".into()));
    }
    let train = split.train();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, t_max) = train.time_range();
    let mut histories = Vec::with_capacity(train.num_users());
    for u in 0..train.num_users() {
        let h = train.user_history(u);
        let mut times: Vec<f64> = h.iter().map(|t| t.time).collect();
        match mode {
            PerturbMode::Shuffle => times.shuffle(&mut rng),
            PerturbMode::Constant => times.iter_mut().for_each(|t| *t = t_max),
            PerturbMode::Noise => {
                let a = noise_scale * train.user_span(u);
                if a > 0.0 {
                    for t in &mut times {
                        *t = (*t + rng.gen_range(-a..=a)).max(0.0);
                    }
                }
            }
        }
        let mut new: Vec<Interaction> = h
            .iter()
            .zip(times)
            .map(|(t, time)| Interaction { time, ..*t })
            .collect();
        new.sort_by(|a, b| a.time.total_cmp(&b.time));
        histories.push(new);
    }
    Ok(split.with_train(TrainView::from_histories(train.num_items(), histories)))
}

/// Equal-population buckets (0-based) by train span `t_max - t_min`.
/// Users with equal spans share the lowest bucket any of them would occupy.
pub fn span_buckets(train: &TrainView, users: &[usize], num_buckets: usize) -> Vec<usize> {
    let spans: Vec<f64> = users.iter().map(|&u| train.user_span(u)).collect();
    quantile_buckets(&spans, num_buckets)
}

/// Bucket index per value; see [`span_buckets`] for the tie rule.
pub fn quantile_buckets(values: &[f64], num_buckets: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut pos = 0;
    while pos < n {
        let bucket = pos * num_buckets / n;
        let mut end = pos;
        while end < n && values[order[end]] == values[order[pos]] {
            out[order[end]] = bucket;
            end += 1;
        }
        pos = end;
    }
    out
}

/// Per-bucket metrics, `bucket` 0-based.
pub fn bucket_reports(report: &RankingReport, users: &[usize], buckets: &[usize], num_buckets: usize) -> Vec<RankingReport> {
    let lookup: std::collections::HashMap<usize, usize> = users.iter().copied().zip(buckets.iter().copied()).collect();
    (0..num_buckets)
        .map(|b| report.subset(|u| lookup.get(&u) == Some(&b)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEnergy {
    pub user: usize,
    pub item: usize,
    pub bucket: usize,
    /// `E_k = ||z_u^(k) - z_i^(k)||^2 / d` for each operator.
    pub energies: Vec<f64>,
}

impl PairEnergy {
    /// `E_1 >= E_2 >= ... >= E_K`; equalities count as ordered.
    pub fn is_monotone(&self) -> bool {
        self.energies.windows(2).all(|w| w[0] >= w[1])
    }

    pub fn violation(&self) -> f64 {
        self.energies.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketEnergy {
    pub bucket: usize,
    pub pairs: usize,
    /// Pairs with `E_1 > 0`, the ones entering ratio statistics.
    pub ratio_pairs: usize,
    /// Mean `E_k / E_1` for `k = 2..K`.
    pub mean_ratios: Vec<f64>,
    pub monotonic_rate: f64,
    /// Mean violation magnitude over non-monotone pairs (0 when none).
    pub mean_violation: f64,
}

impl BucketEnergy {
    pub fn mean_drops(&self) -> Vec<f64> {
        self.mean_ratios.iter().map(|r| 1.0 - r).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub pairs: Vec<PairEnergy>,
    pub buckets: Vec<BucketEnergy>,
    pub overall: BucketEnergy,
}

/// Energies of `(user, item)` pairs using component-`k` vectors (routed user
/// channels, unrouted item channels), summarized per bucket.
pub fn energy_diagnostics(fwd: &Forward, pairs: &[(usize, usize)], buckets: &[usize], num_buckets: usize) -> Result<EnergyReport> {
    let k = fwd.reps.k();
    if k < 2 {
        return Err(Error::InvalidArgument("energy diagnostics need at least two operators".into()));
    }
    if pairs.len() != buckets.len() {
        return Err(Error::Shape("one bucket per pair is required".into()));
    }
    let records: Vec<PairEnergy> = pairs
        .iter()
        .zip(buckets)
        .map(|(&(u, i), &bucket)| {
            let energies = (0..k)
                .map(|kk| {
                    let zu = fwd.component_user_vector(kk, u);
                    let zi = fwd.component_item_vector(kk, i);
                    let d = zu.len() as f64;
                    zu.iter().zip(&zi).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d
                })
                .collect();
            PairEnergy {
                user: u,
                item: i,
                bucket,
                energies,
            }
        })
        .collect();
    let summarize = |bucket: usize, sel: &[&PairEnergy]| -> BucketEnergy {
        let with_ratio: Vec<&&PairEnergy> = sel.iter().filter(|p| p.energies[0] > 0.0).collect();
        let mean_ratios = (1..k)
            .map(|kk| {
                if with_ratio.is_empty() {
                    f64::NAN
                } else {
                    with_ratio.iter().map(|p| p.energies[kk] / p.energies[0]).sum::<f64>() / with_ratio.len() as f64
                }
            })
            .collect();
        let violating: Vec<f64> = sel.iter().filter(|p| !p.is_monotone()).map(|p| p.violation()).collect();
        BucketEnergy {
            bucket,
            pairs: sel.len(),
            ratio_pairs: with_ratio.len(),
            mean_ratios,
            monotonic_rate: if sel.is_empty() {
                f64::NAN
            } else {
                1.0 - violating.len() as f64 / sel.len() as f64
            },
            mean_violation: if violating.is_empty() {
                0.0
            } else {
                violating.iter().sum::<f64>() / violating.len() as f64
            },
        }
    };
    let per_bucket = (0..num_buckets)
        .map(|b| {
            let sel: Vec<&PairEnergy> = records.iter().filter(|p| p.bucket == b).collect();
            summarize(b, &sel)
        })
        .collect();
    let all: Vec<&PairEnergy> = records.iter().collect();
    let overall = summarize(usize::MAX, &all);
    Ok(EnergyReport {
        pairs: records,
        buckets: per_bucket,
        overall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let pos = q * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

fn quartiles(mut xs: Vec<f64>) -> Quartiles {
    xs.sort_by(f64::total_cmp);
    Quartiles {
        q1: quantile_sorted(&xs, 0.25),
        median: quantile_sorted(&xs, 0.5),
        q3: quantile_sorted(&xs, 0.75),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingStats {
    pub per_scale: Vec<Quartiles>,
    pub top1: Vec<f64>,
    pub entropy: Vec<f64>,
    pub top1_summary: Quartiles,
    pub entropy_summary: Quartiles,
    /// Fraction of rows whose normalized entropy lies strictly inside (0, 1).
    pub entropy_interior_fraction: f64,
}

/// `-sum g ln g / ln K`, with `0 ln 0 = 0`.
pub fn normalized_entropy(g: &[f64]) -> f64 {
    let h: f64 = g.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h / (g.len() as f64).ln()
}

/// Summaries of a `rows x K` table of mixture weights.
pub fn mixing_stats(g: &Matrix) -> Result<MixingStats> {
    let k = g.cols();
    if k < 2 {
        return Err(Error::InvalidArgument("mixing statistics need K >= 2".into()));
    }
    let per_scale = (0..k)
        .map(|c| quartiles((0..g.rows()).map(|r| g.get(r, c)).collect()))
        .collect();
    let top1: Vec<f64> = (0..g.rows())
        .map(|r| g.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let entropy: Vec<f64> = (0..g.rows()).map(|r| normalized_entropy(g.row(r))).collect();
    let interior = entropy.iter().filter(|&&e| e > 0.0 && e < 1.0).count();
    Ok(MixingStats {
        per_scale,
        top1_summary: quartiles(top1.clone()),
        entropy_summary: quartiles(entropy.clone()),
        entropy_interior_fraction: interior as f64 / g.rows().max(1) as f64,
        top1,
        entropy,
    })
}

/// Per bucket, mean routing weight of each modality over the bucket divided by
/// its mean over all listed users. Empty buckets yield `None`.
pub fn modality_mixture_by_span(beta: &Matrix, users: &[usize], buckets: &[usize], num_buckets: usize) -> Vec<Option<Vec<f64>>> {
    let m = beta.cols();
    let mean_over = |sel: &[usize]| -> Vec<f64> {
        (0..m)
            .map(|c| sel.iter().map(|&u| beta.get(u, c)).sum::<f64>() / sel.len() as f64)
            .collect()
    };
    let global = mean_over(users);
    (0..num_buckets)
        .map(|b| {
            let sel: Vec<usize> = users
                .iter()
                .zip(buckets)
                .filter(|(_, &bb)| bb == b)
                .map(|(&u, _)| u)
                .collect();
            if sel.is_empty() {
                return None;
            }
            Some(mean_over(&sel).iter().zip(&global).map(|(a, g)| a / g).collect())
        })
        .collect()
}

/// Quartile buckets by `ln(span)`; ordering by the log equals ordering by span.
pub fn log_span_quartiles(train: &TrainView, users: &[usize]) -> Vec<usize> {
    let logs: Vec<f64> = users.iter().map(|&u| train.user_span(u).ln()).collect();
    quantile_buckets(&logs, 4)
}

pub fn buckets_csv(reports: &[RankingReport]) -> String {
    let mut s = String::from("bucket,users,recall10,recall20,ndcg10,ndcg20\n");
    for (b, r) in reports.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            b + 1,
            r.num_users(),
            r.recall(10).unwrap_or(f64::NAN),
            r.recall(20).unwrap_or(f64::NAN),
            r.ndcg(10).unwrap_or(f64::NAN),
            r.ndcg(20).unwrap_or(f64::NAN)
        );
    }
    s
}

pub fn energy_csv(report: &EnergyReport) -> String {
    let k = report.overall.mean_ratios.len() + 1;
    let mut s = String::from("bucket,pairs,ratio_pairs");
    for kk in 2..=k {
        let _ = write!(s, ",r1{kk}");
    }
    for kk in 2..=k {
        let _ = write!(s, ",g1{kk}");
    }
    s.push_str(",monotonic_rate,mean_violation\n");
    let mut row = |label: String, b: &BucketEnergy| {
        let _ = write!(s, "{label},{},{}", b.pairs, b.ratio_pairs);
        for r in &b.mean_ratios {
            let _ = write!(s, ",{r}");
        }
        for g in b.mean_drops() {
            let _ = write!(s, ",{g}");
        }
        let _ = writeln!(s, ",{},{}", b.monotonic_rate, b.mean_violation);
    };
    for b in &report.buckets {
        row((b.bucket + 1).to_string(), b);
    }
    row("all".into(), &report.overall);
    s
}

pub fn mixing_csv(stats: &MixingStats) -> String {
    let mut s = String::from("statistic,scale,value\n");
    for (k, q) in stats.per_scale.iter().enumerate() {
        let _ = writeln!(s, "weight_q1,{},{}", k + 1, q.q1);
        let _ = writeln!(s, "weight_median,{},{}", k + 1, q.median);
        let _ = writeln!(s, "weight_q3,{},{}", k + 1, q.q3);
    }
    let _ = writeln!(s, "top1_median,all,{}", stats.top1_summary.median);
    let _ = writeln!(s, "top1_mean,all,{}", mean(&stats.top1));
    let _ = writeln!(s, "entropy_median,all,{}", stats.entropy_summary.median);
    let _ = writeln!(s, "entropy_mean,all,{}", mean(&stats.entropy));
    let _ = writeln!(s, "entropy_interior_fraction,all,{}", stats.entropy_interior_fraction);
    s
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

pub fn modality_mixture_csv(names: &[String], rel: &[Option<Vec<f64>>], counts: &[usize]) -> String {
    let mut s = format!("bucket,users,{}\n", names.join(","));
    for (b, r) in rel.iter().enumerate() {
        let values = match r {
            Some(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            None => vec![""; names.len()].join(","),
        };
        let _ = writeln!(s, "{},{},{}", b + 1, counts[b], values);
    }
    s
}

/// `user,g1..gK,beta1..betaM` for every user.
pub fn gating_csv(fwd: &Forward) -> String {
    let (k, m) = (fwd.g_user.cols(), fwd.beta.cols());
    let mut s = String::from("user");
    for j in 1..=k {
        let _ = write!(s, ",g{j}");
    }
    for j in 1..=m {
        let _ = write!(s, ",beta{j}");
    }
    s.push('\n');
    for u in 0..fwd.num_users() {
        let _ = write!(s, "{u}");
        for v in fwd.g_user.row(u).iter().chain(fwd.beta.row(u)) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_distinct_spans_split_evenly() {
        let v: Vec<f64> = (0..9).map(|i| (9 - i) as f64).collect();
        let b = quantile_buckets(&v, 3);
        for bucket in 0..3 {
            assert_eq!(b.iter().filter(|&&x| x == bucket).count(), 3);
        }
        assert_eq!(b[8], 0);
        assert_eq!(b[0], 2);
    }

    #[test]
    fn equal_spans_share_first_bucket() {
        assert_eq!(quantile_buckets(&[4.0; 7], 3), vec![0; 7]);
    }

    #[test]
    fn ties_go_to_lower_bucket() {
        // positions 0..6; values at positions 2,3 tie across the 3-bucket boundary at 2
        let b = quantile_buckets(&[1.0, 2.0, 3.0, 3.0, 5.0, 6.0], 3);
        assert_eq!(b, vec![0, 0, 1, 1, 2, 2]);
        let b = quantile_buckets(&[1.0, 3.0, 3.0, 3.0, 5.0, 6.0], 3);
        assert_eq!(b, vec![0, 0, 0, 0, 2, 2]);
    }

    #[test]
    fn mixing_extremes() {
        let uniform = Matrix::from_vec(1, 3, vec![1.0 / 3.0; 3]).unwrap();
        let s = mixing_stats(&uniform).unwrap();
        assert!((s.top1[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.entropy[0] - 1.0).abs() < 1e-12);
        let one_hot = Matrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let s = mixing_stats(&one_hot).unwrap();
        assert_eq!(s.top1[0], 1.0);
        assert_eq!(s.entropy[0], 0.0);
        assert_eq!(s.entropy_interior_fraction, 0.0);
    }

    #[test]
    fn identical_routing_gives_unit_relative_weights() {
        let beta = Matrix::from_fn(6, 3, |_, c| [0.2, 0.3, 0.5][c]);
        let users: Vec<usize> = (0..6).collect();
        let rel = modality_mixture_by_span(&beta, &users, &[0, 0, 1, 1, 2, 3], 4);
        for r in rel.iter().flatten() {
            assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
        let single = modality_mixture_by_span(&beta, &users, &[0; 6], 1);
        assert!(single[0].as_ref().unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn unknown_mode() {
        assert!("reverse".parse::<PerturbMode>().is_err());
        assert_eq!("noise".parse::<PerturbMode>().unwrap(), PerturbMode::Noise);
    }

    #[test]
    fn monotone_tie_rule() {
        let p = PairEnergy {
            user: 0,
            item: 0,
            bucket: 0,
            energies: vec![0.5, 0.5, 0.5],
        };
        assert!(p.is_monotone());
        let q = PairEnergy {
            energies: vec![0.5, 0.7, 0.1],
            ..p
        };
        assert!(!q.is_monotone());
        assert!((q.violation() - 0.2).abs() < 1e-12);
    }
}
