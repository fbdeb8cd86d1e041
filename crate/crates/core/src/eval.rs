//! Leave-one-out all-ranking evaluation: Recall@K and NDCG@K.

use rayon::prelude::*;

use crate::data::TemporalSplit;
use crate::model::Forward;
use crate::tensor::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// Rank the validation item; train items are masked.
    Valid,
    /// Rank the test item; train items and the validation item are masked.
    Test,
}

/// Per-user ranks and aggregate metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    /// Evaluated users and the 1-based rank of their held-out item.
    pub users: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl RankingReport {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.recall[p])
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.ndcg[p])
    }

    /// Metrics restricted to a subset of the evaluated users.
    pub fn subset(&self, keep: impl Fn(usize) -> bool) -> RankingReport {
        let (users, ranks): (Vec<_>, Vec<_>) = self
            .users
            .iter()
            .zip(&self.ranks)
            .filter(|(u, _)| keep(**u))
            .map(|(u, r)| (*u, *r))
            .unzip();
        let (recall, ndcg) = metrics_from_ranks(&ranks, &self.ks);
        RankingReport {
            ks: self.ks.clone(),
            recall,
            ndcg,
            users,
            ranks,
        }
    }
}

/// Hit indicator and discounted gain of one rank at cutoff `k`.
pub fn rank_contribution(rank: usize, k: usize) -> (f64, f64) {
    if rank <= k {
        (1.0, 1.0 / ((1 + rank) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

pub fn metrics_from_ranks(ranks: &[usize], ks: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = ranks.len().max(1) as f64;
    ks.iter()
        .map(|&k| {
            let (hits, gain) = ranks.iter().fold((0.0, 0.0), |(h, g), &r| {
                let (dh, dg) = rank_contribution(r, k);
                (h + dh, g + dg)
            });
            (hits / n, gain / n)
        })
        .unzip()
}

/// 1-based rank of `target` among candidates; higher scores first, ties by
/// ascending item ID. `excluded` items never compete.
pub fn rank_of(scores: &[f64], target: usize, excluded: impl Fn(usize) -> bool) -> usize {
    let st = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != target && !excluded(j) && (s > st || (s == st && j < target)))
        .count()
}

pub fn evaluate(fwd: &Forward, split: &TemporalSplit, target: EvalTarget, ks: &[usize]) -> RankingReport {
    let num_items = fwd.num_items();
    let item_vectors: Vec<Vec<f64>> = (0..num_items).map(|i| fwd.item_vector(i)).collect();
    let users = split.evaluated_users();
    let train = split.train();
    let ranks: Vec<usize> = users
        .par_iter()
        .map(|&u| {
            let (held_out, masked_extra) = match target {
                EvalTarget::Valid => (split.valid(u).unwrap().item as usize, None),
                EvalTarget::Test => (
                    split.test(u).unwrap().item as usize,
                    Some(split.valid(u).unwrap().item as usize),
                ),
            };
            let uv = fwd.user_vector(u);
            let scores: Vec<f64> = item_vectors.iter().map(|iv| dot(&uv, iv)).collect();
            let positives = train.user_items(u);
            rank_of(&scores, held_out, |j| {
                Some(j) == masked_extra || positives.binary_search(&(j as u32)).is_ok()
            })
        })
        .collect();
    let (recall, ndcg) = metrics_from_ranks(&ranks, ks);
    RankingReport {
        ks: ks.to_vec(),
        recall,
        ndcg,
        users,
        ranks,
    }
}

/// `metrics.csv` body: `split,metric,k,value`.
pub fn metrics_csv(rows: &[(&str, &RankingReport)]) -> String {
    let mut s = String::from("split,metric,k,value\n");
    for (name, r) in rows {
        for (j, k) in r.ks.iter().enumerate() {
            s.push_str(&format!("{name},recall,{k},{}\n", r.recall[j]));
            s.push_str(&format!("{name},ndcg,{k},{}\n", r.ndcg[j]));
        }
    }
    s
}
