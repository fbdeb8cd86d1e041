//! Synthetic drift data: users whose taste moves between two regimes.
//!
//! Items sit at angles on a ring. Each user starts in an early regime around
//! one angle, then switches to a late regime on the opposite side of the ring
//! whose centre keeps drifting until the last interaction. Held-out items come
//! from the end of the late regime, so recent train interactions are the most
//! informative ones. Feature matrices are noisy encodings of the item angle.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Interaction, InteractionLog, ModalityFeatures};
use crate::error::{Error, Result};
use crate::operators::SECONDS_PER_DAY;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    /// Interactions per user are drawn uniformly from `[min, max]`.
    pub min_interactions: usize,
    pub max_interactions: usize,
    /// User spans are log-uniform between these bounds, in days.
    pub min_span_days: f64,
    pub max_span_days: f64,
    /// Share of a user's interactions in the early regime.
    pub early_fraction: f64,
    /// Total drift of the late-regime centre, in radians.
    pub drift: f64,
    /// Std of an interaction's angle around the regime centre.
    pub spread: f64,
    /// Std of the feature noise.
    pub feature_noise: f64,
    pub vision_dim: usize,
    pub text_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 1000,
            min_interactions: 20,
            max_interactions: 40,
            min_span_days: 20.0,
            max_span_days: 600.0,
            early_fraction: 0.3,
            drift: 0.8,
            spread: 0.06,
            feature_noise: 2.0,
            vision_dim: 16,
            text_dim: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub log: InteractionLog,
    pub features: Vec<ModalityFeatures>,
    /// Angle of every item on the ring, by dense item ID. Items are numbered
    /// in first-appearance order and items nobody took are dropped.
    pub item_angles: Vec<f64>,
}

fn wrap(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

/// Item closest to `angle` that the user has not taken yet.
fn nearest_unseen(sorted: &[(f64, u32)], angle: f64, taken: &[bool]) -> Option<u32> {
    let n = sorted.len();
    let start = sorted.partition_point(|&(a, _)| a < angle);
    // walk outward in both directions
    for step in 0..n {
        let right = sorted[(start + step) % n];
        let left = sorted[(start + n - 1 - step) % n];
        let dr = wrap(right.0 - angle).min(wrap(angle - right.0));
        let dl = wrap(left.0 - angle).min(wrap(angle - left.0));
        let order = if dl < dr { [left, right] } else { [right, left] };
        for (_, item) in order {
            if !taken[item as usize] {
                return Some(item);
            }
        }
    }
    None
}

fn encode(angle: f64, harmonics: usize) -> Vec<f64> {
    (1..=harmonics)
        .flat_map(|h| [(h as f64 * angle).cos(), (h as f64 * angle).sin()])
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.users == 0 || cfg.items == 0 {
        return Err(Error::InvalidArgument("synthetic data needs users and items".into()));
    }
    if cfg.min_interactions < 3 || cfg.max_interactions < cfg.min_interactions || cfg.max_interactions > cfg.items {
        return Err(Error::InvalidArgument(format!(
            "interaction range [{}, {}] must be within [3, items]",
            cfg.min_interactions, cfg.max_interactions
        )));
    }
    if !(cfg.min_span_days > 0.0 && cfg.max_span_days >= cfg.min_span_days) {
        return Err(Error::InvalidArgument("span bounds must satisfy 0 < min <= max".into()));
    }
    if !(0.0..1.0).contains(&cfg.early_fraction) || !(cfg.spread > 0.0) || !(cfg.feature_noise >= 0.0) {
        return Err(Error::InvalidArgument("early_fraction in [0,1), spread > 0, noise >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let item_angles: Vec<f64> = (0..cfg.items).map(|_| rng.gen_range(0.0..TAU)).collect();
    let mut sorted: Vec<(f64, u32)> = item_angles.iter().enumerate().map(|(i, &a)| (a, i as u32)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let jitter = Normal::new(0.0, cfg.spread).unwrap();
    let base = 1.5e9;
    let (ln_lo, ln_hi) = (cfg.min_span_days.ln(), cfg.max_span_days.ln());
    let mut triples = Vec::new();
    let mut taken = vec![false; cfg.items];
    for u in 0..cfg.users {
        let n = rng.gen_range(cfg.min_interactions..=cfg.max_interactions);
        let span = rng.gen_range(ln_lo..=ln_hi).exp() * SECONDS_PER_DAY;
        let start = base + rng.gen_range(0.0..365.0) * SECONDS_PER_DAY;
        let mut times: Vec<f64> = (0..n).map(|_| start + rng.gen::<f64>() * span).collect();
        times.sort_by(f64::total_cmp);
        let early_center = rng.gen_range(0.0..TAU);
        let late_center = early_center + PI + rng.gen_range(-0.3..0.3);
        let direction = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let n_early = ((n as f64) * cfg.early_fraction).round() as usize;
        let n_late = n - n_early;
        taken.iter_mut().for_each(|t| *t = false);
        for (j, &time) in times.iter().enumerate() {
            let center = if j < n_early {
                early_center
            } else {
                let progress = if n_late > 1 { (j - n_early) as f64 / (n_late - 1) as f64 } else { 1.0 };
                late_center + direction * cfg.drift * progress
            };
            let angle = wrap(center + jitter.sample(&mut rng));
            let item = nearest_unseen(&sorted, angle, &taken).expect("max_interactions <= items");
            taken[item as usize] = true;
            triples.push(Interaction {
                user: u as u32,
                item,
                time: time.round(),
            });
        }
    }
    // relabel items by first appearance so that a TSV round trip keeps the IDs,
    // dropping items nobody took
    let mut relabel = vec![u32::MAX; cfg.items];
    let mut kept_angles = Vec::new();
    for t in &mut triples {
        let slot = &mut relabel[t.item as usize];
        if *slot == u32::MAX {
            *slot = kept_angles.len() as u32;
            kept_angles.push(item_angles[t.item as usize]);
        }
        t.item = *slot;
    }
    let item_angles = kept_angles;
    let num_items = item_angles.len();
    let log = InteractionLog::from_dense(cfg.users, num_items, triples)?;

    let noise = Normal::new(0.0, cfg.feature_noise.max(f64::MIN_POSITIVE)).unwrap();
    let noisy = |x: f64, rng: &mut ChaCha8Rng| {
        if cfg.feature_noise > 0.0 {
            x + noise.sample(rng)
        } else {
            x
        }
    };
    let mut features = Vec::new();
    if cfg.vision_dim > 0 {
        let harmonics = cfg.vision_dim.div_ceil(2);
        let mut values = Vec::with_capacity(num_items * cfg.vision_dim);
        for &a in &item_angles {
            for x in encode(a, harmonics).into_iter().take(cfg.vision_dim) {
                values.push(noisy(x, &mut rng) as f32);
            }
        }
        features.push(ModalityFeatures::new("vision", num_items, cfg.vision_dim, values)?);
    }
    if cfg.text_dim > 0 {
        // random linear mix of the first two harmonics
        let basis = 4;
        let mix: Vec<f64> = (0..cfg.text_dim * basis).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut values = Vec::with_capacity(num_items * cfg.text_dim);
        for &a in &item_angles {
            let e = encode(a, 2);
            for r in 0..cfg.text_dim {
                let x: f64 = (0..basis).map(|c| mix[r * basis + c] * e[c]).sum();
                values.push(noisy(x, &mut rng) as f32);
            }
        }
        features.push(ModalityFeatures::new("text", num_items, cfg.text_dim, values)?);
    }
    Ok(SynthData {
        log,
        features,
        item_angles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_temporal_split;

    fn small() -> SynthConfig {
        SynthConfig {
            users: 50,
            items: 120,
            seed: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shape_and_determinism() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.log.interactions(), b.log.interactions());
        assert_eq!(a.log.num_users(), 50);
        assert_eq!(a.features[0].rows(), a.log.num_items());
        assert!(a.log.num_items() <= 120);
        assert_eq!(a.features[0].cols(), 16);
        assert_eq!(a.features[1].cols(), 24);
        assert_eq!(a.features[0].values(), b.features[0].values());
    }

    #[test]
    fn no_repeated_items_per_user() {
        let d = generate(&small()).unwrap();
        for u in 0..d.log.num_users() {
            let items: Vec<u32> = d.log.user_history(u).map(|t| t.item).collect();
            let mut dedup = items.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(items.len(), dedup.len());
            assert!((20..=40).contains(&items.len()));
        }
    }

    #[test]
    fn every_user_is_evaluable() {
        let d = generate(&small()).unwrap();
        let split = make_temporal_split(&d.log);
        assert_eq!(split.evaluated_users().len(), 50);
    }

    #[test]
    fn held_out_items_sit_near_recent_train_items() {
        let d = generate(&small()).unwrap();
        let split = make_temporal_split(&d.log);
        let dist = |a: f64, b: f64| wrap(a - b).min(wrap(b - a));
        let (mut recent, mut early) = (0.0, 0.0);
        for u in split.evaluated_users() {
            let test = d.item_angles[split.test(u).unwrap().item as usize];
            let h = split.train().user_history(u);
            recent += dist(test, d.item_angles[h[h.len() - 1].item as usize]);
            early += dist(test, d.item_angles[h[0].item as usize]);
        }
        assert!(recent < 0.5 * early, "{recent} vs {early}");
    }

    #[test]
    fn ids_survive_a_tsv_roundtrip() {
        let d = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.tsv");
        d.log.write_tsv(&path).unwrap();
        let back = crate::data::load_interactions(&path).unwrap();
        assert_eq!(back.interactions(), d.log.interactions());
    }

    #[test]
    fn rejects_bad_ranges() {
        let cfg = SynthConfig {
            max_interactions: 500,
            ..small()
        };
        assert!(generate(&cfg).is_err());
    }
}
