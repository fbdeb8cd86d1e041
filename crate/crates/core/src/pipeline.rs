//! End-to-end assembly: data, operator bank, model, training, evaluation.

use std::path::Path;

use crate::config::RunConfig;
use crate::context::compute_contexts;
use crate::data::{load_features, load_interactions, make_temporal_split, InteractionLog, ModalityFeatures, TemporalSplit};
use crate::diagnostics::{
    bucket_reports, buckets_csv, energy_csv, energy_diagnostics, gating_csv, log_span_quartiles, mixing_csv, mixing_stats,
    modality_mixture_by_span, modality_mixture_csv, perturb_timestamps, span_buckets, EnergyReport, MixingStats, PerturbMode,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalTarget, RankingReport};
use crate::model::{Modality, Model};
use crate::operators::OperatorBank;
use crate::tensor::Matrix;
use crate::training::{train, TrainOutcome};

pub const REPORT_KS: [usize; 2] = [10, 20];

/// Interactions, their split, and item feature matrices whose rows follow
/// the dense item IDs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub log: InteractionLog,
    pub split: TemporalSplit,
    pub features: Vec<ModalityFeatures>,
}

impl Dataset {
    pub fn new(log: InteractionLog, features: Vec<ModalityFeatures>) -> Result<Self> {
        for f in &features {
            if f.rows() != log.num_items() {
                return Err(Error::Shape(format!(
                    "modality `{}` has {} rows but the log has {} items",
                    f.name,
                    f.rows(),
                    log.num_items()
                )));
            }
        }
        let split = make_temporal_split(&log);
        Ok(Self { log, split, features })
    }

    /// Loads the interaction file and feature files named in `cfg`.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let path = cfg
            .interactions
            .as_ref()
            .ok_or_else(|| Error::config("interactions", "no interaction file given"))?;
        let log = load_interactions(path)?;
        let features = cfg.features.iter().map(load_features).collect::<Result<Vec<_>>>()?;
        Self::new(log, features)
    }
}

/// ID modality first (when enabled), then one modality per feature matrix.
pub fn modalities(cfg: &RunConfig, features: &[ModalityFeatures]) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    if cfg.id_modality {
        out.push(Modality::id());
    }
    for f in features {
        if out.iter().any(|m: &Modality| m.name == f.name) {
            return Err(Error::InvalidArgument(format!("duplicate modality name `{}`", f.name)));
        }
        out.push(Modality::features(f.name.clone(), f.to_matrix()));
    }
    if out.is_empty() {
        return Err(Error::config("id_modality", "no modality left: enable it or give feature files"));
    }
    Ok(out)
}

/// Operator bank and freshly initialized model for a split.
pub fn prepare(cfg: &RunConfig, split: &TemporalSplit, features: &[ModalityFeatures]) -> Result<(OperatorBank, Model)> {
    cfg.validate()?;
    let train = split.train();
    let bank = OperatorBank::build(train, &cfg.kernel_mode())?;
    let contexts = compute_contexts(train, cfg.window_fraction, cfg.time_unit)?;
    let model = Model::new(
        cfg.model_dims(),
        modalities(cfg, features)?,
        contexts,
        bank.k(),
        cfg.seed,
        cfg.precision,
    )?;
    Ok((bank, model))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub bank: OperatorBank,
    pub model: Model,
    pub outcome: TrainOutcome,
    pub valid: RankingReport,
    pub test: RankingReport,
}

/// Trains on `split` and evaluates the best checkpoint on valid and test.
pub fn run(cfg: &RunConfig, split: &TemporalSplit, features: &[ModalityFeatures]) -> Result<RunResult> {
    let (bank, mut model) = prepare(cfg, split, features)?;
    let outcome = train(&mut model, &bank, split, &cfg.train_config())?;
    let fwd = model.forward(&bank)?;
    let valid = evaluate(&fwd, split, EvalTarget::Valid, &REPORT_KS);
    let test = evaluate(&fwd, split, EvalTarget::Test, &REPORT_KS);
    Ok(RunResult {
        bank,
        model,
        outcome,
        valid,
        test,
    })
}

/// Span-bucket metrics, energy decay, gate mixing and modality mixtures of a
/// trained model, all over the evaluated users.
#[derive(Debug, Clone)]
pub struct DiagnosticsBundle {
    pub span_buckets: Vec<RankingReport>,
    pub energy: EnergyReport,
    pub mixing: MixingStats,
    pub modality_names: Vec<String>,
    pub modality_mixture: Vec<Option<Vec<f64>>>,
    pub modality_counts: Vec<usize>,
    pub gating: String,
}

pub const SPAN_BUCKETS: usize = 3;

pub fn diagnose(model: &Model, bank: &OperatorBank, split: &TemporalSplit) -> Result<DiagnosticsBundle> {
    let fwd = model.forward(bank)?;
    let users = split.evaluated_users();
    let train = split.train();
    let test = evaluate(&fwd, split, EvalTarget::Test, &REPORT_KS);
    let buckets = span_buckets(train, &users, SPAN_BUCKETS);
    let span_reports = bucket_reports(&test, &users, &buckets, SPAN_BUCKETS);
    let pairs: Vec<(usize, usize)> = users.iter().map(|&u| (u, split.test(u).unwrap().item as usize)).collect();
    let energy = energy_diagnostics(&fwd, &pairs, &buckets, SPAN_BUCKETS)?;
    let g = Matrix::from_fn(users.len(), fwd.g_user.cols(), |r, c| fwd.g_user.get(users[r], c));
    let mixing = mixing_stats(&g)?;
    let quartiles = log_span_quartiles(train, &users);
    let modality_mixture = modality_mixture_by_span(&fwd.beta, &users, &quartiles, 4);
    let modality_counts = (0..4).map(|b| quartiles.iter().filter(|&&q| q == b).count()).collect();
    Ok(DiagnosticsBundle {
        span_buckets: span_reports,
        energy,
        mixing,
        modality_names: model.modalities.iter().map(|m| m.name.clone()).collect(),
        modality_mixture,
        modality_counts,
        gating: gating_csv(&fwd),
    })
}

impl DiagnosticsBundle {
    /// Writes `buckets.csv`, `energy.csv`, `mixing.csv`, `modality_mixture.csv` and `gating.csv`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("buckets.csv"), &buckets_csv(&self.span_buckets))?;
        write_file(&dir.join("energy.csv"), &energy_csv(&self.energy))?;
        write_file(&dir.join("mixing.csv"), &mixing_csv(&self.mixing))?;
        write_file(
            &dir.join("modality_mixture.csv"),
            &modality_mixture_csv(&self.modality_names, &self.modality_mixture, &self.modality_counts),
        )?;
        write_file(&dir.join("gating.csv"), &self.gating)
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Test metrics of one training run in the timestamp-perturbation study.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbRun {
    /// `None` for the unperturbed timestamps.
    pub mode: Option<PerturbMode>,
    pub seed: u64,
    pub test: RankingReport,
}

impl PerturbRun {
    pub fn label(&self) -> &'static str {
        self.mode.map_or("Original", |m| m.label())
    }
}

pub const PERTURB_MODES: [Option<PerturbMode>; 4] = [
    None,
    Some(PerturbMode::Shuffle),
    Some(PerturbMode::Constant),
    Some(PerturbMode::Noise),
];

/// Trains once per (mode, seed). Each seed reseeds both the model and the perturbation.
pub fn perturbation_study(cfg: &RunConfig, data: &Dataset, seeds: &[u64]) -> Result<Vec<PerturbRun>> {
    let mut runs = Vec::new();
    for &seed in seeds {
        let cfg = RunConfig { seed, ..cfg.clone() };
        for mode in PERTURB_MODES {
            let split = match mode {
                None => data.split.clone(),
                Some(m) => perturb_timestamps(&data.split, m, seed, cfg.noise_scale)?,
            };
            let result = run(&cfg, &split, &data.features)?;
            runs.push(PerturbRun {
                mode,
                seed,
                test: result.test,
            });
        }
    }
    Ok(runs)
}

/// Mean over seeds of a test metric for one mode label.
pub fn mean_metric(runs: &[PerturbRun], label: &str, metric: impl Fn(&RankingReport) -> f64) -> f64 {
    let sel: Vec<f64> = runs.iter().filter(|r| r.label() == label).map(|r| metric(&r.test)).collect();
    sel.iter().sum::<f64>() / sel.len().max(1) as f64
}

/// `mode,seeds,recall10,recall20,ndcg10,ndcg20` with means over seeds, one row per mode.
pub fn perturbation_csv(runs: &[PerturbRun]) -> String {
    let mut s = String::from("mode,seeds,recall10,recall20,ndcg10,ndcg20\n");
    for mode in PERTURB_MODES {
        let label = mode.map_or("Original", |m| m.label());
        let n = runs.iter().filter(|r| r.label() == label).count();
        if n == 0 {
            continue;
        }
        let get = |f: fn(&RankingReport, usize) -> Option<f64>, k| mean_metric(runs, label, |r| f(r, k).unwrap_or(f64::NAN));
        s.push_str(&format!(
            "{label},{n},{},{},{},{}\n",
            get(RankingReport::recall, 10),
            get(RankingReport::recall, 20),
            get(RankingReport::ndcg, 10),
            get(RankingReport::ndcg, 20)
        ));
    }
    s
}
