//! End-to-end synthetic generation: per-class private mixture fitting,
//! sampling, and noisy-vote filtering.
//!
//! The total budget is split into five shares: clustering, means,
//! covariances, embedding filtering, and a fifth share reserved for an image
//! filtering stage that this crate does not run. Classes are disjoint, so
//! they compose in parallel.

use crate::budget::{split_budget, BudgetLedger, Composition, PrivacyBudget};
use crate::dataset::{split_by_label, EmbeddingDataset};
use crate::error::{config, contract, Result};
use crate::estimate::{dp_weights, estimate_gaussian, EstimatorConfig, GaussianEstimate};
use crate::exec::{Backend, CHUNK_ROWS};
use crate::gmm::{sample_gmm, GmmModel};
use crate::kmeans::{dp_kmeans_with, ClusteringResult, KMeansConfig};
use crate::linalg::ColumnIndex;
use crate::mechanisms::laplace_mechanism;
use crate::rng::Streams;
use rand::Rng;

/// Stage names in share order.
pub const STAGES: [&str; 5] = [
    "dp-cluster",
    "dp-mean",
    "dp-covariance",
    "dp-filter-embedding",
    "dp-filter-image",
];

pub const DEFAULT_MULTIPLIER: f64 = 6.0;
pub const DEFAULT_VOTE_THRESHOLD: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub budget: PrivacyBudget,
    pub shares: [f64; 5],
    pub kmeans: KMeansConfig,
    pub estimator: EstimatorConfig,
    /// Target number of synthetic points per class.
    pub generations: usize,
    /// Points sampled per class are `round(generation_multiplier · generations)`.
    pub generation_multiplier: f64,
    pub vote_threshold: f64,
    pub filter_enabled: bool,
    pub backend: Backend,
}

impl PipelineConfig {
    pub fn new(budget: PrivacyBudget, kmeans: KMeansConfig, estimator: EstimatorConfig, generations: usize) -> Self {
        Self {
            budget,
            shares: [1.0; 5],
            kmeans,
            estimator,
            generations,
            generation_multiplier: DEFAULT_MULTIPLIER,
            vote_threshold: DEFAULT_VOTE_THRESHOLD,
            filter_enabled: true,
            backend: Backend::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kmeans.validate()?;
        self.estimator.validate()?;
        if self.generations == 0 {
            return config("generations must be at least 1");
        }
        if !(self.generation_multiplier >= 1.0 && self.generation_multiplier.is_finite()) {
            return config(format!(
                "generation multiplier must be at least 1, got {}",
                self.generation_multiplier
            ));
        }
        if !self.vote_threshold.is_finite() {
            return config("vote threshold must be finite");
        }
        split_budget(&self.budget, &self.shares).map(|_| ())
    }

    /// Budgets for the five stages.
    pub fn stage_budgets(&self) -> Result<Vec<PrivacyBudget>> {
        split_budget(&self.budget, &self.shares)
    }

    /// Points sampled per class before filtering.
    pub fn samples_per_class(&self) -> usize {
        (self.generation_multiplier * self.generations as f64).round() as usize
    }
}

/// A private mixture fit of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedGmm {
    pub model: GmmModel,
    pub clustering: ClusteringResult,
    /// Per component: the released count was below one and the component
    /// fell back to its cluster center with a floor covariance.
    pub degenerate: Vec<bool>,
    /// Sequential entries for the three fitting stages.
    pub ledger: BudgetLedger,
}

/// Fits a mixture to `ds` with the first three stage shares of `cfg.budget`.
pub fn fit_private_gmm(ds: &EmbeddingDataset, cfg: &PipelineConfig, streams: &Streams) -> Result<FittedGmm> {
    cfg.validate()?;
    let shares = cfg.stage_budgets()?;
    let mut rng = streams.rng(STAGES[0]);
    let clustering = dp_kmeans_with(cfg.backend, ds, &cfg.kmeans, &shares[0], &mut rng)?;

    let k = clustering.k();
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
    for (row, &j) in ds.rows().zip(&clustering.assignment) {
        members[j].push(row);
    }
    // Clusters are disjoint, so each mean and covariance release is charged
    // once at the full stage share.
    let estimates: Vec<Result<GaussianEstimate>> = cfg.backend.map_range(k, |j| {
        let mut rng = streams.rng(&format!("dp-gaussian/{j}"));
        estimate_gaussian(
            &members[j],
            &clustering.centers[j],
            &cfg.estimator,
            &shares[1],
            &shares[2],
            &mut rng,
        )
    });
    let estimates = estimates.into_iter().collect::<Result<Vec<_>>>()?;
    let degenerate: Vec<bool> = estimates.iter().map(|e| e.degenerate).collect();
    if degenerate.iter().all(|&d| d) {
        return contract(format!("all {k} clusters are degenerate; the budget is too small for this data"));
    }
    let weights = dp_weights(&clustering.noisy_counts)?;
    let (means, covariances) = estimates.into_iter().map(|e| (e.mean, e.covariance)).unzip();
    let model = GmmModel::new(weights, means, covariances)?;

    let mut ledger = BudgetLedger::new(cfg.budget);
    for (name, share) in STAGES.iter().zip(&shares).take(3) {
        ledger.sequential(*name, *share);
    }
    Ok(FittedGmm {
        model,
        clustering,
        degenerate,
        ledger,
    })
}

/// Votes cast by `original` for their nearest rows of `generated`.
pub fn vote_histogram(generated: &EmbeddingDataset, original: &EmbeddingDataset) -> Result<Vec<f64>> {
    vote_histogram_with(Backend::default(), generated, original)
}

pub fn vote_histogram_with(
    backend: Backend,
    generated: &EmbeddingDataset,
    original: &EmbeddingDataset,
) -> Result<Vec<f64>> {
    let d = generated.dim();
    if original.dim() != d {
        return contract(format!(
            "generated rows have dimension {d} but original rows have {}",
            original.dim()
        ));
    }
    let index = ColumnIndex::new(generated.as_slice(), d);
    let mut nearest = vec![0usize; original.len()];
    let data = original.as_slice();
    backend.fill_chunks(&mut nearest, CHUNK_ROWS, |start, out| {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = index.nearest(&data[(start + i) * d..(start + i + 1) * d]).0;
        }
    });
    let mut votes = vec![0.0; generated.len()];
    for j in nearest {
        votes[j] += 1.0;
    }
    Ok(votes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Indices of surviving generated rows, ascending.
    pub kept: Vec<usize>,
    pub noisy_votes: Vec<f64>,
    /// `None` when nothing survived.
    pub survivors: Option<EmbeddingDataset>,
}

impl FilterOutcome {
    /// Nothing survived; the caller may prefer to skip filtering.
    pub fn warning(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Keeps the generated rows whose noisy vote count reaches `threshold`.
///
/// Each original row casts one vote, so the histogram has ℓ₁ sensitivity 1.
pub fn dp_filter_embeddings<R: Rng + ?Sized>(
    generated: &EmbeddingDataset,
    original: &EmbeddingDataset,
    threshold: f64,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<FilterOutcome> {
    dp_filter_embeddings_with(Backend::default(), generated, original, threshold, budget, rng)
}

pub fn dp_filter_embeddings_with<R: Rng + ?Sized>(
    backend: Backend,
    generated: &EmbeddingDataset,
    original: &EmbeddingDataset,
    threshold: f64,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<FilterOutcome> {
    if !threshold.is_finite() {
        return contract("vote threshold must be finite");
    }
    let votes = vote_histogram_with(backend, generated, original)?;
    let noisy_votes = laplace_mechanism(&votes, 1.0, budget, rng)?;
    let kept: Vec<usize> = (0..noisy_votes.len()).filter(|&j| noisy_votes[j] >= threshold).collect();
    let survivors = if kept.is_empty() {
        None
    } else {
        Some(generated.select(&kept)?)
    };
    Ok(FilterOutcome {
        kept,
        noisy_votes,
        survivors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub label: u32,
    pub fit: FittedGmm,
    /// Rows sampled before filtering.
    pub generated: usize,
    /// Rows kept by the filter; `None` when filtering is off.
    pub survivors: Option<usize>,
}

impl ClassReport {
    pub fn model(&self) -> &GmmModel {
        &self.fit.model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticReport {
    pub seed: u64,
    /// Ascending by label.
    pub classes: Vec<ClassReport>,
    /// Synthetic rows of every class, labelled, in class order. `None` when
    /// filtering removed everything.
    pub generated: Option<EmbeddingDataset>,
    pub ledger: BudgetLedger,
}

impl SyntheticReport {
    pub fn models(&self) -> Vec<(u32, GmmModel)> {
        self.classes.iter().map(|c| (c.label, c.fit.model.clone())).collect()
    }

    /// Classes whose filter kept nothing.
    pub fn filter_warnings(&self) -> Vec<u32> {
        self.classes
            .iter()
            .filter(|c| c.survivors == Some(0))
            .map(|c| c.label)
            .collect()
    }
}

/// Ledger partition key for a per-class stage.
pub fn class_partition(stage: &str) -> Composition {
    Composition::Parallel {
        partition: format!("classes/{stage}"),
    }
}

/// Records the shares of stages that did not run as reserved, so the ledger
/// always accounts for the full split.
pub fn record_reserved(ledger: &mut BudgetLedger, shares: &[PrivacyBudget], filter_ran: bool) {
    if !filter_ran {
        ledger.sequential(format!("{} (reserved, unused)", STAGES[3]), shares[3]);
    }
    ledger.sequential(format!("{} (reserved, unused)", STAGES[4]), shares[4]);
}

/// Runs the whole pipeline on every class of `ds`.
pub fn run_pipeline(ds: &EmbeddingDataset, cfg: &PipelineConfig, streams: &Streams) -> Result<SyntheticReport> {
    cfg.validate()?;
    let shares = cfg.stage_budgets()?;
    let classes = split_by_label(ds)?;
    let c = ds.num_classes().unwrap_or(0);
    if let Some(missing) = (0..c as u32).find(|l| classes.iter().all(|(label, _)| label != l)) {
        return contract(format!("class {missing} has no rows"));
    }

    let outcomes: Vec<Result<(ClassReport, Option<EmbeddingDataset>)>> = cfg.backend.map_range(classes.len(), |i| {
        let (label, part) = &classes[i];
        run_class(*label, part, cfg, &shares, &streams.scope(&format!("class-{label}")))
            .map_err(|e| e.context(&format!("class {label}")))
    });

    let mut ledger = BudgetLedger::new(cfg.budget);
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut parts = Vec::new();
    for outcome in outcomes {
        let (report, rows) = outcome?;
        for e in report.fit.ledger.entries() {
            ledger.record(format!("class {}/{}", report.label, e.name), e.budget, class_partition(&e.name));
        }
        if cfg.filter_enabled {
            ledger.record(
                format!("class {}/{}", report.label, STAGES[3]),
                shares[3],
                class_partition(STAGES[3]),
            );
        }
        parts.extend(rows);
        reports.push(report);
    }
    record_reserved(&mut ledger, &shares, cfg.filter_enabled);
    ledger.audit()?;

    let generated = if parts.is_empty() {
        None
    } else {
        Some(EmbeddingDataset::concat(&parts)?)
    };
    Ok(SyntheticReport {
        seed: streams.seed(),
        classes: reports,
        generated,
        ledger,
    })
}

fn run_class(
    label: u32,
    part: &EmbeddingDataset,
    cfg: &PipelineConfig,
    shares: &[PrivacyBudget],
    streams: &Streams,
) -> Result<(ClassReport, Option<EmbeddingDataset>)> {
    let fit = fit_private_gmm(part, cfg, streams)?;
    let count = cfg.samples_per_class();
    let sampled = sample_gmm(&fit.model, count, &mut streams.rng("sample"))?.with_labels(Some(vec![label; count]))?;
    if !cfg.filter_enabled {
        let report = ClassReport {
            label,
            fit,
            generated: count,
            survivors: None,
        };
        return Ok((report, Some(sampled)));
    }
    let outcome = dp_filter_embeddings_with(
        cfg.backend,
        &sampled,
        part,
        cfg.vote_threshold,
        &shares[3],
        &mut streams.rng(STAGES[3]),
    )?;
    let report = ClassReport {
        label,
        fit,
        generated: count,
        survivors: Some(outcome.kept.len()),
    };
    Ok((report, outcome.survivors))
}
