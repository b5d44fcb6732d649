//! Text serialization of fitted models, ledgers, and pipeline reports.
//!
//! Floats are written with `Display`, which round-trips exactly.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::budget::{BudgetLedger, Composition, PrivacyBudget};
use crate::error::{Error, Result};
use crate::gmm::{Covariance, CovarianceModel, GmmModel};
use crate::pipeline::{PipelineConfig, SyntheticReport};
use crate::textdoc::{join_floats, parse_floats, Document, Section};

fn parse_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { row: 0, msg: msg.into() })
}

/// Budget from a stored pair; an infinite ε is the non-private sentinel.
pub fn budget_from_pair(epsilon: f64, delta: f64) -> Result<PrivacyBudget> {
    if epsilon.is_infinite() && epsilon > 0.0 {
        return Ok(PrivacyBudget::non_private());
    }
    PrivacyBudget::new(epsilon, delta)
}

fn budget_text(b: &PrivacyBudget) -> String {
    join_floats(&[b.epsilon(), b.delta()])
}

fn parse_budget(raw: &str) -> Result<PrivacyBudget> {
    match parse_floats(raw)?[..] {
        [e, d] => budget_from_pair(e, d),
        _ => parse_err(format!("expected epsilon,delta, got {raw:?}")),
    }
}

pub fn model_section(label: u32, model: &GmmModel) -> Section {
    let mut s = Section::new(format!("class {label}"));
    s.set("label", label)
        .set("k", model.k())
        .set("d", model.dim())
        .set("covariance", model.covariance_model().name())
        .set("weights", join_floats(model.weights()));
    for (j, (mu, cov)) in model.means().iter().zip(model.covariances()).enumerate() {
        s.set(format!("mean.{j}"), join_floats(mu));
        let values = match cov {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => m.transpose().as_slice().to_vec(),
        };
        s.set(format!("cov.{j}"), join_floats(&values));
    }
    s
}

pub fn model_from_section(s: &Section) -> Result<(u32, GmmModel)> {
    let label: u32 = s.parse("label")?;
    let k: usize = s.parse("k")?;
    let d: usize = s.parse("d")?;
    let kind = s.require("covariance")?;
    let Some(kind) = CovarianceModel::parse(kind) else {
        return parse_err(format!("unknown covariance model {kind:?}"));
    };
    let weights = s.parse_list("weights")?;
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        means.push(s.parse_list(&format!("mean.{j}"))?);
        let v = s.parse_list(&format!("cov.{j}"))?;
        covs.push(match kind {
            CovarianceModel::Diagonal => Covariance::Diagonal(v),
            CovarianceModel::Full if v.len() == d * d => Covariance::Full(DMatrix::from_row_slice(d, d, &v)),
            CovarianceModel::Full => {
                return Err(Error::Shape(format!("cov.{j} has {} values, expected {}", v.len(), d * d)))
            }
        });
    }
    let model = GmmModel::new(weights, means, covs)?;
    if model.dim() != d {
        return Err(Error::Shape(format!("class {label}: declared d = {d}, found {}", model.dim())));
    }
    Ok((label, model))
}

pub fn ledger_section(ledger: &BudgetLedger) -> Section {
    let mut s = Section::new("ledger");
    s.set("total", budget_text(&ledger.total()));
    for e in ledger.entries() {
        let kind = match &e.composition {
            Composition::Sequential => "sequential".to_string(),
            Composition::Parallel { partition } => format!("parallel:{partition}"),
        };
        s.set("entry", format!("{} | {kind} | {}", e.name, budget_text(&e.budget)));
    }
    match ledger.audit() {
        Ok(spent) => s.set("composed", budget_text(&spent)).set("audit", "ok"),
        Err(e) => s.set("audit", e.to_string()),
    };
    s
}

pub fn ledger_from_section(s: &Section) -> Result<BudgetLedger> {
    let mut ledger = BudgetLedger::new(parse_budget(s.require("total")?)?);
    for raw in s.get_all("entry") {
        let parts: Vec<&str> = raw.split('|').map(str::trim).collect();
        let [name, kind, budget] = parts[..] else {
            return parse_err(format!("malformed ledger entry {raw:?}"));
        };
        let composition = match kind.strip_prefix("parallel:") {
            Some(p) => Composition::Parallel { partition: p.to_string() },
            None if kind == "sequential" => Composition::Sequential,
            None => return parse_err(format!("unknown composition {kind:?}")),
        };
        ledger.record(name, parse_budget(budget)?, composition);
    }
    Ok(ledger)
}

/// Fitted per-class models with the ledger that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub seed: u64,
    pub shares: [f64; 5],
    pub models: Vec<(u32, GmmModel)>,
    pub ledger: BudgetLedger,
}

impl ModelFile {
    pub fn to_document(&self) -> Document {
        let mut doc = Document::new();
        let mut run = Section::new("run");
        run.set("seed", self.seed)
            .set("budget", budget_text(&self.ledger.total()))
            .set("shares", join_floats(&self.shares))
            .set("classes", self.models.len());
        doc.push(run);
        for (label, model) in &self.models {
            doc.push(model_section(*label, model));
        }
        doc.push(ledger_section(&self.ledger));
        doc
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let Some(run) = doc.section("run") else {
            return parse_err("model file lacks a [run] section");
        };
        let shares: [f64; 5] = run
            .parse_list("shares")?
            .try_into()
            .map_err(|_| Error::Parse { row: 0, msg: "shares must have five entries".into() })?;
        let models = doc
            .sections_with_prefix("class ")
            .map(model_from_section)
            .collect::<Result<Vec<_>>>()?;
        if models.is_empty() {
            return parse_err("model file holds no class models");
        }
        let Some(ledger) = doc.section("ledger") else {
            return parse_err("model file lacks a [ledger] section");
        };
        Ok(Self {
            seed: run.parse("seed")?,
            shares,
            models,
            ledger: ledger_from_section(ledger)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_document().render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_document(&Document::parse(&fs::read_to_string(path)?)?)
    }
}

/// Summary document of a pipeline run.
pub fn report_document(report: &SyntheticReport, cfg: &PipelineConfig) -> Document {
    let mut doc = Document::new();
    let mut run = Section::new("run");
    run.set("seed", report.seed)
        .set("budget", budget_text(&cfg.budget))
        .set("shares", join_floats(&cfg.shares))
        .set("k", cfg.kmeans.k)
        .set("kmeans_clip", cfg.kmeans.clip_radius)
        .set("lloyd_iterations", cfg.kmeans.lloyd_iterations)
        .set("mean_clip", cfg.estimator.mean_radius())
        .set("cov_clip", cfg.estimator.clip_radius)
        .set("covariance", cfg.estimator.covariance_model.name())
        .set("generations", cfg.generations)
        .set("multiplier", cfg.generation_multiplier)
        .set("threshold", cfg.vote_threshold)
        .set("filter", cfg.filter_enabled)
        .set("generated_total", report.generated.as_ref().map_or(0, |g| g.len()));
    doc.push(run);
    for c in &report.classes {
        let mut s = model_section(c.label, c.model());
        s.set("noisy_counts", join_floats(&c.fit.clustering.noisy_counts))
            .set(
                "degenerate",
                c.fit.degenerate.iter().map(|d| if *d { "1" } else { "0" }).collect::<Vec<_>>().join(","),
            )
            .set("reseeded", c.fit.clustering.reseeded.len())
            .set("generated", c.generated);
        match c.survivors {
            Some(n) => s.set("survivors", n),
            None => s.set("survivors", "unfiltered"),
        };
        if c.survivors == Some(0) {
            s.set("warning", "filter kept no rows");
        }
        doc.push(s);
    }
    doc.push(ledger_section(&report.ledger));
    doc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(kind: CovarianceModel) -> GmmModel {
        let covs = match kind {
            CovarianceModel::Diagonal => vec![Covariance::Diagonal(vec![0.1, 0.2]), Covariance::Diagonal(vec![1.0 / 3.0, 2.0])],
            CovarianceModel::Full => vec![
                Covariance::Full(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0])),
                Covariance::Full(DMatrix::from_row_slice(2, 2, &[0.5, -0.1, -0.1, 0.7])),
            ],
        };
        GmmModel::new(vec![0.3, 0.7], vec![vec![1.5, -2.0], vec![0.1, 1e-17]], covs).unwrap()
    }

    #[test]
    fn models_round_trip_exactly() {
        for kind in [CovarianceModel::Diagonal, CovarianceModel::Full] {
            let m = model(kind);
            let back = model_from_section(&model_section(4, &m)).unwrap();
            assert_eq!(back, (4, m));
        }
    }

    #[test]
    fn ledgers_round_trip() {
        let mut ledger = BudgetLedger::new(PrivacyBudget::new(1.0, 1e-5).unwrap());
        ledger.sequential("dp-cluster", PrivacyBudget::new(0.2, 2e-6).unwrap());
        ledger.record(
            "class 3/dp-mean",
            PrivacyBudget::new(0.2, 2e-6).unwrap(),
            Composition::Parallel { partition: "classes/dp-mean".into() },
        );
        let back = ledger_from_section(&ledger_section(&ledger)).unwrap();
        assert_eq!(back, ledger);

        let np = BudgetLedger::new(PrivacyBudget::non_private());
        assert_eq!(ledger_from_section(&ledger_section(&np)).unwrap(), np);
    }

    #[test]
    fn model_file_round_trips_through_text() {
        let mut ledger = BudgetLedger::new(PrivacyBudget::new(2.0, 1e-6).unwrap());
        ledger.sequential("dp-cluster", PrivacyBudget::new(0.4, 2e-7).unwrap());
        let file = ModelFile {
            seed: 17,
            shares: [1.0, 1.0, 1.0, 1.0, 1.0],
            models: vec![(0, model(CovarianceModel::Diagonal)), (1, model(CovarianceModel::Diagonal))],
            ledger,
        };
        let text = file.to_document().render();
        assert_eq!(ModelFile::from_document(&Document::parse(&text).unwrap()).unwrap(), file);
    }

    #[test]
    fn invalid_model_text_is_rejected() {
        let mut s = model_section(0, &model(CovarianceModel::Diagonal));
        s.set("weights", "0.9,0.9");
        assert!(model_from_section(&s).is_err());
        let mut s = model_section(0, &model(CovarianceModel::Diagonal));
        s.set("covariance", "banded");
        assert!(matches!(model_from_section(&s), Err(Error::Parse { .. })));
    }
}
