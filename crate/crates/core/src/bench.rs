//! Planted-mixture ground truth, recovery metrics, and parameter sweeps.

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;

use crate::budget::PrivacyBudget;
use crate::classifier::{evaluate, subsample, train_mlp, MlpConfig};
use crate::dataset::EmbeddingDataset;
use crate::error::{config, contract, Error, Result};
use crate::exec::Backend;
use crate::gmm::{gmm_wasserstein_bound, match_components, sample_gmm, Covariance, GmmModel, SeparationSpec};
use crate::linalg::{sample_in_ball, sq_dist};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::rng::{stream, Streams};

/// Attempts at a random placement before giving up.
pub const PLACEMENT_ATTEMPTS: usize = 100;
/// Failure probability of the per-component count window.
pub const CHERNOFF_FAILURE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanPlacement {
    /// Vertices of a regular simplex with edge `separation`, centred at the
    /// origin. Needs `classes·k ≤ d`.
    Simplex,
    /// Uniform in a ball, redrawn until every pair is `separation` apart.
    RandomBall { radius: f64 },
}

/// Ground truth for `classes` labelled mixtures sharing one geometry. All
/// `classes·k` means are placed jointly, so components of different classes
/// are separated too.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedGmmSpec {
    pub k: usize,
    pub d: usize,
    pub n_per_class: usize,
    pub classes: usize,
    pub weights: Vec<f64>,
    pub placement: MeanPlacement,
    /// Required minimum distance between any two means.
    pub separation: f64,
    /// Every component has covariance `sigma²·I`.
    pub sigma: f64,
    /// Seeds the placement; samples come from the caller's generator.
    pub seed: u64,
}

impl PlantedGmmSpec {
    /// Two classes of three well-separated components in eight dimensions.
    pub fn reference() -> Self {
        let sigma = 0.5;
        let d = 8;
        Self {
            k: 3,
            d,
            n_per_class: 30_000,
            classes: 2,
            weights: vec![0.5, 0.3, 0.2],
            placement: MeanPlacement::Simplex,
            separation: 30.0 * sigma * (d as f64).sqrt(),
            sigma,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.n_per_class == 0 || self.classes == 0 {
            return config("k, d, n_per_class and classes must be at least 1");
        }
        if self.weights.len() != self.k {
            return config(format!("{} weights given for k = {}", self.weights.len(), self.k));
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return config("weights must lie on the simplex");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || !(self.separation >= 0.0 && self.separation.is_finite()) {
            return config("sigma must be positive and separation nonnegative");
        }
        if let MeanPlacement::RandomBall { radius } = self.placement {
            if !(radius > 0.0 && radius.is_finite()) {
                return config("placement radius must be positive");
            }
        }
        Ok(())
    }
}

/// Means for every class, `classes·k` in total, class-major.
pub fn place_means(spec: &PlantedGmmSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let total = spec.classes * spec.k;
    match spec.placement {
        MeanPlacement::Simplex => {
            if total > spec.d {
                return config(format!(
                    "simplex placement of {total} means needs d >= {total}, got {}; use random-ball",
                    spec.d
                ));
            }
            // Scaled basis vectors are pairwise `separation` apart.
            let scale = spec.separation / 2f64.sqrt();
            let centroid = scale / total as f64;
            Ok((0..total)
                .map(|i| {
                    (0..spec.d)
                        .map(|j| if j == i { scale - centroid } else if j < total { -centroid } else { 0.0 })
                        .collect()
                })
                .collect())
        }
        MeanPlacement::RandomBall { radius } => {
            let mut rng = stream(spec.seed, "placement");
            for _ in 0..PLACEMENT_ATTEMPTS {
                let means: Vec<Vec<f64>> = (0..total).map(|_| sample_in_ball(spec.d, radius, &mut rng)).collect();
                if min_pairwise(&means) >= spec.separation {
                    return Ok(means);
                }
            }
            config(format!(
                "no placement of {total} means with separation {} in a radius-{radius} ball after {PLACEMENT_ATTEMPTS} attempts",
                spec.separation
            ))
        }
    }
}

fn min_pairwise(means: &[Vec<f64>]) -> f64 {
    let mut lo = f64::INFINITY;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            lo = lo.min(sq_dist(&means[i], &means[j]).sqrt());
        }
    }
    lo
}

/// Half-width of the two-sided multiplicative Chernoff window for a
/// component count, holding for all `k` components with probability
/// `1 − CHERNOFF_FAILURE`.
pub fn chernoff_window(n: usize, weight: f64, k: usize) -> f64 {
    (3.0 * n as f64 * weight * (2.0 * k as f64 / CHERNOFF_FAILURE).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedClass {
    pub truth: GmmModel,
    /// Labels are generating-component indices.
    pub samples: EmbeddingDataset,
    pub counts: Vec<usize>,
    /// Some component count fell outside its Chernoff window.
    pub flagged: bool,
}

impl PlantedClass {
    pub fn components(&self) -> &[u32] {
        self.samples.labels().expect("planted samples carry component labels")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedData {
    pub spec: PlantedGmmSpec,
    pub classes: Vec<PlantedClass>,
}

impl PlantedData {
    /// All samples, labelled by class, in class order.
    pub fn dataset(&self) -> Result<EmbeddingDataset> {
        let parts = self
            .classes
            .iter()
            .enumerate()
            .map(|(c, p)| p.samples.clone().with_labels(Some(vec![c as u32; p.samples.len()])))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingDataset::concat(&parts)
    }

    /// Fresh class-labelled draws from the truths, `per_class` per class.
    pub fn fresh<R: Rng + ?Sized>(&self, per_class: usize, rng: &mut R) -> Result<EmbeddingDataset> {
        let parts = self
            .classes
            .iter()
            .enumerate()
            .map(|(c, p)| sample_gmm(&p.truth, per_class, rng)?.with_labels(Some(vec![c as u32; per_class])))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingDataset::concat(&parts)
    }
}

/// Ground-truth mixtures from `spec.seed` and `n_per_class` samples per
/// class from `rng`.
pub fn plant_gmm<R: Rng + ?Sized>(spec: &PlantedGmmSpec, rng: &mut R) -> Result<PlantedData> {
    let means = place_means(spec)?;
    let classes = means
        .chunks(spec.k)
        .map(|class_means| {
            let truth = GmmModel::new(
                spec.weights.clone(),
                class_means.to_vec(),
                vec![Covariance::isotropic(spec.d, spec.sigma * spec.sigma); spec.k],
            )?;
            let samples = sample_gmm(&truth, spec.n_per_class, rng)?;
            let mut counts = vec![0usize; spec.k];
            for &l in samples.labels().unwrap_or(&[]) {
                counts[l as usize] += 1;
            }
            let flagged = counts.iter().zip(&spec.weights).any(|(&c, &w)| {
                (c as f64 - spec.n_per_class as f64 * w).abs() > chernoff_window(spec.n_per_class, w, spec.k)
            });
            Ok(PlantedClass {
                truth,
                samples,
                counts,
                flagged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlantedData {
        spec: spec.clone(),
        classes,
    })
}

/// Recovery of one fitted mixture, measured after matching components by
/// their means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationErrors {
    /// γ = ‖ŵ − w‖₁.
    pub weight_l1: f64,
    /// α_μ = max ‖μ̂ᵢ − μᵢ‖₂.
    pub mean_l2_max: f64,
    /// α_Σ = max ‖Σ̂ᵢ − Σᵢ‖_F.
    pub cov_fro_max: f64,
    /// max ‖Σ̂ᵢ − Σᵢ‖_F / ‖Σᵢ‖_F.
    pub cov_rel_max: f64,
    pub purity: f64,
    /// Upper bound on W₂² between truth and fit.
    pub wasserstein_bound: f64,
}

impl EstimationErrors {
    /// Worst case over several mixtures: largest errors, smallest purity.
    pub fn worst(all: &[EstimationErrors]) -> Option<EstimationErrors> {
        let first = *all.first()?;
        Some(all.iter().skip(1).fold(first, |a, b| EstimationErrors {
            weight_l1: a.weight_l1.max(b.weight_l1),
            mean_l2_max: a.mean_l2_max.max(b.mean_l2_max),
            cov_fro_max: a.cov_fro_max.max(b.cov_fro_max),
            cov_rel_max: a.cov_rel_max.max(b.cov_rel_max),
            purity: a.purity.min(b.purity),
            wasserstein_bound: a.wasserstein_bound.max(b.wasserstein_bound),
        }))
    }
}

/// Errors of `fitted` against `truth`. `assignment` maps each sample to a
/// fitted cluster, `components` to its generating component. A different
/// component count is a structural failure and returns a shape error.
pub fn measure_recovery(
    truth: &GmmModel,
    fitted: &GmmModel,
    assignment: &[usize],
    components: &[u32],
) -> Result<EstimationErrors> {
    if truth.k() != fitted.k() || truth.dim() != fitted.dim() {
        return Err(Error::Shape(format!(
            "fitted mixture has k = {}, d = {}; truth has k = {}, d = {}",
            fitted.k(),
            fitted.dim(),
            truth.k(),
            truth.dim()
        )));
    }
    if assignment.len() != components.len() || assignment.is_empty() {
        return contract("assignment and component labels must be nonempty and of equal length");
    }
    let k = truth.k();
    let matching = match_components(truth.means(), fitted.means())?;
    let bound = gmm_wasserstein_bound(truth, fitted, &SeparationSpec::from_model(truth), 2.0, Some(&matching))?;
    let cov_rel_max = matching
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let t = &truth.covariances()[i];
            t.frobenius_distance(&fitted.covariances()[j]) / t.frobenius_norm()
        })
        .fold(0.0, f64::max);
    let mut component_of = vec![usize::MAX; k];
    for (i, &j) in matching.iter().enumerate() {
        component_of[j] = i;
    }
    let pure = assignment
        .iter()
        .zip(components)
        .filter(|(&a, &c)| a < k && component_of[a] == c as usize)
        .count();
    Ok(EstimationErrors {
        weight_l1: bound.gamma,
        mean_l2_max: bound.alpha_mean,
        cov_fro_max: bound.alpha_cov,
        cov_rel_max,
        purity: pure as f64 / assignment.len() as f64,
        wasserstein_bound: bound.value,
    })
}

/// Classifier settings for sweep cells.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityEval {
    pub mlp: MlpConfig,
    /// Fresh test rows per class.
    pub test_per_class: usize,
}

/// Batch size that keeps the optimizer step count near full-scale training
/// when sweep cells only have a few thousand training rows.
pub const DESK_BATCH_SIZE: usize = 64;

impl Default for UtilityEval {
    fn default() -> Self {
        Self {
            mlp: MlpConfig {
                batch_size: DESK_BATCH_SIZE,
                ..MlpConfig::default()
            },
            test_per_class: 5000,
        }
    }
}

/// Cartesian grid of pipeline settings over planted data.
///
/// Each cell copies `template`, then sets `k`, the estimator clip radius,
/// and the budget `(epsilon, delta)`. Lloyd iterations are raised to the
/// minimum the initialization needs for that `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub clips: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub delta: f64,
    pub planted: PlantedGmmSpec,
    pub template: PipelineConfig,
    pub utility: Option<UtilityEval>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.clips.is_empty() || self.epsilons.is_empty() || self.seeds.is_empty() {
            return contract("every sweep axis needs at least one value");
        }
        self.planted.validate()
    }

    pub fn cells(&self) -> usize {
        self.ks.len() * self.clips.len() * self.epsilons.len() * self.seeds.len()
    }

    fn cell_config(&self, k: usize, clip: f64, epsilon: f64) -> Result<PipelineConfig> {
        let mut cfg = self.template.clone();
        cfg.budget = if epsilon.is_infinite() {
            PrivacyBudget::non_private()
        } else {
            PrivacyBudget::new(epsilon, self.delta)?
        };
        cfg.kmeans.k = k;
        cfg.kmeans.lloyd_iterations = cfg.kmeans.lloyd_iterations.max(cfg.kmeans.min_iterations());
        cfg.estimator.clip_radius = clip;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowOutcome {
    Measured {
        errors: EstimationErrors,
        acc_synth: Option<f64>,
        acc_real: Option<f64>,
    },
    /// The fitted component count differs from the truth.
    Structural(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub clip: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub outcome: RowOutcome,
}

impl SweepRow {
    pub fn errors(&self) -> Option<&EstimationErrors> {
        match &self.outcome {
            RowOutcome::Measured { errors, .. } => Some(errors),
            _ => None,
        }
    }

    fn accuracies(&self) -> (Option<f64>, Option<f64>) {
        match &self.outcome {
            RowOutcome::Measured { acc_synth, acc_real, .. } => (*acc_synth, *acc_real),
            _ => (None, None),
        }
    }
}

/// Runs every cell of `grid`, in parallel, and returns rows in grid order
/// (k, clip, epsilon, seed; last varies fastest). Failing cells are
/// recorded, not propagated.
pub fn sweep(grid: &SweepGrid, backend: Backend) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    let planted: Vec<Result<PlantedData>> = backend.map_range(grid.seeds.len(), |i| {
        plant_gmm(&grid.planted, &mut stream(grid.seeds[i], "planted-samples"))
    });
    let planted = planted.into_iter().collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(grid.cells());
    for &k in &grid.ks {
        for &clip in &grid.clips {
            for &epsilon in &grid.epsilons {
                for s in 0..grid.seeds.len() {
                    cells.push((k, clip, epsilon, s));
                }
            }
        }
    }
    Ok(backend.map_range(cells.len(), |i| {
        let (k, clip, epsilon, s) = cells[i];
        let seed = grid.seeds[s];
        let outcome = run_cell(grid, &planted[s], k, clip, epsilon, seed).unwrap_or_else(|e| RowOutcome::Failed(e.to_string()));
        SweepRow {
            k,
            clip,
            epsilon,
            seed,
            outcome,
        }
    }))
}

fn run_cell(grid: &SweepGrid, planted: &PlantedData, k: usize, clip: f64, epsilon: f64, seed: u64) -> Result<RowOutcome> {
    let mut cfg = grid.cell_config(k, clip, epsilon)?;
    cfg.backend = Backend::Sequential;
    let data = planted.dataset()?;
    let report = run_pipeline(&data, &cfg, &Streams::new(seed).scope("pipeline"))?;
    if k != planted.spec.k {
        return Ok(RowOutcome::Structural(format!("fitted k = {k}, planted k = {}", planted.spec.k)));
    }
    let per_class = report
        .classes
        .iter()
        .zip(&planted.classes)
        .map(|(c, p)| measure_recovery(&p.truth, c.model(), &c.fit.clustering.assignment, p.components()))
        .collect::<Result<Vec<_>>>()?;
    let errors = EstimationErrors::worst(&per_class).expect("at least one class");
    let (acc_synth, acc_real) = match (&grid.utility, &report.generated) {
        (Some(u), Some(synthetic)) => {
            let (s, r) = utility_pair(planted, &data, synthetic, u, seed)?;
            (Some(s), Some(r))
        }
        _ => (None, None),
    };
    Ok(RowOutcome::Measured {
        errors,
        acc_synth,
        acc_real,
    })
}

/// Test accuracies of classifiers trained on synthetic and on real rows.
/// Both training sets are subsampled to the smaller of the two sizes.
pub fn utility_pair(
    planted: &PlantedData,
    real: &EmbeddingDataset,
    synthetic: &EmbeddingDataset,
    eval: &UtilityEval,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = synthetic.len().min(real.len());
    let synth_train = subsample(synthetic, n, &mut stream(seed, "subsample-synthetic"))?;
    let real_train = subsample(real, n, &mut stream(seed, "subsample-real"))?;
    let test = planted.fresh(eval.test_per_class, &mut stream(seed, "test"))?;
    let synth_model = train_mlp(&synth_train, &eval.mlp, &mut stream(seed, "mlp-synthetic"))?.model;
    let real_model = train_mlp(&real_train, &eval.mlp, &mut stream(seed, "mlp-real"))?.model;
    Ok((evaluate(&synth_model, &test)?, evaluate(&real_model, &test)?))
}

pub const TSV_HEADER: [&str; 13] = [
    "k",
    "clip",
    "epsilon",
    "seed",
    "weight_l1",
    "mean_l2_max",
    "cov_fro_max",
    "purity",
    "w_bound",
    "acc_synth",
    "acc_real",
    "cov_rel_max",
    "status",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes `rows` as a tab-separated table with a header row. Missing values
/// are `NA`; the last column is `ok`, `structural: …` or `error: …`.
pub fn write_tsv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{}", TSV_HEADER.join("\t"))?;
    for r in rows {
        let e = r.errors();
        let (acc_s, acc_r) = r.accuracies();
        let status = match &r.outcome {
            RowOutcome::Measured { .. } => "ok".to_string(),
            RowOutcome::Structural(m) => format!("structural: {m}"),
            RowOutcome::Failed(m) => format!("error: {}", m.replace(['\t', '\n'], " ")),
        };
        let fields = [
            r.k.to_string(),
            r.clip.to_string(),
            r.epsilon.to_string(),
            r.seed.to_string(),
            cell(e.map(|e| e.weight_l1)),
            cell(e.map(|e| e.mean_l2_max)),
            cell(e.map(|e| e.cov_fro_max)),
            cell(e.map(|e| e.purity)),
            cell(e.map(|e| e.wasserstein_bound)),
            cell(acc_s),
            cell(acc_r),
            cell(e.map(|e| e.cov_rel_max)),
            status,
        ];
        writeln!(out, "{}", fields.join("\t"))?;
    }
    Ok(())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    median(&values.iter().map(|v| (v - m).abs()).collect::<Vec<_>>())
}

/// Pass limits applied to per-configuration medians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub weight_l1: f64,
    pub mean_l2_max: f64,
    pub cov_rel_max: f64,
    pub purity: f64,
    /// Largest allowed drop of synthetic-trained accuracy below real-trained.
    pub accuracy_gap: f64,
    pub accuracy_min: f64,
}

impl Thresholds {
    /// Limits for planted components of scale `sigma`.
    pub fn for_sigma(sigma: f64) -> Self {
        Self {
            weight_l1: 0.05,
            mean_l2_max: 0.5 * sigma,
            cov_rel_max: 0.2,
            purity: 0.99,
            accuracy_gap: 0.02,
            accuracy_min: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub median: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub k: usize,
    pub clip: f64,
    pub epsilon: f64,
    pub runs: usize,
    pub measured: usize,
    /// (metric, median, median absolute deviation) over measured runs.
    pub stats: Vec<(&'static str, f64, f64)>,
    /// Empty unless `k` matches the planted component count.
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub configs: Vec<ConfigSummary>,
    pub seeds: usize,
}

impl SweepSummary {
    pub fn passed(&self) -> bool {
        self.configs.iter().all(|c| c.checks.iter().all(|k| k.pass))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.seeds < 2 {
            let _ = writeln!(out, "warning: {} seed(s); medians are degenerate", self.seeds);
        }
        for c in &self.configs {
            let _ = writeln!(
                out,
                "config k={} clip={} epsilon={}: {}/{} runs measured",
                c.k, c.clip, c.epsilon, c.measured, c.runs
            );
            for (name, med, dev) in &c.stats {
                let _ = writeln!(out, "  {name:<12} median {med:.6} mad {dev:.6}");
            }
            for ch in &c.checks {
                let verdict = if ch.pass { "PASS" } else { "FAIL" };
                let _ = writeln!(out, "  {verdict} {} median {:.6} limit {}", ch.name, ch.median, ch.limit);
            }
        }
        let _ = writeln!(out, "acceptance: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

/// Medians per configuration and threshold checks for configurations whose
/// `k` matches `planted_k`. A configuration with no measured run fails.
pub fn summarize(rows: &[SweepRow], planted_k: usize, limits: &Thresholds) -> SweepSummary {
    let mut configs: Vec<ConfigSummary> = Vec::new();
    let mut seeds = std::collections::BTreeSet::new();
    let mut groups: Vec<Vec<&SweepRow>> = Vec::new();
    for r in rows {
        seeds.insert(r.seed);
        match configs
            .iter()
            .position(|c| c.k == r.k && c.clip.total_cmp(&r.clip).is_eq() && c.epsilon.total_cmp(&r.epsilon).is_eq())
        {
            Some(i) => groups[i].push(r),
            None => {
                configs.push(ConfigSummary {
                    k: r.k,
                    clip: r.clip,
                    epsilon: r.epsilon,
                    runs: 0,
                    measured: 0,
                    stats: Vec::new(),
                    checks: Vec::new(),
                });
                groups.push(vec![r]);
            }
        }
    }
    for (c, group) in configs.iter_mut().zip(&groups) {
        c.runs = group.len();
        let errs: Vec<&EstimationErrors> = group.iter().filter_map(|r| r.errors()).collect();
        c.measured = errs.len();
        let metric = |f: &dyn Fn(&EstimationErrors) -> f64| errs.iter().map(|e| f(e)).collect::<Vec<f64>>();
        let mut series: Vec<(&'static str, Vec<f64>)> = vec![
            ("weight_l1", metric(&|e| e.weight_l1)),
            ("mean_l2_max", metric(&|e| e.mean_l2_max)),
            ("cov_fro_max", metric(&|e| e.cov_fro_max)),
            ("cov_rel_max", metric(&|e| e.cov_rel_max)),
            ("purity", metric(&|e| e.purity)),
            ("w_bound", metric(&|e| e.wasserstein_bound)),
        ];
        let accs: Vec<(f64, f64)> = group
            .iter()
            .filter_map(|r| match r.accuracies() {
                (Some(s), Some(t)) => Some((s, t)),
                _ => None,
            })
            .collect();
        if !accs.is_empty() {
            series.push(("acc_synth", accs.iter().map(|a| a.0).collect()));
            series.push(("acc_real", accs.iter().map(|a| a.1).collect()));
            series.push(("acc_gap", accs.iter().map(|a| a.1 - a.0).collect()));
        }
        c.stats = series
            .iter()
            .filter_map(|(n, v)| Some((*n, median(v)?, mad(v)?)))
            .collect();
        if c.k != planted_k {
            continue;
        }
        let med = |name: &str| c.stats.iter().find(|s| s.0 == name).map(|s| s.1);
        let upper = |name: &'static str, limit: f64| {
            let m = med(name).unwrap_or(f64::NAN);
            Check {
                name,
                median: m,
                limit,
                pass: m <= limit,
            }
        };
        c.checks.push(upper("weight_l1", limits.weight_l1));
        c.checks.push(upper("mean_l2_max", limits.mean_l2_max));
        c.checks.push(upper("cov_rel_max", limits.cov_rel_max));
        let purity = med("purity").unwrap_or(f64::NAN);
        c.checks.push(Check {
            name: "purity",
            median: purity,
            limit: limits.purity,
            pass: purity >= limits.purity,
        });
        if !accs.is_empty() {
            c.checks.push(upper("acc_gap", limits.accuracy_gap));
            for name in ["acc_synth", "acc_real"] {
                let m = med(name).unwrap_or(f64::NAN);
                c.checks.push(Check {
                    name,
                    median: m,
                    limit: limits.accuracy_min,
                    pass: m >= limits.accuracy_min,
                });
            }
        }
    }
    SweepSummary {
        configs,
        seeds: seeds.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::EstimatorConfig;
    use crate::kmeans::{kmeans_cost, KMeansConfig};

    fn small_spec(k: usize, n: usize) -> PlantedGmmSpec {
        PlantedGmmSpec {
            k,
            d: 4,
            n_per_class: n,
            classes: 1,
            weights: vec![1.0 / k as f64; k],
            placement: MeanPlacement::Simplex,
            separation: 20.0,
            sigma: 0.5,
            seed: 3,
        }
    }

    fn non_private(k: usize) -> PipelineConfig {
        let mut km = KMeansConfig::new(k, 1e3);
        km.lloyd_iterations = 8;
        let est = EstimatorConfig {
            clip_radius: 1e3,
            ..EstimatorConfig::default()
        };
        let mut cfg = PipelineConfig::new(PrivacyBudget::non_private(), km, est, 10);
        cfg.filter_enabled = false;
        cfg
    }

    #[test]
    fn reference_placement_is_separated() {
        let spec = PlantedGmmSpec::reference();
        let means = place_means(&spec).unwrap();
        assert_eq!(means.len(), 6);
        assert!((min_pairwise(&means) - spec.separation).abs() < 1e-9);
        let centroid: f64 = means.iter().map(|m| m.iter().sum::<f64>()).sum();
        assert!(centroid.abs() < 1e-9);
    }

    #[test]
    fn single_component_takes_every_sample() {
        let p = plant_gmm(&small_spec(1, 500), &mut stream(1, "s")).unwrap();
        assert_eq!(p.classes[0].counts, vec![500]);
        assert!(p.classes[0].components().iter().all(|&c| c == 0));
    }

    #[test]
    fn balanced_counts_fall_in_the_chernoff_window() {
        let p = plant_gmm(&small_spec(2, 10_000), &mut stream(2, "s")).unwrap();
        let window = 3.0 * (10_000.0 / 4.0 * 3.0 * 2000f64.ln()).sqrt();
        for &c in &p.classes[0].counts {
            assert!((c as f64 - 5000.0).abs() <= window);
        }
        assert!(!p.classes[0].flagged);
    }

    #[test]
    fn infeasible_placement_is_a_config_error() {
        let spec = PlantedGmmSpec {
            d: 2,
            separation: 1e6,
            placement: MeanPlacement::RandomBall { radius: 1.0 },
            ..small_spec(2, 10)
        };
        assert!(matches!(place_means(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn random_ball_placement_meets_separation() {
        let spec = PlantedGmmSpec {
            k: 5,
            d: 3,
            separation: 2.0,
            weights: vec![0.2; 5],
            placement: MeanPlacement::RandomBall { radius: 10.0 },
            ..small_spec(5, 10)
        };
        assert!(min_pairwise(&place_means(&spec).unwrap()) >= 2.0);
    }

    #[test]
    fn perfect_fit_has_zero_error() {
        let p = plant_gmm(&small_spec(3, 300), &mut stream(4, "s")).unwrap();
        let c = &p.classes[0];
        let assignment: Vec<usize> = c.components().iter().map(|&l| l as usize).collect();
        let e = measure_recovery(&c.truth, &c.truth, &assignment, c.components()).unwrap();
        assert_eq!((e.weight_l1, e.mean_l2_max, e.cov_fro_max, e.purity, e.wasserstein_bound), (0.0, 0.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn shifted_mean_is_measured_exactly() {
        let p = plant_gmm(&small_spec(2, 100), &mut stream(5, "s")).unwrap();
        let t = &p.classes[0].truth;
        let v = [0.3, -0.4, 0.0, 1.2];
        let mut means = t.means().to_vec();
        means[1].iter_mut().zip(v).for_each(|(m, s)| *m += s);
        let fitted = GmmModel::new(t.weights().to_vec(), means, t.covariances().to_vec()).unwrap();
        let assignment: Vec<usize> = p.classes[0].components().iter().map(|&l| l as usize).collect();
        let e = measure_recovery(t, &fitted, &assignment, p.classes[0].components()).unwrap();
        assert!((e.mean_l2_max - 1.3).abs() < 1e-12);
    }

    #[test]
    fn component_mismatch_is_structural() {
        let p = plant_gmm(&small_spec(2, 100), &mut stream(6, "s")).unwrap();
        let one = plant_gmm(&small_spec(1, 100), &mut stream(6, "s")).unwrap();
        let r = measure_recovery(&p.classes[0].truth, &one.classes[0].truth, &[0; 100], p.classes[0].components());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn non_private_pipeline_is_pure_on_separated_data() {
        let p = plant_gmm(&small_spec(3, 3000), &mut stream(7, "s")).unwrap();
        let report = run_pipeline(&p.dataset().unwrap(), &non_private(3), &Streams::new(1)).unwrap();
        let c = &report.classes[0];
        let e = measure_recovery(&p.classes[0].truth, c.model(), &c.fit.clustering.assignment, p.classes[0].components())
            .unwrap();
        assert_eq!(e.purity, 1.0);
    }

    #[test]
    fn coincident_means_give_half_purity() {
        let spec = PlantedGmmSpec {
            separation: 0.0,
            placement: MeanPlacement::RandomBall { radius: 1e-9 },
            ..small_spec(2, 4000)
        };
        let p = plant_gmm(&spec, &mut stream(8, "s")).unwrap();
        let report = run_pipeline(&p.dataset().unwrap(), &non_private(2), &Streams::new(2)).unwrap();
        let c = &report.classes[0];
        let e = measure_recovery(&p.classes[0].truth, c.model(), &c.fit.clustering.assignment, p.classes[0].components())
            .unwrap();
        assert!((e.purity - 0.5).abs() <= 0.05, "{}", e.purity);
    }

    #[test]
    fn dkw_bound_holds_for_weight_cdf() {
        // Component index order defines the CDF over components.
        let n = 100_000;
        let spec = PlantedGmmSpec {
            k: 4,
            weights: vec![0.1, 0.2, 0.3, 0.4],
            ..small_spec(4, n)
        };
        let limit = ((2.0f64 / 1e-3).ln() / (2.0 * n as f64)).sqrt();
        let mut within = 0;
        for seed in 0..100 {
            let p = plant_gmm(&spec, &mut stream(seed, "dkw")).unwrap();
            let (mut emp, mut truth, mut sup) = (0.0, 0.0, 0.0f64);
            for (c, w) in p.classes[0].counts.iter().zip(&spec.weights) {
                emp += *c as f64 / n as f64;
                truth += w;
                sup = sup.max((emp - truth).abs());
            }
            within += (sup <= limit) as usize;
        }
        assert!(within >= 99, "{within}");
    }

    #[test]
    fn planted_cost_respects_opt_ceiling() {
        let spec = PlantedGmmSpec {
            d: 8,
            ..small_spec(3, 20_000)
        };
        let p = plant_gmm(&spec, &mut stream(9, "s")).unwrap();
        let cost = kmeans_cost(&p.classes[0].samples, p.classes[0].truth.means());
        let ceiling = 4.0 / 3.0 * spec.sigma * spec.sigma * spec.d as f64 * spec.n_per_class as f64 * 1.1;
        assert!(cost <= ceiling, "{cost} > {ceiling}");
    }

    #[test]
    fn grid_has_one_row_per_cell_in_order() {
        let grid = SweepGrid {
            ks: vec![1, 2],
            clips: vec![4.0],
            epsilons: vec![1.0, 2.0],
            seeds: vec![0, 1],
            delta: 1e-5,
            planted: PlantedGmmSpec {
                k: 2,
                weights: vec![0.5, 0.5],
                ..small_spec(2, 2000)
            },
            template: {
                let mut cfg = non_private(1);
                cfg.kmeans.clip_radius = 30.0;
                cfg.estimator.clip_radius = 4.0;
                cfg.kmeans.lloyd_iterations = 4;
                cfg
            },
            utility: None,
        };
        let rows = sweep(&grid, Backend::default()).unwrap();
        assert_eq!(rows.len(), 8);
        let keys: Vec<(usize, f64, u64)> = rows.iter().map(|r| (r.k, r.epsilon, r.seed)).collect();
        assert_eq!(keys[..4], [(1, 1.0, 0), (1, 1.0, 1), (1, 2.0, 0), (1, 2.0, 1)]);
        assert!(rows[..4].iter().all(|r| matches!(r.outcome, RowOutcome::Structural(_))));
        assert!(rows[4..].iter().all(|r| r.errors().is_some()));

        let mut tsv = Vec::new();
        write_tsv(&rows, &mut tsv).unwrap();
        let text = String::from_utf8(tsv).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.lines().next().unwrap().starts_with("k\tclip\tepsilon\tseed\tweight_l1"));

        let summary = summarize(&rows, 2, &Thresholds::for_sigma(0.5));
        assert_eq!(summary.configs.len(), 4);
        assert!(summary.configs[..2].iter().all(|c| c.checks.is_empty()));
        let strict = Thresholds {
            weight_l1: 0.0,
            mean_l2_max: 0.0,
            cov_rel_max: 0.0,
            purity: 1.1,
            accuracy_gap: 0.0,
            accuracy_min: 1.1,
        };
        assert!(!summarize(&rows, 2, &strict).passed());
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), Some(1.0));
        assert_eq!(median(&[]), None);
    }
}
