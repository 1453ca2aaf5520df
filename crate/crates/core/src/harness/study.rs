use std::ops::ControlFlow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{fixture_words, Category, MaskSpec, WordEntry};
use crate::engine::{execute_edit, EditRequest, Registry};
use crate::error::{Error, Result};
use crate::generators::InteriorBase;
use crate::losses::LossBreakdown;
use crate::optim::OptimizationSchedule;
use crate::realism::RealismProxy;
use crate::scorers::{masked_score, Prompt};
use crate::tensor::{ImageTensor, LatentVector, Mask};

pub const STUDY_SCHEMA: &str = "paintword.study/1";

/// A named schedule under test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub schedule: OptimizationSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub generator: String,
    pub scorer: String,
    /// Empty means the bundled 50-word list.
    pub words: Vec<WordEntry>,
    pub image_count: usize,
    /// Latent seeds, one per image; empty means `0..image_count`.
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub lambda_img: Vec<f64>,
    pub mask: MaskSpec,
    /// Drop words the scorer rejects as unknown instead of recording them
    /// as failed rows.
    pub restrict_to_vocabulary: bool,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            generator: crate::assets::TOY_SHAPES.into(),
            scorer: crate::assets::TOY_SCORER.into(),
            words: Vec::new(),
            image_count: 2,
            seeds: Vec::new(),
            variants: vec![Variant {
                name: "cma-then-grad".into(),
                schedule: OptimizationSchedule::default(),
            }],
            lambda_img: vec![crate::losses::DEFAULT_LAMBDA_IMG],
            mask: MaskSpec::default(),
            restrict_to_vocabulary: true,
        }
    }
}

impl StudySpec {
    pub fn word_list(&self) -> Vec<WordEntry> {
        if self.words.is_empty() {
            fixture_words()
        } else {
            self.words.clone()
        }
    }

    pub fn image_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.image_count as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.image_count == 0 {
            return bad("study needs at least one image");
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.image_count {
            return bad("seeds must list exactly image_count entries");
        }
        if self.variants.is_empty() {
            return bad("study needs at least one schedule variant");
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|p| p[0] == p[1]) {
            return bad("variant names must be unique");
        }
        if self.lambda_img.is_empty() || self.lambda_img.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("lambda_img needs finite, non-negative values");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub score_before: f64,
    pub score_after: f64,
    pub score_delta: f64,
    pub outside_drift: f64,
    pub realism_before: f64,
    pub realism_after: f64,
    pub realism_delta: f64,
    pub final_loss: LossBreakdown,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub image: usize,
    pub seed: u64,
    pub word: String,
    pub category: Category,
    pub variant: String,
    pub lambda_img: f64,
    pub mask_coverage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RowMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RowError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryAggregate {
    pub variant: String,
    pub lambda_img: f64,
    pub category: Category,
    pub rows: usize,
    pub failed: usize,
    pub mean_score_delta: Option<f64>,
    pub mean_outside_drift: Option<f64>,
    pub mean_realism_delta: Option<f64>,
    /// Share of successful rows whose masked score rose.
    pub accurate_fraction: Option<f64>,
    /// Share of successful rows whose realism proxy rose.
    pub realistic_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema: String,
    pub spec: StudySpec,
    pub skipped_words: Vec<String>,
    pub rows: Vec<StudyRow>,
    pub aggregates: Vec<CategoryAggregate>,
}

impl StudyReport {
    /// Aggregates rebuilt from `rows`, in (variant, lambda, category) order.
    pub fn recompute_aggregates(&self) -> Vec<CategoryAggregate> {
        aggregate(&self.spec, &self.rows)
    }
}

/// Wall-clock data kept apart from the deterministic report.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timings {
    pub total_s: f64,
    /// Seconds per row, aligned with `StudyReport::rows`.
    pub rows_s: Vec<f64>,
}

pub struct StudyOutput {
    pub report: StudyReport,
    pub timings: Timings,
}

/// Accuracy, consistency and realism proxies for one edit.
pub fn row_metrics(
    before: &ImageTensor,
    after: &ImageTensor,
    mask: &Mask,
    score_before: f64,
    score_after: f64,
) -> (f64, f64, f64) {
    let plane = before.plane();
    let bits = mask.bits();
    let mut drift = 0.0;
    let mut n = 0usize;
    for c in 0..before.channels {
        for p in (0..plane).filter(|&p| !bits[p]) {
            drift += (after.data[c * plane + p] - before.data[c * plane + p]).abs();
            n += 1;
        }
    }
    let proxy = RealismProxy::default();
    (
        score_after - score_before,
        if n == 0 { 0.0 } else { drift / n as f64 },
        proxy.score(after) - proxy.score(before),
    )
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(spec: &StudySpec, rows: &[StudyRow]) -> Vec<CategoryAggregate> {
    let mut out = Vec::new();
    for variant in &spec.variants {
        for &lambda in &spec.lambda_img {
            for category in Category::ALL {
                let group: Vec<&StudyRow> = rows
                    .iter()
                    .filter(|r| r.variant == variant.name && r.lambda_img == lambda && r.category == category)
                    .collect();
                let ok: Vec<&RowMetrics> = group.iter().filter_map(|r| r.metrics.as_ref()).collect();
                let frac =
                    |pred: &dyn Fn(&RowMetrics) -> bool| mean(ok.iter().map(|m| if pred(m) { 1.0 } else { 0.0 }));
                out.push(CategoryAggregate {
                    variant: variant.name.clone(),
                    lambda_img: lambda,
                    category,
                    rows: group.len(),
                    failed: group.len() - ok.len(),
                    mean_score_delta: mean(ok.iter().map(|m| m.score_delta)),
                    mean_outside_drift: mean(ok.iter().map(|m| m.outside_drift)),
                    mean_realism_delta: mean(ok.iter().map(|m| m.realism_delta)),
                    accurate_fraction: frac(&|m| m.score_delta > 0.0),
                    realistic_fraction: frac(&|m| m.realism_delta > 0.0),
                });
            }
        }
    }
    out
}

/// Runs every (image, word, variant, lambda) edit headlessly. Engine errors
/// are recorded on their row; only an invalid spec or unknown model aborts.
pub fn run_study(spec: &StudySpec, registry: &Registry) -> Result<StudyOutput> {
    spec.validate()?;
    let g = registry.generator(&spec.generator)?;
    let c = registry.scorer(&spec.scorer)?;
    let start = Instant::now();

    let mut words = Vec::new();
    let mut skipped = Vec::new();
    for entry in spec.word_list() {
        let usable = Prompt::new(&entry.word).and_then(|p| c.validate(&p));
        match usable {
            Err(Error::UnknownToken(_)) if spec.restrict_to_vocabulary => skipped.push(entry.word.clone()),
            _ => words.push(entry),
        }
    }
    if words.is_empty() {
        return Err(Error::InvalidConfig("no study word is in the scorer vocabulary".into()));
    }

    let mut rows = Vec::new();
    let mut rows_s = Vec::new();
    for (image, seed) in spec.image_seeds().into_iter().enumerate() {
        let z = LatentVector::sample(g.info().latent_dim, seed);
        let base = InteriorBase::from(g.extract_latent(&z)?);
        let before = g.compose(&base)?;
        let mask = spec.mask.resolve(&before)?;
        for entry in &words {
            for variant in &spec.variants {
                for &lambda in &spec.lambda_img {
                    let t0 = Instant::now();
                    let outcome = Prompt::new(&entry.word).and_then(|prompt| {
                        let req = EditRequest::new(prompt.clone(), mask.clone())
                            .with_schedule(variant.schedule.clone().with_seed(seed))
                            .with_lambda(lambda);
                        let out = execute_edit(&g, &c, &base, &before, &req, &mut |_, _| ControlFlow::Continue(()))?;
                        let score_before = masked_score(c.as_ref(), &before, &mask, &prompt)?;
                        let score_after = masked_score(c.as_ref(), &out.result_image, &mask, &prompt)?;
                        let (score_delta, outside_drift, realism_delta) =
                            row_metrics(&before, &out.result_image, &mask, score_before, score_after);
                        let proxy = RealismProxy::default();
                        Ok(RowMetrics {
                            score_before,
                            score_after,
                            score_delta,
                            outside_drift,
                            realism_before: proxy.score(&before),
                            realism_after: proxy.score(&out.result_image),
                            realism_delta,
                            final_loss: out.final_loss,
                            evaluations: out.optimization.evaluations,
                        })
                    });
                    let (metrics, error) = match outcome {
                        Ok(m) => (Some(m), None),
                        Err(e) => (
                            None,
                            Some(RowError {
                                code: e.code().to_string(),
                                message: e.to_string(),
                            }),
                        ),
                    };
                    rows.push(StudyRow {
                        image,
                        seed,
                        word: entry.word.clone(),
                        category: entry.category,
                        variant: variant.name.clone(),
                        lambda_img: lambda,
                        mask_coverage: mask.coverage(),
                        metrics,
                        error,
                    });
                    rows_s.push(t0.elapsed().as_secs_f64());
                }
            }
        }
    }

    let aggregates = aggregate(spec, &rows);
    Ok(StudyOutput {
        report: StudyReport {
            schema: STUDY_SCHEMA.into(),
            spec: spec.clone(),
            skipped_words: skipped,
            rows,
            aggregates,
        },
        timings: Timings {
            total_s: start.elapsed().as_secs_f64(),
            rows_s,
        },
    })
}
