use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Category, ComparisonReport, StudyReport, StudyRow, COMPARISON_SCHEMA, STUDY_SCHEMA};
use crate::error::{Error, Result};

/// Published human-study percentages per category (color, texture, state,
/// style, shape): edits judged accurate, and judged more realistic, by both
/// raters. Bedroom edits on a large pretrained generator; context only.
pub const PUBLISHED_ACCURATE: [f64; 5] = [72.8, 46.5, 40.6, 37.2, 31.7];
pub const PUBLISHED_REALISTIC: [f64; 5] = [13.1, 18.2, 21.7, 26.1, 25.4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Json,
    Csv,
    Markdown,
}

impl TableFormat {
    pub const ALL: [TableFormat; 3] = [TableFormat::Json, TableFormat::Csv, TableFormat::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Json => "json",
            TableFormat::Csv => "csv",
            TableFormat::Markdown => "md",
        }
    }
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(TableFormat::Json),
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::InvalidConfig(format!("unknown table format {other:?}"))),
        }
    }
}

/// Either report kind, told apart by its `schema` field.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyReport {
    Study(StudyReport),
    Comparison(ComparisonReport),
}

impl AnyReport {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let schema = value
            .get("schema")
            .and_then(|s| s.as_str())
            .unwrap_or_default()
            .to_string();
        let parsed = match schema.as_str() {
            STUDY_SCHEMA => serde_json::from_value(value).map(AnyReport::Study),
            COMPARISON_SCHEMA => serde_json::from_value(value).map(AnyReport::Comparison),
            _ => return Err(Error::Format(format!("unrecognized report schema {schema:?}"))),
        };
        parsed.map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl From<StudyReport> for AnyReport {
    fn from(r: StudyReport) -> Self {
        AnyReport::Study(r)
    }
}

impl From<ComparisonReport> for AnyReport {
    fn from(r: ComparisonReport) -> Self {
        AnyReport::Comparison(r)
    }
}

/// Renders `report` in `format`. Output depends only on the report.
pub fn emit_tables(report: &AnyReport, format: TableFormat) -> Result<Vec<u8>> {
    match (report, format) {
        (AnyReport::Study(r), TableFormat::Json) => pretty_json(r),
        (AnyReport::Comparison(r), TableFormat::Json) => pretty_json(r),
        (AnyReport::Study(r), TableFormat::Csv) => study_csv(r),
        (AnyReport::Comparison(r), TableFormat::Csv) => comparison_csv(r),
        (AnyReport::Study(r), TableFormat::Markdown) => Ok(study_markdown(r).into_bytes()),
        (AnyReport::Comparison(r), TableFormat::Markdown) => Ok(comparison_markdown(r).into_bytes()),
    }
}

/// Writes `report.<ext>` for each format into `dir`; returns the paths.
pub fn write_tables(report: &AnyReport, dir: impl AsRef<Path>, formats: &[TableFormat]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    formats
        .iter()
        .map(|&f| {
            let path = dir.join(format!("report.{}", f.extension()));
            std::fs::write(&path, emit_tables(report, f)?)?;
            Ok(path)
        })
        .collect()
}

fn pretty_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], records: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(header).map_err(fmt)?;
    for r in records {
        w.write_record(&r).map_err(fmt)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub(crate) const STUDY_CSV_HEADER: [&str; 20] = [
    "image",
    "seed",
    "word",
    "category",
    "variant",
    "lambda_img",
    "mask_coverage",
    "score_before",
    "score_after",
    "score_delta",
    "outside_drift",
    "realism_before",
    "realism_after",
    "realism_delta",
    "loss_sem",
    "loss_img",
    "loss_total",
    "evaluations",
    "error_code",
    "error_message",
];

fn study_record(r: &StudyRow) -> Vec<String> {
    let m = r.metrics.as_ref();
    let f = |get: fn(&super::RowMetrics) -> f64| opt(m.map(get));
    vec![
        r.image.to_string(),
        r.seed.to_string(),
        r.word.clone(),
        r.category.name().to_string(),
        r.variant.clone(),
        r.lambda_img.to_string(),
        r.mask_coverage.to_string(),
        f(|m| m.score_before),
        f(|m| m.score_after),
        f(|m| m.score_delta),
        f(|m| m.outside_drift),
        f(|m| m.realism_before),
        f(|m| m.realism_after),
        f(|m| m.realism_delta),
        f(|m| m.final_loss.semantic),
        f(|m| m.final_loss.image),
        f(|m| m.final_loss.total),
        m.map(|m| m.evaluations.to_string()).unwrap_or_default(),
        r.error.as_ref().map(|e| e.code.clone()).unwrap_or_default(),
        r.error.as_ref().map(|e| e.message.clone()).unwrap_or_default(),
    ]
}

fn study_csv(r: &StudyReport) -> Result<Vec<u8>> {
    csv_bytes(&STUDY_CSV_HEADER, r.rows.iter().map(study_record).collect())
}

fn comparison_csv(r: &ComparisonReport) -> Result<Vec<u8>> {
    let header = [
        "seed",
        "variant",
        "budget",
        "evaluations",
        "loss_sem",
        "loss_img",
        "loss_total",
        "score",
        "realism_proxy",
    ];
    let mut records = Vec::new();
    for p in &r.pairs {
        for (name, v) in [("grad-only", &p.grad_only), ("cma-then-grad", &p.cma_then_grad)] {
            records.push(vec![
                p.seed.to_string(),
                name.to_string(),
                v.budget.to_string(),
                v.evaluations.to_string(),
                v.final_loss.semantic.to_string(),
                v.final_loss.image.to_string(),
                v.final_loss.total.to_string(),
                v.score.to_string(),
                v.realism_proxy.to_string(),
            ]);
        }
    }
    csv_bytes(&header, records)
}

fn cell(v: Option<f64>, scale: f64, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.*}", digits, x * scale))
}

fn study_markdown(r: &StudyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Word-category study: {} / {}\n", r.spec.generator, r.spec.scorer);
    s.push_str(
        "Automated proxies: *accurate* is the share of edits whose masked semantic score rose; \
         *realistic* is the share whose realism proxy rose. Rows marked \
         \"published human study\" are human-rater percentages from bedroom edits on a large \
         pretrained generator. They are shown for context and are not comparable with the proxies.\n",
    );
    if !r.skipped_words.is_empty() {
        let _ = writeln!(
            s,
            "\nOutside the scorer vocabulary (skipped): {}.",
            r.skipped_words.join(", ")
        );
    }
    let header = format!(
        "| | {} |\n|---|{}\n",
        Category::ALL.map(Category::name).join(" | "),
        "---:|".repeat(Category::ALL.len())
    );
    for variant in &r.spec.variants {
        for &lambda in &r.spec.lambda_img {
            let aggs: Vec<_> = Category::ALL
                .iter()
                .map(|&c| {
                    r.aggregates
                        .iter()
                        .find(|a| a.variant == variant.name && a.lambda_img == lambda && a.category == c)
                })
                .collect();
            let line = |label: &str, f: &dyn Fn(&super::CategoryAggregate) -> String| {
                let cells: Vec<String> = aggs.iter().map(|a| a.map_or_else(|| "n/a".into(), f)).collect();
                format!("| {label} | {} |\n", cells.join(" | "))
            };
            let _ = writeln!(s, "\n## {}, lambda_img = {}\n", variant.name, lambda);
            s.push_str(&header);
            s.push_str(&line("accurate (proxy), %", &|a| cell(a.accurate_fraction, 100.0, 1)));
            s.push_str(&line("realistic (proxy), %", &|a| cell(a.realistic_fraction, 100.0, 1)));
            s.push_str(&line("mean masked score delta", &|a| cell(a.mean_score_delta, 1.0, 4)));
            s.push_str(&line("mean outside drift", &|a| cell(a.mean_outside_drift, 1.0, 4)));
            s.push_str(&line("mean realism delta", &|a| cell(a.mean_realism_delta, 1.0, 4)));
            s.push_str(&line("edits (failed)", &|a| format!("{} ({})", a.rows, a.failed)));
            let published = |vals: [f64; 5]| vals.map(|v| format!("{v:.1}")).join(" | ");
            let _ = writeln!(
                s,
                "| published human study: accurate (2/2), % | {} |",
                published(PUBLISHED_ACCURATE)
            );
            let _ = writeln!(
                s,
                "| published human study: realistic (2/2), % | {} |",
                published(PUBLISHED_REALISTIC)
            );
        }
    }

    s.push_str("\n## Per word\n\n");
    s.push_str(
        "| word | category | variant | lambda_img | edits | mean score delta | mean drift | mean realism delta |\n",
    );
    s.push_str("|---|---|---|---:|---:|---:|---:|---:|\n");
    let mut keys: Vec<(&str, Category, &str, f64)> = Vec::new();
    for row in &r.rows {
        let k = (row.word.as_str(), row.category, row.variant.as_str(), row.lambda_img);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (word, category, variant, lambda) in keys {
        let rows: Vec<&StudyRow> = r
            .rows
            .iter()
            .filter(|x| x.word == word && x.variant == variant && x.lambda_img == lambda)
            .collect();
        let ok: Vec<_> = rows.iter().filter_map(|x| x.metrics.as_ref()).collect();
        let mean = |f: fn(&super::RowMetrics) -> f64| {
            (!ok.is_empty()).then(|| ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64)
        };
        let _ = writeln!(
            s,
            "| {word} | {} | {variant} | {lambda} | {} | {} | {} | {} |",
            category.name(),
            rows.len(),
            cell(mean(|m| m.score_delta), 1.0, 4),
            cell(mean(|m| m.outside_drift), 1.0, 4),
            cell(mean(|m| m.realism_delta), 1.0, 4),
        );
    }
    s
}

fn comparison_markdown(r: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# Optimizer comparison: \"{}\" on {} / {}\n",
        r.spec.prompt, r.spec.generator, r.spec.scorer
    );
    let sm = &r.summary;
    let _ = writeln!(
        s,
        "Gradient-only reached the lower semantic loss on {}/{} seeds; CMA-then-gradient \
         reached the higher realism proxy on {}/{} seeds. Largest evaluation-count gap: {:.2}%.\n",
        sm.grad_lower_semantic_loss,
        sm.seeds,
        sm.cma_higher_realism,
        sm.seeds,
        sm.max_budget_gap * 100.0
    );
    s.push_str("| seed | variant | evaluations | L_sem | L_img | L_total | score | realism proxy |\n");
    s.push_str("|---:|---|---:|---:|---:|---:|---:|---:|\n");
    for p in &r.pairs {
        for (name, v) in [("grad-only", &p.grad_only), ("cma-then-grad", &p.cma_then_grad)] {
            let _ = writeln!(
                s,
                "| {} | {name} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                p.seed,
                v.evaluations,
                v.final_loss.semantic,
                v.final_loss.image,
                v.final_loss.total,
                v.score,
                v.realism_proxy
            );
        }
    }
    s
}
