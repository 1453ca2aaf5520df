//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! gating criterion fails.
//!
//! ```text
//! cargo test --release -p paintword-service --test acceptance
//! ```

mod common;
#[path = "../../core/tests/props/mod.rs"]
mod props;

#[allow(dead_code)]
mod edit_region {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/examples/edit_region.rs"));
}
#[allow(dead_code)]
mod full_image {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/examples/full_image.rs"));
}
#[allow(dead_code)]
mod split_vs_unsplit {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/examples/split_vs_unsplit.rs"
    ));
}
#[allow(dead_code)]
mod cma_benchmarks {
    include!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/examples/cma_benchmarks.rs"
    ));
}

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use paintword::assets;
use paintword::engine::{EditRequest, Engine, EngineConfig};
use paintword::generators::SplitKind;
use paintword::harness::{
    emit_tables, run_optimizer_comparison, run_study, AnyReport, Category, ComparisonSpec, MaskSpec, StudySpec,
    TableFormat, Variant, WordEntry, COMPARISON_SCHEMA,
};
use paintword::optim::{cma_ask, cma_init, cma_tell, rosenbrock, sphere, OptimizationSchedule, Phase};
use paintword::scorers::{Prompt, SemanticScorer, ToyScorer};
use paintword::tensor::Mask;

/// What a criterion check reports: whether it passed and a one-line
/// account of the measured values.
type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn reconstruction() -> Outcome {
    let feature = props::reconstruction_max_diff(SplitKind::FeatureMap, 100, 11).map_err(err)?;
    let style = props::reconstruction_max_diff(SplitKind::Style, 100, 12).map_err(err)?;
    check(
        feature <= 1e-5 && style <= 1e-5,
        format!("max abs diff {feature:.2e} (feature map), {style:.2e} (style); limit 1e-5"),
    )
}

fn isolation() -> Outcome {
    let iso = props::masked_isolation(100, 21).map_err(err)?;
    check(
        iso.outside_grad == 0.0 && iso.score_change == 0.0,
        format!(
            "{} cases: max outside gradient {:e}, max score change {:e}; both must be exactly 0",
            iso.cases, iso.outside_grad, iso.score_change
        ),
    )
}

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, cfg) in props::grad_configs().map_err(err)?.iter().enumerate() {
        let e = props::fd_gradient_error(cfg, 20, 300 + k as u64).map_err(err)?;
        parts.push(format!("{e:.1e}"));
        worst = worst.max(e);
    }
    check(
        worst <= 1e-4,
        format!(
            "max relative error {worst:.2e} over 5 configs x 20 coords [{}]; limit 1e-4",
            parts.join(", ")
        ),
    )
}

fn cma_convergence() -> Outcome {
    let mut sphere_ok = 0;
    let mut sphere_worst: f64 = 0.0;
    for seed in 0..10 {
        let (best, _) = cma_benchmarks::minimize(sphere, &[1.0; 10], 0.5, seed, 5000, 1e-8).map_err(err)?;
        sphere_worst = sphere_worst.max(best);
        sphere_ok += usize::from(best <= 1e-8);
    }
    let mut finals = Vec::new();
    for seed in 0..10 {
        finals.push(
            cma_benchmarks::minimize(rosenbrock, &[0.0; 5], 0.5, seed, 20000, 1e-12)
                .map_err(err)?
                .0,
        );
    }
    finals.sort_by(f64::total_cmp);
    let median = 0.5 * (finals[4] + finals[5]);
    check(
        sphere_ok == 10 && median <= 1e-4,
        format!("sphere-10 {sphere_ok}/10 seeds <= 1e-8 (worst {sphere_worst:.1e}); rosenbrock-5 median {median:.1e} <= 1e-4"),
    )
}

fn cma_invariants() -> Outcome {
    let f = |x: &[f64]| -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, v)| 10f64.powi(i as i32 % 4) * (v - 0.5).powi(2))
            .sum()
    };
    let mut state = cma_init(8, &[2.0; 8], 0.7, None, 9).map_err(err)?;
    let mut pd = 0;
    for _ in 0..200 {
        let cands = cma_ask(&state).map_err(err)?;
        let losses: Vec<f64> = cands.iter().map(|c| f(c)).collect();
        state = cma_tell(&state, &cands, &losses).map_err(err)?;
        pd += usize::from(state.covariance.clone().cholesky().is_some());
    }

    let mut a = cma_init(6, &[0.3; 6], 0.4, None, 4).map_err(err)?;
    let mut b = a.clone();
    let mut identical = 0;
    for _ in 0..200 {
        let ca = cma_ask(&a).map_err(err)?;
        let cb = cma_ask(&b).map_err(err)?;
        identical += usize::from(ca == cb);
        let la: Vec<f64> = ca.iter().map(|c| rosenbrock(c)).collect();
        let lb: Vec<f64> = la.iter().map(|l| 3.0 * l.ln_1p() - 1.0).collect();
        a = cma_tell(&a, &ca, &la).map_err(err)?;
        b = cma_tell(&b, &cb, &lb).map_err(err)?;
    }
    check(
        pd == 200 && identical == 200,
        format!("covariance PD after {pd}/200 updates; identical candidates in {identical}/200 generations under 3*ln(1+f)-1"),
    )
}

fn region_edit() -> Outcome {
    let mut passed = 0;
    let (mut min_delta, mut max_drift) = (f64::INFINITY, 0.0f64);
    for seed in 0..10 {
        let (before, after, drift) =
            edit_region::edit(seed, "red", &OptimizationSchedule::default(), None).map_err(err)?;
        let delta = after - before;
        min_delta = min_delta.min(delta);
        max_drift = max_drift.max(drift);
        passed += usize::from(delta >= 0.3 && drift <= 0.05);
    }
    check(
        passed == 10,
        format!(
            "{passed}/10 seeds; min score gain {min_delta:.3} (>= 0.3), max outside drift {max_drift:.4} (<= 0.05)"
        ),
    )
}

fn full_image_mode() -> Outcome {
    let max = ToyScorer::default().score_range().1;
    let scores =
        full_image::generate("red square", &[0, 1, 2, 3, 4], &OptimizationSchedule::default(), None).map_err(err)?;
    let passed = scores.iter().filter(|s| **s >= 0.8 * max).count();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        passed == 5,
        format!("{passed}/5 seeds reach 0.8 of the score maximum {max}; lowest {min:.3}"),
    )
}

fn split_contrast() -> Outcome {
    let mut passed = 0;
    let mut lines = Vec::new();
    for seed in 0..10 {
        let c = split_vs_unsplit::contrast("red", seed, &OptimizationSchedule::default(), None).map_err(err)?;
        passed += usize::from(c.split_drift < c.unsplit_drift);
        lines.push(format!("{:.4}/{:.4}", c.split_drift, c.unsplit_drift));
    }
    check(
        passed == 10,
        format!(
            "split drift < unsplit drift on {passed}/10 seeds (split/unsplit: {})",
            lines.join(" ")
        ),
    )
}

/// Schema-gated; the direction of the differences is only reported.
fn optimizer_comparison() -> Outcome {
    let spec = ComparisonSpec::default();
    let report = run_optimizer_comparison(&spec, &assets::toy_registry().map_err(err)?).map_err(err)?;
    let mut problems = Vec::new();
    if report.schema != COMPARISON_SCHEMA {
        problems.push(format!("schema {}", report.schema));
    }
    if report.pairs.len() != spec.seeds.len() {
        problems.push("pair count".to_string());
    }
    for p in &report.pairs {
        let (g, c) = (&p.grad_only, &p.cma_then_grad);
        if g.budget != c.budget || g.evaluations > g.budget || c.evaluations > c.budget {
            problems.push(format!("seed {} budgets {}/{}", p.seed, g.budget, c.budget));
        }
        if g.trajectory.is_empty() || c.trajectory.is_empty() {
            problems.push(format!("seed {} empty trajectory", p.seed));
        }
    }
    let any = AnyReport::from(report.clone());
    let json = emit_tables(&any, TableFormat::Json).map_err(err)?;
    let back = AnyReport::from_json(std::str::from_utf8(&json).map_err(err)?).map_err(err)?;
    if emit_tables(&back, TableFormat::Json).map_err(err)? != json {
        problems.push("JSON does not round-trip".to_string());
    }
    let csv_rows = emit_tables(&any, TableFormat::Csv)
        .map_err(err)?
        .iter()
        .filter(|b| **b == b'\n')
        .count()
        - 1;
    if csv_rows != 2 * spec.seeds.len() {
        problems.push(format!("{csv_rows} CSV rows"));
    }
    let s = &report.summary;
    let claim = format!(
        "gradient-only lower semantic loss on {}/{} seeds, CMA-then-gradient higher realism on {}/{} (recorded, not gating)",
        s.grad_lower_semantic_loss, s.seeds, s.cma_higher_realism, s.seeds
    );
    if problems.is_empty() {
        Ok(format!("schema valid, matched budgets; {claim}"))
    } else {
        Err(format!("{}; {claim}", problems.join(", ")))
    }
}

const DOCUMENTED_CODES: [&str; 14] = [
    "DIMENSION_MISMATCH",
    "EMPTY_MASK",
    "EMPTY_PROMPT",
    "UNKNOWN_TOKEN",
    "UNKNOWN_MODEL",
    "INVALID_CONFIG",
    "NUMERICAL_BREAKDOWN",
    "INVALID_LOSS",
    "INVALID_GRADIENT",
    "BUSY",
    "NOT_COMPLETED",
    "ALREADY_ACCEPTED",
    "ADAPTER_TIMEOUT",
    "ADAPTER_PROTOCOL_ERROR",
];

fn service_contract() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(err)?;
    let seen: BTreeSet<&str> = rt.block_on(async {
        let app = common::toy_app();
        common::happy_path(&app).await;
        let mut seen = common::validation_errors(&app).await;
        seen.extend(common::conflicts(&app).await);
        seen.extend(common::numerical_failures().await);
        seen.extend(common::adapter_failures().await);
        seen.into_iter().collect()
    });
    common::adapter_bitwise();
    let missing: Vec<&str> = DOCUMENTED_CODES.iter().copied().filter(|c| !seen.contains(c)).collect();
    check(
        missing.is_empty(),
        format!(
            "happy path ok; {}/{} documented error codes exercised{}; adapter toy bitwise equal",
            DOCUMENTED_CODES.len() - missing.len(),
            DOCUMENTED_CODES.len(),
            if missing.is_empty() {
                String::new()
            } else {
                format!(", missing {missing:?}")
            }
        ),
    )
}

fn determinism() -> Outcome {
    let word = |w: &str, category| WordEntry {
        word: w.into(),
        category,
    };
    let spec = StudySpec {
        words: vec![
            word("red", Category::Color),
            word("square", Category::Shape),
            word("blue", Category::Color),
        ],
        image_count: 2,
        variants: vec![Variant {
            name: "cma-then-grad".into(),
            schedule: OptimizationSchedule::new(vec![Phase::cma(150), Phase::grad(20, 0.02)]),
        }],
        mask: MaskSpec::Background { size: 16, grid: 4 },
        ..StudySpec::default()
    };
    let run = || -> paintword::Result<Vec<Vec<u8>>> {
        let report = AnyReport::from(run_study(&spec, &assets::toy_registry()?)?.report);
        TableFormat::ALL.iter().map(|&f| emit_tables(&report, f)).collect()
    };
    let same_report = run().map_err(err)? == run().map_err(err)?;

    let engine = Engine::new(assets::toy_registry().map_err(err)?, EngineConfig::default());
    let mut replays = 0;
    for generator in [assets::TOY_SHAPES, assets::TOY_STYLE] {
        let id = engine
            .create_session(generator, assets::TOY_SCORER, None, Some(8))
            .map_err(err)?;
        for (word, y) in [("red", 0), ("green square", 24), ("blue", 44)] {
            let req = EditRequest::new(Prompt::new(word).map_err(err)?, Mask::rect(64, 64, y, y / 2, 20, 20))
                .with_schedule(OptimizationSchedule::new(vec![Phase::cma(150), Phase::grad(20, 0.02)]).with_seed(8));
            let (eid, _) = engine.run_edit(&id, req).map_err(err)?;
            engine.accept_edit(&id, &eid).map_err(err)?;
        }
        let current = engine.current_image(&id).map_err(err)?;
        replays += usize::from(engine.replay(&id).map_err(err)?.data == current.data);
    }
    check(
        same_report && replays == 2,
        format!(
            "study report bytes {} across reruns; replay bit-exact for {replays}/2 generators",
            if same_report { "identical" } else { "DIFFER" }
        ),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 11] = [
        ("reconstruction identity", Duration::from_secs(60), reconstruction),
        ("masked-scorer isolation", Duration::from_secs(10), isolation),
        ("gradient correctness", Duration::from_secs(120), gradients),
        ("CMA-ES convergence", Duration::from_secs(120), cma_convergence),
        ("CMA-ES invariants", Duration::from_secs(60), cma_invariants),
        ("end-to-end toy edit", Duration::from_secs(600), region_edit),
        ("full-image mode", Duration::from_secs(300), full_image_mode),
        ("split vs unsplit", Duration::from_secs(600), split_contrast),
        (
            "optimizer comparison report",
            Duration::from_secs(600),
            optimizer_comparison,
        ),
        ("service contract", Duration::from_secs(120), service_contract),
        ("determinism and replay", Duration::from_secs(600), determinism),
    ];
    // Criterion 9 reports a direction without gating on it; its schema
    // check still gates.
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let elapsed = started.elapsed();
        let slow = elapsed > *limit;
        let (status, detail) = match (&outcome, slow) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; took longer than {}s", limit.as_secs())),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        failed += usize::from(status == "FAIL");
        println!(
            "criterion {:>2} {status} {name} ({:.1}s): {detail}",
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
