use paintword::harness::{
    emit_tables, matched_grad_only, run_optimizer_comparison, run_study, AnyReport, Category, ComparisonMode,
    ComparisonSpec, MaskSpec, StudySpec, TableFormat, Variant, WordEntry,
};
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::{assets, Error};

fn word(w: &str, category: Category) -> WordEntry {
    WordEntry {
        word: w.into(),
        category,
    }
}

fn small_study() -> StudySpec {
    StudySpec {
        words: vec![
            word("red", Category::Color),
            word("circle", Category::Shape),
            word("wooden", Category::Texture),
        ],
        image_count: 2,
        variants: vec![
            Variant {
                name: "cma".into(),
                schedule: OptimizationSchedule::new(vec![Phase::cma(60)]),
            },
            Variant {
                name: "cma-then-grad".into(),
                schedule: OptimizationSchedule::new(vec![Phase::cma(40), Phase::grad(10, 0.02)]),
            },
        ],
        lambda_img: vec![0.5, 1.0],
        mask: MaskSpec::Object { size: 24, grid: 8 },
        ..StudySpec::default()
    }
}

#[test]
fn study_covers_every_combination() {
    let spec = small_study();
    let out = run_study(&spec, &assets::toy_registry().unwrap()).unwrap();
    let r = &out.report;
    assert_eq!(r.skipped_words, vec!["wooden".to_string()]);
    // 2 images x 2 known words x 2 variants x 2 lambdas.
    assert_eq!(r.rows.len(), 16);
    assert!(r.rows.iter().all(|row| row.metrics.is_some()));
    assert_eq!(r.aggregates.len(), 2 * 2 * Category::ALL.len());
    assert_eq!(r.aggregates, r.recompute_aggregates());
    assert_eq!(out.timings.rows_s.len(), r.rows.len());

    let unrestricted = StudySpec {
        restrict_to_vocabulary: false,
        ..spec
    };
    let out = run_study(&unrestricted, &assets::toy_registry().unwrap()).unwrap();
    let failed: Vec<_> = out.report.rows.iter().filter_map(|row| row.error.as_ref()).collect();
    assert_eq!(failed.len(), 8);
    assert!(failed.iter().all(|e| e.code == "UNKNOWN_TOKEN"));
}

#[test]
fn csv_and_json_carry_the_same_values() {
    let out = run_study(&small_study(), &assets::toy_registry().unwrap()).unwrap();
    let report = AnyReport::from(out.report.clone());
    let csv_bytes = emit_tables(&report, TableFormat::Csv).unwrap();
    let mut reader = csv::Reader::from_reader(csv_bytes.as_slice());
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), out.report.rows.len());
    for (rec, row) in records.iter().zip(&out.report.rows) {
        let m = row.metrics.as_ref().unwrap();
        let num = |i: usize| rec[i].parse::<f64>().unwrap();
        assert_eq!(&rec[2], row.word);
        assert_eq!(num(5), row.lambda_img);
        assert_eq!(num(8), m.score_after);
        assert_eq!(num(9), m.score_delta);
        assert_eq!(num(10), m.outside_drift);
        assert_eq!(num(16), m.final_loss.total);
    }

    // The JSON table parses back to the same report.
    let json = emit_tables(&report, TableFormat::Json).unwrap();
    let back = AnyReport::from_json(std::str::from_utf8(&json).unwrap()).unwrap();
    assert_eq!(
        String::from_utf8(emit_tables(&back, TableFormat::Csv).unwrap()).unwrap(),
        String::from_utf8(csv_bytes).unwrap()
    );
}

#[test]
fn study_reports_are_byte_identical_across_runs() {
    let spec = small_study();
    let run = || {
        let out = run_study(&spec, &assets::toy_registry().unwrap()).unwrap();
        let report = AnyReport::from(out.report);
        TableFormat::ALL.map(|f| emit_tables(&report, f).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn markdown_labels_the_published_figures() {
    let out = run_study(&small_study(), &assets::toy_registry().unwrap()).unwrap();
    let md = String::from_utf8(emit_tables(&AnyReport::from(out.report), TableFormat::Markdown).unwrap()).unwrap();
    assert!(md.contains("published human study"));
    assert!(md.contains("| color | texture | state | style | shape |"));
}

#[test]
fn comparison_pairs_have_matched_budgets() {
    let spec = ComparisonSpec {
        seeds: vec![0, 1],
        schedule: OptimizationSchedule::new(vec![Phase::cma(120), Phase::grad(20, 0.02)]),
        trajectory_every: 5,
        ..ComparisonSpec::default()
    };
    let report = run_optimizer_comparison(&spec, &assets::toy_registry().unwrap()).unwrap();
    assert_eq!(report.pairs.len(), 2);
    for p in &report.pairs {
        assert_eq!(p.grad_only.budget, p.cma_then_grad.budget);
        assert_eq!(p.grad_only.schedule.phases, matched_grad_only(&spec.schedule).phases);
        for v in [&p.grad_only, &p.cma_then_grad] {
            assert!(v.evaluations <= v.budget);
            assert!(!v.trajectory.is_empty());
            assert!(v.trajectory.windows(2).all(|w| w[1].loss_total <= w[0].loss_total));
        }
    }
    assert_eq!(report.summary.seeds, 2);

    let full = ComparisonSpec {
        mode: ComparisonMode::FullImage,
        seeds: vec![3],
        ..spec
    };
    let report = run_optimizer_comparison(&full, &assets::toy_registry().unwrap()).unwrap();
    assert_eq!(report.pairs[0].grad_only.final_loss.image, 0.0);
}

#[test]
fn invalid_specs_are_rejected() {
    let reg = assets::toy_registry().unwrap();
    let no_variants = StudySpec {
        variants: vec![],
        ..small_study()
    };
    assert!(matches!(run_study(&no_variants, &reg), Err(Error::InvalidConfig(_))));
    let bad_model = StudySpec {
        generator: "missing".into(),
        ..small_study()
    };
    assert_eq!(run_study(&bad_model, &reg).err().unwrap().code(), "UNKNOWN_MODEL");
}
