// Headless word study: every (image, word) edit, aggregated per word
// category into accuracy and realism tables.
//
// Words the analytic scorer does not know are skipped and listed in the
// report. The Markdown table goes to stdout.
//
// ```text
// cargo run --release -p paintword --example word_study -- [images] [out-dir]
// ```

use std::path::{Path, PathBuf};

use paintword::harness::{
    emit_tables, run_study, write_tables, AnyReport, Category, StudySpec, TableFormat, Variant, WordEntry,
};
use paintword::optim::{OptimizationSchedule, Phase};
use paintword::{assets, Result};

pub fn study(spec: &StudySpec, out: Option<&Path>) -> Result<AnyReport> {
    let output = run_study(spec, &assets::toy_registry()?)?;
    println!(
        "{} rows ({} words skipped) in {:.1}s",
        output.report.rows.len(),
        output.report.skipped_words.len(),
        output.timings.total_s
    );
    let report = AnyReport::from(output.report);
    print!(
        "{}",
        String::from_utf8_lossy(&emit_tables(&report, TableFormat::Markdown)?)
    );
    if let Some(dir) = out {
        for path in write_tables(&report, dir, &TableFormat::ALL)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(report)
}

pub fn run_example() -> Result<()> {
    let word = |w: &str, category| WordEntry {
        word: w.into(),
        category,
    };
    let spec = StudySpec {
        words: vec![
            word("red", Category::Color),
            word("square", Category::Shape),
            word("rusty", Category::Texture),
        ],
        image_count: 1,
        variants: vec![Variant {
            name: "quick".into(),
            schedule: OptimizationSchedule::new(vec![Phase::cma(100)]),
        }],
        ..StudySpec::default()
    };
    match study(&spec, None)? {
        AnyReport::Study(r) => assert_eq!(r.skipped_words, vec!["rusty".to_string()]),
        _ => unreachable!("a study produces a study report"),
    }
    Ok(())
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let images: usize = args.next().map_or(2, |s| s.parse().expect("images must be an integer"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/word_study".into()));
    let spec = StudySpec {
        image_count: images,
        ..StudySpec::default()
    };
    study(&spec, Some(&out))?;
    Ok(())
}
