//! Batch studies over the edit engine with automated proxies standing in
//! for human judgments.
//!
//! * [`run_study`] applies each word of a word list to a set of seeded
//!   images and records masked-score gain (accuracy proxy), outside-mask
//!   drift and realism-proxy change, aggregated per semantic category.
//! * [`run_optimizer_comparison`] pairs a gradient-only schedule against a
//!   CMA-then-gradient schedule with a matched evaluation budget.
//! * [`emit_tables`] renders either report as JSON, CSV or Markdown.
//!
//! Reports contain no timing data so that reruns are byte-identical; wall
//! times go to a separate [`Timings`] record.

mod compare;
mod study;
mod tables;

pub use compare::{
    matched_grad_only, run_optimizer_comparison, ComparisonMode, ComparisonReport, ComparisonSpec, ComparisonSummary,
    PairRecord, TrajectoryPoint, VariantRecord, COMPARISON_SCHEMA,
};
pub use study::{
    row_metrics, run_study, CategoryAggregate, RowError, RowMetrics, StudyOutput, StudyReport, StudyRow, StudySpec,
    Timings, Variant, STUDY_SCHEMA,
};
pub use tables::{emit_tables, write_tables, AnyReport, TableFormat, PUBLISHED_ACCURATE, PUBLISHED_REALISTIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorers::{GRAY, PALETTE};
use crate::tensor::{ImageTensor, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Color,
    Texture,
    State,
    Style,
    Shape,
}

impl Category {
    /// Column order of the category tables.
    pub const ALL: [Category; 5] = [
        Category::Color,
        Category::Texture,
        Category::State,
        Category::Style,
        Category::Shape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Color => "color",
            Category::Texture => "texture",
            Category::State => "state",
            Category::Style => "style",
            Category::Shape => "shape",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordEntry {
    pub word: String,
    pub category: Category,
}

static WORDS_FIXTURE: &str = include_str!("../../fixtures/words.json");

/// The bundled 50-word list, ten words per category.
pub fn fixture_words() -> Vec<WordEntry> {
    serde_json::from_str(WORDS_FIXTURE).expect("bundled word list is valid")
}

/// How a study picks the edited region of each image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MaskSpec {
    Rect {
        y: usize,
        x: usize,
        height: usize,
        width: usize,
    },
    /// The `size x size` block, on a `grid`-pixel lattice, holding the most
    /// non-background color.
    Object {
        size: usize,
        #[serde(default = "default_grid")]
        grid: usize,
    },
    /// The block holding the least non-background color: a patch of plain
    /// gray to paint over.
    Background {
        size: usize,
        #[serde(default = "default_grid")]
        grid: usize,
    },
}

fn default_grid() -> usize {
    4
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec::Object {
            size: 24,
            grid: default_grid(),
        }
    }
}

impl MaskSpec {
    pub fn resolve(&self, img: &ImageTensor) -> Result<Mask> {
        let (h, w) = (img.height, img.width);
        match *self {
            MaskSpec::Rect { y, x, height, width } => {
                if y + height > h || x + width > w {
                    return Err(Error::dims(format!("mask rectangle exceeds the {h}x{w} image")));
                }
                let m = Mask::rect(h, w, y, x, height, width);
                m.require_nonempty()?;
                Ok(m)
            }
            MaskSpec::Object { size, grid } => best_block(img, size, grid, true),
            MaskSpec::Background { size, grid } => best_block(img, size, grid, false),
        }
    }
}

/// Per-pixel distance from the background gray, summed over channels.
fn foreground(img: &ImageTensor) -> Vec<f64> {
    let plane = img.plane();
    (0..plane)
        .map(|p| (0..3).map(|c| (img.data[c * plane + p] - PALETTE[GRAY][c]).abs()).sum())
        .collect()
}

fn best_block(img: &ImageTensor, size: usize, grid: usize, most: bool) -> Result<Mask> {
    let (h, w) = (img.height, img.width);
    if size == 0 || grid == 0 || size > h || size > w {
        return Err(Error::InvalidConfig(format!(
            "block size {size} on grid {grid} does not fit {h}x{w}"
        )));
    }
    let fg = foreground(img);
    let mut best: Option<(f64, usize, usize)> = None;
    for y in (0..=h - size).step_by(grid) {
        for x in (0..=w - size).step_by(grid) {
            let sum: f64 = (y..y + size)
                .flat_map(|r| (x..x + size).map(move |c| (r, c)))
                .map(|(r, c)| fg[r * w + c])
                .sum();
            let key = if most { -sum } else { sum };
            if best.is_none_or(|(b, _, _)| key < b) {
                best = Some((key, y, x));
            }
        }
    }
    let (_, y, x) = best.expect("at least one block position");
    Ok(Mask::rect(h, w, y, x, size, size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Shape, ShapeSpec};

    #[test]
    fn fixture_has_ten_words_per_category() {
        let words = fixture_words();
        assert_eq!(words.len(), 50);
        for c in Category::ALL {
            assert_eq!(words.iter().filter(|w| w.category == c).count(), 10);
        }
    }

    #[test]
    fn blocks_find_object_and_background() {
        let spec = ShapeSpec {
            shape: Shape::Square,
            color: 0,
            cx: 44.0,
            cy: 44.0,
            size: 16.0,
        };
        let img = spec.render(64);
        let obj = MaskSpec::Object { size: 16, grid: 4 }.resolve(&img).unwrap();
        assert!(obj.get(36, 36) && obj.get(51, 51) && !obj.get(35, 36));
        let bg = MaskSpec::Background { size: 16, grid: 4 }.resolve(&img).unwrap();
        assert!(bg.get(0, 0) && bg.count() == 256);
    }
}
