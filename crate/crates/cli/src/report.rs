//! Ablation grid: model modes down, decoy sets across.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use decoyforge::model::{Metric, Mode};
use decoyforge::DecoySet;
use serde::{Deserialize, Serialize};

/// One `eval` result, as written to `eval/<mode>_<set>/eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub schema_version: u32,
    pub mode: Mode,
    pub decoy_set: DecoySet,
    pub metric: Metric,
    pub split: String,
    pub items: usize,
    pub accuracy: f64,
    /// Expected accuracy of a uniform random pick over the same items.
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub model: String,
    pub cells: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub schema_version: u32,
    pub metrics: Vec<Metric>,
    pub columns: Vec<DecoySet>,
    pub rows: Vec<GridRow>,
}

impl Grid {
    /// Rows for every model mode plus a leading random-guess row; columns for
    /// the decoy sets that have at least one result. Later records for the
    /// same cell replace earlier ones.
    pub fn build(records: &[EvalRecord]) -> Self {
        let columns: Vec<DecoySet> = DecoySet::ALL
            .into_iter()
            .filter(|s| records.iter().any(|r| r.decoy_set == *s))
            .collect();
        let mut cells: BTreeMap<(Mode, DecoySet), f64> = BTreeMap::new();
        let mut chance: BTreeMap<DecoySet, f64> = BTreeMap::new();
        for r in records {
            cells.insert((r.mode, r.decoy_set), r.accuracy);
            chance.insert(r.decoy_set, r.chance);
        }
        let mut rows = vec![GridRow {
            model: "Random".into(),
            cells: columns.iter().map(|c| chance.get(c).copied()).collect(),
        }];
        for mode in Mode::ALL {
            rows.push(GridRow {
                model: format!("MLP-{mode}"),
                cells: columns.iter().map(|c| cells.get(&(mode, *c)).copied()).collect(),
            });
        }
        let mut metrics: Vec<Metric> = Vec::new();
        for r in records {
            if !metrics.contains(&r.metric) {
                metrics.push(r.metric);
            }
        }
        Self {
            schema_version: decoyforge::SCHEMA_VERSION,
            metrics,
            columns,
            rows,
        }
    }

    /// Percentages with one decimal, `-` for missing cells.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = std::iter::once("Method".to_string())
            .chain(self.columns.iter().map(|c| c.as_str().to_string()))
            .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.model.clone())
                    .chain(r.cells.iter().map(|c| c.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v))))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| std::iter::once(&header).chain(&body).map(|row| row[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, row) in std::iter::once(&header).chain(&body).enumerate() {
            for (i, cell) in row.iter().enumerate() {
                if i == 0 {
                    let _ = write!(out, "{cell:<w$}", w = widths[0]);
                } else {
                    let _ = write!(out, "  {cell:>w$}", w = widths[i]);
                }
            }
            out.push('\n');
            if n == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(mode: Mode, set: DecoySet, accuracy: f64) -> EvalRecord {
        EvalRecord {
            schema_version: 1,
            mode,
            decoy_set: set,
            metric: Metric::Plain,
            split: "test".into(),
            items: 10,
            accuracy,
            chance: if set == DecoySet::Orig { 0.25 } else { 1.0 / 7.0 },
        }
    }

    #[test]
    fn grid_layout_and_text() {
        let grid = Grid::build(&[
            rec(Mode::A, DecoySet::Orig, 0.529),
            rec(Mode::A, DecoySet::IouQou, 0.177),
            rec(Mode::IQA, DecoySet::Orig, 0.651),
        ]);
        assert_eq!(grid.columns, vec![DecoySet::Orig, DecoySet::IouQou]);
        assert_eq!(grid.rows.len(), 5);
        assert_eq!(grid.rows[1].cells, vec![Some(0.529), Some(0.177)]);
        assert_eq!(grid.rows[4].cells, vec![Some(0.651), None]);
        let text = grid.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "Method   orig  iou+qou");
        assert_eq!(lines[2], "Random   25.0     14.3");
        assert_eq!(lines[3], "MLP-A    52.9     17.7");
        assert_eq!(lines[6], "MLP-IQA  65.1        -");
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
    }
}
