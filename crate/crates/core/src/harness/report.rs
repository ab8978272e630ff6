use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const AVERAGE_LABEL: &str = "average";

/// One trained cell. Failed cells keep their coordinates, leave the numeric
/// fields empty and carry the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub architecture: String,
    pub variant: String,
    pub train_distance: f64,
    pub trial: usize,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub epoch_seconds: Option<f64>,
    pub error: String,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let rows = csv::Reader::from_path(path)?
            .deserialize()
            .collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Writes via a temporary sibling and a rename, so readers never see a
    /// partial file.
    pub fn write_csv_atomic(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("csv.tmp");
        self.write_csv(&tmp)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Concatenates every `*.csv` in `dir`, in file-name order.
    pub fn merge_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut files: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let mut rows = Vec::new();
        for f in files {
            rows.extend(Self::read_csv(f)?.rows);
        }
        Ok(Self { rows })
    }
}

/// Trial means for one (architecture, variant) at one training distance, or
/// across distances when `train_distance` is `"average"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub architecture: String,
    pub variant: String,
    pub train_distance: String,
    /// Successful rows behind the means.
    pub trials: usize,
    pub mean_train_acc: Option<f64>,
    pub mean_test_acc: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn push_unique<T: PartialEq + Clone>(v: &mut Vec<T>, item: &T) {
    if !v.contains(item) {
        v.push(item.clone());
    }
}

/// Per-distance trial means, then an `"average"` row per (architecture,
/// variant) holding the mean of those distance means. Groups keep their
/// first-appearance order.
pub fn summarize(table: &ResultTable) -> Vec<SummaryRow> {
    let mut groups: Vec<(String, String)> = Vec::new();
    for r in &table.rows {
        push_unique(&mut groups, &(r.architecture.clone(), r.variant.clone()));
    }
    let mut out = Vec::new();
    for (arch, variant) in groups {
        let rows: Vec<&ResultRow> = table
            .rows
            .iter()
            .filter(|r| r.architecture == arch && r.variant == variant)
            .collect();
        let mut distances: Vec<u64> = Vec::new();
        for r in &rows {
            push_unique(&mut distances, &r.train_distance.to_bits());
        }
        let mut per_distance = Vec::new();
        for d in distances.into_iter().map(f64::from_bits) {
            let ok: Vec<&&ResultRow> = rows
                .iter()
                .filter(|r| r.train_distance.to_bits() == d.to_bits() && !r.failed())
                .collect();
            let row = SummaryRow {
                architecture: arch.clone(),
                variant: variant.clone(),
                train_distance: d.to_string(),
                trials: ok.len(),
                mean_train_acc: mean(ok.iter().filter_map(|r| r.train_acc)),
                mean_test_acc: mean(ok.iter().filter_map(|r| r.test_acc)),
            };
            per_distance.push(row);
        }
        let average = SummaryRow {
            architecture: arch.clone(),
            variant: variant.clone(),
            train_distance: AVERAGE_LABEL.to_string(),
            trials: per_distance.iter().map(|r| r.trials).sum(),
            mean_train_acc: mean(per_distance.iter().filter_map(|r| r.mean_train_acc)),
            mean_test_acc: mean(per_distance.iter().filter_map(|r| r.mean_test_acc)),
        };
        out.extend(per_distance);
        out.push(average);
    }
    out
}

pub fn write_summary(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    Ok(csv::Reader::from_path(path)?
        .deserialize()
        .collect::<std::result::Result<Vec<SummaryRow>, _>>()?)
}

/// Writes `results.csv` and `summary.csv` into `dir`.
pub fn emit_report(table: &ResultTable, dir: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    if table.rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    table.write_csv(dir.join(RESULTS_CSV))?;
    let summary = summarize(table);
    write_summary(&summary, dir.join(SUMMARY_CSV))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(arch: &str, v: &str, d: f64, trial: usize, tr: f64, te: f64) -> ResultRow {
        ResultRow {
            architecture: arch.into(),
            variant: v.into(),
            train_distance: d,
            trial,
            train_acc: Some(tr),
            test_acc: Some(te),
            epoch_seconds: Some(0.1),
            error: String::new(),
        }
    }

    #[test]
    fn single_row_summary_equals_row() {
        let t = ResultTable {
            rows: vec![row("MiniCNN", "a", 47.0, 0, 0.9, 0.4)],
        };
        let s = summarize(&t);
        assert_eq!(s.len(), 2);
        for r in &s {
            assert_eq!(
                (r.mean_train_acc, r.mean_test_acc, r.trials),
                (Some(0.9), Some(0.4), 1)
            );
        }
        assert_eq!(s[0].train_distance, "47");
        assert_eq!(s[1].train_distance, AVERAGE_LABEL);
    }

    #[test]
    fn full_grid_shape() {
        let mut rows = Vec::new();
        for v in ["a", "b", "c", "d"] {
            for d in [39.5, 47.0, 54.5, 62.0] {
                for t in 0..2 {
                    rows.push(row("MiniResNet8", v, d, t, 1.0, 0.1 * t as f64));
                }
            }
        }
        let s = summarize(&ResultTable { rows });
        assert_eq!(s.len(), 20);
        assert_eq!(
            s.iter()
                .filter(|r| r.train_distance == AVERAGE_LABEL)
                .count(),
            4
        );
        assert!(s.iter().all(|r| r.mean_test_acc == Some(0.05)));
    }

    #[test]
    fn failed_rows_are_skipped() {
        let mut bad = row("MiniCNN", "b", 47.0, 1, 0.0, 0.0);
        bad.error = "diverged".into();
        bad.train_acc = None;
        bad.test_acc = None;
        let t = ResultTable {
            rows: vec![row("MiniCNN", "b", 47.0, 0, 0.8, 0.5), bad],
        };
        let s = summarize(&t);
        assert_eq!(s[0].trials, 1);
        assert_eq!(s[0].mean_test_acc, Some(0.5));
    }

    #[test]
    fn csv_roundtrip_and_merge() {
        let dir = tempfile::tempdir().unwrap();
        let mut failed = row("MiniCNN", "c", 39.5, 2, 0.0, 0.0);
        failed.train_acc = None;
        failed.test_acc = None;
        failed.epoch_seconds = None;
        failed.error = "boom, with comma".into();
        let t = ResultTable {
            rows: vec![row("MiniCNN", "c", 39.5, 0, 0.123456789012345, 0.3), failed],
        };
        let p = dir.path().join("x.csv");
        t.write_csv_atomic(&p).unwrap();
        assert_eq!(ResultTable::read_csv(&p).unwrap(), t);
        let cells = dir.path().join("cells");
        fs::create_dir(&cells).unwrap();
        for (i, r) in t.rows.iter().enumerate() {
            ResultTable {
                rows: vec![r.clone()],
            }
            .write_csv_atomic(cells.join(format!("cell-{i:05}.csv")))
            .unwrap();
        }
        assert_eq!(ResultTable::merge_dir(&cells).unwrap(), t);
        let summary = emit_report(&t, dir.path().join("out")).unwrap();
        assert_eq!(
            read_summary(dir.path().join("out").join(SUMMARY_CSV)).unwrap(),
            summary
        );
        assert!(matches!(
            emit_report(&ResultTable::default(), dir.path()),
            Err(Error::EmptyDataset)
        ));
    }
}
