//! Dataset directories and numeric text files.
//!
//! A dataset directory holds four comma-separated text files without headers:
//! `features.csv` (N x d_x), `labels.csv` (N rows), `attributes.csv` (C x d_a,
//! row = class id) and `splits.txt` with the lines `seen:`, `unseen:`,
//! `train:` and `test:`, each followed by a comma-separated id list.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rff_core::data::DatasetBundle;
use rff_core::Tensor;

use crate::error::{BenchError, LoadError, Result};

pub const FEATURES: &str = "features.csv";
pub const LABELS: &str = "labels.csv";
pub const ATTRIBUTES: &str = "attributes.csv";
pub const SPLITS: &str = "splits.txt";

const SPLIT_KEYS: [&str; 4] = ["seen", "unseen", "train", "test"];

/// Nine significant digits, enough to round-trip any `f32`.
pub fn format_real(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn matrix_to_csv(m: &Tensor<f32>) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 16);
    for r in 0..m.rows() {
        for (j, v) in m.row(r).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_real(*v as f64));
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| BenchError::io(path, e))
}

fn load_text(dir: &Path, file: &str) -> Result<String, LoadError> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(LoadError::MissingFile { file: file.into() });
    }
    fs::read_to_string(&path).map_err(|e| LoadError::Unreadable {
        file: file.into(),
        row: 0,
        detail: e.to_string(),
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses a headerless real matrix; `cols` pins the width when known.
pub fn parse_matrix(file: &str, text: &str, cols: Option<usize>) -> Result<Tensor<f32>, LoadError> {
    let mut width = cols;
    let mut data = Vec::new();
    let mut rows = 0;
    for (row, line) in data_lines(text) {
        let before = data.len();
        for cell in line.split(',') {
            let cell = cell.trim();
            let v: f32 = cell.parse().map_err(|_| LoadError::Malformed {
                file: file.into(),
                row,
                value: cell.into(),
            })?;
            if !v.is_finite() {
                return Err(LoadError::Malformed {
                    file: file.into(),
                    row,
                    value: cell.into(),
                });
            }
            data.push(v);
        }
        let got = data.len() - before;
        match width {
            Some(w) if w != got => {
                return Err(LoadError::DimensionMismatch {
                    file: file.into(),
                    row,
                    detail: format!("{got} columns, expected {w}"),
                })
            }
            _ => width = Some(got),
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    Ok(Tensor::new(rows, width, data).expect("row widths checked"))
}

fn parse_labels(text: &str, classes: usize) -> Result<Vec<usize>, LoadError> {
    let mut labels = Vec::new();
    for (row, line) in data_lines(text) {
        let label: usize = line.parse().map_err(|_| LoadError::Malformed {
            file: LABELS.into(),
            row,
            value: line.into(),
        })?;
        if label >= classes {
            return Err(LoadError::LabelOutOfRange {
                file: LABELS.into(),
                row,
                label,
                classes,
            });
        }
        labels.push(label);
    }
    Ok(labels)
}

fn parse_id_list(row: usize, list: &str) -> Result<Vec<usize>, LoadError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| LoadError::Malformed {
                file: SPLITS.into(),
                row,
                value: s.into(),
            })
        })
        .collect()
}

struct Splits {
    lists: [Vec<usize>; 4],
    rows: [usize; 4],
}

fn parse_splits(text: &str) -> Result<Splits, LoadError> {
    let mut lists: [Option<Vec<usize>>; 4] = Default::default();
    let mut rows = [0; 4];
    for (row, line) in data_lines(text) {
        let (key, rest) = line.split_once(':').ok_or_else(|| LoadError::InvalidSplit {
            file: SPLITS.into(),
            row,
            detail: format!("expected `name: ids`, got {line:?}"),
        })?;
        let key = key.trim();
        let k = SPLIT_KEYS.iter().position(|&s| s == key).ok_or_else(|| {
            LoadError::InvalidSplit {
                file: SPLITS.into(),
                row,
                detail: format!("unknown split {key:?}"),
            }
        })?;
        if lists[k].is_some() {
            return Err(LoadError::InvalidSplit {
                file: SPLITS.into(),
                row,
                detail: format!("split {key:?} listed twice"),
            });
        }
        let mut ids = parse_id_list(row, rest)?;
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return Err(LoadError::InvalidSplit {
                file: SPLITS.into(),
                row,
                detail: format!("duplicate id in {key:?}"),
            });
        }
        lists[k] = Some(ids);
        rows[k] = row;
    }
    let mut out: [Vec<usize>; 4] = Default::default();
    for (k, list) in lists.into_iter().enumerate() {
        out[k] = list.ok_or_else(|| LoadError::InvalidSplit {
            file: SPLITS.into(),
            row: 0,
            detail: format!("missing `{}:` line", SPLIT_KEYS[k]),
        })?;
    }
    Ok(Splits { lists: out, rows })
}

fn overlap(a: &[usize], b: &[usize]) -> Option<usize> {
    let a: BTreeSet<_> = a.iter().collect();
    b.iter().find(|x| a.contains(x)).copied()
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle, LoadError> {
    let attributes = parse_matrix(ATTRIBUTES, &load_text(dir, ATTRIBUTES)?, None)?;
    let classes = attributes.rows();
    let features = parse_matrix(FEATURES, &load_text(dir, FEATURES)?, None)?;
    let labels = parse_labels(&load_text(dir, LABELS)?, classes)?;
    if labels.len() != features.rows() {
        return Err(LoadError::DimensionMismatch {
            file: LABELS.into(),
            row: labels.len().min(features.rows()) + 1,
            detail: format!("{} labels for {} feature rows", labels.len(), features.rows()),
        });
    }
    let Splits { lists, rows } = parse_splits(&load_text(dir, SPLITS)?)?;
    let [seen, unseen, train, test] = lists;
    if let Some(k) = overlap(&seen, &unseen) {
        return Err(LoadError::SplitOverlap {
            file: SPLITS.into(),
            row: rows[1],
            detail: format!("class {k} is both seen and unseen"),
        });
    }
    if let Some(i) = overlap(&train, &test) {
        return Err(LoadError::SplitOverlap {
            file: SPLITS.into(),
            row: rows[3],
            detail: format!("example {i} is in both train and test"),
        });
    }
    let limits = [(classes, "class"), (classes, "class"), (labels.len(), "example"), (labels.len(), "example")];
    for (k, (list, (limit, what))) in [&seen, &unseen, &train, &test].into_iter().zip(limits).enumerate() {
        if let Some(&id) = list.iter().find(|&&id| id >= limit) {
            return Err(LoadError::InvalidSplit {
                file: SPLITS.into(),
                row: rows[k],
                detail: format!("{what} {id} out of range (limit {limit})"),
            });
        }
    }
    DatasetBundle::new(features, labels, attributes, seen, unseen, train, test).map_err(|e| {
        LoadError::InvalidSplit {
            file: SPLITS.into(),
            row: 0,
            detail: e.to_string(),
        }
    })
}

fn id_line(key: &str, ids: &[usize]) -> String {
    let mut line = format!("{key}:");
    for (i, id) in ids.iter().enumerate() {
        let sep = if i == 0 { " " } else { "," };
        write!(line, "{sep}{id}").expect("writing to a String");
    }
    line.push('\n');
    line
}

/// Writes the four dataset files into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    write_text(&dir.join(FEATURES), &matrix_to_csv(&bundle.features))?;
    write_text(&dir.join(ATTRIBUTES), &matrix_to_csv(&bundle.attributes))?;
    let labels: String = bundle.labels.iter().map(|y| format!("{y}\n")).collect();
    write_text(&dir.join(LABELS), &labels)?;
    let splits = [
        id_line("seen", &bundle.seen_classes),
        id_line("unseen", &bundle.unseen_classes),
        id_line("train", &bundle.train_index),
        id_line("test", &bundle.test_index),
    ]
    .concat();
    write_text(&dir.join(SPLITS), &splits)
}
