//! Hierarchy and wide-table file formats.
//!
//! * Hierarchy JSON: nested `{"label": "T", "children": [...]}` objects.
//! * Hierarchy CSV: a `child,parent` edge list; the root row has an empty
//!   parent (or the root never appears as a child).
//! * Wide CSV: one column per series, headed by its label, one row per
//!   time step. Blank cells at the top of a column mark a series that
//!   starts later.

use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::hierarchy::{Hierarchy, HierarchyError, NestedNode};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("malformed hierarchy JSON: {0}")]
    Json(String),
    #[error("column `{column}`, row {row}: cannot parse `{value}` as a number")]
    Parse { column: String, row: usize, value: String },
    #[error("column `{column}`, row {row}: non-finite value")]
    NonFinite { column: String, row: usize },
    #[error("column `{column}`, row {row}: blank cell after the series has started")]
    Gap { column: String, row: usize },
    #[error("column `{0}` is entirely blank")]
    BlankColumn(String),
    #[error("no column for series `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` is not a node of the hierarchy")]
    UnknownColumn(String),
    #[error("column `{0}` appears twice")]
    DuplicateColumn(String),
    #[error("table has no data rows")]
    Empty,
    #[error("unsupported hierarchy file `{0}` (expected .json or .csv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_string(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_hierarchy_json(text: &str) -> Result<Hierarchy, IoError> {
    let root: NestedNode = serde_json::from_str(text).map_err(|e| IoError::Json(e.to_string()))?;
    Ok(Hierarchy::from_nested(&root)?)
}

pub fn hierarchy_to_json(h: &Hierarchy) -> String {
    serde_json::to_string_pretty(&h.to_nested()).expect("nested nodes serialize")
}

pub fn parse_edge_csv(text: &str) -> Result<Hierarchy, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IoError::Csv(e.to_string()))?;
        let child = record.get(0).unwrap_or("").to_string();
        let parent = record.get(1).unwrap_or("").to_string();
        edges.push((child, parent));
    }
    Ok(Hierarchy::from_edges(&edges)?)
}

/// Reads a hierarchy, choosing the format from the extension.
pub fn read_hierarchy(path: &Path) -> Result<Hierarchy, IoError> {
    let text = read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("json") => parse_hierarchy_json(&text),
        Some("csv") => parse_edge_csv(&text),
        _ => Err(IoError::UnknownFormat(path.display().to_string())),
    }
}

/// A parsed wide table: `values` is rows × columns, column `j` observed
/// from row `start[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WideTable {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
    pub start: Vec<usize>,
}

pub fn parse_wide_csv(text: &str) -> Result<WideTable, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| IoError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    for (j, l) in labels.iter().enumerate() {
        if labels[..j].contains(l) {
            return Err(IoError::DuplicateColumn(l.clone()));
        }
    }
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for record in reader.records() {
        rows.push(record.map_err(|e| IoError::Csv(e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(IoError::Empty);
    }
    let mut values = DMatrix::zeros(rows.len(), labels.len());
    let mut start = vec![None; labels.len()];
    for (r, record) in rows.iter().enumerate() {
        for (j, column) in labels.iter().enumerate() {
            let cell = record.get(j).unwrap_or("");
            if cell.is_empty() {
                if start[j].is_some() {
                    return Err(IoError::Gap { column: column.clone(), row: r + 1 });
                }
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| IoError::Parse {
                column: column.clone(),
                row: r + 1,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(IoError::NonFinite { column: column.clone(), row: r + 1 });
            }
            start[j].get_or_insert(r);
            values[(r, j)] = v;
        }
    }
    let start = start
        .into_iter()
        .zip(&labels)
        .map(|(s, l)| s.ok_or_else(|| IoError::BlankColumn(l.clone())))
        .collect::<Result<_, _>>()?;
    Ok(WideTable { labels, values, start })
}

pub fn read_wide_csv(path: &Path) -> Result<WideTable, IoError> {
    parse_wide_csv(&read_to_string(path)?)
}

impl WideTable {
    /// Reorders columns into the hierarchy's canonical order.
    pub fn align(&self, h: &Hierarchy) -> Result<WideTable, IoError> {
        if let Some(extra) = self.labels.iter().find(|l| h.index_of(l).is_none()) {
            return Err(IoError::UnknownColumn(extra.clone()));
        }
        let cols = h
            .labels()
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| IoError::MissingColumn(l.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(WideTable {
            labels: h.labels().to_vec(),
            values: DMatrix::from_fn(self.values.nrows(), cols.len(), |r, c| self.values[(r, cols[c])]),
            start: cols.iter().map(|&c| self.start[c]).collect(),
        })
    }
}

/// Writes `values` (rows × columns) with a label header; cells above a
/// column's start are left blank.
pub fn wide_csv(labels: &[String], values: &DMatrix<f64>, start: Option<&[usize]>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(labels).expect("in-memory write");
    for r in 0..values.nrows() {
        let row = (0..values.ncols()).map(|c| match start {
            Some(s) if r < s[c] => String::new(),
            _ => format!("{}", values[(r, c)]),
        });
        w.write_record(row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_csv_and_json_agree() {
        let csv = "child,parent\nTotal,\nA,Total\nB,Total\nAA,A\nAB,A\nBA,B\nBB,B\n";
        let a = parse_edge_csv(csv).unwrap();
        let b = parse_hierarchy_json(&hierarchy_to_json(&a)).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.labels(), ["Total", "A", "B", "AA", "AB", "BA", "BB"]);
    }

    #[test]
    fn wide_csv_with_leading_blanks() {
        let t = parse_wide_csv("A,B\n,1\n2,3\n4,5\n").unwrap();
        assert_eq!(t.start, [1, 0]);
        assert_eq!(t.values[(2, 0)], 4.0);
        let back = wide_csv(&t.labels, &t.values, Some(&t.start));
        assert_eq!(back, "A,B\n,1\n2,3\n4,5\n");
    }

    #[test]
    fn wide_csv_errors_name_the_column() {
        let e = parse_wide_csv("A,B\n1,x\n").unwrap_err();
        assert!(e.to_string().contains("column `B`"), "{e}");
        let e = parse_wide_csv("A,B\n1,2\n,3\n").unwrap_err();
        assert!(matches!(e, IoError::Gap { ref column, row: 2 } if column == "A"));
        assert!(matches!(parse_wide_csv("A,A\n1,2\n"), Err(IoError::DuplicateColumn(_))));
        assert!(matches!(parse_wide_csv("A,B\n,2\n"), Err(IoError::BlankColumn(_))));
        assert!(matches!(parse_wide_csv("A\n"), Err(IoError::Empty)));
    }

    #[test]
    fn align_reorders_and_checks_labels() {
        let h = Hierarchy::from_edges(&[("A", "T"), ("B", "T")]).unwrap();
        let t = parse_wide_csv("B,T,A\n1,3,2\n").unwrap();
        let a = t.align(&h).unwrap();
        assert_eq!(a.labels, ["T", "A", "B"]);
        assert_eq!(a.values.row(0).iter().copied().collect::<Vec<_>>(), [3.0, 2.0, 1.0]);
        let missing = parse_wide_csv("T,A\n3,2\n").unwrap().align(&h).unwrap_err();
        assert!(matches!(missing, IoError::MissingColumn(ref l) if l == "B"));
        let extra = parse_wide_csv("T,A,B,C\n3,2,1,0\n").unwrap().align(&h).unwrap_err();
        assert!(matches!(extra, IoError::UnknownColumn(ref l) if l == "C"));
    }
}
