use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ScmError;
use crate::io::{blob_paths, read_f64_blob, read_json, write_f64_blob, write_json, write_text};
use crate::stats::hstack;

/// Column range owned by one variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub id: String,
    pub offset: usize,
    pub width: usize,
}

/// Samples of several multi-dimensional variables stored side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    data: Array2<f64>,
    slices: Vec<Slice>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n_samples: usize,
    n_cols: usize,
    slices: Vec<Slice>,
}

impl SampleTable {
    pub fn new(data: Array2<f64>, slices: Vec<Slice>) -> Result<Self, ScmError> {
        let table = SampleTable { data, slices };
        table.validate()?;
        Ok(table)
    }

    /// Builds a table by placing blocks left to right.
    pub fn from_blocks(blocks: Vec<(String, Array2<f64>)>) -> Result<Self, ScmError> {
        let n = blocks.first().map(|(_, b)| b.nrows()).unwrap_or(0);
        if let Some((id, b)) = blocks.iter().find(|(_, b)| b.nrows() != n) {
            return Err(ScmError::Table(format!(
                "block {id} has {} rows, expected {n}",
                b.nrows()
            )));
        }
        let mut slices = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for (id, b) in &blocks {
            slices.push(Slice {
                id: id.clone(),
                offset,
                width: b.ncols(),
            });
            offset += b.ncols();
        }
        let views: Vec<ArrayView2<f64>> = blocks.iter().map(|(_, b)| b.view()).collect();
        SampleTable::new(hstack(n, &views), slices)
    }

    fn validate(&self) -> Result<(), ScmError> {
        if self.data.nrows() == 0 {
            return Err(ScmError::Table("table has no rows".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut cover = vec![false; self.data.ncols()];
        for sl in &self.slices {
            if !seen.insert(sl.id.as_str()) {
                return Err(ScmError::Table(format!("duplicate slice {}", sl.id)));
            }
            if sl.width == 0 || sl.offset + sl.width > self.data.ncols() {
                return Err(ScmError::Table(format!("slice {} out of range", sl.id)));
            }
            for c in &mut cover[sl.offset..sl.offset + sl.width] {
                if *c {
                    return Err(ScmError::Table(format!("slice {} overlaps another", sl.id)));
                }
                *c = true;
            }
        }
        if cover.iter().any(|c| !c) {
            return Err(ScmError::Table("some columns belong to no slice".into()));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(ScmError::Table("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn ids(&self) -> Vec<String> {
        self.slices.iter().map(|s| s.id.clone()).collect()
    }

    pub fn slice(&self, id: &str) -> Option<&Slice> {
        self.slices.iter().find(|s| s.id == id)
    }

    pub fn get(&self, id: &str) -> Option<ArrayView2<'_, f64>> {
        self.slice(id)
            .map(|s| self.data.slice(s![.., s.offset..s.offset + s.width]))
    }

    pub fn require(&self, id: &str) -> Result<ArrayView2<'_, f64>, ScmError> {
        self.get(id)
            .ok_or_else(|| ScmError::UnknownVariable(id.to_string()))
    }

    /// Columns of several variables concatenated in the given order.
    pub fn concat(&self, ids: &[&str]) -> Result<Array2<f64>, ScmError> {
        let views = ids
            .iter()
            .map(|id| self.require(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(hstack(self.n_samples(), &views))
    }

    /// Keeps only the listed variables, in the listed order.
    pub fn subset(&self, ids: &[&str]) -> Result<SampleTable, ScmError> {
        let blocks = ids
            .iter()
            .map(|id| Ok((id.to_string(), self.require(id)?.to_owned())))
            .collect::<Result<Vec<_>, ScmError>>()?;
        SampleTable::from_blocks(blocks)
    }

    pub fn head(&self, n: usize) -> SampleTable {
        SampleTable {
            data: self.data.slice(s![..n.min(self.n_samples()), ..]).to_owned(),
            slices: self.slices.clone(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> SampleTable {
        SampleTable {
            data: self.data.select(Axis(0), rows),
            slices: self.slices.clone(),
        }
    }

    /// Writes `<base>.f64` (little-endian row-major) and `<base>.json`.
    pub fn write(&self, base: &Path) -> Result<(), ScmError> {
        let (blob, sidecar) = blob_paths(base);
        let values: Vec<f64> = self.data.iter().copied().collect();
        write_f64_blob(&blob, &values)?;
        write_json(
            &sidecar,
            &Sidecar {
                n_samples: self.n_samples(),
                n_cols: self.data.ncols(),
                slices: self.slices.clone(),
            },
        )?;
        Ok(())
    }

    pub fn read(base: &Path) -> Result<SampleTable, ScmError> {
        let (blob, sidecar) = blob_paths(base);
        let meta: Sidecar = read_json(&sidecar)?;
        let values = read_f64_blob(&blob)?;
        if values.len() != meta.n_samples * meta.n_cols {
            return Err(ScmError::Table(format!(
                "blob holds {} values, sidecar declares {}×{}",
                values.len(),
                meta.n_samples,
                meta.n_cols
            )));
        }
        let data = Array2::from_shape_vec((meta.n_samples, meta.n_cols), values)
            .map_err(|e| ScmError::Table(e.to_string()))?;
        SampleTable::new(data, meta.slices)
    }

    /// CSV with one `<id>_<k>` header per column, in slice order.
    pub fn to_csv(&self) -> String {
        let mut ordered = self.slices.clone();
        ordered.sort_by_key(|s| s.offset);
        let mut out = String::new();
        let header: Vec<String> = ordered
            .iter()
            .flat_map(|s| (0..s.width).map(move |k| format!("{}_{k}", s.id)))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in self.data.rows() {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ScmError> {
        write_text(path, &self.to_csv())?;
        Ok(())
    }

    /// Column widths of each variable keyed by id.
    pub fn dims(&self) -> BTreeMap<String, usize> {
        self.slices
            .iter()
            .map(|s| (s.id.clone(), s.width))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table() -> SampleTable {
        SampleTable::from_blocks(vec![
            ("a".into(), array![[1.0], [2.0]]),
            ("b".into(), array![[3.0, 4.0], [5.0, 6.5]]),
        ])
        .unwrap()
    }

    #[test]
    fn slices_are_laid_out_in_order() {
        let t = table();
        assert_eq!(t.slice("b").unwrap().offset, 1);
        assert_eq!(t.get("b").unwrap(), array![[3.0, 4.0], [5.0, 6.5]]);
        assert_eq!(
            t.concat(&["b", "a"]).unwrap(),
            array![[3.0, 4.0, 1.0], [5.0, 6.5, 2.0]]
        );
        assert!(matches!(t.require("c"), Err(ScmError::UnknownVariable(_))));
    }

    #[test]
    fn invalid_tables_are_rejected() {
        let overlap = vec![
            Slice { id: "a".into(), offset: 0, width: 2 },
            Slice { id: "b".into(), offset: 1, width: 1 },
        ];
        assert!(SampleTable::new(Array2::zeros((2, 2)), overlap).is_err());
        let gap = vec![Slice { id: "a".into(), offset: 0, width: 1 }];
        assert!(SampleTable::new(Array2::zeros((2, 2)), gap).is_err());
        let empty = vec![Slice { id: "a".into(), offset: 0, width: 1 }];
        assert!(SampleTable::new(Array2::zeros((0, 1)), empty).is_err());
        let mut nan = Array2::zeros((1, 1));
        nan[[0, 0]] = f64::NAN;
        let one = vec![Slice { id: "a".into(), offset: 0, width: 1 }];
        assert!(SampleTable::new(nan, one).is_err());
    }

    #[test]
    fn csv_header_names_columns() {
        let csv = table().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "a_0,b_0,b_1");
        assert_eq!(lines.next().unwrap(), "1.0,3.0,4.0");
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("t");
        let t = SampleTable::from_blocks(vec![(
            "x".into(),
            array![[0.1, -1e-300], [f64::MAX, 1.0 / 3.0]],
        )])
        .unwrap();
        t.write(&base).unwrap();
        assert_eq!(SampleTable::read(&base).unwrap(), t);
    }
}
