use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::HarnessError;
use crate::scm::{SampleTable, Slice};

/// A table read from CSV together with what was left out.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub table: SampleTable,
    /// Rows with at least one non-numeric or non-finite cell.
    pub dropped_rows: usize,
    /// Header names that matched no prefix.
    pub ignored_columns: Vec<String>,
}

/// Reads a headed numeric CSV and groups columns into variables.
///
/// `grouping` maps a column-name prefix to a variable id; each column goes
/// to the longest matching prefix. Variables are laid out in id order and
/// keep the file's column order within a variable.
pub fn ingest_csv(path: &Path, grouping: &BTreeMap<String, String>) -> Result<Ingested, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| HarnessError::Ingest(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| HarnessError::Ingest(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(HarnessError::Ingest(format!("{} is empty", path.display())));
    }

    let owner: Vec<Option<&String>> = headers
        .iter()
        .map(|h| {
            grouping
                .iter()
                .filter(|(prefix, _)| h.starts_with(prefix.as_str()))
                .max_by_key(|(prefix, _)| prefix.len())
                .map(|(_, id)| id)
        })
        .collect();
    for (prefix, id) in grouping {
        if !headers.iter().any(|h| h.starts_with(prefix.as_str())) {
            return Err(HarnessError::Ingest(format!("prefix {prefix:?} (variable {id}) matches no column")));
        }
    }
    let mut columns_of: BTreeMap<&String, Vec<usize>> = BTreeMap::new();
    for (c, o) in owner.iter().enumerate() {
        if let Some(id) = o {
            columns_of.entry(id).or_default().push(c);
        }
    }
    let order: Vec<usize> = columns_of.values().flatten().copied().collect();

    let mut values = Vec::new();
    let mut kept = 0;
    let mut dropped = 0;
    let mut seen = 0;
    for record in reader.records() {
        seen += 1;
        let record = record.map_err(|e| HarnessError::Ingest(e.to_string()))?;
        let row: Option<Vec<f64>> = order
            .iter()
            .map(|&c| record.get(c).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        match row {
            Some(r) => {
                values.extend(r);
                kept += 1;
            }
            None => dropped += 1,
        }
    }
    if seen == 0 {
        return Err(HarnessError::Ingest(format!("{} has a header but no rows", path.display())));
    }
    if kept == 0 {
        return Err(HarnessError::Ingest(format!("all {dropped} rows had non-numeric cells")));
    }

    let mut slices = Vec::new();
    let mut offset = 0;
    for (id, cols) in &columns_of {
        slices.push(Slice {
            id: (*id).clone(),
            offset,
            width: cols.len(),
        });
        offset += cols.len();
    }
    let data = Array2::from_shape_vec((kept, order.len()), values).map_err(|e| HarnessError::Ingest(e.to_string()))?;
    let ignored_columns = headers
        .iter()
        .zip(&owner)
        .filter(|(_, o)| o.is_none())
        .map(|(h, _)| h.clone())
        .collect();
    Ok(Ingested {
        table: SampleTable::new(data, slices)?,
        dropped_rows: dropped,
        ignored_columns,
    })
}

/// Grouping that maps `<id>_` to `<id>` for every listed id, matching the
/// header layout written by [`SampleTable::to_csv`].
pub fn grouping_for_ids(ids: &[String]) -> BTreeMap<String, String> {
    ids.iter().map(|id| (format!("{id}_"), id.clone())).collect()
}
