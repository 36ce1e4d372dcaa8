use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult, ErrorKind};

/// Which CSV columns to read. Feature columns default to every column that is
/// neither the target nor the task column, in file order.
#[derive(Clone, Debug)]
pub struct DatasetSchema {
    pub target_column: String,
    pub feature_columns: Option<Vec<String>>,
    pub task_column: Option<String>,
    /// When set, a file without the target column loads with no targets
    /// instead of failing; used for prediction inputs.
    pub target_optional: bool,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            target_column: "y".to_string(),
            feature_columns: None,
            task_column: None,
            target_optional: false,
        }
    }
}

/// Task labels factorized to dense indices in order of first appearance.
#[derive(Clone, Debug)]
pub struct TaskInfo {
    pub indices: Vec<usize>,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub targets: Option<DVector<f64>>,
    pub tasks: Option<TaskInfo>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn targets_required(&self) -> CliResult<&DVector<f64>> {
        self.targets
            .as_ref()
            .ok_or_else(|| CliError::validation("dataset has no target column"))
    }
}

fn column_index(headers: &[String], name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => CliError::parse(format!("{}: {e}", path.display())),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let target_idx = match column_index(&headers, &schema.target_column) {
        Some(i) => Some(i),
        None if schema.target_optional => None,
        None => {
            return Err(CliError::validation(format!(
                "missing target column '{}' in {}",
                schema.target_column,
                path.display()
            )))
        }
    };
    let task_idx = match &schema.task_column {
        Some(name) => Some(column_index(&headers, name).ok_or_else(|| {
            CliError::validation(format!(
                "missing task column '{name}' in {}",
                path.display()
            ))
        })?),
        None => None,
    };
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(names) => names
            .iter()
            .map(|name| {
                column_index(&headers, name).ok_or_else(|| {
                    CliError::validation(format!(
                        "missing feature column '{name}' in {}",
                        path.display()
                    ))
                })
            })
            .collect::<CliResult<Vec<usize>>>()?,
        None => (0..headers.len())
            .filter(|&i| Some(i) != target_idx && Some(i) != task_idx)
            .collect(),
    };
    if feature_idx.is_empty() {
        return Err(CliError::validation(format!(
            "no feature columns in {}",
            path.display()
        )));
    }
    let feature_names: Vec<String> = feature_idx.iter().map(|&i| headers[i].clone()).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut task_indices: Vec<usize> = Vec::new();
    let mut task_labels: Vec<String> = Vec::new();
    let mut task_lookup: HashMap<String, usize> = HashMap::new();

    let parse_cell = |record: &csv::StringRecord, line: usize, col: usize| -> CliResult<f64> {
        let cell = record.get(col).ok_or_else(|| {
            CliError::parse(format!(
                "{} line {line}: fewer fields than the header",
                path.display()
            ))
        })?;
        let value: f64 = cell.trim().parse().map_err(|_| {
            CliError::parse(format!(
                "{} line {line}, column '{}': not a number: '{cell}'",
                path.display(),
                headers[col]
            ))
        })?;
        if !value.is_finite() {
            return Err(CliError::new(
                ErrorKind::Validation,
                format!(
                    "{} line {line}, column '{}': non-finite value '{cell}'",
                    path.display(),
                    headers[col]
                ),
            ));
        }
        Ok(value)
    };

    for (i, record) in reader.records().enumerate() {
        // Header occupies line 1; the first data record is line 2.
        let line = i + 2;
        let record = record.map_err(|e| {
            CliError::parse(format!("{} line {line}: {e}", path.display()))
        })?;
        let mut row = Vec::with_capacity(feature_idx.len());
        for &col in &feature_idx {
            row.push(parse_cell(&record, line, col)?);
        }
        rows.push(row);
        if let Some(col) = target_idx {
            targets.push(parse_cell(&record, line, col)?);
        }
        if let Some(col) = task_idx {
            let label = record
                .get(col)
                .ok_or_else(|| {
                    CliError::parse(format!(
                        "{} line {line}: fewer fields than the header",
                        path.display()
                    ))
                })?
                .trim()
                .to_string();
            let next = task_labels.len();
            let id = *task_lookup.entry(label.clone()).or_insert_with(|| {
                task_labels.push(label);
                next
            });
            task_indices.push(id);
        }
    }
    if rows.is_empty() {
        return Err(CliError::validation(format!(
            "{} contains no data rows",
            path.display()
        )));
    }

    let n = rows.len();
    let d = feature_idx.len();
    let features = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    Ok(Dataset {
        features,
        feature_names,
        targets: target_idx.map(|_| DVector::from_vec(targets)),
        tasks: task_idx.map(|_| TaskInfo {
            indices: task_indices,
            labels: task_labels,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_column_file_loads_features_and_targets() {
        let f = write_csv("x,y\n1.0,2.0\n3.0,4.0\n5.0,6.0\n");
        let data = load_dataset(f.path(), &DatasetSchema::default()).unwrap();
        assert_eq!(data.features.nrows(), 3);
        assert_eq!(data.features.ncols(), 1);
        assert_eq!(data.feature_names, vec!["x"]);
        let y = data.targets.unwrap();
        assert_eq!(y.as_slice(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn task_labels_are_factorized_in_first_appearance_order() {
        let f = write_csv("task_id,x,y\nA,1,1\nA,2,2\nB,3,3\n");
        let schema = DatasetSchema {
            task_column: Some("task_id".into()),
            ..DatasetSchema::default()
        };
        let data = load_dataset(f.path(), &schema).unwrap();
        let tasks = data.tasks.unwrap();
        assert_eq!(tasks.indices, vec![0, 0, 1]);
        assert_eq!(tasks.labels, vec!["A", "B"]);
        assert_eq!(data.feature_names, vec!["x"]);
    }

    #[test]
    fn missing_target_column_is_named_in_the_error() {
        let f = write_csv("a,b\n1,2\n");
        let err = load_dataset(f.path(), &DatasetSchema::default()).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Validation);
        assert!(err.message.contains("'y'"), "{}", err.message);
    }

    #[test]
    fn non_numeric_cell_reports_line_and_column() {
        let f = write_csv("x,y\n1.0,2.0\n3.0,oops\n");
        let err = load_dataset(f.path(), &DatasetSchema::default()).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Parse);
        assert!(err.message.contains("line 3"), "{}", err.message);
        assert!(err.message.contains("'y'"), "{}", err.message);
        assert!(err.message.contains("oops"), "{}", err.message);
    }

    #[test]
    fn non_finite_values_are_rejected_as_validation_errors() {
        let f = write_csv("x,y\n1.0,NaN\n");
        let err = load_dataset(f.path(), &DatasetSchema::default()).unwrap_err();
        assert_eq!(err.kind, ErrorKind::Validation);
    }

    #[test]
    fn optional_target_allows_feature_only_files() {
        let f = write_csv("x\n1.0\n2.0\n");
        let schema = DatasetSchema {
            target_optional: true,
            ..DatasetSchema::default()
        };
        let data = load_dataset(f.path(), &schema).unwrap();
        assert!(data.targets.is_none());
        assert_eq!(data.rows(), 2);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_dataset(
            Path::new("/definitely/not/here.csv"),
            &DatasetSchema::default(),
        )
        .unwrap_err();
        assert_eq!(err.kind, ErrorKind::Io);
    }
}
