use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Reads a headed, comma-separated file. Every column other than
/// `label_column` is a numeric feature; label values become class indices
/// in order of first appearance. Quoted fields are not supported.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, label_column).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_csv(reader: impl Read, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().any(|h| h.contains('"')) {
        return Err(Error::Data("quoted header fields are not supported".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("label column '{label_column}' not found in header")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        for (c, field) in record.iter().enumerate() {
            let name = &headers[c];
            if field.contains('"') {
                return Err(Error::Data(format!("row {row}, column '{name}': quoted values are not supported")));
            }
            if c == label_idx {
                if field.is_empty() {
                    return Err(Error::Data(format!("row {row}, column '{name}': missing label")));
                }
                let class = match class_names.iter().position(|n| n == field) {
                    Some(i) => i,
                    None => {
                        class_names.push(field.to_string());
                        class_names.len() - 1
                    }
                };
                y.push(class);
            } else {
                let value: f64 = field.parse().map_err(|_| {
                    Error::Data(format!("row {row}, column '{name}': cannot parse '{field}' as a number"))
                })?;
                if !value.is_finite() {
                    return Err(Error::Data(format!(
                        "row {row}, column '{name}': non-finite value '{field}'"
                    )));
                }
                data.push(value);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }
    let x = Matrix::from_vec(y.len(), feature_names.len(), data)?;
    Dataset::new(x, y, feature_names, class_names)
}

/// Writes features followed by a `label` column holding class names.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut header = ds.feature_names.join(",");
    header.push(',');
    header.push_str(label_column);
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    for (row, &class) in ds.x.iter_rows().zip(&ds.y) {
        let mut line = row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
        line.push(',');
        line.push_str(&ds.class_names[class]);
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_appearance_labels() {
        let ds = parse_csv("f1,f2,label\n1,2,a\n3,4,b\n5,6.5,a\n".as_bytes(), "label").unwrap();
        assert_eq!(ds.y, vec![0, 1, 0]);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.class_names, vec!["a", "b"]);
        assert_eq!(ds.x.row(2), &[5.0, 6.5]);
        assert_eq!(ds.feature_names, vec!["f1", "f2"]);
    }

    #[test]
    fn label_column_can_sit_anywhere() {
        let ds = parse_csv("cls,f1\nx,1\ny,2\n".as_bytes(), "cls").unwrap();
        assert_eq!(ds.x.as_slice(), &[1.0, 2.0]);
        assert_eq!(ds.y, vec![0, 1]);
    }

    #[test]
    fn missing_label_column() {
        let err = parse_csv("f1,f2,label\n1,2,a\n".as_bytes(), "target").unwrap_err();
        assert!(err.to_string().contains("'target'"), "{err}");
    }

    #[test]
    fn nan_cell_names_row_and_column() {
        let err = parse_csv("f1,f2,label\n1,2,a\n3,NaN,b\n".as_bytes(), "label").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("'f2'"), "{msg}");
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_csv("f1,label\nabc,a\n".as_bytes(), "label").is_err());
        assert!(parse_csv("f1,label\n,a\n".as_bytes(), "label").is_err());
        assert!(parse_csv("f1,label\n1,\"a\"\n".as_bytes(), "label").is_err());
        assert!(parse_csv("f1,label\n1,a,3\n".as_bytes(), "label").is_err());
        assert!(parse_csv("f1,label\n".as_bytes(), "label").is_err());
        assert!(parse_csv("f1,label\ninf,a\n".as_bytes(), "label").is_err());
    }

    #[test]
    fn write_then_read() {
        let ds = parse_csv("f1,f2,label\n0.1,2e-3,a\n3,4,b\n".as_bytes(), "label").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &path, "label").unwrap();
        assert_eq!(load_csv(&path, "label").unwrap(), ds);
    }
}
