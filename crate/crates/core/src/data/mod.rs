//! Dataset files, synthetic scenes, evaluation and scaling-curve fits.
//!
//! Datasets are CSV with the header `id,qa,qb,qc,qd,t1,t2,t3,f0,...,f{d-1}`:
//! one row per image, quaternion scalar-first, camera center in meters,
//! followed by the `d` descriptor entries.

pub mod eval;
pub mod scaling;
pub mod synth;

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::pose::{Dataset, DatasetError, PoseError, PoseVector, Sample};

pub use eval::{evaluate, EvalError, EvalReport, Refinement};
pub use scaling::{fit_scaling_curve, ScalingError, ScalingFit};
pub use synth::{generate_synthetic, SyntheticData, SyntheticSpec};

/// Quaternion norms further than this from 1 are logged when loading.
pub const QUATERNION_NORM_WARN_TOL: f64 = 1e-6;

const POSE_COLUMNS: [&str; 8] = ["id", "qa", "qb", "qc", "qd", "t1", "t2", "t3"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("item {id:?}: invalid pose: {source}")]
    InvalidPose { id: String, source: PoseError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

fn parse_err(line: u64, message: impl Into<String>) -> DataError {
    DataError::Parse {
        line,
        message: message.into(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_dataset(File::open(path)?)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() <= POSE_COLUMNS.len() {
        return Err(parse_err(1, "header has no descriptor columns"));
    }
    for (i, name) in header.iter().enumerate() {
        let expected = POSE_COLUMNS
            .get(i)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("f{}", i - POSE_COLUMNS.len()));
        if name != expected {
            return Err(parse_err(1, format!("header column {i} is {name:?}, expected {expected:?}")));
        }
    }
    let d = header.len() - POSE_COLUMNS.len();

    let mut items = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let id = record[0].to_string();
        let mut values = Vec::with_capacity(7 + d);
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("row {id:?}: column {} is not a number: {field:?}", &header[col])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("row {id:?}: column {} is not finite", &header[col])));
            }
            values.push(v);
        }
        let q = [values[0], values[1], values[2], values[3]];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pose = PoseVector::new(q, [values[4], values[5], values[6]])
            .map_err(|source| DataError::InvalidPose { id: id.clone(), source })?;
        if (norm - 1.0).abs() > QUATERNION_NORM_WARN_TOL {
            log::warn!("item {id:?}: quaternion norm {norm} renormalized");
        }
        items.push(Sample {
            id,
            descriptor: values.split_off(7),
            pose,
        });
    }
    Ok(Dataset::new(items)?)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_dataset(dataset, File::create(path)?)
}

/// Writes every value with the shortest representation that parses back to
/// the same `f64`.
pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = POSE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dataset.dim()).map(|i| format!("f{i}")));
    csv.write_record(&header).map_err(csv_io)?;
    for s in dataset.items() {
        let mut row = vec![s.id.clone()];
        row.extend(s.pose.components().iter().map(|v| v.to_string()));
        row.extend(s.descriptor.iter().map(|v| v.to_string()));
        csv.write_record(&row).map_err(csv_io)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> DataError {
    DataError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,qa,qb,qc,qd,t1,t2,t3,f0,f1\n";

    #[test]
    fn single_row() {
        let text = format!("{HEADER}a,1,0,0,0,1.5,2,3,0.25,-1\n");
        let ds = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.items()[0].descriptor, vec![0.25, -1.0]);
        assert_eq!(ds.items()[0].pose.translation(), [1.5, 2.0, 3.0]);
    }

    #[test]
    fn slightly_off_quaternion_is_normalized() {
        let text = format!("{HEADER}a,1.001,0,0,0,0,0,0,1,1\nb,-0.999,0,0,0,0,0,0,1,1\n");
        let ds = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(ds.items()[0].pose.quaternion(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ds.items()[1].pose.quaternion(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn nan_descriptor_names_the_row() {
        let text = format!("{HEADER}a,1,0,0,0,0,0,0,1,1\nbad,1,0,0,0,0,0,0,NaN,1\n");
        match read_dataset(text.as_bytes()) {
            Err(DataError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("bad"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            read_dataset("id,qa,qb,qc,qd,t1,t2,t3\n".as_bytes()),
            Err(DataError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_dataset("id,qa,qb,qc,qd,t1,t2,t3,g0\n".as_bytes()),
            Err(DataError::Parse { line: 1, .. })
        ));
        let short = format!("{HEADER}a,1,0,0,0,0,0,0,1\n");
        assert!(matches!(read_dataset(short.as_bytes()), Err(DataError::Parse { line: 2, .. })));
        let zero_q = format!("{HEADER}z,0,0,0,0,0,0,0,1,1\n");
        assert!(matches!(read_dataset(zero_q.as_bytes()), Err(DataError::InvalidPose { .. })));
        let dup = format!("{HEADER}a,1,0,0,0,0,0,0,1,1\na,1,0,0,0,0,0,0,1,1\n");
        assert!(matches!(read_dataset(dup.as_bytes()), Err(DataError::Dataset(DatasetError::DuplicateId(_)))));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let (train, _) = generate_synthetic(3, 40, 12, 0.05, 4);
        let mut buf = Vec::new();
        write_dataset(&train, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, train);
    }
}
