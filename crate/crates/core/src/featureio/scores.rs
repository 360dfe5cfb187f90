//! Score CSV: `sample_index,layer,score_name,value`, one row per sample and
//! score. Values use the shortest representation that round-trips.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, FeatureIoError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_index: usize,
    pub layer: String,
    pub score_name: String,
    pub value: f64,
}

/// All rows sharing one `(layer, score_name)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreColumn {
    pub layer: String,
    pub score_name: String,
    pub sample_index: Vec<usize>,
    pub values: Vec<f64>,
}

impl ScoreColumn {
    /// `layer/score_name`.
    pub fn key(&self) -> String {
        format!("{}/{}", self.layer, self.score_name)
    }
}

pub fn encode_scores(records: &[ScoreRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(["sample_index", "layer", "score_name", "value"])
            .expect("in-memory write");
    }
    for r in records {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<()> {
    write_atomic(path.as_ref(), &encode_scores(records))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let csv_err = |message: String| FeatureIoError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => FeatureIoError::io(path, io),
        other => csv_err(format!("{other:?}")),
    })?;
    let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample_index", "layer", "score_name", "value"] {
        return Err(csv_err(format!(
            "unexpected header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<ScoreRecord>().enumerate() {
        let rec = rec.map_err(|e| csv_err(e.to_string()))?;
        if !rec.value.is_finite() {
            return Err(csv_err(format!("non-finite value on data row {}", i + 1)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Groups records by `(layer, score_name)` in order of first appearance.
pub fn group_columns(records: &[ScoreRecord]) -> Vec<ScoreColumn> {
    let mut cols: Vec<ScoreColumn> = Vec::new();
    for r in records {
        let col = match cols
            .iter_mut()
            .position(|c| c.layer == r.layer && c.score_name == r.score_name)
        {
            Some(i) => &mut cols[i],
            None => {
                cols.push(ScoreColumn {
                    layer: r.layer.clone(),
                    score_name: r.score_name.clone(),
                    sample_index: Vec::new(),
                    values: Vec::new(),
                });
                cols.last_mut().unwrap()
            }
        };
        col.sample_index.push(r.sample_index);
        col.values.push(r.value);
    }
    cols
}
