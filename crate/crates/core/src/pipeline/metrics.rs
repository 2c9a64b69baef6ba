use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};

/// One row of `steps.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    /// Training-batch accuracy; empty when the reporting side never sees logits.
    pub accuracy: Option<f64>,
    /// FEATURES frame bytes for this batch.
    pub forward_bytes: u64,
    /// GRADIENTS frame bytes for this batch.
    pub backward_bytes: u64,
    pub cumulative_bytes: u64,
    pub wall_ms: f64,
}

pub const STEPS_CSV_HEADER: &str =
    "step,epoch,loss,accuracy,forward_bytes,backward_bytes,cumulative_bytes,wall_ms";

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub dataset: String,
    pub steps: u64,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    pub forward_bytes: u64,
    pub backward_bytes: u64,
    pub total_bytes: u64,
    /// Compressed feature floats actually sent, in bytes.
    pub feature_block_bytes: u64,
    /// Feature bytes an uncompressed run would have sent.
    pub vanilla_feature_block_bytes: u64,
    pub compression_ratio: f64,
}

pub fn write_steps_csv(path: &Path, steps: &[StepMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    if steps.is_empty() {
        w.write_record(STEPS_CSV_HEADER.split(','))
            .map_err(|e| Error::Io(e.into()))?;
    }
    for s in steps {
        w.serialize(s).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_steps_csv(path: &Path) -> Result<Vec<StepMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(format!("steps.csv: {e}"))))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("steps.csv");
        let row = StepMetrics {
            step: 0,
            epoch: 0,
            loss: 1.5,
            accuracy: None,
            forward_bytes: 10,
            backward_bytes: 20,
            cumulative_bytes: 30,
            wall_ms: 0.0,
        };
        write_steps_csv(&path, &[row.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), STEPS_CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,0,1.5,,10,20,30,0.0");
        assert_eq!(read_steps_csv(&path).unwrap(), vec![row]);

        write_steps_csv(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), STEPS_CSV_HEADER);
    }
}
