use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::Selection;
use crate::masks::MaskRole;
use crate::model::EpochMetrics;

/// One completed training run. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset: String,
    pub layers: usize,
    pub heads: usize,
    pub guided_heads: usize,
    /// Guided roles in head order, joined with `+`.
    pub roles: String,
    pub seed: u64,
    pub dev_acc: f64,
    pub test_acc: f64,
    pub epochs: usize,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_id: String,
    pub dataset: String,
    pub layers: usize,
    pub heads: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub role: MaskRole,
    pub dataset: String,
    pub seed: u64,
    pub full_acc: f64,
    pub ablated_acc: f64,
    /// `full_acc - ablated_acc`.
    pub drop: f64,
}

/// Per-role drop averaged over datasets and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleDrop {
    pub role: MaskRole,
    pub mean_drop: f64,
    pub std_drop: f64,
    /// Number of (dataset, seed) pairs averaged.
    pub count: usize,
}

const RESULTS_HEADER: [&str; 11] = [
    "run_id",
    "dataset",
    "layers",
    "heads",
    "guided_heads",
    "roles",
    "seed",
    "dev_acc",
    "test_acc",
    "epochs",
    "wall_seconds",
];
const FAILURES_HEADER: [&str; 6] = ["run_id", "dataset", "layers", "heads", "seed", "error"];
const ABLATION_HEADER: [&str; 6] = ["role", "dataset", "seed", "full_acc", "ablated_acc", "drop"];
const SUMMARY_HEADER: [&str; 4] = ["role", "mean_drop", "std_drop", "count"];
const SELECTION_HEADER: [&str; 5] = ["dataset", "layers", "extra_heads", "dev_acc", "test_acc"];
const HISTORY_HEADER: [&str; 4] = ["epoch", "train_loss", "dev_loss", "dev_acc"];

/// Writes the header even when `rows` is empty.
fn write_rows<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: DeserializeOwned>(input: R) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_results_csv<W: Write>(out: W, rows: &[RunRecord]) -> Result<(), csv::Error> {
    write_rows(out, &RESULTS_HEADER, rows)
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<RunRecord>, csv::Error> {
    read_rows(input)
}

pub fn write_failures_csv<W: Write>(out: W, rows: &[RunFailure]) -> Result<(), csv::Error> {
    write_rows(out, &FAILURES_HEADER, rows)
}

pub fn read_failures_csv<R: Read>(input: R) -> Result<Vec<RunFailure>, csv::Error> {
    read_rows(input)
}

pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<(), csv::Error> {
    write_rows(out, &ABLATION_HEADER, rows)
}

pub fn read_ablation_csv<R: Read>(input: R) -> Result<Vec<AblationRow>, csv::Error> {
    read_rows(input)
}

/// Plot-ready per-role drop series.
pub fn write_summary_csv<W: Write>(out: W, rows: &[RoleDrop]) -> Result<(), csv::Error> {
    write_rows(out, &SUMMARY_HEADER, rows)
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<RoleDrop>, csv::Error> {
    read_rows(input)
}

pub fn write_selection_csv<W: Write>(out: W, rows: &[Selection]) -> Result<(), csv::Error> {
    write_rows(out, &SELECTION_HEADER, rows)
}

pub fn read_selection_csv<R: Read>(input: R) -> Result<Vec<Selection>, csv::Error> {
    read_rows(input)
}

pub fn write_history_csv<W: Write>(out: W, history: &[EpochMetrics]) -> Result<(), csv::Error> {
    let rows: Vec<(usize, f64, f64, f64)> = history
        .iter()
        .map(|h| (h.epoch, h.train_loss, h.dev_loss, h.dev_accuracy))
        .collect();
    write_rows(out, &HISTORY_HEADER, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(seed: u64, wall: Option<f64>) -> RunRecord {
        RunRecord {
            run_id: format!("toy-L1-E1-s{seed}"),
            dataset: "toy".into(),
            layers: 1,
            heads: 6,
            guided_heads: 5,
            roles: "rarew+seprat+depsyn+majrel+relpos".into(),
            seed,
            dev_acc: 100.0 / 3.0,
            test_acc: 0.1 + 0.2,
            epochs: 7,
            wall_seconds: wall,
        }
    }

    #[test]
    fn empty_tables_are_header_only() {
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "run_id,dataset,layers,heads,guided_heads,roles,seed,dev_acc,test_acc,epochs,wall_seconds\n"
        );
        let mut buf = Vec::new();
        write_ablation_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "role,dataset,seed,full_acc,ablated_acc,drop\n");
    }

    #[test]
    fn one_run_one_row() {
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &[record(3, Some(1.5))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), 11);
        assert!(lines[1].split(',').all(|f| !f.is_empty()));
    }

    #[test]
    fn results_round_trip_exactly() {
        let rows = vec![record(1, None), record(2, Some(0.25))];
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn ablation_round_trip_exactly() {
        let rows = vec![AblationRow {
            role: MaskRole::RelativePosition,
            dataset: "synth".into(),
            seed: 4,
            full_acc: 99.8,
            ablated_acc: 96.2,
            drop: 99.8 - 96.2,
        }];
        let mut buf = Vec::new();
        write_ablation_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().contains("\nrelpos,synth,4,"));
        assert_eq!(read_ablation_csv(buf.as_slice()).unwrap(), rows);

        let summary = vec![RoleDrop {
            role: MaskRole::RareWords,
            mean_drop: -0.125,
            std_drop: 1.0 / 7.0,
            count: 3,
        }];
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &summary).unwrap();
        assert_eq!(read_summary_csv(buf.as_slice()).unwrap(), summary);
    }

    #[test]
    fn history_rows() {
        let h = vec![EpochMetrics {
            epoch: 1,
            train_loss: 0.5,
            dev_loss: 0.75,
            dev_accuracy: 50.0,
        }];
        let mut buf = Vec::new();
        write_history_csv(&mut buf, &h).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,dev_loss,dev_acc\n1,0.5,0.75,50.0\n");
    }
}
