//! Balanced-accuracy evaluation over prediction files.
//!
//! Predictions file: one JSON object per line,
//! `{"sample_id", "dataset", "gt_label", "extraction_mode", "raw_output"}`.
//! `extraction_mode` is `structured` (default) or `raw_text`. Outputs with no
//! extractable answer count as wrong and are also reported separately.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use crate::parser::{extract_answer, ExtractionMode};
use crate::reward::Label;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub sample_id: String,
    pub dataset: String,
    pub gt_label: Label,
    #[serde(default = "default_mode")]
    pub extraction_mode: ExtractionMode,
    pub raw_output: String,
}

fn default_mode() -> ExtractionMode {
    ExtractionMode::Structured
}

impl EvalRecord {
    pub fn prediction(&self) -> Option<Label> {
        extract_answer(&self.raw_output, self.extraction_mode).map(Label::from_answer)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no {missing} samples{}", dataset_suffix(.dataset))]
    MissingClass { missing: Label, dataset: Option<String> },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: duplicate sample_id '{id}'")]
    DuplicateId { id: String, line: usize },
    #[error("predictions file is empty")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn dataset_suffix(dataset: &Option<String>) -> String {
    match dataset {
        Some(d) => format!(" in dataset '{d}'"),
        None => String::new(),
    }
}

/// Exact per-class tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub normal_correct: usize,
    pub anomalous: usize,
    pub anomalous_correct: usize,
    pub unparseable: usize,
}

impl ClassCounts {
    pub fn add(&mut self, gt: Label, pred: Option<Label>) {
        let correct = pred == Some(gt);
        match gt {
            Label::Normal => {
                self.normal += 1;
                self.normal_correct += correct as usize;
            }
            Label::Anomalous => {
                self.anomalous += 1;
                self.anomalous_correct += correct as usize;
            }
        }
        self.unparseable += pred.is_none() as usize;
    }

    fn rates(&self, dataset: Option<&str>) -> Result<(f64, f64), EvalError> {
        let missing = |missing| EvalError::MissingClass { missing, dataset: dataset.map(str::to_owned) };
        if self.normal == 0 {
            return Err(missing(Label::Normal));
        }
        if self.anomalous == 0 {
            return Err(missing(Label::Anomalous));
        }
        Ok((
            self.normal_correct as f64 / self.normal as f64,
            self.anomalous_correct as f64 / self.anomalous as f64,
        ))
    }
}

/// Mean of the normal and anomalous accuracies. Missing predictions count
/// as wrong.
pub fn balanced_accuracy(records: &[(Label, Option<Label>)]) -> Result<f64, EvalError> {
    let mut counts = ClassCounts::default();
    for &(gt, pred) in records {
        counts.add(gt, pred);
    }
    let (tnr, tpr) = counts.rates(None)?;
    Ok((tnr + tpr) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetMetrics {
    pub dataset: String,
    pub tnr: f64,
    pub tpr: f64,
    pub balanced_accuracy: f64,
    pub unparseable: usize,
    pub counts: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Sorted by dataset name.
    pub datasets: Vec<DatasetMetrics>,
    /// Unweighted mean over datasets; `unparseable` is the total.
    pub overall: DatasetMetrics,
}

pub fn evaluate_records(records: &[EvalRecord]) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut by_dataset: BTreeMap<&str, ClassCounts> = BTreeMap::new();
    for r in records {
        by_dataset.entry(&r.dataset).or_default().add(r.gt_label, r.prediction());
    }
    let mut datasets = Vec::with_capacity(by_dataset.len());
    for (name, counts) in by_dataset {
        let (tnr, tpr) = counts.rates(Some(name))?;
        datasets.push(DatasetMetrics {
            dataset: name.to_owned(),
            tnr,
            tpr,
            balanced_accuracy: (tnr + tpr) / 2.0,
            unparseable: counts.unparseable,
            counts,
        });
    }
    let n = datasets.len() as f64;
    let tnr = datasets.iter().map(|d| d.tnr).sum::<f64>() / n;
    let tpr = datasets.iter().map(|d| d.tpr).sum::<f64>() / n;
    let mut total = ClassCounts::default();
    for d in &datasets {
        total.normal += d.counts.normal;
        total.normal_correct += d.counts.normal_correct;
        total.anomalous += d.counts.anomalous;
        total.anomalous_correct += d.counts.anomalous_correct;
        total.unparseable += d.counts.unparseable;
    }
    let overall = DatasetMetrics {
        dataset: "overall".into(),
        tnr,
        tpr,
        balanced_accuracy: (tnr + tpr) / 2.0,
        unparseable: total.unparseable,
        counts: total,
    };
    Ok(EvalReport { datasets, overall })
}

/// Reads predictions line by line. Blank lines are skipped.
pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<EvalRecord>, EvalError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| EvalError::Line { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord = serde_json::from_str(&line)
            .map_err(|e| EvalError::Line { line: line_no, message: e.to_string() })?;
        if seen.insert(rec.sample_id.clone(), line_no).is_some() {
            return Err(EvalError::DuplicateId { id: rec.sample_id, line: line_no });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn evaluate_run<R: BufRead>(reader: R) -> Result<EvalReport, EvalError> {
    evaluate_records(&read_predictions(reader)?)
}

pub fn evaluate_file(path: &Path) -> Result<EvalReport, EvalError> {
    let file = std::fs::File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    evaluate_run(std::io::BufReader::new(file))
}

impl EvalReport {
    fn rows(&self) -> impl Iterator<Item = &DatasetMetrics> {
        self.datasets.iter().chain(std::iter::once(&self.overall))
    }

    /// `dataset,tnr,tpr,balanced_accuracy,unparseable`, with a final
    /// `overall` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,tnr,tpr,balanced_accuracy,unparseable\n");
        for d in self.rows() {
            let _ = writeln!(out, "{},{},{},{},{}", d.dataset, d.tnr, d.tpr, d.balanced_accuracy, d.unparseable);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.rows().map(|d| d.dataset.len()).max().unwrap_or(7).max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>11}",
            "dataset", "TNR", "TPR", "BA", "unparseable"
        );
        for d in self.rows() {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.2}%  {:>7.2}%  {:>7.2}%  {:>11}",
                d.dataset,
                d.tnr * 100.0,
                d.tpr * 100.0,
                d.balanced_accuracy * 100.0,
                d.unparseable
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    #[test]
    fn balanced_accuracy_examples() {
        let all = [(Normal, Some(Normal)), (Anomalous, Some(Anomalous))];
        assert_eq!(balanced_accuracy(&all).unwrap(), 1.0);

        let always_no: Vec<_> = [Normal, Anomalous, Anomalous, Normal, Anomalous]
            .into_iter()
            .map(|g| (g, Some(Normal)))
            .collect();
        assert_eq!(balanced_accuracy(&always_no).unwrap(), 0.5);

        let mut recs = Vec::new();
        for i in 0..10 {
            recs.push((Normal, Some(if i < 8 { Normal } else { Anomalous })));
            recs.push((Anomalous, if i < 6 { Some(Anomalous) } else { None }));
        }
        assert!((balanced_accuracy(&recs).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn single_class_names_the_missing_class() {
        let err = balanced_accuracy(&[(Normal, Some(Normal))]).unwrap_err();
        assert!(matches!(err, EvalError::MissingClass { missing: Anomalous, .. }));
        assert!(err.to_string().contains("anomalous"));
        let err = balanced_accuracy(&[(Anomalous, None)]).unwrap_err();
        assert!(err.to_string().contains("normal"));
    }

    fn line(id: &str, ds: &str, gt: &str, mode: &str, raw: &str) -> String {
        serde_json::json!({"sample_id": id, "dataset": ds, "gt_label": gt, "extraction_mode": mode, "raw_output": raw})
            .to_string()
    }

    #[test]
    fn twelve_record_fixture() {
        let yes = "<think>x</think><location>top left</location><type>scratch</type><answer>Yes</answer>";
        let no = "<think>x</think><answer>No</answer>";
        let lines = [
            line("a1", "mvtec", "normal", "structured", no),
            line("a2", "mvtec", "normal", "structured", no),
            line("a3", "mvtec", "normal", "structured", yes),
            line("a4", "mvtec", "anomalous", "structured", yes),
            line("a5", "mvtec", "anomalous", "structured", "garbage"),
            line("a6", "mvtec", "anomalous", "raw_text", "Yes, there is a dent."),
            line("b1", "visa", "normal", "raw_text", "no defects here"),
            line("b2", "visa", "normal", "raw_text", "unclear"),
            line("b3", "visa", "anomalous", "structured", yes),
            line("b4", "visa", "anomalous", "structured", no),
            line("b5", "visa", "anomalous", "structured", "<answer>yes</answer> trailing <answer>maybe</answer>"),
            line("b6", "visa", "anomalous", "structured", yes),
        ];
        let report = evaluate_run(lines.join("\n").as_bytes()).unwrap();
        let m = &report.datasets[0];
        assert_eq!(m.dataset, "mvtec");
        assert_eq!((m.tnr, m.tpr, m.unparseable), (2.0 / 3.0, 2.0 / 3.0, 1));
        let v = &report.datasets[1];
        assert_eq!((v.tnr, v.tpr, v.unparseable), (0.5, 0.75, 1));
        assert_eq!(v.balanced_accuracy, 0.625);
        assert_eq!(report.overall.tnr, (2.0 / 3.0 + 0.5) / 2.0);
        assert_eq!(report.overall.unparseable, 2);
        let csv = report.to_csv();
        assert!(csv.starts_with("dataset,tnr,tpr,balanced_accuracy,unparseable\nmvtec,"));
        assert!(csv.contains("\nvisa,0.5,0.75,0.625,1\n"));
        assert!(report.to_table().contains("overall"));
    }

    #[test]
    fn file_errors() {
        assert!(matches!(evaluate_run("".as_bytes()), Err(EvalError::Empty)));
        let dup = [line("x", "d", "normal", "structured", "a"), line("x", "d", "normal", "structured", "b")];
        let err = evaluate_run(dup.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(&err, EvalError::DuplicateId { id, line: 2 } if id == "x"));
        assert!(err.to_string().contains("'x'"));
        let bad = format!("{}\n{{\"sample_id\": 3}}", line("x", "d", "normal", "structured", "a"));
        assert!(matches!(evaluate_run(bad.as_bytes()), Err(EvalError::Line { line: 2, .. })));
        let one_class = line("x", "d", "normal", "structured", "a");
        let err = evaluate_run(one_class.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("dataset 'd'"));
    }

    #[test]
    fn escaped_newlines_in_output() {
        let raw = "<think>line one\nline two</think>\n<answer>No</answer>";
        let rec: EvalRecord = serde_json::from_str(&line("n", "d", "normal", "structured", raw)).unwrap();
        assert_eq!(rec.prediction(), Some(Normal));
        assert!(!line("n", "d", "normal", "structured", raw).contains('\n'));
    }
}
