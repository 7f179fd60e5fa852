//! Results records and the accuracy table.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::GridLoss;
use crate::error::{config, Error, Result};
use crate::sampling::SamplerMode;

/// Outcome of one grid cell on one probed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub dataset: String,
    pub loss_mode: GridLoss,
    pub sampler_mode: Option<SamplerMode>,
    pub status: CellStatus,
    pub accuracy: Option<f64>,
    pub best_dev_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub encoder_id: Option<String>,
    pub seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(config(format!("unknown table format {other:?}"))),
        }
    }
}

pub const MISSING: &str = "—";

/// Column order: PT, CEL, then (CEL+CL, CL) for each sampler.
pub const COLUMNS: [(GridLoss, Option<SamplerMode>); 8] = [
    (GridLoss::Pt, None),
    (GridLoss::Cel, None),
    (GridLoss::CelCl, Some(SamplerMode::RandomReplacement)),
    (GridLoss::Cl, Some(SamplerMode::RandomReplacement)),
    (GridLoss::CelCl, Some(SamplerMode::PairwiseNoReplacement)),
    (GridLoss::Cl, Some(SamplerMode::PairwiseNoReplacement)),
    (GridLoss::CelCl, Some(SamplerMode::CorpusNoReplacement)),
    (GridLoss::Cl, Some(SamplerMode::CorpusNoReplacement)),
];

const CSV_HEADER: [&str; 9] = [
    "dataset",
    "PT",
    "CEL",
    "random CEL+CL",
    "random CL",
    "pairwise CEL+CL",
    "pairwise CL",
    "corpus CEL+CL",
    "corpus CL",
];

fn matches(r: &ResultsRecord, col: (GridLoss, Option<SamplerMode>)) -> bool {
    r.loss_mode == col.0 && (col.1.is_none() || r.sampler_mode == col.1)
}

/// Dataset rows in first-seen order, each with one optional accuracy per
/// column (failed cells count as missing).
pub fn table_rows(records: &[ResultsRecord]) -> Vec<(String, [Option<f64>; 8])> {
    let mut rows: Vec<(String, [Option<f64>; 8])> = Vec::new();
    for r in records {
        let idx = match rows.iter().position(|(d, _)| *d == r.dataset) {
            Some(i) => i,
            None => {
                rows.push((r.dataset.clone(), [None; 8]));
                rows.len() - 1
            }
        };
        if r.status != CellStatus::Ok {
            continue;
        }
        for (c, col) in COLUMNS.iter().enumerate() {
            if matches(r, *col) && rows[idx].1[c].is_none() {
                rows[idx].1[c] = r.accuracy;
            }
        }
    }
    rows
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |a| format!("{:.1}", 100.0 * a))
}

/// Renders accuracies as percentages with one decimal.
pub fn render_table(records: &[ResultsRecord], format: TableFormat) -> String {
    let rows = table_rows(records);
    match format {
        TableFormat::Markdown => {
            let mut out = String::new();
            out.push_str("| Dataset | PT | CEL | Random Sampler | | Pairwise Sampler | | Corpus Sampler | |\n");
            out.push_str("|---|---|---|---|---|---|---|---|---|\n");
            out.push_str("| | | | CEL+CL | CL | CEL+CL | CL | CEL+CL | CL |\n");
            for (name, vals) in rows {
                let _ = write!(out, "| {name} |");
                for v in vals {
                    let _ = write!(out, " {} |", pct(v));
                }
                out.push('\n');
            }
            out
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("in-memory write");
            for (name, vals) in rows {
                let mut rec = vec![name];
                rec.extend(vals.iter().map(|v| pct(*v)));
                w.write_record(&rec).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
    }
}

/// Reads a table written by [`render_table`] in CSV form back into
/// fractions (`—` becomes `None`).
pub fn parse_table_csv(text: &str) -> Result<Vec<(String, [Option<f64>; 8])>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| config(e.to_string()))?;
    if headers.iter().ne(CSV_HEADER) {
        return Err(config("unexpected table header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| config(e.to_string()))?;
        let mut vals = [None; 8];
        for (v, field) in vals.iter_mut().zip(rec.iter().skip(1)) {
            if field != MISSING {
                let pct: f64 = field.parse().map_err(|_| config(format!("bad accuracy {field:?}")))?;
                *v = Some(pct / 100.0);
            }
        }
        out.push((rec[0].to_string(), vals));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(dataset: &str, loss: GridLoss, sampler: Option<SamplerMode>, acc: f64) -> ResultsRecord {
        ResultsRecord {
            dataset: dataset.into(),
            loss_mode: loss,
            sampler_mode: sampler,
            status: CellStatus::Ok,
            accuracy: Some(acc),
            best_dev_loss: None,
            best_epoch: None,
            encoder_id: None,
            seed: 0,
            error: None,
        }
    }

    #[test]
    fn single_record_table() {
        let t = render_table(&[record("yelp", GridLoss::Pt, None, 0.943)], TableFormat::Markdown);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "| yelp | 94.3 | — | — | — | — | — | — | — |");
    }

    #[test]
    fn columns_follow_sampler_groups() {
        let mut recs = Vec::new();
        for (i, (loss, sampler)) in COLUMNS.iter().enumerate().rev() {
            let sampler = sampler.or(if *loss == GridLoss::Cel { Some(SamplerMode::RandomReplacement) } else { None });
            recs.push(record("d", *loss, sampler, (i + 1) as f64 / 10.0));
        }
        let t = render_table(&recs, TableFormat::Markdown);
        assert!(t.ends_with("| d | 10.0 | 20.0 | 30.0 | 40.0 | 50.0 | 60.0 | 70.0 | 80.0 |\n"));
    }

    #[test]
    fn failed_cells_render_missing() {
        let mut r = record("d", GridLoss::Cl, Some(SamplerMode::CorpusNoReplacement), 0.5);
        r.status = CellStatus::Failed;
        r.accuracy = None;
        let rows = table_rows(&[r]);
        assert_eq!(rows[0].1, [None; 8]);
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            record("a", GridLoss::Pt, None, 0.51234),
            record("a", GridLoss::Cl, Some(SamplerMode::PairwiseNoReplacement), 0.987),
            record("b, quoted", GridLoss::Cel, Some(SamplerMode::RandomReplacement), 1.0),
        ];
        let csv = render_table(&recs, TableFormat::Csv);
        let back = parse_table_csv(&csv).unwrap();
        let orig = table_rows(&recs);
        assert_eq!(back.len(), orig.len());
        for ((n1, v1), (n2, v2)) in back.iter().zip(&orig) {
            assert_eq!(n1, n2);
            for (a, b) in v1.iter().zip(v2) {
                match (a, b) {
                    (Some(a), Some(b)) => assert!((a - b).abs() <= 0.0005 + 1e-12),
                    (None, None) => {}
                    other => panic!("{other:?}"),
                }
            }
        }
    }
}
