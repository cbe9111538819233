//! CSV output for evaluation reports and experiment tables.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{EvalReport, GroupScore};

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Parse(format!("{other:?}")),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}

/// Writes `rows` with a header row taken from the field names.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct WordRow<'a> {
    word_id: &'a str,
    mcd_source_target: f64,
    mcd_converted_target: f64,
    success_pct: f64,
}

#[derive(Debug, Serialize)]
pub struct GroupRow<'a> {
    pub group: &'a str,
    pub mcd_source_target: f64,
    pub mcd_converted_target: f64,
    pub success_pct: f64,
    pub n_frames: usize,
}

impl<'a> From<&'a GroupScore> for GroupRow<'a> {
    fn from(g: &'a GroupScore) -> Self {
        GroupRow {
            group: &g.name,
            mcd_source_target: g.mcd_source_target,
            mcd_converted_target: g.mcd_converted_target,
            success_pct: g.success_pct,
            n_frames: g.n_frames,
        }
    }
}

/// Writes `<stem>_words.csv` (one row per evaluation word),
/// `<stem>_summary.csv` (aggregate plus voiced/unvoiced) and, when labels
/// were available, `<stem>_phonemes.csv`. Returns the paths written.
pub fn write_eval_report(report: &EvalReport, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let words: Vec<WordRow> = report
        .words
        .iter()
        .map(|w| WordRow {
            word_id: &w.word_id,
            mcd_source_target: w.success.mcd_source_target,
            mcd_converted_target: w.success.mcd_converted_target,
            success_pct: w.success.success_pct,
        })
        .collect();
    let mut out = vec![dir.join(format!("{stem}_words.csv"))];
    write_csv(&out[0], &words)?;

    let agg = &report.aggregate;
    let mut summary = vec![GroupRow {
        group: "aggregate",
        mcd_source_target: agg.mcd_source_target,
        mcd_converted_target: agg.mcd_converted_target,
        success_pct: agg.success_pct,
        n_frames: report.n_frames,
    }];
    summary.extend(report.per_class.iter().map(GroupRow::from));
    out.push(dir.join(format!("{stem}_summary.csv")));
    write_csv(&out[1], &summary)?;

    if !report.per_phoneme.is_empty() {
        let rows: Vec<GroupRow> = report.per_phoneme.iter().map(GroupRow::from).collect();
        out.push(dir.join(format!("{stem}_phonemes.csv")));
        write_csv(&out[2], &rows)?;
    }
    Ok(out)
}
