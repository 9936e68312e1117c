//! `protoshot eval`: score predicted events against reference annotations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use protoshot_core::dataset::{parse_annotations, Annotation};
use protoshot_core::evalmetrics::{exclude_shots, match_events, score, FileCounts};
use protoshot_core::events::read_events_csv;
use protoshot_core::{EventList, ScoreReport};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::synth::SHOTS;

#[derive(Debug, Clone, Serialize)]
pub struct SubsetScore {
    pub subset: String,
    pub report: ScoreReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub min_iou: f64,
    pub shots_excluded: bool,
    pub subsets: Vec<SubsetScore>,
    pub overall: ScoreReport,
}

pub struct EvalOptions {
    pub min_iou: f64,
    /// Score the five exemplar events and predictions that end before them too.
    pub keep_shots: bool,
}

type Intervals = Vec<(f64, f64)>;

/// Per-file reference events (any POS class) and UNK regions.
fn references(anns: &[Annotation]) -> BTreeMap<String, (Intervals, Intervals)> {
    let mut out: BTreeMap<String, (Vec<_>, Vec<_>)> = BTreeMap::new();
    for a in anns {
        let entry = out.entry(a.audio_file.clone()).or_default();
        if a.is_pos() {
            entry.0.push((a.onset_s, a.offset_s));
        } else if a.is_unk() {
            entry.1.push((a.onset_s, a.offset_s));
        }
    }
    for (pos, _) in out.values_mut() {
        pos.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn subset_name(reference: &Path) -> String {
    reference
        .parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "all".into())
}

/// Scores `pred` against each reference CSV; references in the same directory form one
/// subset named after it.
pub fn cmd_eval(pred: &Path, refs: &[PathBuf], opts: &EvalOptions) -> CliResult<EvalReport> {
    let file = std::fs::File::open(pred).map_err(CliError::io(pred))?;
    let predictions: BTreeMap<String, EventList> = read_events_csv(std::io::BufReader::new(file))?
        .into_iter()
        .map(|l| (l.file.clone(), l))
        .collect();

    let mut by_subset: BTreeMap<String, Vec<FileCounts>> = BTreeMap::new();
    for r in refs {
        for (name, (pos, unk)) in references(&parse_annotations(r)?) {
            let reference = EventList::new(name.clone(), pos);
            let predicted = predictions.get(&name).cloned().unwrap_or_else(|| EventList::new(name.clone(), vec![]));
            let (predicted, reference) = if opts.keep_shots {
                (predicted, reference)
            } else {
                exclude_shots(&predicted, &reference, SHOTS)
            };
            let counts = match_events(&predicted, &reference, &unk, opts.min_iou);
            by_subset.entry(subset_name(r)).or_default().push(FileCounts { file: name, counts });
        }
    }
    let all: Vec<FileCounts> = by_subset.values().flatten().cloned().collect();
    Ok(EvalReport {
        min_iou: opts.min_iou,
        shots_excluded: !opts.keep_shots,
        subsets: by_subset
            .into_iter()
            .map(|(subset, files)| SubsetScore { subset, report: score(&files) })
            .collect(),
        overall: score(&all),
    })
}

/// The results table, one row per subset plus the overall row.
pub fn format_table(report: &EvalReport) -> String {
    let mut out = format!("{:<20} {:>11} {:>7} {:>7}\n", "Model-free Subset", "F-Meas.(%)", "Pre.", "Rec.");
    let mut row = |name: &str, r: &ScoreReport| {
        out.push_str(&format!("{:<20} {:>11.3} {:>7.3} {:>7.3}\n", name, r.f_percent(), r.precision, r.recall));
    };
    for s in &report.subsets {
        row(&s.subset, &s.report);
    }
    row("Overall", &report.overall);
    out
}
