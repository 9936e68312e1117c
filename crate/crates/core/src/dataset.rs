//! Annotations, fixed-width segments, class balancing and episode sampling.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pos,
    Neg,
    Unk,
}

impl Label {
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim() {
            "POS" => Some(Label::Pos),
            "NEG" => Some(Label::Neg),
            "UNK" => Some(Label::Unk),
            _ => None,
        }
    }
}

/// One annotated row: a time interval with a label per class column.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub audio_file: String,
    pub onset_s: f64,
    pub offset_s: f64,
    pub labels: BTreeMap<String, Label>,
}

impl Annotation {
    pub fn label(&self, class: &str) -> Option<Label> {
        self.labels.get(class).copied()
    }

    pub fn is_pos(&self) -> bool {
        self.labels.values().any(|l| *l == Label::Pos)
    }

    pub fn is_unk(&self) -> bool {
        self.labels.values().any(|l| *l == Label::Unk)
    }

    pub fn duration_s(&self) -> f64 {
        self.offset_s - self.onset_s
    }

    /// Maps times through a uniform time-axis scale (e.g. `1 / factor` for a stretch).
    pub fn scaled(&self, scale: f64) -> Annotation {
        Annotation { onset_s: self.onset_s * scale, offset_s: self.offset_s * scale, ..self.clone() }
    }

    /// Frame range `[floor(onset / hop), ceil(offset / hop))`.
    pub fn frame_range(&self, hop_s: f64) -> (usize, usize) {
        // Tolerate float noise when times sit exactly on frame boundaries.
        let start = (self.onset_s / hop_s + 1e-9).floor().max(0.0) as usize;
        let end = (self.offset_s / hop_s - 1e-9).ceil().max(0.0) as usize;
        (start, end.max(start + 1))
    }
}

const FIXED_COLUMNS: [&str; 3] = ["Audiofilename", "Starttime", "Endtime"];

pub fn parse_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>> {
    let file = std::fs::File::open(path)?;
    parse_annotations_from(file)
}

/// Parses `Audiofilename,Starttime,Endtime,<class>...` rows.
pub fn parse_annotations_from<R: std::io::Read>(input: R) -> Result<Vec<Annotation>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() < 4 || header.iter().take(3).ne(FIXED_COLUMNS) {
        return Err(Error::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let classes: Vec<String> = header.iter().skip(3).map(str::to_owned).collect();

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let time = |idx: usize| -> Result<f64> {
            record[idx]
                .parse::<f64>()
                .ok()
                .filter(|t| t.is_finite() && *t >= 0.0)
                .ok_or_else(|| Error::BadHeader(format!("bad time {:?} at line {line}", &record[idx])))
        };
        let (onset, offset) = (time(1)?, time(2)?);
        if offset <= onset {
            return Err(Error::NonMonotoneTimes { line, onset, offset });
        }
        let mut labels = BTreeMap::new();
        for (class, value) in classes.iter().zip(record.iter().skip(3)) {
            let label = Label::parse(value)
                .ok_or_else(|| Error::BadLabelValue { value: value.to_owned(), line })?;
            labels.insert(class.clone(), label);
        }
        out.push(Annotation { audio_file: record[0].to_owned(), onset_s: onset, offset_s: offset, labels });
    }
    Ok(out)
}

pub fn write_annotations<W: std::io::Write>(out: W, classes: &[String], rows: &[Annotation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(classes.iter().map(String::as_str));
    w.write_record(&header)?;
    for a in rows {
        let mut rec = vec![a.audio_file.clone(), format!("{:.4}", a.onset_s), format!("{:.4}", a.offset_s)];
        for c in classes {
            rec.push(
                match a.label(c).unwrap_or(Label::Neg) {
                    Label::Pos => "POS",
                    Label::Neg => "NEG",
                    Label::Unk => "UNK",
                }
                .to_owned(),
            );
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Where a segment was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SegmentSource {
    /// File identifier, including any augmentation variant tag.
    pub file: String,
    pub start_frame: usize,
}

/// A fixed-width slice of a feature matrix, stored as `rows x width` f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub features: Arc<[f32]>,
    pub rows: usize,
    pub width: usize,
    pub class_id: usize,
    pub source: SegmentSource,
}

impl Segment {
    /// Cuts columns `[start, start + width)`, filling columns past the end with silence.
    pub fn cut(m: &FeatureMatrix, start: usize, width: usize, file: &str) -> Segment {
        Segment::cut_padded(m, start, start + width, width, file)
    }

    /// Like [`Segment::cut`] but columns at or beyond `valid_end` are silence.
    pub fn cut_padded(m: &FeatureMatrix, start: usize, valid_end: usize, width: usize, file: &str) -> Segment {
        let fill = m.scaling.silence_value() as f32;
        let valid_end = valid_end.min(m.cols);
        let mut values = Vec::with_capacity(m.rows * width);
        for r in 0..m.rows {
            let row = m.row(r);
            values.extend((start..start + width).map(|c| if c < valid_end { row[c] as f32 } else { fill }));
        }
        Segment {
            features: values.into(),
            rows: m.rows,
            width,
            class_id: 0,
            source: SegmentSource { file: file.to_owned(), start_frame: start },
        }
    }

    pub fn with_class(mut self, class_id: usize) -> Segment {
        self.class_id = class_id;
        self
    }
}

/// Start frames tiling `[start, end)` with windows of `width`, hop `width / 2`.
///
/// The last window is right-aligned to `end` so every frame is covered. Intervals
/// shorter than `width` yield a single window starting at `start`.
pub fn tile_starts(start: usize, end: usize, width: usize) -> Vec<usize> {
    let hop = (width / 2).max(1);
    if end <= start + width {
        return vec![start];
    }
    let mut starts: Vec<usize> = (start..=end - width).step_by(hop).collect();
    if *starts.last().unwrap() + width < end {
        starts.push(end - width);
    }
    starts
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Positive and negative segments cut from one file for one class.
#[derive(Debug, Clone, Default)]
pub struct Segmented {
    pub positive: Vec<Segment>,
    pub negative: Vec<Segment>,
}

/// Cuts `m` into `width`-frame segments.
///
/// Each POS interval of `class` is tiled with hop `width / 2`; events shorter than
/// `width` are padded on the right with silence. Negative windows tile the whole file
/// with the same hop and are kept only when they touch no POS (of any class) or UNK
/// interval.
pub fn segment_events(
    m: &FeatureMatrix,
    anns: &[Annotation],
    width: usize,
    class: &str,
    file: &str,
) -> Segmented {
    assert!(width >= 4, "segment width must be at least 4 frames");
    let hop_s = m.frame_hop_s();
    let mut out = Segmented::default();

    let mut blocked = Vec::new();
    for a in anns {
        let range = a.frame_range(hop_s);
        if a.is_pos() || a.is_unk() {
            blocked.push(range);
        }
        if a.label(class) == Some(Label::Pos) {
            let (s, e) = (range.0.min(m.cols), range.1.min(m.cols));
            if s >= e {
                continue;
            }
            for start in tile_starts(s, e, width) {
                out.positive.push(Segment::cut_padded(m, start, e, width, file));
            }
        }
    }

    if m.cols >= width {
        let hop = (width / 2).max(1);
        for start in (0..=m.cols - width).step_by(hop) {
            let window = (start, start + width);
            if !blocked.iter().any(|b| overlaps(window, *b)) {
                out.negative.push(Segment::cut(m, start, width, file));
            }
        }
    }
    out
}

/// Segments grouped by class; class ids index into `names`.
#[derive(Debug, Clone, Default)]
pub struct Pool {
    pub names: Vec<String>,
    pub segments: Vec<Vec<Segment>>,
}

impl Pool {
    pub fn new() -> Pool {
        Pool::default()
    }

    pub fn class_id(&mut self, name: &str) -> usize {
        match self.names.iter().position(|n| n == name) {
            Some(i) => i,
            None => {
                self.names.push(name.to_owned());
                self.segments.push(Vec::new());
                self.names.len() - 1
            }
        }
    }

    pub fn extend(&mut self, name: &str, segs: impl IntoIterator<Item = Segment>) {
        let id = self.class_id(name);
        self.segments[id].extend(segs.into_iter().map(|s| s.with_class(id)));
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.names.iter().cloned().zip(self.segments.iter().map(Vec::len)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.iter().all(Vec::is_empty)
    }
}

/// Random over-sampling: duplicates minority-class segments (with replacement) until
/// every class matches the majority count. Originals keep their positions.
pub fn oversample<R: Rng>(pool: &Pool, rng: &mut R) -> Result<Pool> {
    if let Some(i) = pool.segments.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(pool.names[i].clone()));
    }
    let target = pool.segments.iter().map(Vec::len).max().unwrap_or(0);
    let segments = pool
        .segments
        .iter()
        .map(|segs| {
            let mut out = segs.clone();
            for _ in segs.len()..target {
                out.push(segs[rng.gen_range(0..segs.len())].clone());
            }
            out
        })
        .collect();
    Ok(Pool { names: pool.names.clone(), segments })
}

/// One few-shot task: `support[i]` and `query[i]` belong to class `classes[i]`.
#[derive(Debug, Clone)]
pub struct Episode {
    pub classes: Vec<usize>,
    pub support: Vec<Vec<Segment>>,
    pub query: Vec<Vec<Segment>>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }
}

/// Draws `n_way` classes without replacement, then `n_shot + n_query` segments with
/// distinct sources per class; the first `n_shot` form the support set.
pub fn sample_episode<R: Rng>(
    pool: &Pool,
    n_way: usize,
    n_shot: usize,
    n_query: usize,
    rng: &mut R,
) -> Result<Episode> {
    let need = n_shot + n_query;
    if n_way == 0 || need == 0 {
        return Err(Error::InsufficientData("episode shape must be non-empty".into()));
    }
    let eligible: Vec<usize> = (0..pool.num_classes())
        .filter(|&c| pool.segments[c].len() >= need)
        .collect();
    if eligible.len() < n_way {
        return Err(Error::InsufficientData(format!(
            "{} classes have at least {need} segments, {n_way} needed",
            eligible.len()
        )));
    }

    let mut classes = Vec::with_capacity(n_way);
    let mut support = Vec::with_capacity(n_way);
    let mut query = Vec::with_capacity(n_way);
    for i in index::sample(rng, eligible.len(), n_way) {
        let class = eligible[i];
        let segs = &pool.segments[class];
        let mut order: Vec<usize> = (0..segs.len()).collect();
        order.shuffle(rng);
        let mut seen = HashSet::new();
        let picked: Vec<Segment> = order
            .into_iter()
            .filter(|&j| seen.insert(&segs[j].source))
            .take(need)
            .map(|j| segs[j].clone())
            .collect();
        if picked.len() < need {
            return Err(Error::InsufficientData(format!(
                "class {} has only {} distinct segments",
                pool.names[class],
                picked.len()
            )));
        }
        let mut picked = picked;
        let q = picked.split_off(n_shot);
        classes.push(class);
        support.push(picked);
        query.push(q);
    }
    Ok(Episode { classes, support, query })
}
