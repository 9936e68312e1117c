//! Frame probabilities to onset/offset event lists.

use std::io::Write;

use crate::error::{Error, Result};

/// Detected events for one file, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EventList {
    pub file: String,
    pub events: Vec<(f64, f64)>,
}

impl EventList {
    pub fn new(file: impl Into<String>, events: Vec<(f64, f64)>) -> Self {
        EventList { file: file.into(), events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sorted, non-overlapping, positive-length events.
    pub fn is_well_formed(&self) -> bool {
        self.events.iter().all(|(on, off)| on < off)
            && self.events.windows(2).all(|w| w[0].1 <= w[1].0)
    }
}

/// 1 where `p > threshold`.
pub fn binarise(p: &[f64], threshold: f64) -> Vec<u8> {
    p.iter().map(|&v| u8::from(v > threshold)).collect()
}

/// Sliding median over an odd window; edges are padded by replicating the end values.
pub fn median_filter(b: &[u8], window: usize) -> Vec<u8> {
    assert!(window % 2 == 1, "median window must be odd");
    if b.is_empty() {
        return Vec::new();
    }
    let half = (window / 2) as isize;
    let last = b.len() as isize - 1;
    (0..b.len() as isize)
        .map(|n| {
            let ones = (n - half..=n + half).filter(|&i| b[i.clamp(0, last) as usize] != 0).count();
            u8::from(ones > window / 2)
        })
        .collect()
}

/// Onset/offset frame pairs from the first difference `y[n] - y[n - 1]`, with zeros
/// assumed before the first and after the last frame. Offsets are exclusive.
pub fn detect_edges(b: &[u8]) -> Result<Vec<(usize, usize)>> {
    let mut onsets = Vec::new();
    let mut offsets = Vec::new();
    let mut prev = 0i8;
    for (n, &v) in b.iter().chain(std::iter::once(&0)).enumerate() {
        let cur = i8::from(v != 0);
        match cur - prev {
            1 => onsets.push(n),
            -1 => offsets.push(n),
            _ => {}
        }
        prev = cur;
    }
    if onsets.len() != offsets.len() {
        return Err(Error::UnbalancedEdges(format!("{} onsets, {} offsets", onsets.len(), offsets.len())));
    }
    Ok(onsets.into_iter().zip(offsets).collect())
}

/// Converts frame pairs to seconds; `origin_frame` is where frame 0 sits in the file.
pub fn frames_to_seconds(file: &str, pairs: &[(usize, usize)], hop_s: f64, origin_frame: usize) -> EventList {
    EventList::new(
        file,
        pairs
            .iter()
            .map(|&(on, off)| ((origin_frame + on) as f64 * hop_s, (origin_frame + off) as f64 * hop_s))
            .collect(),
    )
}

/// Drops events shorter than 60 % of the shortest shot. Events exactly at the bound stay.
pub fn min_duration_prune(ev: &EventList, shot_durations: &[f64]) -> EventList {
    let shortest = shot_durations.iter().copied().fold(f64::INFINITY, f64::min);
    if !shortest.is_finite() {
        return ev.clone();
    }
    let bound = 0.6 * shortest;
    EventList::new(
        ev.file.clone(),
        // Nudge by a few ulps so durations equal to the bound up to rounding are kept.
        ev.events.iter().copied().filter(|(on, off)| off - on >= bound * (1.0 - 1e-12)).collect(),
    )
}

/// Threshold, median filter, edge detection, seconds, pruning.
pub fn postprocess(
    file: &str,
    frame_probs: &[f64],
    threshold: f64,
    median_window: usize,
    hop_s: f64,
    origin_frame: usize,
    shot_durations: &[f64],
) -> Result<EventList> {
    let b = median_filter(&binarise(frame_probs, threshold), median_window);
    let pairs = detect_edges(&b)?;
    Ok(min_duration_prune(&frames_to_seconds(file, &pairs, hop_s, origin_frame), shot_durations))
}

pub const EVENTS_HEADER: &str = "Audiofilename,Starttime,Endtime";

pub fn write_events_csv<W: Write>(mut out: W, lists: &[EventList]) -> std::io::Result<()> {
    writeln!(out, "{EVENTS_HEADER}")?;
    for list in lists {
        for (on, off) in &list.events {
            writeln!(out, "{},{:.4},{:.4}", list.file, on, off)?;
        }
    }
    Ok(())
}

/// Reads `Audiofilename,Starttime,Endtime` rows into one list per file, in first-seen order.
pub fn read_events_csv<R: std::io::Read>(input: R) -> Result<Vec<EventList>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.len() < 3 || header.iter().take(3).ne(EVENTS_HEADER.split(',')) {
        return Err(Error::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut lists: Vec<EventList> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::BadHeader(format!("bad time {s:?} at line {}", i + 2)))
        };
        let (on, off) = (parse(&rec[1])?, parse(&rec[2])?);
        if off <= on {
            return Err(Error::NonMonotoneTimes { line: i + 2, onset: on, offset: off });
        }
        match lists.iter_mut().find(|l| l.file == rec[0]) {
            Some(l) => l.events.push((on, off)),
            None => lists.push(EventList::new(&rec[0], vec![(on, off)])),
        }
    }
    for l in &mut lists {
        l.events.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(lists)
}
