//! Song-level scoring: per-segment predictions combined with inverse-width
//! confidence weights.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featio::{denormalize_label, load_song, segment_song, SongFeatures, SongRecord};
use crate::higia::HigiaTrace;
use crate::model::Model;
use crate::numkernel::Graph;

/// Weight given to a segment whose interval has collapsed to a point.
pub const MAX_WEIGHT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentPrediction {
    pub song_id: String,
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub weight: f64,
}

impl SegmentPrediction {
    pub fn new(song_id: impl Into<String>, index: usize, lower: f64, upper: f64, alpha: f64) -> Self {
        Self {
            song_id: song_id.into(),
            index,
            lower,
            upper,
            alpha,
            weight: confidence_weight(lower, upper),
        }
    }

    pub fn score(&self) -> f64 {
        (1.0 - self.alpha) * self.lower + self.alpha * self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `1 / (U - L)`, capped at [`MAX_WEIGHT`].
pub fn confidence_weight(lower: f64, upper: f64) -> f64 {
    let width = upper - lower;
    if width > 1.0 / MAX_WEIGHT {
        1.0 / width
    } else {
        MAX_WEIGHT
    }
}

/// Confidence-weighted mean of segment scores, summed in segment order.
pub fn song_score(preds: &[SegmentPrediction]) -> Result<f64> {
    let first = preds.first().ok_or(Error::Empty("no segment predictions"))?;
    if let Some(other) = preds.iter().find(|p| p.song_id != first.song_id) {
        return Err(Error::InvalidInput(format!(
            "segment predictions mix songs {} and {}",
            first.song_id, other.song_id
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for p in preds {
        num += p.weight * p.score();
        den += p.weight;
    }
    Ok(num / den)
}

/// Song-level result for one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SongScore {
    pub song_id: String,
    pub dimension: String,
    /// Native-scale score.
    pub score: f64,
    /// Mean segment interval width on the native scale.
    pub mean_interval_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentDebug {
    pub song_id: String,
    pub segment: usize,
    pub dimension: String,
    #[serde(flatten)]
    pub trace: HigiaTrace,
}

#[derive(Clone, Debug, Default)]
pub struct SongResult {
    pub scores: Vec<SongScore>,
    /// Per dimension, per segment.
    pub segments: Vec<Vec<SegmentPrediction>>,
    pub debug: Vec<SegmentDebug>,
}

/// Scores every dimension of a loaded song.
pub fn score_song(
    model: &Model,
    song: &SongFeatures,
    native_scale_max: f64,
    window: usize,
    hop: usize,
    collect_debug: bool,
) -> Result<SongResult> {
    let segments = segment_song(song, window, hop)?;
    let dims = model.dimensions();
    let mut per_dim: Vec<Vec<SegmentPrediction>> = vec![Vec::with_capacity(segments.len()); dims.len()];
    let mut debug = Vec::new();
    for seg in &segments {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &seg.bundle, None)?;
        for (j, d) in out.dims.iter().enumerate() {
            let (lower, upper, alpha) = d.interval();
            per_dim[j].push(SegmentPrediction::new(&song.song_id, seg.index, lower, upper, alpha));
            if collect_debug {
                if let Some(trace) = d.trace() {
                    debug.push(SegmentDebug {
                        song_id: song.song_id.clone(),
                        segment: seg.index,
                        dimension: dims[j].clone(),
                        trace,
                    });
                }
            }
        }
    }
    let scores = per_dim
        .iter()
        .zip(dims)
        .map(|(preds, name)| {
            let s = song_score(preds)?;
            let width = preds.iter().map(SegmentPrediction::width).sum::<f64>() / preds.len() as f64;
            if !s.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite score for {} / {name}",
                    song.song_id
                )));
            }
            Ok(SongScore {
                song_id: song.song_id.clone(),
                dimension: name.clone(),
                score: denormalize_label(s, native_scale_max),
                mean_interval_width: width * native_scale_max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SongResult {
        scores,
        segments: per_dim,
        debug,
    })
}

/// Loads the record's stems and scores them.
pub fn score_song_file(
    record: &SongRecord,
    model: &Model,
    window: usize,
    hop: usize,
    collect_debug: bool,
) -> Result<SongResult> {
    let song = load_song(record)?;
    score_song(model, &song, record.native_scale_max, window, hop, collect_debug)
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, row).map_err(|e| Error::Numeric(e.to_string()))?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
