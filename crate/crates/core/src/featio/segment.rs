use super::manifest::{SongFeatures, Stem};
use crate::error::{Error, Result};
use crate::numkernel::Matrix;

/// Per-stem layer stacks (each layer `window x d`) for one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct StemBundle {
    pub stems: [Vec<Matrix>; 3],
}

impl StemBundle {
    pub fn stem(&self, stem: Stem) -> &[Matrix] {
        &self.stems[stem.index()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub song_id: String,
    pub index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    /// Zero frames appended after `end_frame` to reach the window length.
    pub padded_frames: usize,
    pub bundle: StemBundle,
}

/// Frame ranges `[start, end)` covering `[0, frames)`.
///
/// Full windows are laid at multiples of `hop`. Frames left uncovered at the
/// end are handled by looking at the would-be next window `[last + hop, frames)`:
/// if it spans at least half a window, a final window `[frames - window, frames)`
/// is appended; otherwise the last window is shifted to end at `frames`, unless
/// that would open a gap behind it, in which case the final window is appended
/// as well. A song shorter than one window yields the single range `[0, frames)`.
pub fn segment_ranges(frames: usize, window: usize, hop: usize) -> Result<Vec<(usize, usize)>> {
    if frames == 0 {
        return Err(Error::Empty("song has no frames"));
    }
    if window < 2 || hop == 0 || hop > window {
        return Err(Error::Config(format!(
            "need window >= 2 and 1 <= hop <= window, got window={window} hop={hop}"
        )));
    }
    if frames <= window {
        return Ok(vec![(0, frames)]);
    }
    let mut ranges: Vec<(usize, usize)> = (0..)
        .map(|k| k * hop)
        .take_while(|s| s + window <= frames)
        .map(|s| (s, s + window))
        .collect();
    let last_start = ranges.last().expect("frames > window").0;
    if last_start + window < frames {
        let uncovered = frames - (last_start + window);
        let tail = frames - (last_start + hop);
        let clamped = (frames - window, frames);
        // shifting is only possible when the previous window still meets the shifted one
        if 2 * tail >= window || ranges.len() == 1 || uncovered > window - hop {
            ranges.push(clamped);
        } else {
            *ranges.last_mut().expect("nonempty") = clamped;
        }
    }
    Ok(ranges)
}

/// Slices a song into fixed-length segments; short songs are zero-padded.
pub fn segment_song(song: &SongFeatures, window: usize, hop: usize) -> Result<Vec<Segment>> {
    let ranges = segment_ranges(song.frames(), window, hop)?;
    let layers: Vec<Vec<Matrix>> = song.stems.iter().map(|s| s.to_matrices()).collect();
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| {
            let slice = |stem: usize| -> Vec<Matrix> {
                layers[stem]
                    .iter()
                    .map(|m| m.slice_rows_padded(start, window))
                    .collect()
            };
            Segment {
                song_id: song.song_id.clone(),
                index,
                start_frame: start,
                end_frame: end,
                padded_frames: window - (end - start),
                bundle: StemBundle {
                    stems: [slice(0), slice(1), slice(2)],
                },
            }
        })
        .collect())
}

/// Linear rescale of a native score to `[0, 1]`.
pub fn normalize_label(score: f64, native_scale_max: f64) -> Result<f64> {
    if !(native_scale_max > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scale maximum {native_scale_max} must be positive"
        )));
    }
    if !(0.0..=native_scale_max).contains(&score) {
        return Err(Error::InvalidInput(format!(
            "score {score} outside [0, {native_scale_max}]"
        )));
    }
    Ok(score / native_scale_max)
}

pub fn denormalize_label(normalized: f64, native_scale_max: f64) -> f64 {
    normalized * native_scale_max
}
