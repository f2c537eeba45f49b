//! Line-delimited JSON corpus manifest.
//!
//! One song per line:
//!
//! ```text
//! {"song_id":"song_0000","stems":{"mixture":"stems/song_0000.mixture.stem","vocal":"stems/song_0000.vocal.stem","accompaniment":"stems/song_0000.accompaniment.stem"},"labels":{"dim_0":3.12,"dim_1":1.7},"native_scale_max":5.0}
//! ```
//!
//! Relative stem paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_stem_file, FeatureStack};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stem {
    Mixture,
    Vocal,
    Accompaniment,
}

impl Stem {
    pub const ALL: [Stem; 3] = [Stem::Mixture, Stem::Vocal, Stem::Accompaniment];

    pub fn name(self) -> &'static str {
        match self {
            Stem::Mixture => "mixture",
            Stem::Vocal => "vocal",
            Stem::Accompaniment => "accompaniment",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StemPaths {
    pub mixture: PathBuf,
    pub vocal: PathBuf,
    pub accompaniment: PathBuf,
}

impl StemPaths {
    pub fn get(&self, stem: Stem) -> &Path {
        match stem {
            Stem::Mixture => &self.mixture,
            Stem::Vocal => &self.vocal,
            Stem::Accompaniment => &self.accompaniment,
        }
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.mixture, &mut self.vocal, &mut self.accompaniment] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SongRecord {
    pub song_id: String,
    pub stems: StemPaths,
    /// Native-scale score per aesthetic dimension, keyed by dimension name.
    pub labels: BTreeMap<String, f64>,
    pub native_scale_max: f64,
}

impl SongRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.song_id.is_empty() {
            return Err("empty song_id".into());
        }
        if !(self.native_scale_max > 0.0 && self.native_scale_max.is_finite()) {
            return Err(format!("native_scale_max {} must be positive", self.native_scale_max));
        }
        if self.labels.is_empty() {
            return Err("no labels".into());
        }
        for (dim, &v) in &self.labels {
            if !(0.0..=self.native_scale_max).contains(&v) {
                return Err(format!(
                    "label {dim}={v} outside [0, {}]",
                    self.native_scale_max
                ));
            }
        }
        Ok(())
    }

    pub fn dimensions(&self) -> Vec<String> {
        self.labels.keys().cloned().collect()
    }
}

/// The three feature stacks of one song, indexed by [`Stem::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct SongFeatures {
    pub song_id: String,
    pub stems: [FeatureStack; 3],
}

impl SongFeatures {
    pub fn frames(&self) -> usize {
        self.stems[0].frames()
    }

    pub fn dim(&self) -> usize {
        self.stems[0].dim()
    }

    pub fn layers(&self) -> usize {
        self.stems[0].layers()
    }

    pub fn stem(&self, stem: Stem) -> &FeatureStack {
        &self.stems[stem.index()]
    }

    /// Checks that frames and dims (and, unless `allow_layer_mismatch`, layers)
    /// agree across stems.
    pub fn check_consistent(&self, allow_layer_mismatch: bool) -> Result<()> {
        let first = &self.stems[0];
        for (stem, s) in Stem::ALL.iter().zip(&self.stems).skip(1) {
            if s.frames() != first.frames() || s.dim() != first.dim() {
                return Err(Error::InvalidInput(format!(
                    "song {}: {stem} is {}x{} but mixture is {}x{}",
                    self.song_id,
                    s.frames(),
                    s.dim(),
                    first.frames(),
                    first.dim()
                )));
            }
            if !allow_layer_mismatch && s.layers() != first.layers() {
                return Err(Error::InvalidInput(format!(
                    "song {}: {stem} has {} layers but mixture has {}",
                    self.song_id,
                    s.layers(),
                    first.layers()
                )));
            }
        }
        Ok(())
    }
}

pub fn load_song(record: &SongRecord) -> Result<SongFeatures> {
    let stems = [
        read_stem_file(record.stems.get(Stem::Mixture))?,
        read_stem_file(record.stems.get(Stem::Vocal))?,
        read_stem_file(record.stems.get(Stem::Accompaniment))?,
    ];
    let song = SongFeatures {
        song_id: record.song_id.clone(),
        stems,
    };
    song.check_consistent(false)?;
    Ok(song)
}

/// Reads and validates a manifest, resolving relative stem paths.
/// Dimension names shared by every record of a corpus.
pub fn corpus_dimensions(records: &[SongRecord]) -> Result<Vec<String>> {
    let first = records.first().ok_or(Error::Empty("manifest has no songs"))?;
    let dims = first.dimensions();
    for r in records {
        if r.dimensions() != dims {
            return Err(Error::InvalidInput(format!(
                "song {} has dimensions {:?}, expected {:?}",
                r.song_id,
                r.dimensions(),
                dims
            )));
        }
    }
    Ok(dims)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SongRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Manifest {
            path: path.into(),
            line: i + 1,
            reason,
        };
        let mut rec: SongRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        rec.validate().map_err(bad)?;
        rec.stems.resolve(base);
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Manifest {
            path: path.into(),
            line: 0,
            reason: "no records".into(),
        });
    }
    Ok(records)
}

/// Writes records verbatim, one JSON object per line.
pub fn write_manifest(path: &Path, records: &[SongRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialise");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
