//! Seeded synthetic corpora whose labels are a fixed function of the features.
//!
//! Each song draws a base mean vector per stem (`vocal`, `accompaniment`
//! from N(0, 1); `mixture` as their average plus N(0, 0.3²) jitter) and one
//! latent factor `q_j ~ N(0, 1)` per label dimension. Every stem mean is then
//! shifted by `4 · Σ_j q_j · u(j, s, ·)`, where `u(j, ·, ·)` is a fixed unit
//! direction over (stem, channel). Every frame adds N(0, 0.5²) noise shared
//! across layers, and every layer adds N(0, 0.2²) noise of its own. Features
//! are stored as `f32`.
//!
//! Labels come from [`synthetic_label`] applied to the stored `f32` features:
//! with `m_s` the mean of stem `s` over all layers and frames,
//!
//! ```text
//! u(j, s, c) ∝ cos(0.9 + 1.7 j + 2.3 s + 0.61 c),  Σ_s Σ_c u² = 1
//! z_j        = 0.4 · Σ_s Σ_c u(j, s, c) · m_s[c]
//! label      = native_scale_max · sigmoid(z_j)
//! ```
//!
//! The latent shift makes the label directions the dominant axes of
//! between-song variation, as salient attributes would be in real embeddings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::format::{write_stem_file, FeatureStack};
use super::manifest::{write_manifest, SongFeatures, SongRecord, Stem, StemPaths};
use crate::error::{Error, Result};
use crate::numkernel::sigmoid;

const FRAME_NOISE: f64 = 0.5;
const LAYER_NOISE: f64 = 0.2;
const MIX_JITTER: f64 = 0.3;
const MIX_FRAME_NOISE: f64 = 0.2;
const BASE_STD: f64 = 0.5;
const LATENT_SCALE: f64 = 4.0;
const LABEL_GAIN: f64 = 0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_songs: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub dim: usize,
    pub layers: usize,
    pub n_dims: usize,
    pub native_scale_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_songs: 200,
            frames_min: 24,
            frames_max: 56,
            dim: 16,
            layers: 2,
            n_dims: 5,
            native_scale_max: 5.0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_songs == 0 {
            return Err(Error::Config("n_songs must be at least 1".into()));
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(Error::Config(format!(
                "bad frame range {}..={}",
                self.frames_min, self.frames_max
            )));
        }
        if self.dim == 0 || self.layers == 0 || self.n_dims == 0 {
            return Err(Error::Config("dim, layers and n_dims must be positive".into()));
        }
        if !(self.native_scale_max > 0.0) {
            return Err(Error::Config("native_scale_max must be positive".into()));
        }
        Ok(())
    }
}

pub fn dimension_name(j: usize) -> String {
    format!("dim_{j}")
}

/// Unit-norm label direction for dimension `j`, stem `s`, channel `c`.
pub fn label_weight(j: usize, s: usize, c: usize, dim: usize) -> f64 {
    let raw = |s: usize, c: usize| (0.9 + 1.7 * j as f64 + 2.3 * s as f64 + 0.61 * c as f64).cos();
    let norm = (0..3)
        .flat_map(|s| (0..dim).map(move |c| (s, c)))
        .map(|(s, c)| raw(s, c).powi(2))
        .sum::<f64>()
        .sqrt();
    raw(s, c) / norm
}

/// Normalized label in `(0, 1)` for dimension `j` computed from stored features.
pub fn synthetic_label(song: &SongFeatures, j: usize) -> f64 {
    let dim = song.dim();
    let mut z = 0.0;
    for stem in Stem::ALL {
        let stack = song.stem(stem);
        let n = (stack.layers() * stack.frames()) as f64;
        let mut means = vec![0.0f64; dim];
        for row in stack.data().chunks_exact(dim) {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += f64::from(v);
            }
        }
        for (c, m) in means.iter().enumerate() {
            z += label_weight(j, stem.index(), c, dim) * (m / n);
        }
    }
    sigmoid(LABEL_GAIN * z)
}

#[derive(Clone, Debug)]
pub struct SyntheticSong {
    pub features: SongFeatures,
    pub labels: BTreeMap<String, f64>,
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<SyntheticSong>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let d = cfg.dim;

    let mut songs = Vec::with_capacity(cfg.n_songs);
    for i in 0..cfg.n_songs {
        let frames = rng.random_range(cfg.frames_min..=cfg.frames_max);
        let mu_voc: Vec<f64> = (0..d).map(|_| BASE_STD * normal(&mut rng)).collect();
        let mu_acc: Vec<f64> = (0..d).map(|_| BASE_STD * normal(&mut rng)).collect();
        let mu_mix: Vec<f64> = (0..d)
            .map(|c| 0.5 * (mu_voc[c] + mu_acc[c]) + MIX_JITTER * normal(&mut rng))
            .collect();
        let latent: Vec<f64> = (0..cfg.n_dims).map(|_| normal(&mut rng)).collect();
        let shift = |s: usize, c: usize| {
            LATENT_SCALE
                * latent
                    .iter()
                    .enumerate()
                    .map(|(j, q)| q * label_weight(j, s, c, d))
                    .sum::<f64>()
        };
        let mu_mix: Vec<f64> = (0..d).map(|c| mu_mix[c] + shift(0, c)).collect();
        let mu_voc: Vec<f64> = (0..d).map(|c| mu_voc[c] + shift(1, c)).collect();
        let mu_acc: Vec<f64> = (0..d).map(|c| mu_acc[c] + shift(2, c)).collect();

        // the mixture follows its stems frame by frame
        let frame_noise = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..frames * d).map(|_| FRAME_NOISE * normal(rng)).collect()
        };
        let noise_voc = frame_noise(&mut rng);
        let noise_acc = frame_noise(&mut rng);
        let noise_mix: Vec<f64> = noise_voc
            .iter()
            .zip(&noise_acc)
            .map(|(v, a)| 0.5 * (v + a) + MIX_FRAME_NOISE * normal(&mut rng))
            .collect();

        let mut stacks = Vec::with_capacity(3);
        for (mu, noise) in [(&mu_mix, &noise_mix), (&mu_voc, &noise_voc), (&mu_acc, &noise_acc)] {
            let base: Vec<f64> = noise.iter().enumerate().map(|(k, e)| mu[k % d] + e).collect();
            let mut data = Vec::with_capacity(cfg.layers * frames * d);
            for _ in 0..cfg.layers {
                data.extend(base.iter().map(|&b| (b + LAYER_NOISE * normal(&mut rng)) as f32));
            }
            stacks.push(FeatureStack::new(cfg.layers, frames, d, data)?);
        }
        let [mix, voc, acc]: [FeatureStack; 3] = stacks.try_into().expect("three stems");
        let features = SongFeatures {
            song_id: format!("song_{i:04}"),
            stems: [mix, voc, acc],
        };
        let labels = (0..cfg.n_dims)
            .map(|j| {
                (
                    dimension_name(j),
                    synthetic_label(&features, j) * cfg.native_scale_max,
                )
            })
            .collect();
        songs.push(SyntheticSong { features, labels });
    }
    Ok(songs)
}

pub fn stem_file_name(song_id: &str, stem: Stem) -> PathBuf {
    PathBuf::from("stems").join(format!("{song_id}.{}.stem", stem.name()))
}

/// Writes `manifest.jsonl` plus `stems/*.stem` under `dir`; returns the manifest path.
pub fn write_synthetic_corpus(dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    let songs = generate_synthetic_corpus(cfg)?;
    let stem_dir = dir.join("stems");
    fs::create_dir_all(&stem_dir).map_err(|e| Error::io(&stem_dir, e))?;
    let mut records = Vec::with_capacity(songs.len());
    for song in &songs {
        let id = &song.features.song_id;
        for stem in Stem::ALL {
            write_stem_file(&dir.join(stem_file_name(id, stem)), song.features.stem(stem))?;
        }
        records.push(SongRecord {
            song_id: id.clone(),
            stems: StemPaths {
                mixture: stem_file_name(id, Stem::Mixture),
                vocal: stem_file_name(id, Stem::Vocal),
                accompaniment: stem_file_name(id, Stem::Accompaniment),
            },
            labels: song.labels.clone(),
            native_scale_max: cfg.native_scale_max,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}
