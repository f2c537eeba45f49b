//! Training loop: segment batches, multi-task loss, Adam, and checkpoint
//! selection on validation SRCC.

mod checkpoint;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{score_song, SongScore};
use crate::error::{Error, Result};
use crate::featio::{load_song, normalize_label, segment_song, SongFeatures, SongRecord, StemBundle};
use crate::metrics::EvalReport;
use crate::model::Model;
use crate::numkernel::{AdamConfig, AdamState, Graph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: crate::model::ModelConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Weight of the squared-error term against the classification terms.
    pub regression_weight: f64,
    /// Segment length in frames (10 s at 25 frames/s).
    pub window: usize,
    /// Segment hop in frames (5 s at 25 frames/s).
    pub hop: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: crate::model::ModelConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 50,
            patience: 10,
            seed: 0,
            split: [0.8, 0.1, 0.1],
            regression_weight: 1.0,
            window: 250,
            hop: 125,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.split.iter().any(|&r| !(r > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {:?} must be positive and sum to 1",
                self.split
            )));
        }
        if !(self.adam.learning_rate >= 0.0) || !(self.regression_weight >= 0.0) {
            return Err(Error::Config("learning_rate and regression_weight must be >= 0".into()));
        }
        if self.window < 2 || self.hop == 0 || self.hop > self.window {
            return Err(Error::Config(format!(
                "need window >= 2 and 1 <= hop <= window, got {} / {}",
                self.window, self.hop
            )));
        }
        Ok(())
    }

    /// Parses a TOML document; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Song-level partition into train, validation and test sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles songs with `seed` and cuts them by `ratios`; validation and test
/// get at least one song each.
pub fn split_corpus<T: Clone>(records: &[T], ratios: [f64; 3], seed: u64) -> Result<Split<T>> {
    let n = records.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 songs to split, got {n}")));
    }
    let n_val = ((n as f64 * ratios[1]).round() as usize).max(1);
    let n_test = ((n as f64 * ratios[2]).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::InvalidInput(format!(
            "{n} songs leave no training songs at ratios {ratios:?}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| records[i].clone()).collect::<Vec<_>>()
    };
    let n_train = n - n_val - n_test;
    Ok(Split {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

/// A song with its features loaded into memory.
#[derive(Clone, Debug)]
pub struct LoadedSong {
    pub record: SongRecord,
    pub features: SongFeatures,
}

pub fn load_songs(records: &[SongRecord]) -> Result<Vec<LoadedSong>> {
    load_songs_with(records, &mut load_song)
}

/// Song loader used by [`train_with_loader`].
pub type Loader<'a> = dyn FnMut(&SongRecord) -> Result<SongFeatures> + 'a;

fn load_songs_with(records: &[SongRecord], loader: &mut Loader<'_>) -> Result<Vec<LoadedSong>> {
    records
        .iter()
        .map(|r| {
            Ok(LoadedSong {
                record: r.clone(),
                features: loader(r)?,
            })
        })
        .collect()
}

/// One training example: a segment and its song's normalized labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub song_id: String,
    pub bundle: StemBundle,
    pub targets: Vec<f64>,
}

fn normalized_targets(record: &SongRecord, dims: &[String]) -> Result<Vec<f64>> {
    dims.iter()
        .map(|d| {
            let v = record.labels.get(d).ok_or_else(|| {
                Error::InvalidInput(format!("song {} has no label for {d}", record.song_id))
            })?;
            normalize_label(*v, record.native_scale_max)
        })
        .collect()
}

pub fn build_samples(songs: &[LoadedSong], dims: &[String], window: usize, hop: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for song in songs {
        let targets = normalized_targets(&song.record, dims)?;
        for seg in segment_song(&song.features, window, hop)? {
            out.push(Sample {
                song_id: seg.song_id,
                bundle: seg.bundle,
                targets: targets.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean per-sample losses.
    pub loss: f64,
    pub classification: f64,
    pub regression: f64,
    pub steps: usize,
}

/// Runs one pass over `order`, updating parameters after every batch.
pub fn train_epoch(
    model: &mut Model,
    samples: &[Sample],
    order: &[usize],
    optimizer: &mut AdamState,
    config: &TrainConfig,
    mut dropout: Option<&mut ChaCha8Rng>,
    epoch: usize,
) -> Result<EpochStats> {
    if order.is_empty() {
        return Err(Error::Empty("no training batches"));
    }
    let mut stats = EpochStats::default();
    for (b, batch) in order.chunks(config.batch_size).enumerate() {
        model.store.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let sample = &samples[i];
            let mut g = Graph::new();
            let out = model.net.forward(
                &mut g,
                &model.store,
                &model.config,
                &sample.bundle,
                dropout.as_deref_mut(),
            )?;
            let loss = out.loss(&mut g, &model.config.bins, &sample.targets, config.regression_weight)?;
            let total = g.value(loss.total).item();
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {total} in epoch {epoch} batch {b} (segment of {})",
                    sample.song_id
                )));
            }
            stats.loss += total;
            stats.classification += loss.classification.map_or(0.0, |c| g.value(c).item());
            stats.regression += g.value(loss.regression).item();
            let scaled = g.scale(loss.total, scale);
            g.backward(scaled, &mut model.store)?;
        }
        if model.store.iter().any(|p| !p.gradient.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in epoch {epoch} batch {b}")));
        }
        optimizer.step(&mut model.store);
        stats.steps += 1;
    }
    model.store.zero_grad();
    let n = order.len() as f64;
    stats.loss /= n;
    stats.classification /= n;
    stats.regression /= n;
    Ok(stats)
}

/// Song scores plus the metrics computed from them.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub scores: Vec<SongScore>,
}

/// Scores every song and compares native-scale predictions with labels.
/// With `lenient`, undefined correlations are reported as NaN instead of
/// failing.
pub fn evaluate(model: &Model, songs: &[LoadedSong], window: usize, hop: usize, lenient: bool) -> Result<Evaluation> {
    evaluate_with(model.dimensions(), songs, lenient, |song| {
        let result = score_song(model, &song.features, song.record.native_scale_max, window, hop, false)?;
        Ok(result.scores)
    })
}

/// Joins per-song predictions from `predict` (one [`SongScore`] per
/// dimension, in `dims` order) with the labels and computes the report.
pub fn evaluate_with<F>(dims: &[String], songs: &[LoadedSong], lenient: bool, mut predict: F) -> Result<Evaluation>
where
    F: FnMut(&LoadedSong) -> Result<Vec<SongScore>>,
{
    if songs.is_empty() {
        return Err(Error::Empty("no songs to evaluate"));
    }
    let mut columns = vec![(Vec::new(), Vec::new()); dims.len()];
    let mut scores = Vec::new();
    for song in songs {
        let predicted = predict(song)?;
        if predicted.len() != dims.len() {
            return Err(Error::LengthMismatch(predicted.len(), dims.len()));
        }
        for (j, s) in predicted.iter().enumerate() {
            if s.dimension != dims[j] {
                return Err(Error::InvalidInput(format!(
                    "prediction for {} where {} was expected",
                    s.dimension, dims[j]
                )));
            }
            let truth = song.record.labels.get(&s.dimension).ok_or_else(|| {
                Error::InvalidInput(format!("song {} has no label for {}", s.song_id, s.dimension))
            })?;
            columns[j].0.push(s.score);
            columns[j].1.push(*truth);
        }
        scores.extend(predicted);
    }
    Ok(Evaluation {
        report: EvalReport::from_columns(dims, &columns, lenient)?,
        scores,
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    #[serde(flatten)]
    pub train: EpochStats,
    pub val_avg_srcc: f64,
    pub val: EvalReport,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub split: Split<String>,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub test: Evaluation,
}

/// Trains on a song-level split of `records` and evaluates the selected
/// checkpoint on the held-out test songs. Each epoch's log line is written
/// to `log` when given.
pub fn train(config: &TrainConfig, records: &[SongRecord], log: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    train_with_loader(config, records, log, &mut load_song)
}

/// [`train`] with a custom song loader.
pub fn train_with_loader(
    config: &TrainConfig,
    records: &[SongRecord],
    mut log: Option<&mut dyn Write>,
    loader: &mut Loader<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let split = split_corpus(records, config.split, config.seed)?;
    if split.test.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{} songs give a test split of {}; correlation metrics need at least 2 test songs",
            records.len(),
            split.test.len()
        )));
    }
    let train_songs = load_songs_with(&split.train, loader)?;
    let val_songs = load_songs_with(&split.val, loader)?;

    let mut model = Model::new(config.model.clone())?;
    let dims = model.config.dimensions.clone();
    let samples = build_samples(&train_songs, &dims, config.window, config.hop)?;
    let mut optimizer = AdamState::new(config.adam, &model.store);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let use_dropout = config.model.encoder.dropout > 0.0;

    let mut best: Option<(f64, usize, Vec<crate::numkernel::Matrix>)> = None;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let stats = train_epoch(
            &mut model,
            &samples,
            &order,
            &mut optimizer,
            config,
            use_dropout.then_some(&mut dropout_rng),
            epoch,
        )?;
        let val = evaluate(&model, &val_songs, config.window, config.hop, true)?;
        let avg = val.report.average().srcc;
        let improved = !avg.is_nan() && best.as_ref().is_none_or(|(b, _, _)| avg > *b);
        if improved || best.is_none() {
            best = Some((if avg.is_nan() { f64::NEG_INFINITY } else { avg }, epoch, model.store.snapshot()));
        }
        let entry = EpochLog {
            epoch,
            train: stats,
            val_avg_srcc: avg,
            val: val.report,
            improved,
        };
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &entry).map_err(|e| Error::Numeric(e.to_string()))?;
            writeln!(w).map_err(|e| Error::io("<training log>", e))?;
        }
        history.push(entry);
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    let best_epoch = match best {
        Some((_, epoch, snapshot)) => {
            model.store.restore(&snapshot);
            epoch
        }
        None => 0,
    };

    // test songs are loaded only after training has finished
    let test_songs = load_songs_with(&split.test, loader)?;
    let test = evaluate(&model, &test_songs, config.window, config.hop, false)?;
    let ids = |v: &[SongRecord]| v.iter().map(|r| r.song_id.clone()).collect();
    Ok(TrainOutcome {
        model,
        split: Split {
            train: ids(&split.train),
            val: ids(&split.val),
            test: ids(&split.test),
        },
        best_epoch,
        history,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::featio::{generate_synthetic_corpus, SynthConfig};
    use crate::model::ModelConfig;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                encoder: EncoderConfig {
                    dim: 4,
                    heads: 2,
                    blocks: 1,
                    ..EncoderConfig::default()
                },
                head_hidden: 8,
                dimensions: vec!["dim_0".into(), "dim_1".into()],
                ..ModelConfig::default()
            },
            batch_size: 4,
            window: 8,
            hop: 4,
            ..TrainConfig::default()
        }
    }

    fn tiny_songs(n: usize, cfg: &TrainConfig) -> Vec<LoadedSong> {
        let synth = SynthConfig {
            n_songs: n,
            dim: cfg.model.encoder.dim,
            frames_min: 10,
            frames_max: 14,
            n_dims: 2,
            seed: 3,
            ..SynthConfig::default()
        };
        generate_synthetic_corpus(&synth)
            .unwrap()
            .into_iter()
            .map(|s| LoadedSong {
                record: SongRecord {
                    song_id: s.features.song_id.clone(),
                    stems: crate::featio::StemPaths {
                        mixture: "m".into(),
                        vocal: "v".into(),
                        accompaniment: "a".into(),
                    },
                    labels: s.labels,
                    native_scale_max: 5.0,
                },
                features: s.features,
            })
            .collect()
    }

    #[test]
    fn ten_songs_split_eight_one_one() {
        let ids: Vec<u32> = (0..10).collect();
        let s = split_corpus(&ids, [0.8, 0.1, 0.1], 5).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_corpus(&ids, [0.8, 0.1, 0.1], 5).unwrap());
        let mut all: Vec<u32> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert!(split_corpus(&ids[..2], [0.8, 0.1, 0.1], 5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            split: [0.8, 0.1, 0.2],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut cfg = tiny_config();
        cfg.adam.learning_rate = 0.0;
        let songs = tiny_songs(3, &cfg);
        let mut model = Model::new(cfg.model.clone()).unwrap();
        let samples = build_samples(&songs, &model.config.dimensions.clone(), cfg.window, cfg.hop).unwrap();
        let before = model.store.snapshot();
        let mut opt = AdamState::new(cfg.adam, &model.store);
        let order: Vec<usize> = (0..samples.len()).collect();
        let a = train_epoch(&mut model, &samples, &order, &mut opt, &cfg, None, 1).unwrap();
        let b = train_epoch(&mut model, &samples, &order, &mut opt, &cfg, None, 2).unwrap();
        assert_eq!(model.store.snapshot(), before);
        assert_eq!(a, b);
    }

    #[test]
    fn single_sample_overfits() {
        let mut cfg = tiny_config();
        cfg.adam.learning_rate = 3e-3;
        let songs = tiny_songs(1, &cfg);
        let mut model = Model::new(cfg.model.clone()).unwrap();
        let mut samples = build_samples(&songs, &model.config.dimensions.clone(), cfg.window, cfg.hop).unwrap();
        samples.truncate(1);
        let mut opt = AdamState::new(cfg.adam, &model.store);
        let first = train_epoch(&mut model, &samples, &[0], &mut opt, &cfg, None, 0).unwrap();
        let mut last = first;
        for epoch in 1..400 {
            last = train_epoch(&mut model, &samples, &[0], &mut opt, &cfg, None, epoch).unwrap();
        }
        assert!(last.regression < 1e-3, "{first:?} -> {last:?}");
        assert!(last.loss < first.loss);
    }

    #[test]
    fn nan_input_aborts_with_batch() {
        let cfg = tiny_config();
        let songs = tiny_songs(3, &cfg);
        let mut model = Model::new(cfg.model.clone()).unwrap();
        let mut samples = build_samples(&songs, &model.config.dimensions.clone(), cfg.window, cfg.hop).unwrap();
        let last = samples.len() - 1;
        samples[last].bundle.stems[0][0].set(0, 0, f64::NAN);
        let mut opt = AdamState::new(cfg.adam, &model.store);
        let order: Vec<usize> = (0..samples.len()).collect();
        let err = train_epoch(&mut model, &samples, &order, &mut opt, &cfg, None, 7).unwrap_err();
        let expected_batch = last / cfg.batch_size;
        assert!(matches!(&err, Error::Numeric(m) if m.contains(&format!("epoch 7 batch {expected_batch}"))), "{err}");
    }

    #[test]
    fn evaluation_report_shape() {
        let cfg = tiny_config();
        let songs = tiny_songs(6, &cfg);
        let model = Model::new(cfg.model.clone()).unwrap();
        let eval = evaluate(&model, &songs, cfg.window, cfg.hop, true).unwrap();
        assert_eq!(eval.report.n, 6);
        assert_eq!(eval.report.dimensions.len(), 2);
        assert_eq!(eval.scores.len(), 12);
        for s in &eval.scores {
            assert!((0.0..=5.0).contains(&s.score));
        }
    }

    fn stub_scores(song: &LoadedSong, dims: &[String], mut f: impl FnMut(f64) -> f64) -> Vec<SongScore> {
        dims.iter()
            .map(|d| SongScore {
                song_id: song.record.song_id.clone(),
                dimension: d.clone(),
                score: f(song.record.labels[d]),
                mean_interval_width: 0.0,
            })
            .collect()
    }

    #[test]
    fn single_song_test_split_is_rejected_before_training() {
        let cfg = tiny_config();
        let songs = tiny_songs(10, &cfg);
        let records: Vec<SongRecord> = songs.iter().map(|s| s.record.clone()).collect();
        let mut loads = 0;
        let mut loader = |_: &SongRecord| -> Result<SongFeatures> {
            loads += 1;
            Err(Error::Empty("unreachable"))
        };
        let err = train_with_loader(&cfg, &records, None, &mut loader).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(ref m) if m.contains("at least 2 test songs")), "{err}");
        assert_eq!(loads, 0);
    }

    #[test]
    fn perfect_stub_scores_perfectly() {
        let cfg = tiny_config();
        let songs = tiny_songs(8, &cfg);
        let dims = &cfg.model.dimensions;
        let eval = evaluate_with(dims, &songs, false, |s| Ok(stub_scores(s, dims, |y| y))).unwrap();
        for d in &eval.report.dimensions {
            assert_eq!(d.metrics.mse, 0.0);
            assert!((d.metrics.lcc - 1.0).abs() < 1e-12);
            assert!((d.metrics.srcc - 1.0).abs() < 1e-12);
            assert!((d.metrics.ktau - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_stub_surfaces_undefined_correlation() {
        let cfg = tiny_config();
        let songs = tiny_songs(8, &cfg);
        let dims = &cfg.model.dimensions;
        let err = evaluate_with(dims, &songs, false, |s| Ok(stub_scores(s, dims, |_| 2.5))).unwrap_err();
        assert!(matches!(err, Error::UndefinedCorrelation(_)), "{err}");
    }

    #[test]
    fn random_stub_is_near_chance() {
        let cfg = tiny_config();
        let songs = tiny_songs(100, &cfg);
        let dims = &cfg.model.dimensions;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eval = evaluate_with(dims, &songs, false, |s| {
            Ok(stub_scores(s, dims, |_| rand::Rng::random_range(&mut rng, 0.0..5.0)))
        })
        .unwrap();
        for d in &eval.report.dimensions {
            assert!(d.metrics.srcc.abs() < 0.35, "{}", d.metrics.srcc);
        }
    }

    #[test]
    fn loss_decreases_over_first_epochs() {
        let cfg = tiny_config();
        let songs = tiny_songs(12, &cfg);
        let mut model = Model::new(cfg.model.clone()).unwrap();
        let samples = build_samples(&songs, &model.config.dimensions.clone(), cfg.window, cfg.hop).unwrap();
        let mut opt = AdamState::new(cfg.adam, &model.store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let losses: Vec<f64> = (1..=5)
            .map(|epoch| {
                order.shuffle(&mut rng);
                train_epoch(&mut model, &samples, &order, &mut opt, &cfg, None, epoch).unwrap().loss
            })
            .collect();
        let early = (losses[0] + losses[1]) / 2.0;
        let late = (losses[3] + losses[4]) / 2.0;
        assert!(late <= early, "{losses:?}");
    }

    /// Counts log lines so the loader can see how many epochs have finished.
    struct LineCounter(std::rc::Rc<std::cell::Cell<usize>>);

    impl Write for LineCounter {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            let n = buf.iter().filter(|&&b| b == b'\n').count();
            self.0.set(self.0.get() + n);
            Ok(buf.len())
        }

        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn test_songs_are_read_only_after_training() {
        let mut cfg = tiny_config();
        cfg.epochs = 3;
        let songs = tiny_songs(20, &cfg);
        let records: Vec<SongRecord> = songs.iter().map(|s| s.record.clone()).collect();
        let epochs_logged = std::rc::Rc::new(std::cell::Cell::new(0));
        let mut log = LineCounter(epochs_logged.clone());
        let mut loads: Vec<(String, usize)> = Vec::new();
        let mut loader = |r: &SongRecord| {
            loads.push((r.song_id.clone(), epochs_logged.get()));
            let song = songs.iter().find(|s| s.record.song_id == r.song_id).unwrap();
            Ok(song.features.clone())
        };
        let out = train_with_loader(&cfg, &records, Some(&mut log), &mut loader).unwrap();
        let epochs = out.history.len();
        assert_eq!(loads.len(), 20);
        for (id, seen) in &loads {
            if out.split.test.contains(id) {
                assert_eq!(*seen, epochs, "{id} read before training finished");
            } else {
                assert_eq!(*seen, 0, "{id}");
            }
        }
        assert_eq!(out.test.report.n, out.split.test.len());
    }
}
