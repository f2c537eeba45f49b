//! Python bindings: synthetic data, training, checkpoint loading, scoring,
//! evaluation, and the interval and metric primitives.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stemscore::aggregate::{score_song_file, SegmentPrediction};
use stemscore::featio::{corpus_dimensions, read_manifest, write_synthetic_corpus, SynthConfig};
use stemscore::higia::{Branch, GranularitySpec};
use stemscore::trainer::{evaluate, load_checkpoint, load_songs, save_checkpoint, TrainConfig};
use stemscore::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Metrics = BTreeMap<String, BTreeMap<String, f64>>;

fn report_dict(report: &stemscore::metrics::EvalReport) -> Metrics {
    report
        .dimensions
        .iter()
        .map(|d| {
            let m = &d.metrics;
            let row = [("mse", m.mse), ("lcc", m.lcc), ("srcc", m.srcc), ("ktau", m.ktau)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            (d.dimension.clone(), row)
        })
        .collect()
}

/// A trained model together with the configuration it was trained with.
#[pyclass(unsendable)]
pub struct Model {
    model: stemscore::model::Model,
    config: TrainConfig,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (model, config) = load_checkpoint(&path).map_err(to_py)?;
        Ok(Self { model, config })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.model, &self.config).map_err(to_py)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }

    #[getter]
    fn dimensions(&self) -> Vec<String> {
        self.model.dimensions().to_vec()
    }

    #[getter]
    fn window(&self) -> usize {
        self.config.window
    }

    #[getter]
    fn hop(&self) -> usize {
        self.config.hop
    }

    /// Training configuration as TOML.
    fn config_toml(&self) -> PyResult<String> {
        self.config.to_toml().map_err(to_py)
    }

    /// Native-scale scores for every song in the manifest, as
    /// `(song_id, dimension, score, mean_interval_width)` tuples.
    fn score(&self, manifest: PathBuf) -> PyResult<Vec<(String, String, f64, f64)>> {
        let records = read_manifest(&manifest).map_err(to_py)?;
        let mut out = Vec::new();
        for r in &records {
            let res = score_song_file(r, &self.model, self.config.window, self.config.hop, false)
                .map_err(to_py)?;
            out.extend(
                res.scores
                    .into_iter()
                    .map(|s| (s.song_id, s.dimension, s.score, s.mean_interval_width)),
            );
        }
        Ok(out)
    }

    /// Per-dimension `{"mse", "lcc", "srcc", "ktau"}` over the manifest.
    fn evaluate(&self, manifest: PathBuf) -> PyResult<Metrics> {
        let records = read_manifest(&manifest).map_err(to_py)?;
        let songs = load_songs(&records).map_err(to_py)?;
        let eval = evaluate(&self.model, &songs, self.config.window, self.config.hop, false)
            .map_err(to_py)?;
        Ok(report_dict(&eval.report))
    }
}

/// Result of [`train`].
#[pyclass(unsendable)]
pub struct TrainResult {
    #[pyo3(get)]
    best_epoch: usize,
    #[pyo3(get)]
    val_srcc: Vec<f64>,
    #[pyo3(get)]
    test_report: Metrics,
    #[pyo3(get)]
    test_report_tsv: String,
    #[pyo3(get)]
    split: (Vec<String>, Vec<String>, Vec<String>),
    model: Option<Model>,
}

#[pymethods]
impl TrainResult {
    /// Moves the trained model out; later calls raise.
    fn take_model(&mut self) -> PyResult<Model> {
        self.model
            .take()
            .ok_or_else(|| PyValueError::new_err("model already taken"))
    }
}

/// Generates a seeded synthetic corpus and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, songs=200, seed=0, dim=16, layers=2, dims=5, frames_min=24, frames_max=56, scale_max=5.0))]
#[allow(clippy::too_many_arguments)]
fn gen_data(
    out_dir: PathBuf,
    songs: usize,
    seed: u64,
    dim: usize,
    layers: usize,
    dims: usize,
    frames_min: usize,
    frames_max: usize,
    scale_max: f64,
) -> PyResult<PathBuf> {
    let cfg = SynthConfig {
        seed,
        n_songs: songs,
        frames_min,
        frames_max,
        dim,
        layers,
        n_dims: dims,
        native_scale_max: scale_max,
    };
    write_synthetic_corpus(&out_dir, &cfg).map_err(to_py)
}

/// Trains on a manifest. `config` is a TOML document; keyword arguments
/// override it.
#[pyfunction]
#[pyo3(signature = (manifest, config=None, *, seed=None, epochs=None, window=None, hop=None, msaf=None, higia=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    manifest: PathBuf,
    config: Option<&str>,
    seed: Option<u64>,
    epochs: Option<usize>,
    window: Option<usize>,
    hop: Option<usize>,
    msaf: Option<bool>,
    higia: Option<bool>,
) -> PyResult<TrainResult> {
    let mut cfg = match config {
        Some(text) => TrainConfig::from_toml(text).map_err(to_py)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = seed {
        cfg.seed = v;
    }
    if let Some(v) = epochs {
        cfg.epochs = v;
    }
    if let Some(v) = window {
        cfg.window = v;
    }
    if let Some(v) = hop {
        cfg.hop = v;
    }
    if let Some(v) = msaf {
        cfg.model.msaf = v;
    }
    if let Some(v) = higia {
        cfg.model.higia = v;
    }
    let records = read_manifest(&manifest).map_err(to_py)?;
    cfg.model.dimensions = corpus_dimensions(&records).map_err(to_py)?;
    let out = stemscore::trainer::train(&cfg, &records, None).map_err(to_py)?;
    Ok(TrainResult {
        best_epoch: out.best_epoch,
        val_srcc: out.history.iter().map(|h| h.val_avg_srcc).collect(),
        test_report: report_dict(&out.test.report),
        test_report_tsv: out.test.report.to_tsv(),
        split: (out.split.train, out.split.val, out.split.test),
        model: Some(Model {
            model: out.model,
            config: cfg,
        }),
    })
}

/// Consensus interval of three posteriors: `(lower, upper, branch)` with
/// branch one of `"overlap_majority"`, `"conservative"`, `"fallback"`.
#[pyfunction]
#[pyo3(signature = (probs, bins=[2, 4, 8]))]
fn consensus_interval(probs: [Vec<f64>; 3], bins: [usize; 3]) -> PyResult<(f64, f64, &'static str)> {
    let spec = GranularitySpec::new(bins).map_err(to_py)?;
    let (interval, _) = stemscore::higia::consensus_interval(&probs, &spec).map_err(to_py)?;
    let branch = match interval.branch {
        Branch::OverlapMajority => "overlap_majority",
        Branch::Conservative => "conservative",
        Branch::Fallback => "fallback",
    };
    Ok((interval.lower, interval.upper, branch))
}

/// Confidence-weighted song score from `(lower, upper, alpha)` segments.
#[pyfunction]
fn song_score(segments: Vec<(f64, f64, f64)>) -> PyResult<f64> {
    let preds: Vec<SegmentPrediction> = segments
        .iter()
        .enumerate()
        .map(|(i, &(l, u, a))| SegmentPrediction::new("song", i, l, u, a))
        .collect();
    stemscore::aggregate::song_score(&preds).map_err(to_py)
}

#[pyfunction]
fn mse(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    stemscore::metrics::mse(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn lcc(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    stemscore::metrics::lcc(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn srcc(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    stemscore::metrics::srcc(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn ktau(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    stemscore::metrics::ktau(&pred, &truth).map_err(to_py)
}

#[pymodule]
pub fn stemscore_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<TrainResult>()?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_interval, m)?)?;
    m.add_function(wrap_pyfunction!(song_score, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(lcc, m)?)?;
    m.add_function(wrap_pyfunction!(srcc, m)?)?;
    m.add_function(wrap_pyfunction!(ktau, m)?)?;
    Ok(())
}
