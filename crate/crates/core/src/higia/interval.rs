use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bin counts for the coarse, medium and fine classifiers.
///
/// Granularity `g` splits `[0, 1]` into `K_g` equal bins; bin `k` (0-based)
/// covers `[k / K_g, (k + 1) / K_g]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[usize; 3]", into = "[usize; 3]")]
pub struct GranularitySpec {
    bins: [usize; 3],
}

impl GranularitySpec {
    /// Default for 5-point datasets.
    pub const SONGEVAL: GranularitySpec = GranularitySpec { bins: [2, 4, 8] };
    /// Default for 100-point datasets.
    pub const HUNDRED_POINT: GranularitySpec = GranularitySpec { bins: [3, 5, 9] };

    pub fn new(bins: [usize; 3]) -> Result<Self> {
        if bins[0] == 0 || !(bins[0] < bins[1] && bins[1] < bins[2]) {
            return Err(Error::Config(format!(
                "bin counts must be positive and strictly increasing, got {bins:?}"
            )));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> [usize; 3] {
        self.bins
    }

    pub fn count(&self, granularity: usize) -> usize {
        self.bins[granularity]
    }

    pub fn interval(&self, granularity: usize, bin: usize) -> (f64, f64) {
        let k = self.bins[granularity] as f64;
        (bin as f64 / k, (bin + 1) as f64 / k)
    }

    /// Bin holding a normalized score. Right-open bins; the last bin is closed.
    pub fn target_bin(&self, granularity: usize, score: f64) -> usize {
        let k = self.bins[granularity];
        ((score.clamp(0.0, 1.0) * k as f64).floor() as usize).min(k - 1)
    }

    /// Common denominator for exact bin-edge arithmetic.
    fn resolution(&self) -> u64 {
        self.bins
            .iter()
            .fold(1u64, |acc, &k| lcm(acc, k as u64))
    }
}

impl TryFrom<[usize; 3]> for GranularitySpec {
    type Error = Error;

    fn try_from(bins: [usize; 3]) -> Result<Self> {
        Self::new(bins)
    }
}

impl From<GranularitySpec> for [usize; 3] {
    fn from(s: GranularitySpec) -> Self {
        s.bins
    }
}

impl Default for GranularitySpec {
    fn default() -> Self {
        Self::SONGEVAL
    }
}

impl std::str::FromStr for GranularitySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad bin list {s:?}: {e}")))?;
        let bins: [usize; 3] = parts
            .try_into()
            .map_err(|_| Error::Config(format!("expected three bin counts, got {s:?}")))?;
        Self::new(bins)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateBin {
    pub granularity: usize,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `|O| > |I|`: bounds averaged over the overlap set.
    OverlapMajority,
    /// `|O| <= |I|`: weighted blend of overlap means and isolated extremes.
    Conservative,
    /// No bin beat its uniform baseline; per-granularity argmax bins were used.
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusInterval {
    pub lower: f64,
    pub upper: f64,
    pub overlap_count: usize,
    pub isolated_count: usize,
    pub branch: Branch,
}

impl ConsensusInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Bins whose posterior strictly exceeds `1 / K_g`, pooled over all granularities.
pub fn select_candidates(probs: &[Vec<f64>; 3], spec: &GranularitySpec) -> Vec<CandidateBin> {
    let mut out = Vec::new();
    for (g, p) in probs.iter().enumerate() {
        let threshold = 1.0 / spec.count(g) as f64;
        for (k, &prob) in p.iter().enumerate() {
            if prob > threshold {
                out.push(candidate(spec, g, k, prob));
            }
        }
    }
    out
}

fn candidate(spec: &GranularitySpec, granularity: usize, bin: usize, prob: f64) -> CandidateBin {
    let (lower, upper) = spec.interval(granularity, bin);
    CandidateBin {
        granularity,
        bin,
        lower,
        upper,
        prob,
    }
}

/// The highest-probability bin of each granularity (first index on ties).
pub fn argmax_candidates(probs: &[Vec<f64>; 3], spec: &GranularitySpec) -> Vec<CandidateBin> {
    probs
        .iter()
        .enumerate()
        .map(|(g, p)| {
            let (k, &prob) = p
                .iter()
                .enumerate()
                .fold((0, &p[0]), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
            candidate(spec, g, k, prob)
        })
        .collect()
}

/// Splits candidates into those whose interval interior meets another
/// candidate's interior (`O`) and the rest (`I`).
///
/// Bin edges are compared as exact integers on a common grid. After sorting
/// by lower edge, a candidate overlaps an earlier one iff the running maximum
/// upper edge before it exceeds its lower edge, and a later one iff the
/// minimum lower edge after it is below its upper edge.
pub fn partition_overlap(
    candidates: &[CandidateBin],
    spec: &GranularitySpec,
) -> (Vec<CandidateBin>, Vec<CandidateBin>) {
    let res = spec.resolution();
    let edges: Vec<(u64, u64)> = candidates
        .iter()
        .map(|c| {
            let step = res / spec.count(c.granularity) as u64;
            (c.bin as u64 * step, (c.bin as u64 + 1) * step)
        })
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| edges[i]);

    let n = order.len();
    let mut overlapping = vec![false; candidates.len()];
    let mut max_upper_before: Option<u64> = None;
    for &i in &order {
        if max_upper_before.is_some_and(|m| m > edges[i].0) {
            overlapping[i] = true;
        }
        max_upper_before = Some(max_upper_before.map_or(edges[i].1, |m| m.max(edges[i].1)));
    }
    let mut min_lower_after: Option<u64> = None;
    for idx in (0..n).rev() {
        let i = order[idx];
        if min_lower_after.is_some_and(|m| m < edges[i].1) {
            overlapping[i] = true;
        }
        min_lower_after = Some(min_lower_after.map_or(edges[i].0, |m| m.min(edges[i].0)));
    }

    let mut overlap = Vec::new();
    let mut isolated = Vec::new();
    for (c, o) in candidates.iter().zip(overlapping) {
        if o {
            overlap.push(*c);
        } else {
            isolated.push(*c);
        }
    }
    (overlap, isolated)
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// Consensus bounds from the overlap/isolated partition.
///
/// `|O| > |I|` averages bounds over `O`. Otherwise, with `w_O = |O| / |S|`,
/// `L = w_O · mean_O(l) + (1 - w_O) · min_I(l)` and symmetrically for `U`
/// with `max_I(u)`; the `O` terms vanish when `O` is empty.
pub fn aggregate_interval(
    overlap: &[CandidateBin],
    isolated: &[CandidateBin],
) -> Result<ConsensusInterval> {
    let (no, ni) = (overlap.len(), isolated.len());
    if no + ni == 0 {
        return Err(Error::Empty("candidate set"));
    }
    let (lower, upper, branch) = if no > ni {
        (
            mean(overlap.iter().map(|c| c.lower), no),
            mean(overlap.iter().map(|c| c.upper), no),
            Branch::OverlapMajority,
        )
    } else {
        let w_o = no as f64 / (no + ni) as f64;
        let w_i = 1.0 - w_o;
        let min_l = isolated.iter().map(|c| c.lower).fold(f64::INFINITY, f64::min);
        let max_u = isolated.iter().map(|c| c.upper).fold(f64::NEG_INFINITY, f64::max);
        let (mean_l, mean_u) = if no == 0 {
            (0.0, 0.0)
        } else {
            (
                mean(overlap.iter().map(|c| c.lower), no),
                mean(overlap.iter().map(|c| c.upper), no),
            )
        };
        (
            w_o * mean_l + w_i * min_l,
            w_o * mean_u + w_i * max_u,
            Branch::Conservative,
        )
    };
    Ok(ConsensusInterval {
        lower,
        upper,
        overlap_count: no,
        isolated_count: ni,
        branch,
    })
}

/// Full selection → partition → aggregation path for one set of posteriors.
pub fn consensus_interval(
    probs: &[Vec<f64>; 3],
    spec: &GranularitySpec,
) -> Result<(ConsensusInterval, IntervalTrace)> {
    for (g, p) in probs.iter().enumerate() {
        if p.len() != spec.count(g) {
            return Err(Error::LengthMismatch(p.len(), spec.count(g)));
        }
    }
    let mut candidates = select_candidates(probs, spec);
    let fallback = candidates.is_empty();
    if fallback {
        candidates = argmax_candidates(probs, spec);
    }
    let (overlap, isolated) = partition_overlap(&candidates, spec);
    let mut interval = aggregate_interval(&overlap, &isolated)?;
    if fallback {
        interval.branch = Branch::Fallback;
    }
    Ok((
        interval,
        IntervalTrace {
            candidates,
            overlap,
            isolated,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalTrace {
    pub candidates: Vec<CandidateBin>,
    pub overlap: Vec<CandidateBin>,
    pub isolated: Vec<CandidateBin>,
}

/// `(1 - α) · L + α · U`.
pub fn interpolate(interval: &ConsensusInterval, alpha: f64) -> f64 {
    (1.0 - alpha) * interval.lower + alpha * interval.upper
}
