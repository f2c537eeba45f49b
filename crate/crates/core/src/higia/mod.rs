//! Hierarchical granularity-aware interval aggregation.
//!
//! Three classifiers predict posteriors over coarse, medium and fine score
//! bins. Bins beating their uniform baseline become candidates; candidates
//! whose intervals overlap form a consensus, and a regressor places the final
//! score inside the resulting interval.

mod heads;
mod interval;

pub use heads::{DirectHead, HigiaHeads, HigiaOutput, HigiaTrace, LossTerms};
pub(crate) use heads::squared_error;
pub use interval::{
    aggregate_interval, argmax_candidates, consensus_interval, interpolate, partition_overlap,
    select_candidates, Branch, CandidateBin, ConsensusInterval, GranularitySpec, IntervalTrace,
};
