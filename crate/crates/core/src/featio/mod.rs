//! Feature files, corpus manifests, segmentation and synthetic corpora.

mod format;
mod manifest;
mod segment;
mod synth;

pub use format::{read_stem_file, write_stem_file, FeatureStack, HEADER_LEN, MAGIC, VERSION};
pub use manifest::{
    corpus_dimensions, load_song, read_manifest, write_manifest, SongFeatures, SongRecord, Stem, StemPaths,
};
pub use segment::{
    denormalize_label, normalize_label, segment_ranges, segment_song, Segment, StemBundle,
};
pub use synth::{
    dimension_name, generate_synthetic_corpus, label_weight, stem_file_name, synthetic_label,
    write_synthetic_corpus, SynthConfig, SyntheticSong,
};
