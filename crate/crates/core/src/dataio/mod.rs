//! Recordings, segmentation into match/mismatch pairs, and file formats.

pub mod container;
mod manifest;
mod recording;
mod segment;

pub use container::{read_recording, read_weights, write_recording, write_weights};
pub use manifest::{load_subjects, write_dataset_dir, Manifest, ManifestEntry, SubjectData, MANIFEST_FILE};
pub use recording::Recording;
pub use segment::{
    build_dataset, sample_mismatch, segment, window_starts, DataConfig, SegmentPair, SegmentRef,
    SegmentView, SplitSegments, Windowing,
};
