//! Skeleton data model: topology, sequences, streams, synthetic data, and I/O.

mod io;
mod sequence;
mod stream;
mod synth;
mod topology;

pub use io::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC};
pub use sequence::{Dataset, SkeletonSequence, Split};
pub use stream::{derive_dataset_stream, derive_stream, Stream};
pub use synth::{synth_generate, synth_generate_split, synth_train_test, SynthConfig};
pub use topology::{PartGroup, SkeletonTopology};
