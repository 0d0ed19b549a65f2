//! Synthetic data: one-dimensional blocks, dataset presets, rotation,
//! randomization of feature groups and persistence.

mod block;
mod dataset;
mod io;
mod rotation;
mod spec;

pub use block::{sample_block, slab_label, slab_width, BlockKind, BlockSampler, BlockSpec, SlabLayout};
pub use dataset::{
    build_group_map, empirical_margin, estimate_margin, generate_dataset, rotate_rows, Dataset,
};
pub use io::{load_dataset, save_dataset, FORMAT_VERSION};
pub(crate) use io::sha256_hex;
pub use rotation::random_rotation;
pub use spec::{DatasetSpec, Preset, PresetOptions};
