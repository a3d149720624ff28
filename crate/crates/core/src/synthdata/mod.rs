//! Procedural datasets with a spurious attribute.

mod dataset;
mod generate;
mod io;
pub mod render;

pub use dataset::{
    empirical_group_table, BiasLabels, Dataset, ImageShape, LabeledSample, Provenance, Split,
    TrainView,
};
pub use generate::{
    gen_colored_patterns, gen_systematic_split, SystematicPattern, SystematicSplit,
    GENERATOR_VERSION,
};
pub use render::RenderStyle;
pub use io::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_FORMAT_VERSION, DATASET_MAGIC};
