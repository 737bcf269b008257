//! Portable file formats and dataset plumbing: the CFW1 weight container,
//! binary PGM/PPM images, the dataset directory index, and the training-time
//! augmentation pipeline.

pub mod augment;
pub mod container;
pub mod dataset;
pub mod pnm;

pub use augment::{augment, AugmentConfig};
pub use container::{
    load_model, read_container, save_model, write_container, TensorRecord, WeightContainer,
};
pub use dataset::DatasetIndex;
pub use pnm::{load_image, load_mask, write_pgm, write_ppm, Mask};
