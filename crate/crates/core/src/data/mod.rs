//! Manifests, splitting, image I/O, augmentation, batching and the synthetic
//! style generator.
//!
//! ```
//! use artfusion::data::{generate_synthetic_dataset, split_dataset, AugmentConfig, Dataset, Split};
//!
//! let dir = tempfile::tempdir().unwrap();
//! let m = generate_synthetic_dataset(2, 10, 5, dir.path(), 16).unwrap();
//! let m = split_dataset(&m, [7, 1, 2], 5, false).unwrap();
//! assert_eq!(m.indices(Split::Train).len(), 14);
//!
//! let train = Dataset::load(&m, Split::Train, 16).unwrap();
//! let aug = AugmentConfig::default();
//! let sizes: Vec<usize> = train.batches(4, 5, 0, &aug).unwrap().map(|b| b.unwrap().artist_ids.len()).collect();
//! assert_eq!(sizes, [4, 4, 4, 2]);
//! ```

pub mod augment;
pub mod dataset;
pub mod image;
pub mod manifest;
pub mod split;
pub mod synth;

pub use augment::{AugmentConfig, AugmentParams};
pub use dataset::{batch_order, batch_sizes, Batch, BatchIter, Dataset, DatasetStats, Sample};
pub use image::{decode_image, read_image, resize_bilinear, write_ppm};
pub use manifest::{Manifest, Record, Split};
pub use split::{largest_remainder, split_dataset};
pub use synth::{generate_synthetic_dataset, ArtistStyle};

#[cfg(test)]
mod tests;
