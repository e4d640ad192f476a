//! In-memory datasets and batching.

use super::augment::AugmentConfig;
use super::image::{read_image, resize_bilinear};
use super::manifest::{Manifest, Split};
use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::Serialize;

/// Substream tags under the run seed.
pub const SHUFFLE_TAG: u64 = 0x5_4ff1e;
pub const AUGMENT_TAG: u64 = 0xa_06;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[3, S, S]`, values in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub artist_id: usize,
    pub style_id: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub image_size: usize,
}

impl Dataset {
    /// Loads and resizes every image of `split`. An empty split is a configuration error.
    pub fn load(manifest: &Manifest, split: Split, image_size: usize) -> Result<Self> {
        let idx = manifest.indices(split);
        if idx.is_empty() {
            return Err(config_err!("the {split} split is empty"));
        }
        let mut samples = Vec::with_capacity(idx.len());
        for i in idx {
            let r = &manifest.records[i];
            let img = read_image(&manifest.resolve(r))?;
            samples.push(Sample {
                pixels: resize_bilinear(&img, image_size, image_size)?,
                artist_id: manifest.artist_id(r),
                style_id: manifest.style_id(r),
            });
        }
        Ok(Dataset { split, samples, num_classes: manifest.num_classes(), image_size })
    }

    pub fn from_samples(split: Split, samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(config_err!("the {split} split is empty"));
        };
        let image_size = first.pixels.shape()[1];
        Ok(Dataset { split, samples, num_classes, image_size })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.artist_id).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        self.samples.iter().for_each(|s| c[s.artist_id] += 1);
        c
    }

    /// Batches for one pass. Train order is reshuffled per epoch and augmented with
    /// a per-(epoch, sample) substream; val/test order is fixed and never augmented.
    pub fn batches<'a>(&'a self, batch_size: usize, run_seed: u64, epoch: u64, augment: &'a AugmentConfig) -> Result<BatchIter<'a>> {
        if batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        let order = batch_order(self.len(), self.split == Split::Train, run_seed, epoch);
        Ok(BatchIter { ds: self, order, pos: 0, batch_size, run_seed, epoch, augment })
    }
}

/// Sample order for one epoch.
pub fn batch_order(n: usize, shuffle: bool, run_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        Rng::new(run_seed).split_path(&[SHUFFLE_TAG, epoch]).shuffle(&mut order);
    }
    order
}

/// Batch sizes for `n` samples: full batches and a trailing short one.
pub fn batch_sizes(n: usize, batch_size: usize) -> Vec<usize> {
    (0..n).step_by(batch_size).map(|s| batch_size.min(n - s)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, 3, S, S]`.
    pub pixels: Tensor<f32>,
    pub artist_ids: Vec<usize>,
    /// Positions in the dataset.
    pub indices: Vec<usize>,
}

/// Assembles batches on demand, in a fixed order.
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    run_seed: u64,
    epoch: u64,
    augment: &'a AugmentConfig,
}

impl BatchIter<'_> {
    fn assemble(&self, idx: &[usize]) -> Result<Batch> {
        let s = self.ds.image_size;
        let mut data = Vec::with_capacity(idx.len() * 3 * s * s);
        let augment = self.ds.split == Split::Train && self.augment.enabled;
        for &i in idx {
            let px = &self.ds.samples[i].pixels;
            if augment {
                let mut rng = Rng::new(self.run_seed).split_path(&[AUGMENT_TAG, self.epoch, i as u64]);
                data.extend_from_slice(self.augment.apply(px, &mut rng)?.data());
            } else {
                data.extend_from_slice(px.data());
            }
        }
        Ok(Batch {
            pixels: Tensor::new(vec![idx.len(), 3, s, s], data)?,
            artist_ids: idx.iter().map(|&i| self.ds.samples[i].artist_id).collect(),
            indices: idx.to_vec(),
        })
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.assemble(&idx))
    }
}

/// Per-split counts by artist and by style.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub artists: Vec<String>,
    pub styles: Vec<String>,
    /// `[split][artist]`, splits in train/val/test order.
    pub artist_counts: Vec<Vec<usize>>,
    pub style_counts: Vec<Vec<usize>>,
    pub unassigned: usize,
}

impl DatasetStats {
    pub fn of(m: &Manifest) -> Self {
        let mut artist_counts = vec![vec![0; m.artists.len()]; 3];
        let mut style_counts = vec![vec![0; m.styles.len()]; 3];
        let mut unassigned = 0;
        for r in &m.records {
            match r.split {
                Some(s) => {
                    let j = Split::ALL.iter().position(|&x| x == s).unwrap();
                    artist_counts[j][m.artist_id(r)] += 1;
                    style_counts[j][m.style_id(r)] += 1;
                }
                None => unassigned += 1,
            }
        }
        DatasetStats {
            total: m.records.len(),
            artists: m.artists.clone(),
            styles: m.styles.clone(),
            artist_counts,
            style_counts,
            unassigned,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} records, {} artists, {} styles\n", self.total, self.artists.len(), self.styles.len());
        for (j, s) in Split::ALL.iter().enumerate() {
            out.push_str(&format!("{s}: {} samples\n", self.artist_counts[j].iter().sum::<usize>()));
        }
        if self.unassigned > 0 {
            out.push_str(&format!("unassigned: {}\n", self.unassigned));
        }
        for (a, name) in self.artists.iter().enumerate() {
            let c: Vec<String> = (0..3).map(|j| self.artist_counts[j][a].to_string()).collect();
            out.push_str(&format!("  artist {name}: {}\n", c.join("/")));
        }
        for (a, name) in self.styles.iter().enumerate() {
            let c: Vec<String> = (0..3).map(|j| self.style_counts[j][a].to_string()).collect();
            out.push_str(&format!("  style {name}: {}\n", c.join("/")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(split: Split, n: usize, s: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                pixels: Tensor::full(vec![3, s, s], (i % 10) as f32 / 10.0),
                artist_id: i % 3,
                style_id: 0,
            })
            .collect();
        Dataset::from_samples(split, samples, 3).unwrap()
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        assert_eq!(batch_sizes(100, 32), vec![32, 32, 32, 4]);
        assert_eq!(batch_sizes(64, 32), vec![32, 32]);
        let ds = toy(Split::Train, 100, 4);
        let aug = AugmentConfig::disabled();
        let sizes: Vec<usize> = ds.batches(32, 1, 0, &aug).unwrap().map(|b| b.unwrap().artist_ids.len()).collect();
        assert_eq!(sizes, vec![32, 32, 32, 4]);
    }

    #[test]
    fn train_order_is_per_epoch_and_reproducible() {
        let a = batch_order(50, true, 9, 1);
        assert_ne!(a, batch_order(50, true, 9, 2));
        assert_eq!(a, batch_order(50, true, 9, 1));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn eval_batches_are_fixed_and_unaugmented() {
        let ds = toy(Split::Val, 10, 6);
        let aug = AugmentConfig::default();
        let e1: Vec<Batch> = ds.batches(4, 3, 1, &aug).unwrap().map(|b| b.unwrap()).collect();
        let e2: Vec<Batch> = ds.batches(4, 3, 2, &aug).unwrap().map(|b| b.unwrap()).collect();
        assert_eq!(e1, e2);
        assert_eq!(e1[0].indices, vec![0, 1, 2, 3]);
        assert_eq!(&e1[0].pixels.data()[..3 * 36], ds.samples[0].pixels.data());
    }

    #[test]
    fn train_augmentation_is_reproducible() {
        let mut rng = Rng::new(4);
        let samples = (0..6)
            .map(|i| Sample {
                pixels: Tensor::new(vec![3, 8, 8], (0..192).map(|_| rng.uniform() as f32).collect()).unwrap(),
                artist_id: i % 2,
                style_id: 0,
            })
            .collect();
        let ds = Dataset::from_samples(Split::Train, samples, 2).unwrap();
        let aug = AugmentConfig::default();
        let run = |epoch| ds.batches(4, 11, epoch, &aug).unwrap().map(|b| b.unwrap()).collect::<Vec<_>>();
        assert_eq!(run(0), run(0));
        assert_ne!(run(0), run(1));
    }

    #[test]
    fn empty_split_and_zero_batch_are_config_errors() {
        let e = Dataset::from_samples(Split::Test, vec![], 2).unwrap_err();
        assert_eq!(e.category(), "config");
        let ds = toy(Split::Train, 3, 2);
        assert!(ds.batches(0, 0, 0, &AugmentConfig::disabled()).is_err());
    }
}
