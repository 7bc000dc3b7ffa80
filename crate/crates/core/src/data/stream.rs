use std::collections::BTreeMap;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::patches::crop_patch;
use super::{Augmentation, Mask, Volume};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

/// One training batch as plain data, `[N, 1, D, H, W]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub patch: [usize; 3],
    pub voxels: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl Batch {
    pub fn shape(&self) -> [usize; 5] {
        [self.n, 1, self.patch[0], self.patch[1], self.patch[2]]
    }

    pub fn image(&self, dtype: DType) -> Tensor {
        Tensor::with_dtype(self.voxels.clone(), &self.shape(), dtype).expect("batch shape")
    }

    /// Labels as a 0/1 tensor shaped like [`Batch::image`].
    pub fn target(&self, dtype: DType) -> Option<Tensor> {
        self.labels.as_ref().map(|l| {
            let data = l.iter().map(|&v| v as f64).collect();
            Tensor::with_dtype(data, &self.shape(), dtype).expect("batch shape")
        })
    }
}

/// Draws random, optionally augmented patches from a fixed set of
/// normalized volumes. A batch is a pure function of `(seed, iteration)`.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    cases: Vec<(Volume, Option<Mask>)>,
    patch: [usize; 3],
    augment: bool,
}

fn mix(seed: u64, iteration: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl PatchSampler {
    /// Volumes are normalized per volume on construction.
    pub fn new(cases: Vec<(Volume, Option<Mask>)>, patch: [usize; 3], augment: bool) -> Result<PatchSampler> {
        if cases.is_empty() {
            return Err(Error::invalid("patch sampler needs at least one volume"));
        }
        for (v, m) in &cases {
            if (0..3).any(|a| patch[a] > v.dims[a]) {
                return Err(Error::Config(format!(
                    "patch {patch:?} does not fit volume dims {:?}",
                    v.dims
                )));
            }
            if let Some(m) = m {
                if m.dims != v.dims {
                    return Err(Error::invalid(format!(
                        "mask dims {:?} differ from volume dims {:?}",
                        m.dims, v.dims
                    )));
                }
            }
        }
        let cases = cases.into_iter().map(|(v, m)| (v.normalized(), m)).collect();
        Ok(PatchSampler { cases, patch, augment })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn patch(&self) -> [usize; 3] {
        self.patch
    }

    pub fn batch(&self, seed: u64, iteration: u64, n: usize) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, iteration));
        let p = self.patch;
        let with_labels = self.cases.iter().all(|c| c.1.is_some());
        let mut voxels = Vec::with_capacity(n * p.iter().product::<usize>());
        let mut labels = with_labels.then(Vec::new);
        for _ in 0..n {
            let (v, m) = &self.cases[rng.random_range(0..self.cases.len())];
            let origin = [0, 1, 2].map(|a| rng.random_range(0..=v.dims[a] - p[a]));
            let mut aug = Augmentation::from_seed(rng.next_u64());
            if !self.augment {
                aug = Augmentation::IDENTITY;
            } else if p[1] != p[2] {
                aug.rot_k &= 2;
            }
            let patch = crop_patch(v, m.as_ref(), origin, p);
            voxels.extend(aug.apply(&patch.volume.voxels, p)?);
            if let (Some(out), Some(m)) = (labels.as_mut(), patch.mask.as_ref()) {
                out.extend(aug.apply(&m.labels, p)?);
            }
        }
        Ok(Batch {
            n,
            patch: p,
            voxels,
            labels,
        })
    }
}

/// Worker count from `WDGDA_THREADS`, default and minimum 1.
pub fn threads_from_env() -> usize {
    std::env::var("WDGDA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(1)
        .max(1)
}

/// Computes batches for iterations `start..end` on worker threads and yields
/// them in iteration order regardless of which worker finished first.
pub struct Prefetcher {
    rx: Option<Receiver<(u64, Result<Batch>)>>,
    pending: BTreeMap<u64, Result<Batch>>,
    next: u64,
    end: u64,
    workers: Vec<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn new(sampler: Arc<PatchSampler>, seed: u64, start: u64, end: u64, batch: usize, threads: usize) -> Prefetcher {
        let threads = threads.max(1) as u64;
        let (tx, rx) = sync_channel(2 * threads as usize);
        let workers = (0..threads)
            .map(|w| {
                let tx = tx.clone();
                let sampler = Arc::clone(&sampler);
                std::thread::spawn(move || {
                    let mut i = start + w;
                    while i < end {
                        if tx.send((i, sampler.batch(seed, i, batch))).is_err() {
                            return;
                        }
                        i += threads;
                    }
                })
            })
            .collect();
        Prefetcher {
            rx: Some(rx),
            pending: BTreeMap::new(),
            next: start,
            end,
            workers,
        }
    }
}

impl Iterator for Prefetcher {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        while !self.pending.contains_key(&self.next) {
            match self.rx.as_ref()?.recv() {
                Ok((i, b)) => {
                    self.pending.insert(i, b);
                }
                Err(_) => return None,
            }
        }
        let b = self.pending.remove(&self.next);
        self.next += 1;
        b
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        self.rx.take();
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampler() -> PatchSampler {
        let v = Volume::new([6, 8, 8], [1.0; 3], (0..384).map(|i| (i % 17) as f64).collect()).unwrap();
        let m = Mask::new([6, 8, 8], (0..384).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        PatchSampler::new(vec![(v, Some(m))], [3, 4, 4], true).unwrap()
    }

    #[test]
    fn prefetch_order_matches_sequential() {
        let s = Arc::new(sampler());
        let seq: Vec<Batch> = (2..12).map(|i| s.batch(5, i, 2).unwrap()).collect();
        for threads in [1, 3] {
            let got: Vec<Batch> = Prefetcher::new(Arc::clone(&s), 5, 2, 12, 2, threads)
                .map(|b| b.unwrap())
                .collect();
            assert_eq!(got, seq);
        }
    }

    #[test]
    fn early_drop_does_not_hang() {
        let s = Arc::new(sampler());
        let mut p = Prefetcher::new(s, 1, 0, 1000, 1, 2);
        assert!(p.next().is_some());
    }

    #[test]
    fn oversized_patch_is_a_config_error() {
        let v = Volume::zeros([8, 8, 8]);
        assert!(matches!(
            PatchSampler::new(vec![(v, None)], [5, 32, 32], false),
            Err(Error::Config(_))
        ));
    }
}
