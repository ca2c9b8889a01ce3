//! In-memory labelled samples and the non-i.i.d. device partition.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, LogNormal, Normal};

use crate::seed;
use crate::{Error, Result};

pub const CLASSES: usize = 10;

/// Flattened features in `[0, 1]` with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(dim: usize, features: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::LengthMismatch {
                expected: dim * labels.len(),
                found: features.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(Error::domain(format!("label {l} outside 0..{CLASSES}")));
        }
        Ok(Self { dim, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        Dataset {
            dim: self.dim,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0; CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Gaussian class blobs in `[0, 1]^dim` for runs without MNIST on disk. Each
/// class has its own random mean; samples add isotropic noise and clip.
pub fn synthetic(samples: usize, dim: usize, noise: f64, seed_value: u64) -> Dataset {
    let mut rng = seed::keyed_rng(seed::derive(seed_value, "synthetic"), &[]);
    let means: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| {
            (0..dim)
                .map(|_| if rng.random::<f64>() < 0.2 { rng.random() } else { 0.0 })
                .collect()
        })
        .collect();
    let normal = Normal::new(0.0, noise).expect("noise level is finite");
    let mut features = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let c = rng.random_range(0..CLASSES);
        labels.push(c as u8);
        for &m in &means[c] {
            features.push((m + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32);
        }
    }
    Dataset { dim, features, labels }
}

/// One device's data: indices into the pooled dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub device: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Shard {
    /// `|D_k|`, training and test samples together.
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.test).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub shards: Vec<Shard>,
    pub total: usize,
}

impl Partition {
    /// `|D_k| / |D|` per device; sums to 1.
    pub fn weights(&self) -> Vec<f64> {
        self.shards.iter().map(|s| s.len() as f64 / self.total as f64).collect()
    }

    /// All devices' test splits, pooled.
    pub fn pooled_test(&self) -> Vec<usize> {
        self.shards.iter().flat_map(|s| s.test.iter().copied()).collect()
    }

    /// Per-device label histogram.
    pub fn label_histogram(&self, labels: &[u8], device: usize) -> [usize; CLASSES] {
        let mut h = [0; CLASSES];
        for i in self.shards[device].indices() {
            h[labels[i] as usize] += 1;
        }
        h
    }
}

/// Parameters of [`partition_noniid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub devices: usize,
    /// Symmetric Dirichlet concentration of per-device label mixes.
    pub concentration: f64,
    /// Log-scale spread of shard sizes.
    pub size_sigma: f64,
    pub test_fraction: f64,
}

impl PartitionSpec {
    pub fn new(devices: usize) -> Self {
        Self {
            devices,
            concentration: 0.5,
            size_sigma: 0.5,
            test_fraction: 0.1,
        }
    }
}

/// Splits every sample to exactly one device. Shard sizes follow normalized
/// lognormal draws; each device then fills its quota class by class from a
/// Dirichlet label mix, falling back to the classes that still have samples
/// left. Shards are shuffled before the train/test split.
pub fn partition_noniid(labels: &[u8], spec: PartitionSpec, seed_value: u64) -> Result<Partition> {
    let n = labels.len();
    let m = spec.devices;
    if m == 0 {
        return Err(Error::domain("partition needs at least one device"));
    }
    if m > n {
        return Err(Error::domain(format!("{m} devices but only {n} samples")));
    }
    if !(spec.concentration > 0.0 && spec.size_sigma >= 0.0 && (0.0..1.0).contains(&spec.test_fraction)) {
        return Err(Error::domain("invalid partition parameters"));
    }
    let root = seed::derive(seed_value, "partition");
    let sizes = shard_sizes(n, m, spec.size_sigma, root)?;

    let mut rng = seed::keyed_rng(root, &[1]);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        pools[l as usize].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let dirichlet =
        Dirichlet::new([spec.concentration; CLASSES]).map_err(|e| Error::domain(format!("dirichlet: {e}")))?;

    let mut shards = Vec::with_capacity(m);
    for (device, &size) in sizes.iter().enumerate() {
        let mix: [f64; CLASSES] = dirichlet.sample(&mut rng);
        let mut picked = Vec::with_capacity(size);
        for _ in 0..size {
            let mass: f64 = (0..CLASSES).filter(|&c| !pools[c].is_empty()).map(|c| mix[c]).sum();
            let class = if mass > 0.0 {
                let mut u = rng.random::<f64>() * mass;
                let mut chosen = None;
                for c in (0..CLASSES).filter(|&c| !pools[c].is_empty()) {
                    chosen = Some(c);
                    if u < mix[c] {
                        break;
                    }
                    u -= mix[c];
                }
                chosen.expect("some pool is non-empty")
            } else {
                // The mix has no mass on the classes that remain.
                (0..CLASSES)
                    .filter(|&c| !pools[c].is_empty())
                    .max_by_key(|&c| (pools[c].len(), std::cmp::Reverse(c)))
                    .expect("sizes never exceed the sample count")
            };
            picked.push(pools[class].pop().expect("class pool checked non-empty"));
        }
        picked.shuffle(&mut rng);
        let test_len = ((size as f64 * spec.test_fraction).round() as usize).min(size - 1);
        let test = picked.split_off(size - test_len);
        shards.push(Shard {
            device,
            train: picked,
            test,
        });
    }
    Ok(Partition { shards, total: n })
}

/// Lognormal weights scaled to `n` by largest remainder, every device at least
/// one sample.
fn shard_sizes(n: usize, m: usize, sigma: f64, root: u64) -> Result<Vec<usize>> {
    let mut rng = seed::keyed_rng(root, &[0]);
    let draws: Vec<f64> = if sigma > 0.0 {
        let ln = LogNormal::new(0.0, sigma).map_err(|e| Error::domain(format!("lognormal: {e}")))?;
        (0..m).map(|_| ln.sample(&mut rng)).collect()
    } else {
        vec![1.0; m]
    };
    let total: f64 = draws.iter().sum();
    let spare = n - m;
    let exact: Vec<f64> = draws.iter().map(|d| d / total * spare as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| 1 + e.floor() as usize).collect();
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut by_fraction: Vec<usize> = (0..m).collect();
    by_fraction.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in by_fraction.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[k] += 1;
        rest -= 1;
    }
    Ok(sizes)
}
