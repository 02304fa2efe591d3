//! Fixed-ratio batch composition.
//!
//! Every batch holds the classes in an exact integer ratio (5:5:5:1 for the
//! four-class configuration, 7:7:1 for three-class) so the minority-class
//! loss is never swamped. An epoch is one full pass over the minority class
//! (the last ratio entry): its images each appear exactly once per epoch,
//! while majority classes contribute a fresh random subset without
//! replacement, reshuffling mid-epoch only if a pool runs dry.

use rand::seq::SliceRandom;

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::loss::ClassConfig;
use crate::seeding;

/// Per-class counts for one batch; an exact integer multiple of the
/// sampling ratio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub per_class: Vec<usize>,
}

impl BatchPlan {
    /// Smallest plan for a ratio: one ratio unit per batch.
    pub fn unit(ratio: &[u32]) -> BatchPlan {
        BatchPlan {
            per_class: ratio.iter().map(|&r| r as usize).collect(),
        }
    }

    /// Plan for a batch size, which must be a positive multiple of the
    /// ratio sum.
    pub fn for_batch_size(ratio: &[u32], batch_size: usize) -> Result<BatchPlan> {
        let ratio_sum: usize = ratio.iter().map(|&r| r as usize).sum();
        if ratio_sum == 0 || batch_size == 0 || !batch_size.is_multiple_of(ratio_sum) {
            return Err(Error::BatchSizeIncompatible {
                batch_size,
                ratio_sum,
            });
        }
        let k = batch_size / ratio_sum;
        Ok(BatchPlan {
            per_class: ratio.iter().map(|&r| r as usize * k).collect(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.per_class.iter().sum()
    }
}

/// One composed batch: indices into the training records plus class indices.
#[derive(Debug, Clone)]
pub struct Batch {
    /// (record index, class index) pairs, grouped by class in plan order.
    pub items: Vec<(usize, usize)>,
}

impl Batch {
    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|&(_, c)| c).collect()
    }

    /// Class histogram over the plan's class count.
    pub fn histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0usize; num_classes];
        for &(_, c) in &self.items {
            h[c] += 1;
        }
        h
    }
}

/// Seeded batch composer over one training split.
#[derive(Debug)]
pub struct EpochSampler {
    /// Record indices per class, in manifest order.
    pools: Vec<Vec<usize>>,
    plan: BatchPlan,
    seed: u64,
}

impl EpochSampler {
    /// `records` is the training split; classes come from `class_cfg` in
    /// ratio order. Errors if any class has fewer images than its per-batch
    /// count.
    pub fn new(records: &[&ImageRecord], class_cfg: &ClassConfig, plan: BatchPlan, seed: u64) -> Result<Self> {
        if plan.per_class.len() != class_cfg.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "plan covers {} classes, config has {}",
                plan.per_class.len(),
                class_cfg.num_classes()
            )));
        }
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); class_cfg.num_classes()];
        for (i, r) in records.iter().enumerate() {
            if let Some(c) = class_cfg
                .classes
                .iter()
                .position(|name| name == r.label.as_str())
            {
                pools[c].push(i);
            } else {
                return Err(Error::InvalidArgument(format!(
                    "record {} has label {} outside the configured classes",
                    r.image_path.display(),
                    r.label
                )));
            }
        }
        for (c, pool) in pools.iter().enumerate() {
            if pool.len() < plan.per_class[c] {
                return Err(Error::ClassExhausted {
                    class: class_cfg.classes[c].clone(),
                    available: pool.len(),
                    per_batch: plan.per_class[c],
                });
            }
        }
        Ok(EpochSampler { pools, plan, seed })
    }

    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    /// Batches per epoch: one full minority pass.
    pub fn batches_per_epoch(&self) -> usize {
        let minority = self.plan.per_class.len() - 1;
        self.pools[minority].len() / self.plan.per_class[minority]
    }

    /// Compose the batches of one epoch. Deterministic in (seed, epoch).
    pub fn epoch(&self, epoch: u64) -> Vec<Batch> {
        let mut rng = seeding::indexed_rng(self.seed, "sampler", epoch);
        let minority = self.pools.len() - 1;
        let num_batches = self.batches_per_epoch();

        // Fresh shuffled pool per class; cursors advance without replacement.
        let mut shuffled: Vec<Vec<usize>> = self
            .pools
            .iter()
            .map(|pool| {
                let mut p = pool.clone();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let mut cursors = vec![0usize; shuffled.len()];

        let mut batches = Vec::with_capacity(num_batches);
        for _ in 0..num_batches {
            let mut items = Vec::with_capacity(self.plan.batch_size());
            for (c, &want) in self.plan.per_class.iter().enumerate() {
                for _ in 0..want {
                    if cursors[c] == shuffled[c].len() {
                        if c == minority {
                            // minority exhaustion ends the epoch; batches_per_epoch
                            // prevents reaching this
                            unreachable!("minority pool sized by batches_per_epoch");
                        }
                        shuffled[c].shuffle(&mut rng);
                        cursors[c] = 0;
                    }
                    items.push((shuffled[c][cursors[c]], c));
                    cursors[c] += 1;
                }
            }
            batches.push(Batch { items });
        }
        batches
    }
}
