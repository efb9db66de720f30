use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaze::{DomainTag, GazeLabel, GazeSample, SampleBatch};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelVisibility {
    Visible,
    Hidden,
}

#[derive(Debug, Default)]
struct Audit {
    served: Mutex<BTreeSet<usize>>,
    label_reads: AtomicUsize,
}

/// Shared view over a fixed list of samples.
///
/// Clones share the underlying samples and the audit counters, so a clone
/// handed to the engine is still observable by the caller.
#[derive(Clone, Debug)]
pub struct DatasetHandle {
    samples: Arc<Vec<GazeSample>>,
    visibility: LabelVisibility,
    audit: Arc<Audit>,
}

impl DatasetHandle {
    pub fn new(samples: Vec<GazeSample>) -> Self {
        DatasetHandle {
            samples: Arc::new(samples),
            visibility: LabelVisibility::Visible,
            audit: Arc::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn visibility(&self) -> LabelVisibility {
        self.visibility
    }

    /// Domain of the first sample, if any.
    pub fn domain(&self) -> Option<DomainTag> {
        self.samples.first().map(|s| s.domain)
    }

    /// Same samples with labels hidden and fresh audit counters.
    pub fn hidden(&self) -> Self {
        DatasetHandle {
            samples: Arc::clone(&self.samples),
            visibility: LabelVisibility::Hidden,
            audit: Arc::default(),
        }
    }

    /// True when every sample carries a label, regardless of visibility.
    pub fn is_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.label.is_some())
    }

    /// Number of distinct images handed out so far.
    pub fn access_count(&self) -> usize {
        self.audit.served.lock().expect("audit lock").len()
    }

    /// Number of label reads attempted while labels were hidden.
    pub fn label_access_count(&self) -> usize {
        self.audit.label_reads.load(Ordering::SeqCst)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::invalid(format!(
                "sample index {index} out of range for {} samples",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn image(&self, index: usize) -> Result<&Tensor> {
        self.check_index(index)?;
        self.audit.served.lock().expect("audit lock").insert(index);
        Ok(&self.samples[index].image)
    }

    /// Consumer-side label access. Fails with a contract violation when
    /// labels are hidden, and records the attempt.
    pub fn label(&self, index: usize) -> Result<GazeLabel> {
        self.check_index(index)?;
        if self.visibility == LabelVisibility::Hidden {
            self.audit.label_reads.fetch_add(1, Ordering::SeqCst);
            return Err(Error::ContractViolation(format!(
                "label of sample {index} requested from a hidden-label handle"
            )));
        }
        self.samples[index]
            .label
            .ok_or_else(|| Error::invalid(format!("sample {index} has no label")))
    }

    /// Batch of the given indices. Labels are attached only when visible.
    pub fn batch(&self, indices: &[usize]) -> Result<SampleBatch> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let images: Vec<&Tensor> = indices
            .iter()
            .map(|&i| self.image(i))
            .collect::<Result<_>>()?;
        let images = Tensor::stack(&images)?;
        let domain = self.samples[indices[0]].domain;
        let labels = match self.visibility {
            LabelVisibility::Hidden => None,
            LabelVisibility::Visible => Some(
                indices
                    .iter()
                    .map(|&i| self.label(i))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(SampleBatch {
            images,
            labels,
            domain,
        })
    }

    /// Copies the selected samples into a new handle with fresh counters.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            self.check_index(i)?;
            out.push(self.samples[i].clone());
        }
        Ok(DatasetHandle {
            samples: Arc::new(out),
            visibility: self.visibility,
            audit: Arc::default(),
        })
    }

    /// Iterates over (image, label) pairs; labels are `None` when hidden.
    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, Option<GazeLabel>)> + '_ {
        (0..self.len()).map(move |i| {
            let img = self.image(i).expect("index in range");
            let label = match self.visibility {
                LabelVisibility::Visible => self.samples[i].label,
                LabelVisibility::Hidden => None,
            };
            (img, label)
        })
    }

    /// Raw samples for the evaluation harness and tests; bypasses auditing.
    pub(crate) fn samples(&self) -> &[GazeSample] {
        &self.samples
    }
}

/// `count` distinct indices drawn uniformly from `0..len`.
pub fn choose_subset(len: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count > len {
        return Err(Error::invalid(format!(
            "cannot choose {count} distinct samples from {len}"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(count);
    Ok(idx)
}

/// Cycles through a fixed pool in reshuffled epochs. A batch larger than
/// what remains of the current epoch continues into the next one, so a
/// batch may repeat indices when it exceeds the pool.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(pool: Vec<usize>, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::invalid("sampling from an empty pool"));
        }
        let mut s = EpochSampler {
            pos: pool.len(),
            order: pool,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle(n: usize) -> DatasetHandle {
        let samples = (0..n)
            .map(|i| GazeSample {
                image: Tensor::full(&[1, 2, 2], i as f32),
                label: Some(GazeLabel::new(0.01 * i as f64, 0.0).unwrap()),
                domain: DomainTag::Target,
            })
            .collect();
        DatasetHandle::new(samples)
    }

    #[test]
    fn hidden_labels_trip() {
        let h = handle(3).hidden();
        assert!(matches!(h.label(1), Err(Error::ContractViolation(_))));
        assert_eq!(h.label_access_count(), 1);
        let b = h.batch(&[0, 1]).unwrap();
        assert!(b.labels.is_none());
        assert!(h.iter().all(|(_, l)| l.is_none()));
        assert_eq!(h.label_access_count(), 1);
    }

    #[test]
    fn access_counter_counts_distinct() {
        let h = handle(5);
        let view = h.clone();
        view.batch(&[0, 1, 1, 0]).unwrap();
        view.image(3).unwrap();
        assert_eq!(h.access_count(), 3);
        assert_eq!(h.batch(&[4]).unwrap().labels.unwrap().len(), 1);
    }

    #[test]
    fn sampler_covers_pool_each_epoch() {
        let mut s = EpochSampler::new(vec![2, 5, 7], 1).unwrap();
        let mut first: Vec<usize> = s.next_batch(3);
        first.sort();
        assert_eq!(first, vec![2, 5, 7]);
        let big = s.next_batch(8);
        assert_eq!(big.len(), 8);
        assert!(big.iter().all(|i| [2, 5, 7].contains(i)));
    }

    #[test]
    fn subset_is_distinct_and_seeded() {
        let a = choose_subset(50, 10, 3).unwrap();
        assert_eq!(a, choose_subset(50, 10, 3).unwrap());
        let set: BTreeSet<_> = a.iter().collect();
        assert_eq!(set.len(), 10);
        assert!(choose_subset(3, 4, 0).is_err());
    }
}
