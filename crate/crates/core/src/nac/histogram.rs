use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-width histogram over `[0, 1]`: bins are left-closed, the last one is
/// also right-closed. Counts merge by bin-wise addition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl NeuronHistogram {
    pub fn new(bins: usize) -> Self {
        assert!(bins > 0, "histogram needs at least one bin");
        NeuronHistogram {
            counts: vec![0; bins],
            total: 0,
        }
    }

    /// Rebuild from stored counts.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Calibration("histogram needs at least one bin".into()));
        }
        let total = counts.iter().sum();
        Ok(NeuronHistogram { counts, total })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Bin holding `value`; out-of-range values are clamped onto the edges.
    #[inline]
    pub fn bin_of(&self, value: f64) -> usize {
        bin_index(value, self.counts.len())
    }

    pub fn insert(&mut self, value: f64) {
        let b = self.bin_of(value);
        self.counts[b] += 1;
        self.total += 1;
    }

    /// Relative frequency of the bin holding `value` (0 for an empty histogram).
    pub fn frequency(&self, value: f64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts[self.bin_of(value)] as f64 / self.total as f64
    }

    pub fn merge(&mut self, other: &NeuronHistogram) -> Result<()> {
        if other.bins() != self.bins() {
            return Err(Error::Calibration(format!(
                "cannot merge histograms with {} and {} bins",
                self.bins(),
                other.bins()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }
}

#[inline]
pub(crate) fn bin_index(value: f64, bins: usize) -> usize {
    let v = value.clamp(0.0, 1.0);
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Clipped recognition score `min(κ(ẑ), r) / r`, with κ the relative bin frequency.
pub fn phi(hist: &NeuronHistogram, value: f64, clip: f64) -> Result<f64> {
    if !(clip > 0.0) || !clip.is_finite() {
        return Err(Error::Invalid(format!("clip level r must be > 0, got {clip}")));
    }
    if hist.total() == 0 {
        return Err(Error::Calibration("histogram is empty".into()));
    }
    Ok(phi_unchecked(hist, value, clip))
}

#[inline]
pub(crate) fn phi_unchecked(hist: &NeuronHistogram, value: f64, clip: f64) -> f64 {
    hist.frequency(value).min(clip) / clip
}
