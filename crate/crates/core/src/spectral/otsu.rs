//! Otsu binarization over a fixed-bin histogram spanning the observed range.

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub min: f64,
    pub max: f64,
}

impl Histogram {
    /// Bins `values` over `[min, max]`; the maximum falls into the last bin.
    pub fn build(values: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid("bins", "need at least 2 histogram bins"));
        }
        if values.is_empty() {
            return Err(Error::DegenerateHistogram("no values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "values",
                "non-finite value in histogram input",
            ));
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if min == max {
            return Err(Error::DegenerateHistogram("all values are equal"));
        }
        let mut h = Histogram {
            counts: vec![0; bins],
            min,
            max,
        };
        for &v in values {
            let b = h.bin_of(v);
            h.counts[b] += 1;
        }
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.max - self.min) / self.bins() as f64
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let b = ((v - self.min) / self.bin_width()).floor();
        if b <= 0.0 || b.is_nan() {
            0
        } else {
            (b as usize).min(self.bins() - 1)
        }
    }

    /// Lower edge of bin `k`.
    pub fn edge(&self, k: usize) -> f64 {
        self.min + k as f64 * self.bin_width()
    }
}

/// Selected threshold: bins `< bin` form the low class.
#[derive(Clone, Debug, PartialEq)]
pub struct OtsuThreshold {
    pub threshold: f64,
    pub bin: usize,
    pub histogram: Histogram,
}

impl OtsuThreshold {
    /// `true` when `v` falls on the high side, using the same binning as the
    /// threshold search (no float comparison against the edge).
    pub fn is_high(&self, v: f64) -> bool {
        self.histogram.bin_of(v) >= self.bin
    }
}

/// `num^2 / den` with its float approximation.
struct Score {
    num: u128,
    den: u128,
    approx: f64,
}

impl Score {
    fn new(num: u128, den: u128) -> Self {
        let n = num as f64;
        Score {
            num,
            den,
            approx: n * n / den as f64,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        let close = (self.approx - other.approx).abs() <= 1e-9 * self.approx.max(other.approx);
        if close {
            let lhs = self
                .num
                .checked_mul(self.num)
                .and_then(|v| v.checked_mul(other.den));
            let rhs = other
                .num
                .checked_mul(other.num)
                .and_then(|v| v.checked_mul(self.den));
            if let (Some(l), Some(r)) = (lhs, rhs) {
                return l > r;
            }
        }
        self.approx > other.approx
    }
}

/// Threshold maximizing the between-class variance of the histogram.
///
/// Scans every interior bin edge; ties resolve to the lowest edge.
pub fn otsu_threshold(values: &[f64], bins: usize) -> Result<OtsuThreshold> {
    let histogram = Histogram::build(values, bins)?;
    let total: u64 = histogram.counts.iter().sum();
    let weighted_total: u128 = histogram
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();

    // With class counts n0, n1 and index sums s0, S, the between-class
    // variance is proportional to (N*s0 - n0*S)^2 / (n0*n1). Scores are
    // compared in floats and, when close, exactly as integer fractions.
    let mut best: Option<(usize, Score)> = None;
    let mut n0: u64 = 0;
    let mut s0: u128 = 0;
    for k in 1..histogram.bins() {
        let c = histogram.counts[k - 1];
        n0 += c;
        s0 += (k as u128 - 1) * c as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = total as i128 * s0 as i128 - n0 as i128 * weighted_total as i128;
        let score = Score::new(diff.unsigned_abs(), n0 as u128 * n1 as u128);
        if best.as_ref().is_none_or(|(_, s)| score.beats(s)) {
            best = Some((k, score));
        }
    }
    // Two or more distinct values always leave a split with both classes non-empty.
    let (bin, _) = best.ok_or(Error::DegenerateHistogram("no separating edge"))?;
    Ok(OtsuThreshold {
        threshold: histogram.edge(bin),
        bin,
        histogram,
    })
}
