//! Per-feature histogram bins.
//!
//! A bin is identified by its inclusive upper bound: a value falls into the
//! first bin whose upper bound is >= the value. The last bin is unbounded.
//! Missing values get their own slot, `MISSING`.

use super::MAX_BINS;

pub const MISSING: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct BinMapper {
    /// Inclusive upper bounds; the last entry is `+inf`.
    pub uppers: Vec<f64>,
}

impl BinMapper {
    /// Bounds from the non-missing training values of one feature.
    pub fn fit(values: impl Iterator<Item = f64>) -> BinMapper {
        let mut v: Vec<f64> = values.collect();
        v.sort_by(f64::total_cmp);
        let mut distinct = v.clone();
        distinct.dedup();
        let mut uppers: Vec<f64> = if distinct.len() < MAX_BINS {
            distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
        } else {
            let n = v.len();
            let mut cuts: Vec<f64> = (1..MAX_BINS).map(|k| v[(k * n / MAX_BINS).min(n - 1)]).collect();
            cuts.dedup();
            let max = *v.last().expect("nonempty");
            cuts.retain(|&c| c < max);
            cuts
        };
        uppers.dedup();
        uppers.push(f64::INFINITY);
        BinMapper { uppers }
    }

    #[cfg(test)]
    pub fn n_bins(&self) -> usize {
        self.uppers.len()
    }

    pub fn bin(&self, x: Option<f64>) -> u16 {
        match x {
            None => MISSING,
            Some(x) => self.uppers.partition_point(|&u| u < x) as u16,
        }
    }
}
