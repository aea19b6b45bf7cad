use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Paired (human, predicted) labels over an inclusive integer range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct LabelSeries {
    pairs: Vec<(i64, i64)>,
    min: i64,
    max: i64,
}

impl LabelSeries {
    pub fn new(pairs: Vec<(i64, i64)>, min: i64, max: i64) -> Result<Self, MetricsError> {
        if pairs.is_empty() {
            return Err(MetricsError::EmptySeries);
        }
        if min > max {
            return Err(MetricsError::BadRange { min, max });
        }
        if let Some(&(h, p)) = pairs
            .iter()
            .find(|(h, p)| *h < min || *h > max || *p < min || *p > max)
        {
            return Err(MetricsError::ValueOutOfRange {
                human: h,
                predicted: p,
                min,
                max,
            });
        }
        Ok(LabelSeries { pairs, min, max })
    }

    pub fn binary(pairs: Vec<(i64, i64)>) -> Result<Self, MetricsError> {
        Self::new(pairs, 0, 1)
    }

    pub fn pairs(&self) -> &[(i64, i64)] {
        &self.pairs
    }

    pub fn range(&self) -> (i64, i64) {
        (self.min, self.max)
    }

    pub fn levels(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Rows are human labels, columns are predictions, both offset by `min`.
    pub fn confusion(&self) -> Vec<Vec<u64>> {
        let k = self.levels();
        let mut m = vec![vec![0u64; k]; k];
        for &(h, p) in &self.pairs {
            m[(h - self.min) as usize][(p - self.min) as usize] += 1;
        }
        m
    }

    /// Same pairs with the two raters exchanged.
    pub fn swapped(&self) -> Self {
        LabelSeries {
            pairs: self.pairs.iter().map(|&(h, p)| (p, h)).collect(),
            min: self.min,
            max: self.max,
        }
    }

    fn marginals(&self) -> (Vec<i128>, Vec<i128>) {
        let k = self.levels();
        let mut rows = vec![0i128; k];
        let mut cols = vec![0i128; k];
        for &(h, p) in &self.pairs {
            rows[(h - self.min) as usize] += 1;
            cols[(p - self.min) as usize] += 1;
        }
        (rows, cols)
    }
}

/// Cohen's kappa with each rater's own marginals.
///
/// When chance agreement is total (`p_e = 1`) the statistic is undefined;
/// this returns 1.0 if observed agreement is also total and 0.0 otherwise.
pub fn cohen_kappa(series: &LabelSeries) -> f64 {
    let n = series.len() as i128;
    let agree = series.pairs.iter().filter(|(h, p)| h == p).count() as i128;
    let (rows, cols) = series.marginals();
    let chance: i128 = rows.iter().zip(&cols).map(|(r, c)| r * c).sum();
    // kappa = (n*agree - chance) / (n^2 - chance), all terms scaled by n^2.
    let den = n * n - chance;
    if den == 0 {
        return if agree == n { 1.0 } else { 0.0 };
    }
    (n * agree - chance) as f64 / den as f64
}

/// Quadratic weighted kappa with weights `(i-j)^2 / (K-1)^2`.
///
/// Uses the same degenerate-case convention as [`cohen_kappa`] when the
/// weighted expected disagreement is zero.
pub fn quadratic_weighted_kappa(series: &LabelSeries) -> Result<f64, MetricsError> {
    let k = series.levels();
    if k < 2 {
        return Err(MetricsError::SingleLevelRange);
    }
    let n = series.len() as i128;
    let (rows, cols) = series.marginals();
    let observed: i128 = series
        .pairs
        .iter()
        .map(|&(h, p)| {
            let d = (h - p) as i128;
            d * d
        })
        .sum();
    // sum_ij d^2 * r_i * c_j, i.e. expected disagreement scaled by n.
    let mut expected: i128 = 0;
    for (i, r) in rows.iter().enumerate() {
        if *r == 0 {
            continue;
        }
        for (j, c) in cols.iter().enumerate() {
            let d = i as i128 - j as i128;
            expected += d * d * r * c;
        }
    }
    if expected == 0 {
        return Ok(if observed == 0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - (n * observed) as f64 / expected as f64)
}

/// Fraction of exactly matching pairs.
pub fn accuracy(series: &LabelSeries) -> f64 {
    let agree = series.pairs.iter().filter(|(h, p)| h == p).count();
    agree as f64 / series.len() as f64
}
