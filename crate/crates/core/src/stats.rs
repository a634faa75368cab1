//! Scalar-generic statistics kernels: ratios, precision/recall/F1 and
//! Fleiss' kappa. Counts stay integral; conversion to the scalar type
//! happens only when a rate is produced.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floating scalar used by every statistic in the crate.
pub trait Scalar: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {}

impl<T: Float + FromPrimitive + Debug + Default + Send + Sync + 'static> Scalar for T {}

pub fn from_count<T: Scalar>(n: u64) -> T {
    T::from_u64(n).expect("count representable in scalar")
}

/// `num / den`, or `None` when `den` is zero.
pub fn ratio<T: Scalar>(num: u64, den: u64) -> Option<T> {
    (den != 0).then(|| from_count::<T>(num) / from_count::<T>(den))
}

/// `100 * num / den`, or zero when `den` is zero.
pub fn percent<T: Scalar>(num: u64, den: u64) -> T {
    ratio::<T>(num, den).map_or_else(T::zero, |r| r * from_count::<T>(100))
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std<T: Scalar>(xs: &[T]) -> (T, T) {
    if xs.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = from_count::<T>(xs.len() as u64);
    let mean = xs.iter().fold(T::zero(), |a, &x| a + x) / n;
    let var = xs.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean)) / n;
    (mean, var.sqrt())
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    mean_std(xs).0
}

/// Selection counts against a reference set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Precision/recall with 0/0 read as perfect when there is no
    /// disagreement at all and as zero otherwise.
    pub fn prf<T: Scalar>(&self) -> Prf<T> {
        let clean = self.fp == 0 && self.fn_ == 0;
        let fallback = if clean { T::one() } else { T::zero() };
        let precision = ratio(self.tp, self.tp + self.fp).unwrap_or(fallback);
        let recall = ratio(self.tp, self.tp + self.fn_).unwrap_or(fallback);
        Prf::from_pr(precision, recall)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl<T: Scalar> Prf<T> {
    pub fn from_pr(precision: T, recall: T) -> Self {
        let sum = precision + recall;
        let f1 = if sum > T::zero() {
            from_count::<T>(2) * precision * recall / sum
        } else {
            T::zero()
        };
        Prf { precision, recall, f1 }
    }

    /// Component-wise mean (macro average).
    pub fn mean_of(items: &[Prf<T>]) -> Prf<T> {
        let p: Vec<T> = items.iter().map(|x| x.precision).collect();
        let r: Vec<T> = items.iter().map(|x| x.recall).collect();
        let f: Vec<T> = items.iter().map(|x| x.f1).collect();
        Prf {
            precision: mean(&p),
            recall: mean(&r),
            f1: mean(&f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KappaError {
    #[error("no items to rate")]
    NoItems,
    #[error("item {0} has fewer than two ratings")]
    InsufficientRaters(usize),
    #[error("item {0} has a different number of categories")]
    RaggedCategories(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaValue<T> {
    pub kappa: T,
    /// Chance agreement is 1 (every rating in one category), so kappa is
    /// undefined; `kappa` is then reported as 1.
    pub degenerate: bool,
}

/// Fleiss' kappa. `items[i][j]` is how many raters put item `i` in category
/// `j`. Items may have different rater counts (each at least two).
pub fn fleiss_kappa<T: Scalar>(items: &[Vec<u64>]) -> Result<KappaValue<T>, KappaError> {
    let k = items.first().ok_or(KappaError::NoItems)?.len();
    let mut category_totals = vec![0u64; k];
    let mut total_ratings = 0u64;
    let mut agreement_sum = T::zero();
    for (i, counts) in items.iter().enumerate() {
        if counts.len() != k {
            return Err(KappaError::RaggedCategories(i));
        }
        let n: u64 = counts.iter().sum();
        if n < 2 {
            return Err(KappaError::InsufficientRaters(i));
        }
        let agreeing: u64 = counts.iter().map(|&c| c * c.saturating_sub(1)).sum();
        agreement_sum = agreement_sum + from_count::<T>(agreeing) / from_count::<T>(n * (n - 1));
        for (total, &c) in category_totals.iter_mut().zip(counts) {
            *total += c;
        }
        total_ratings += n;
    }
    let observed = agreement_sum / from_count::<T>(items.len() as u64);
    let chance = category_totals.iter().fold(T::zero(), |acc, &c| {
        let p = from_count::<T>(c) / from_count::<T>(total_ratings);
        acc + p * p
    });
    let one = T::one();
    if (one - chance).abs() <= T::epsilon() {
        return Ok(KappaValue {
            kappa: one,
            degenerate: true,
        });
    }
    Ok(KappaValue {
        kappa: (observed - chance) / (one - chance),
        degenerate: false,
    })
}

/// Agreement bands; each band is closed above, so every kappa lands in one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KappaBucket {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    Perfect,
}

impl KappaBucket {
    pub const ALL: [KappaBucket; 6] = [
        KappaBucket::Poor,
        KappaBucket::Slight,
        KappaBucket::Fair,
        KappaBucket::Moderate,
        KappaBucket::Substantial,
        KappaBucket::Perfect,
    ];

    pub fn of<T: Scalar>(kappa: T) -> KappaBucket {
        let edge = |x: f64| T::from_f64(x).unwrap();
        if kappa <= T::zero() {
            KappaBucket::Poor
        } else if kappa <= edge(0.20) {
            KappaBucket::Slight
        } else if kappa <= edge(0.40) {
            KappaBucket::Fair
        } else if kappa <= edge(0.60) {
            KappaBucket::Moderate
        } else if kappa <= edge(0.80) {
            KappaBucket::Substantial
        } else {
            KappaBucket::Perfect
        }
    }

    pub fn range(self) -> &'static str {
        match self {
            KappaBucket::Poor => "<= 0",
            KappaBucket::Slight => "0.01 - 0.20",
            KappaBucket::Fair => "0.21 - 0.40",
            KappaBucket::Moderate => "0.41 - 0.60",
            KappaBucket::Substantial => "0.61 - 0.80",
            KappaBucket::Perfect => "0.81 - 1.00",
        }
    }
}
