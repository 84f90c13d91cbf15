//! Feature subsets, Shapley kernel weights and the subset sampling law.
//!
//! Subsets are ordered by size, then lexicographically by their (1-based)
//! indices, so the empty set comes first and the full set last. The exact
//! Shapley oracle indexes its value vector in that order.
//!
//! The sampling law gives subset `s` mass proportional to
//! `C(p-2, |s|-1)^-1` (mass 1 for the empty and full sets). It only depends
//! on `|s|`, so [`sample_subsets`] draws a size first and then a uniform
//! subset of that size.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Result, SpvimError};
use crate::rng::{stream_rng, Stream};

/// Default cap on `p` for full enumeration.
pub const EXACT_SHAPLEY_CAP: usize = 20;

/// Extra batches of `m` draws allowed when fewer than `p + 1` unique subsets
/// were sampled.
pub const RESAMPLE_BATCHES: usize = 10;

/// A set of feature indices in `1..=p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSubset {
    indices: Vec<usize>,
    p: usize,
}

impl FeatureSubset {
    pub fn new(indices: impl IntoIterator<Item = usize>, p: usize) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        if let Some(&bad) = indices.iter().find(|&&j| j == 0 || j > p) {
            return Err(SpvimError::InvalidArgument(format!("feature index {bad} outside 1..={p}")));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(SpvimError::InvalidArgument("feature indices must be distinct".into()));
        }
        Ok(Self { indices, p })
    }

    pub fn empty(p: usize) -> Self {
        Self { indices: Vec::new(), p }
    }

    pub fn full(p: usize) -> Self {
        Self { indices: (1..=p).collect(), p }
    }

    /// Subset with the bits of `mask` set (bit `j - 1` is feature `j`).
    pub fn from_mask(mask: u64, p: usize) -> Self {
        let indices = (1..=p).filter(|j| mask >> (j - 1) & 1 == 1).collect();
        Self { indices, p }
    }

    pub fn mask(&self) -> u64 {
        debug_assert!(self.p <= 64);
        self.indices.iter().fold(0u64, |acc, j| acc | 1 << (j - 1))
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.p
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    /// Binary encoding: a leading 1 followed by the membership indicators.
    pub fn encode(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.p + 1];
        z[0] = 1.0;
        for &j in &self.indices {
            z[j] = 1.0;
        }
        z
    }
}

impl Ord for FeatureSubset {
    fn cmp(&self, other: &Self) -> Ordering {
        self.indices
            .len()
            .cmp(&other.indices.len())
            .then_with(|| self.indices.cmp(&other.indices))
            .then_with(|| self.p.cmp(&other.p))
    }
}

impl PartialOrd for FeatureSubset {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, j) in self.indices.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

pub fn subset_encode(s: &FeatureSubset) -> Vec<f64> {
    s.encode()
}

pub(crate) fn ln_binomial(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `C(n, k)^-1`, evaluated in log space.
pub(crate) fn inverse_binomial(n: usize, k: usize) -> f64 {
    if k == 0 || k == n {
        1.0
    } else {
        (-ln_binomial(n, k)).exp()
    }
}

/// Shapley kernel weight of a size-`k` subset: 1 at the extremes,
/// `C(p-2, k-1)^-1` in between.
pub fn kernel_weight(k: usize, p: usize) -> Result<f64> {
    if p == 0 || k > p {
        return Err(SpvimError::InvalidArgument(format!(
            "kernel weight needs 0 <= k <= p and p >= 1 (k = {k}, p = {p})"
        )));
    }
    if k == 0 || k == p {
        Ok(1.0)
    } else {
        Ok(inverse_binomial(p - 2, k - 1))
    }
}

/// The kernel weighting for `p` features, i.e. the unnormalized subset masses
/// and the induced distribution over subset sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubsetWeighting {
    p: usize,
}

impl SubsetWeighting {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(SpvimError::InvalidArgument("p must be at least 1".into()));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn unnormalized_mass(&self, k: usize) -> Result<f64> {
        kernel_weight(k, self.p)
    }

    /// Unnormalized total mass of all size-`k` subsets,
    /// `C(p, k) * C(p-2, k-1)^-1 = p(p-1) / (k(p-k))` for interior sizes.
    pub fn size_total(&self, k: usize) -> f64 {
        let p = self.p;
        if k == 0 || k == p {
            1.0
        } else {
            (p * (p - 1)) as f64 / (k * (p - k)) as f64
        }
    }

    fn normalizer(&self) -> f64 {
        (0..=self.p).map(|k| self.size_total(k)).sum()
    }

    /// Probability that a draw has size `k`.
    pub fn size_probabilities(&self) -> Vec<f64> {
        let total = self.normalizer();
        (0..=self.p).map(|k| self.size_total(k) / total).collect()
    }

    /// Probability of one particular subset of size `k`.
    pub fn subset_probability(&self, k: usize) -> Result<f64> {
        Ok(self.unnormalized_mass(k)? / self.normalizer())
    }
}

/// Every subset of `{1..p}` in the canonical order.
pub fn all_subsets(p: usize) -> Result<Vec<FeatureSubset>> {
    if p > EXACT_SHAPLEY_CAP.max(24) {
        return Err(SpvimError::Capacity { p, cap: EXACT_SHAPLEY_CAP.max(24) });
    }
    let mut subsets: Vec<FeatureSubset> = (0..1u64 << p).map(|mask| FeatureSubset::from_mask(mask, p)).collect();
    subsets.sort();
    Ok(subsets)
}

/// Unique subsets with their empirical masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSubsetDistribution {
    p: usize,
    subsets: Vec<FeatureSubset>,
    counts: Vec<u64>,
    masses: Vec<f64>,
    draws: usize,
}

impl EmpiricalSubsetDistribution {
    /// Builds the distribution from draw counts. The empty and full sets are
    /// added with zero mass when absent.
    pub fn from_counts(p: usize, counts: BTreeMap<FeatureSubset, u64>) -> Result<Self> {
        let mut counts = counts;
        counts.entry(FeatureSubset::empty(p)).or_insert(0);
        counts.entry(FeatureSubset::full(p)).or_insert(0);
        if counts.keys().any(|s| s.p() != p) {
            return Err(SpvimError::InvalidArgument("subset feature counts disagree".into()));
        }
        let draws: u64 = counts.values().sum();
        if draws == 0 {
            return Err(SpvimError::InvalidArgument("no draws".into()));
        }
        let (subsets, counts): (Vec<_>, Vec<_>) = counts.into_iter().unzip();
        let masses = counts.iter().map(|&c| c as f64 / draws as f64).collect();
        Ok(Self { p, subsets, counts, masses, draws: draws as usize })
    }

    /// Every subset with its exact probability under the kernel law.
    /// `draws` is 0 for this non-sampled distribution.
    pub fn exact(p: usize) -> Result<Self> {
        let weighting = SubsetWeighting::new(p)?;
        let subsets = all_subsets(p)?;
        let masses = subsets.iter().map(|s| weighting.subset_probability(s.len())).collect::<Result<Vec<_>>>()?;
        let counts = vec![0; subsets.len()];
        Ok(Self { p, subsets, counts, masses, draws: 0 })
    }

    /// Arbitrary masses over the given subsets (normalized here).
    pub fn with_masses(p: usize, subsets: Vec<FeatureSubset>, masses: Vec<f64>) -> Result<Self> {
        if subsets.len() != masses.len() || subsets.is_empty() {
            return Err(SpvimError::InvalidArgument("subset/mass length mismatch".into()));
        }
        if masses.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(SpvimError::InvalidArgument("masses must be finite and nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(SpvimError::InvalidArgument("masses sum to zero".into()));
        }
        let mut pairs: Vec<_> = subsets.into_iter().zip(masses).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(SpvimError::InvalidArgument("duplicate subsets".into()));
        }
        let (subsets, masses): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(s, w)| (s, w / total)).unzip();
        let counts = vec![0; subsets.len()];
        Ok(Self { p, subsets, counts, masses, draws: 0 })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn subsets(&self) -> &[FeatureSubset] {
        &self.subsets
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total number of draws `m` (0 for analytic distributions).
    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Number of unique subsets.
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    /// Ratio of draws to observations.
    pub fn gamma(&self, n: usize) -> f64 {
        self.draws as f64 / n as f64
    }

    pub fn position(&self, s: &FeatureSubset) -> Option<usize> {
        self.subsets.binary_search(s).ok()
    }

    pub fn empty_position(&self) -> usize {
        self.position(&FeatureSubset::empty(self.p)).expect("empty set is always present")
    }

    pub fn full_position(&self) -> usize {
        self.position(&FeatureSubset::full(self.p)).expect("full set is always present")
    }
}

/// Draws `m` subsets from the kernel law and aggregates duplicates.
///
/// If fewer than `p + 1` unique subsets turn up, further batches of `m`
/// draws are added (at most [`RESAMPLE_BATCHES`]); the recorded draw count
/// includes them.
pub fn sample_subsets(p: usize, m: usize, seed: u64) -> Result<EmpiricalSubsetDistribution> {
    if p == 0 || m == 0 {
        return Err(SpvimError::InvalidArgument(format!("sampling needs p >= 1 and m >= 1 (p = {p}, m = {m})")));
    }
    if p > 64 {
        return Err(SpvimError::Capacity { p, cap: 64 });
    }
    let weighting = SubsetWeighting::new(p)?;
    let sizes = WeightedIndex::new((0..=p).map(|k| weighting.size_total(k)))
        .map_err(|e| SpvimError::InvalidArgument(e.to_string()))?;

    let mut counts: BTreeMap<FeatureSubset, u64> = BTreeMap::new();
    let mut draws = 0usize;
    for batch in 0..=RESAMPLE_BATCHES {
        let mut rng = stream_rng(seed, Stream::SubsetSampling, batch as u64);
        for _ in 0..m {
            let k = sizes.sample(&mut rng);
            let mut picked: Vec<usize> = index::sample(&mut rng, p, k).into_iter().map(|i| i + 1).collect();
            picked.sort_unstable();
            *counts.entry(FeatureSubset { indices: picked, p }).or_insert(0) += 1;
        }
        draws += m;
        let unique = counts.len()
            + usize::from(!counts.contains_key(&FeatureSubset::empty(p)))
            + usize::from(!counts.contains_key(&FeatureSubset::full(p)));
        if unique > p {
            return EmpiricalSubsetDistribution::from_counts(p, counts);
        }
    }
    Err(SpvimError::SamplingBudget { needed: p + 1, draws })
}

/// Shapley weight matrix: row 0 picks out the empty-set value, row `j`
/// holds the weights of feature `j`, columns follow [`all_subsets`].
pub fn shapley_matrix(p: usize) -> Result<nalgebra::DMatrix<f64>> {
    check_exact_cap(p, EXACT_SHAPLEY_CAP)?;
    let subsets = all_subsets(p)?;
    let inv: Vec<f64> = (0..p).map(|k| inverse_binomial(p - 1, k)).collect();
    let mut b = nalgebra::DMatrix::zeros(p + 1, subsets.len());
    b[(0, 0)] = 1.0;
    for (i, s) in subsets.iter().enumerate() {
        for j in 1..=p {
            b[(j, i)] = if s.contains(j) { inv[s.len() - 1] / p as f64 } else { -inv[s.len()] / p as f64 };
        }
    }
    Ok(b)
}

fn check_exact_cap(p: usize, cap: usize) -> Result<()> {
    if p == 0 {
        return Err(SpvimError::InvalidArgument("p must be at least 1".into()));
    }
    if p > cap {
        return Err(SpvimError::Capacity { p, cap });
    }
    Ok(())
}

/// Exact Shapley values of the game `v` (indexed by [`all_subsets`]).
///
/// Entry 0 of the result is `v(empty)`; entry `j` is the Shapley value of
/// feature `j`.
pub fn exact_shapley(v: &[f64], p: usize) -> Result<Vec<f64>> {
    exact_shapley_capped(v, p, EXACT_SHAPLEY_CAP)
}

pub fn exact_shapley_capped(v: &[f64], p: usize, cap: usize) -> Result<Vec<f64>> {
    check_exact_cap(p, cap)?;
    if v.len() != 1usize << p {
        return Err(SpvimError::InvalidArgument(format!("expected 2^{p} = {} values, got {}", 1usize << p, v.len())));
    }
    let subsets = all_subsets(p)?;
    let inv: Vec<f64> = (0..p).map(|k| inverse_binomial(p - 1, k) / p as f64).collect();
    let mut psi = vec![0.0; p + 1];
    psi[0] = v[0];
    for (s, &value) in subsets.iter().zip(v) {
        let k = s.len();
        let mut idx = s.indices().iter().peekable();
        for (j, slot) in psi.iter_mut().enumerate().skip(1) {
            if idx.peek() == Some(&&j) {
                idx.next();
                *slot += inv[k - 1] * value;
            } else {
                *slot -= inv[k] * value;
            }
        }
    }
    Ok(psi)
}
