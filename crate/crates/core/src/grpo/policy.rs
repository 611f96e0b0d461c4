use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Set of allowed choices within one logit row (bit `i` allows choice `i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask(pub u64);

impl Mask {
    pub const ALL: Mask = Mask(u64::MAX);

    pub fn only(indices: &[usize]) -> Self {
        Mask(indices.iter().fold(0u64, |m, &i| m | (1u64 << i)))
    }

    #[inline]
    pub fn allows(self, i: usize) -> bool {
        i < 64 && self.0 & (1u64 << i) != 0
    }
}

impl Default for Mask {
    fn default() -> Self {
        Mask::ALL
    }
}

/// One categorical decision: which row was consulted, which entry was
/// picked, and which entries were eligible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Choice {
    pub row: u32,
    pub action: u16,
    #[serde(default)]
    pub mask: Mask,
}

impl Choice {
    pub fn new(row: usize, action: usize) -> Self {
        Choice {
            row: row as u32,
            action: action as u16,
            mask: Mask::ALL,
        }
    }

    pub fn masked(row: usize, action: usize, mask: Mask) -> Self {
        Choice {
            row: row as u32,
            action: action as u16,
            mask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyRole {
    Inner,
    Meta,
}

/// A table of independent softmax rows, possibly of different widths.
///
/// Serves as the inner task policy (row = observation feature, entries =
/// actions or tokens), as the grammar policy of the meta-optimizer
/// (row = production group), and as the op selector of the graph variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct CategoricalPolicy<F> {
    widths: Vec<usize>,
    offsets: Vec<usize>,
    logits: Vec<F>,
    role: PolicyRole,
}

impl<F: Scalar> CategoricalPolicy<F> {
    /// Zero (uniform) logits for the given row widths.
    pub fn uniform(widths: Vec<usize>, role: PolicyRole) -> Self {
        assert!(widths.iter().all(|&w| (1..=64).contains(&w)), "row widths must be in 1..=64");
        let mut offsets = Vec::with_capacity(widths.len());
        let mut total = 0;
        for &w in &widths {
            offsets.push(total);
            total += w;
        }
        Self {
            widths,
            offsets,
            logits: vec![F::zero(); total],
            role,
        }
    }

    pub fn with_logits(widths: Vec<usize>, logits: Vec<F>, role: PolicyRole) -> Self {
        let mut p = Self::uniform(widths, role);
        assert_eq!(p.logits.len(), logits.len(), "logit count does not match row widths");
        p.logits = logits;
        p
    }

    pub fn role(&self) -> PolicyRole {
        self.role
    }

    pub fn num_rows(&self) -> usize {
        self.widths.len()
    }

    pub fn width(&self, row: usize) -> usize {
        self.widths[row]
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn offset(&self, row: usize) -> usize {
        self.offsets[row]
    }

    pub fn num_params(&self) -> usize {
        self.logits.len()
    }

    pub fn params(&self) -> &[F] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.logits
    }

    pub fn row_logits(&self, row: usize) -> &[F] {
        let o = self.offsets[row];
        &self.logits[o..o + self.widths[row]]
    }

    pub fn row_logits_mut(&mut self, row: usize) -> &mut [F] {
        let o = self.offsets[row];
        let w = self.widths[row];
        &mut self.logits[o..o + w]
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().all(|x| x.is_finite())
    }

    /// Masked log-softmax of one row; disallowed entries are `-inf`.
    pub fn log_probs(&self, row: usize, mask: Mask) -> Vec<F> {
        let logits = self.row_logits(row);
        let max = logits
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.allows(*i))
            .map(|(_, &z)| z)
            .fold(F::neg_infinity(), F::max);
        assert!(max > F::neg_infinity(), "mask leaves no eligible choice in row {row}");
        let sum: F = logits
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.allows(*i))
            .map(|(_, &z)| (z - max).exp())
            .sum();
        let lse = max + sum.ln();
        logits
            .iter()
            .enumerate()
            .map(|(i, &z)| if mask.allows(i) { z - lse } else { F::neg_infinity() })
            .collect()
    }

    pub fn probs(&self, row: usize, mask: Mask) -> Vec<F> {
        self.log_probs(row, mask).into_iter().map(F::exp).collect()
    }

    pub fn log_prob(&self, choice: &Choice) -> F {
        self.log_probs(choice.row as usize, choice.mask)[choice.action as usize]
    }

    /// Sum of per-choice log-probabilities.
    pub fn sequence_log_prob(&self, choices: &[Choice]) -> F {
        choices.iter().map(|c| self.log_prob(c)).sum()
    }

    /// Draws an entry of `row` by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, row: usize, mask: Mask, rng: &mut R) -> usize {
        let probs = self.probs(row, mask);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in probs.iter().enumerate() {
            if !mask.allows(i) {
                continue;
            }
            last = i;
            acc += p.as_f64();
            if u < acc {
                return i;
            }
        }
        last
    }

    /// Highest-logit eligible entry; ties go to the lowest index.
    pub fn greedy(&self, row: usize, mask: Mask) -> usize {
        let logits = self.row_logits(row);
        let mut best: Option<(usize, F)> = None;
        for (i, &z) in logits.iter().enumerate() {
            if !mask.allows(i) {
                continue;
            }
            if best.is_none_or(|(_, b)| z > b) {
                best = Some((i, z));
            }
        }
        best.expect("mask leaves no eligible choice").0
    }

    /// Exact KL(self(.|row) || other(.|row)) over the eligible entries.
    pub fn row_kl(&self, other: &Self, row: usize, mask: Mask) -> F {
        let lp = self.log_probs(row, mask);
        let lq = other.log_probs(row, mask);
        lp.iter()
            .zip(&lq)
            .enumerate()
            .filter(|(i, _)| mask.allows(*i))
            .map(|(_, (&a, &b))| a.exp() * (a - b))
            .sum()
    }

    pub fn cast<G: Scalar>(&self) -> CategoricalPolicy<G> {
        CategoricalPolicy {
            widths: self.widths.clone(),
            offsets: self.offsets.clone(),
            logits: self.logits.iter().map(|&z| G::lit(z.as_f64())).collect(),
            role: self.role,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masked_softmax_ignores_disallowed_entries() {
        let p = CategoricalPolicy::with_logits(vec![3], vec![0.0f64, 5.0, 0.0], PolicyRole::Inner);
        let probs = p.probs(0, Mask::only(&[0, 2]));
        assert_eq!(probs[1], 0.0);
        assert!((probs[0] - 0.5).abs() < 1e-15);
        assert_eq!(p.greedy(0, Mask::only(&[0, 2])), 0);
        assert_eq!(p.greedy(0, Mask::ALL), 1);
    }

    #[test]
    fn greedy_breaks_ties_by_lowest_index() {
        let p = CategoricalPolicy::<f64>::uniform(vec![4, 2], PolicyRole::Inner);
        assert_eq!(p.greedy(0, Mask::ALL), 0);
        assert_eq!(p.greedy(1, Mask::only(&[1])), 1);
    }

    #[test]
    fn sampling_frequencies_follow_probabilities() {
        let p = CategoricalPolicy::with_logits(vec![2], vec![0.0f64, (3.0f64).ln()], PolicyRole::Inner);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let ones = (0..n).filter(|_| p.sample(0, Mask::ALL, &mut rng) == 1).count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.015, "{freq}");
    }

    #[test]
    fn kl_is_zero_against_itself_and_positive_otherwise() {
        let p = CategoricalPolicy::with_logits(vec![3], vec![0.2f64, -1.0, 0.7], PolicyRole::Meta);
        let q = CategoricalPolicy::<f64>::uniform(vec![3], PolicyRole::Meta);
        assert_eq!(p.row_kl(&p, 0, Mask::ALL), 0.0);
        assert!(p.row_kl(&q, 0, Mask::ALL) > 0.0);
    }
}
