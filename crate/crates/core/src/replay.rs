//! Same-age experience replay and reward whitening.
//!
//! The buffer bounds the age of its oldest element, measured in network
//! updates since insertion, rather than its length. Multi-reward runs insert
//! `k + 1` experiences per step, so at equal age their replay is `k + 1`
//! times longer than a single-reward replay.
//!
//! Raw reward vectors are kept alongside the scalar reward so a sampled
//! minibatch can be rescaled as `r~ = S^{-1/2} r / |w|_2`, where `S` is the
//! covariance of the raw reward vectors over the whole replay.

use std::collections::VecDeque;

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::WeightVector;
use crate::error::{Error, Result};
use crate::rewards::RewardVector;

pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    /// Environment features at `s`: raw lookback log-returns then position.
    pub state: Vec<f64>,
    pub gamma: f64,
    pub weights: WeightVector,
    pub raw_reward: RewardVector,
    pub scalar_reward: f64,
    pub action: usize,
    pub next_state: Vec<f64>,
    /// The step reached the end of the episode range.
    pub terminal: bool,
    /// Update counter of the buffer when the experience was pushed.
    pub birth_update: u64,
}

impl Experience {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state: Vec<f64>,
        gamma: f64,
        weights: WeightVector,
        raw_reward: RewardVector,
        action: usize,
        next_state: Vec<f64>,
        terminal: bool,
    ) -> Self {
        Self {
            scalar_reward: raw_reward.dot(weights.as_array()),
            state,
            gamma,
            weights,
            raw_reward,
            action,
            next_state,
            terminal,
            birth_update: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    max_age: u64,
    update_counter: u64,
}

impl ReplayBuffer {
    pub fn new(max_age: u64) -> Self {
        Self {
            items: VecDeque::new(),
            max_age,
            update_counter: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn max_age(&self) -> u64 {
        self.max_age
    }

    pub fn update_counter(&self) -> u64 {
        self.update_counter
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &Experience> {
        self.items.iter()
    }

    /// Age of the oldest element, in network updates.
    pub fn oldest_age(&self) -> Option<u64> {
        self.items
            .front()
            .map(|e| self.update_counter - e.birth_update)
    }

    pub fn push(&mut self, mut experience: Experience) {
        experience.birth_update = self.update_counter;
        self.items.push_back(experience);
        self.evict();
    }

    pub fn advance_updates(&mut self, n: u64) {
        self.update_counter += n;
        self.evict();
    }

    // Births are non-decreasing in insertion order, so over-age items form a prefix.
    fn evict(&mut self) {
        while let Some(front) = self.items.front() {
            if self.update_counter - front.birth_update > self.max_age {
                self.items.pop_front();
            } else {
                break;
            }
        }
    }

    /// Uniform sample of `batchsize` distinct experiences.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batchsize: usize,
        rng: &mut R,
    ) -> Result<Vec<Experience>> {
        if batchsize == 0 || batchsize > self.items.len() {
            return Err(Error::BufferTooSmall {
                need: batchsize.max(1),
                have: self.items.len(),
            });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batchsize)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect())
    }

    pub fn compute_whitening(&self, eigen_floor: f64) -> Result<WhiteningStats> {
        if self.items.len() < 2 {
            return Err(Error::BufferTooSmall {
                need: 2,
                have: self.items.len(),
            });
        }
        Ok(WhiteningStats::from_rewards(
            self.items.iter().map(|e| e.raw_reward.to_array()),
            eigen_floor,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningStats {
    pub mean: [f64; 4],
    /// Sample covariance (n - 1 normalisation), row-major.
    pub covariance: [[f64; 4]; 4],
    /// Symmetric inverse square root of the floored covariance, row-major.
    pub inv_sqrt: [[f64; 4]; 4],
}

impl WhiteningStats {
    pub fn identity() -> Self {
        let eye = to_rows(&Matrix4::identity());
        Self {
            mean: [0.0; 4],
            covariance: eye,
            inv_sqrt: eye,
        }
    }

    /// Covariance of `rewards` and its inverse square root, with eigenvalues
    /// clamped to at least `eigen_floor`. Needs at least two samples.
    pub fn from_rewards(rewards: impl Iterator<Item = [f64; 4]> + Clone, eigen_floor: f64) -> Self {
        let mut n = 0usize;
        let mut sum = Vector4::zeros();
        for r in rewards.clone() {
            sum += Vector4::from(r);
            n += 1;
        }
        assert!(n >= 2, "covariance needs at least two samples");
        let mean = sum / n as f64;
        let mut cov = Matrix4::zeros();
        for r in rewards {
            let d = Vector4::from(r) - mean;
            cov += d * d.transpose();
        }
        cov /= (n - 1) as f64;
        // Force exact symmetry before the eigensolver.
        let cov = (cov + cov.transpose()) * 0.5;

        let eigen = SymmetricEigen::new(cov);
        let inv_sqrt_diag = eigen.eigenvalues.map(|l| 1.0 / l.max(eigen_floor).sqrt());
        let v = eigen.eigenvectors;
        let inv_sqrt = v * Matrix4::from_diagonal(&inv_sqrt_diag) * v.transpose();
        let inv_sqrt = (inv_sqrt + inv_sqrt.transpose()) * 0.5;

        Self {
            mean: mean.into(),
            covariance: to_rows(&cov),
            inv_sqrt: to_rows(&inv_sqrt),
        }
    }

    /// `inv_sqrt * r`.
    pub fn apply(&self, r: [f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (i, row) in self.inv_sqrt.iter().enumerate() {
            out[i] = row.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        }
        out
    }
}

fn to_rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut rows = [[0.0; 4]; 4];
    for (i, row) in rows.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = m[(i, j)];
        }
    }
    rows
}

/// Rescales each experience's reward vector to `inv_sqrt * r / |w|_2` and
/// recomputes the scalar reward from it. The inputs are left untouched.
pub fn whiten_batch(batch: &[Experience], stats: &WhiteningStats) -> Vec<Experience> {
    batch
        .iter()
        .map(|e| {
            let norm = e.weights.norm2();
            let white = stats.apply(e.raw_reward.to_array()).map(|x| x / norm);
            let raw_reward = RewardVector::from_array(white);
            Experience {
                scalar_reward: raw_reward.dot(e.weights.as_array()),
                raw_reward,
                ..e.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewards::RewardComponent;
    use crate::rng::{stream, Stream};
    use rand_distr::{Distribution, StandardNormal};

    fn exp_with(reward: [f64; 4], weights: WeightVector) -> Experience {
        Experience::new(
            vec![0.0],
            0.9,
            weights,
            RewardVector::from_array(reward),
            0,
            vec![0.0],
            false,
        )
    }

    fn uniform_w() -> WeightVector {
        WeightVector::uniform()
    }

    #[test]
    fn push_and_age_eviction() {
        let mut b = ReplayBuffer::new(3);
        b.push(exp_with([0.0; 4], uniform_w()));
        assert_eq!(b.len(), 1);
        b.advance_updates(0);
        assert_eq!(b.len(), 1);
        b.advance_updates(3);
        assert_eq!(b.len(), 1);
        b.advance_updates(1);
        assert_eq!(b.len(), 0);
    }

    #[test]
    fn eviction_removes_over_age_prefix() {
        // births 0, 1, 1, 3, 4 then advance to counter 6 with max_age 4:
        // ages 6, 5, 5, 3, 2 -> the first three go.
        let mut b = ReplayBuffer::new(4);
        let births = [0u64, 1, 1, 3, 4];
        let mut counter = 0;
        for (i, &birth) in births.iter().enumerate() {
            b.advance_updates(birth - counter);
            counter = birth;
            b.push(exp_with([i as f64, 0.0, 0.0, 0.0], uniform_w()));
        }
        assert_eq!(b.len(), 5);
        b.advance_updates(6 - counter);
        let left: Vec<f64> = b.iter().map(|e| e.raw_reward.lr).collect();
        assert_eq!(left, vec![3.0, 4.0]);
        assert!(b.oldest_age().unwrap() <= b.max_age());
    }

    #[test]
    fn sampling() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..5 {
            b.push(exp_with([i as f64, 0.0, 0.0, 0.0], uniform_w()));
        }
        let mut all: Vec<f64> = b
            .sample_batch(5, &mut stream(1, Stream::Batch))
            .unwrap()
            .iter()
            .map(|e| e.raw_reward.lr)
            .collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, vec![0.0, 1.0, 2.0, 3.0, 4.0]);

        let a = b.sample_batch(3, &mut stream(9, Stream::Batch)).unwrap();
        let c = b.sample_batch(3, &mut stream(9, Stream::Batch)).unwrap();
        assert_eq!(a, c);

        assert!(matches!(
            b.sample_batch(6, &mut stream(1, Stream::Batch)),
            Err(Error::BufferTooSmall { need: 6, have: 5 })
        ));
    }

    #[test]
    fn sampling_marginals_are_uniform() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..10 {
            b.push(exp_with([i as f64, 0.0, 0.0, 0.0], uniform_w()));
        }
        let mut rng = stream(3, Stream::Batch);
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            for e in b.sample_batch(3, &mut rng).unwrap() {
                counts[e.raw_reward.lr as usize] += 1;
            }
        }
        // each item is picked with probability 3/10 per draw
        let p = 0.3;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    fn gaussian_rewards(n: usize, scales: [f64; 4], seed: u64) -> Vec<[f64; 4]> {
        let mut rng = stream(seed, Stream::Synthetic);
        (0..n)
            .map(|_| {
                let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                // correlate the first two components
                [
                    scales[0] * z[0],
                    scales[1] * (0.6 * z[0] + 0.8 * z[1]),
                    scales[2] * z[2],
                    scales[3] * z[3],
                ]
            })
            .collect()
    }

    #[test]
    fn identity_covariance_gives_identity_transform() {
        // the four corners of a centred hypercube scaled to unit sample variance
        let mut rows = Vec::new();
        for bits in 0..16u32 {
            rows.push(std::array::from_fn(|i| {
                if bits >> i & 1 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }));
        }
        let s = (15.0f64 / 16.0).sqrt();
        let rows: Vec<[f64; 4]> = rows.iter().map(|r: &[f64; 4]| r.map(|x| x * s)).collect();
        let stats = WhiteningStats::from_rewards(rows.iter().copied(), DEFAULT_EIGEN_FLOOR);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((stats.inv_sqrt[i][j] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_dimensional_variance_four_halves() {
        let r3 = 3f64.sqrt();
        let rows: Vec<[f64; 4]> = [-r3, r3, -r3, r3]
            .iter()
            .map(|&x| [x, 0.0, 0.0, 0.0])
            .collect();
        // sample variance of +-sqrt(3) over four points is 4
        let stats = WhiteningStats::from_rewards(rows.iter().copied(), DEFAULT_EIGEN_FLOOR);
        assert!((stats.covariance[0][0] - 4.0).abs() < 1e-12);
        let out = stats.apply([1.0, 0.0, 0.0, 0.0]);
        assert!((out[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_rewards_clamp_to_floor() {
        let rows = vec![[0.3, -0.1, 2.0, 0.0]; 10];
        let floor = 1e-8;
        let stats = WhiteningStats::from_rewards(rows.iter().copied(), floor);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { floor.powf(-0.5) } else { 0.0 };
                assert!((stats.inv_sqrt[i][j] - expected).abs() < 1e-6 * expected.max(1.0));
            }
        }
    }

    #[test]
    fn whiten_identity_is_noop_for_unit_weights() {
        let w = WeightVector::one_hot(RewardComponent::Alr);
        let batch = vec![exp_with([0.1, 0.2, 0.3, 0.4], w)];
        let out = whiten_batch(&batch, &WhiteningStats::identity());
        assert_eq!(out, batch);
    }

    #[test]
    fn whiten_halves_one_hot_lr_with_variance_four() {
        let mut b = ReplayBuffer::new(100);
        let w = WeightVector::one_hot(RewardComponent::Lr);
        for x in [-3f64.sqrt(), 3f64.sqrt(), -3f64.sqrt(), 3f64.sqrt()] {
            b.push(exp_with([x, 0.0, 0.0, 0.0], w));
        }
        let stats = b.compute_whitening(DEFAULT_EIGEN_FLOOR).unwrap();
        let batch: Vec<_> = b.iter().cloned().collect();
        let white = whiten_batch(&batch, &stats);
        for (orig, new) in batch.iter().zip(&white) {
            assert!((new.scalar_reward - 0.5 * orig.scalar_reward).abs() < 1e-12);
        }
        // the buffer keeps the raw rewards
        assert_eq!(b.iter().next().unwrap().raw_reward.lr, -3f64.sqrt());
    }

    #[test]
    fn whitened_scalar_depends_only_on_weight_direction() {
        let rows = gaussian_rewards(200, [1.0, 2.0, 0.5, 0.1], 4);
        let stats = WhiteningStats::from_rewards(rows.iter().copied(), DEFAULT_EIGEN_FLOOR);
        let w = WeightVector::new([0.1, 0.2, 0.3, 0.4]).unwrap();
        let e = exp_with(rows[0], w);
        let mut scaled = e.clone();
        scaled.weights = WeightVector::new_unchecked([0.3, 0.6, 0.9, 1.2]);
        let a = whiten_batch(&[e], &stats)[0].scalar_reward;
        let b = whiten_batch(&[scaled], &stats)[0].scalar_reward;
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn whitening_is_idempotent() {
        let rows = gaussian_rewards(2000, [1.0, 2.0, 0.5, 0.1], 5);
        let stats = WhiteningStats::from_rewards(rows.iter().copied(), DEFAULT_EIGEN_FLOOR);
        let white: Vec<[f64; 4]> = rows.iter().map(|r| stats.apply(*r)).collect();
        let again = WhiteningStats::from_rewards(white.iter().copied(), DEFAULT_EIGEN_FLOOR);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((again.inv_sqrt[i][j] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn compute_whitening_needs_two() {
        let mut b = ReplayBuffer::new(10);
        b.push(exp_with([1.0; 4], uniform_w()));
        assert!(matches!(
            b.compute_whitening(DEFAULT_EIGEN_FLOOR),
            Err(Error::BufferTooSmall { need: 2, have: 1 })
        ));
    }
}
