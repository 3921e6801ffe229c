//! The augmentation policy: a parameter vector theta over the K = 36^2
//! operations, inducing a multinomial via a normalized sigmoid,
//!
//!   p_k = sigma(theta_k) / sum_i sigma(theta_i)
//!
//! restricted to unmasked operations. The mask supports the ablation study
//! where top-ranked operations are removed and the rest renormalize.

use crate::augment::{NUM_ELEMENTS, NUM_OPS};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without overflow for large |x|.
#[inline]
fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Policy parameters: theta plus an availability mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PolicyParams {
    /// Uniform policy over `k` operations (theta all zero, full mask).
    pub fn uniform(k: usize) -> Self {
        Self { theta: vec![0.0; k], mask: vec![true; k] }
    }

    pub fn new(theta: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if theta.len() != mask.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("mask of length {}", theta.len()),
                got: format!("{}", mask.len()),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite theta entry".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::MaskAll { requested: mask.len(), unmasked: 0 });
        }
        Ok(Self { theta, mask })
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn sigmoid_sum(&self) -> f64 {
        self.theta
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&t, _)| sigmoid(t))
            .sum()
    }
}

/// Induced probabilities; zero exactly on masked entries, sums to one.
pub fn probabilities(p: &PolicyParams) -> Vec<f64> {
    let s = p.sigmoid_sum();
    p.theta
        .iter()
        .zip(&p.mask)
        .map(|(&t, &m)| if m { sigmoid(t) / s } else { 0.0 })
        .collect()
}

/// ln p_k; masked operations are an error.
pub fn log_prob(p: &PolicyParams, k: usize) -> Result<f64> {
    if k >= p.k() || !p.mask[k] {
        return Err(Error::MaskedOperation(k));
    }
    Ok(ln_sigmoid(p.theta[k]) - p.sigmoid_sum().ln())
}

/// Aggregated draw counts per operation id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl OpCounts {
    pub fn new(k: usize) -> Self {
        Self { counts: vec![0; k], total: 0 }
    }

    pub fn record(&mut self, id: usize) {
        self.counts[id] += 1;
        self.total += 1;
    }
}

/// Analytic gradient of `sum_k counts_k * ln p_k` with respect to theta.
///
/// d/d theta_j = counts_j (1 - sigma_j) - total * sigma_j (1 - sigma_j) / S,
/// with S the sigmoid sum over unmasked entries; masked entries get zero.
pub fn grad_log_prob(p: &PolicyParams, counts: &OpCounts) -> Vec<f64> {
    let s = p.sigmoid_sum();
    let total = counts.total as f64;
    p.theta
        .iter()
        .zip(&p.mask)
        .enumerate()
        .map(|(j, (&t, &m))| {
            if !m {
                return 0.0;
            }
            let sig = sigmoid(t);
            counts.counts[j] as f64 * (1.0 - sig) - total * sig * (1.0 - sig) / s
        })
        .collect()
}

/// Marginal over the first element of the pair: m_e = sum_s p[e * 36 + s].
/// Defined for the full operation space (k = 1296).
pub fn first_element_marginal(p: &PolicyParams) -> Vec<f64> {
    assert_eq!(p.k(), NUM_OPS, "marginal requires the full {NUM_OPS}-op policy");
    let probs = probabilities(p);
    (0..NUM_ELEMENTS)
        .map(|e| probs[e * NUM_ELEMENTS..(e + 1) * NUM_ELEMENTS].iter().sum())
        .collect()
}

/// Mask the `k` highest-probability unmasked operations (ties broken by
/// lower id). The survivors renormalize automatically via `probabilities`.
pub fn mask_top_k(p: &PolicyParams, k: usize) -> Result<PolicyParams> {
    let unmasked = p.unmasked();
    if k >= unmasked {
        return Err(Error::MaskAll { requested: k, unmasked });
    }
    let probs = probabilities(p);
    let mut ranked: Vec<usize> = (0..p.k()).filter(|&i| p.mask[i]).collect();
    ranked.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut out = p.clone();
    for &id in ranked.iter().take(k) {
        out.mask[id] = false;
    }
    Ok(out)
}

/// Shannon entropy of the induced distribution, in nats.
pub fn entropy(p: &PolicyParams) -> f64 {
    probabilities(p)
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}

/// Operation ids ranked by probability (descending, ties by lower id).
pub fn top_ops(p: &PolicyParams, n: usize) -> Vec<(usize, f64)> {
    let probs = probabilities(p);
    let mut ids: Vec<usize> = (0..p.k()).collect();
    ids.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    ids.into_iter().take(n).map(|i| (i, probs[i])).collect()
}

/// Precomputed inverse-cdf sampler over the unmasked operations.
pub struct PolicySampler {
    cdf: Vec<f64>,
    ids: Vec<usize>,
}

impl PolicySampler {
    pub fn new(p: &PolicyParams) -> Self {
        let probs = probabilities(p);
        let mut cdf = Vec::new();
        let mut ids = Vec::new();
        let mut acc = 0.0;
        for (i, &pr) in probs.iter().enumerate() {
            if p.mask[i] {
                acc += pr;
                cdf.push(acc);
                ids.push(i);
            }
        }
        Self { cdf, ids }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let pos = self.cdf.partition_point(|&c| c <= u);
        self.ids[pos.min(self.ids.len() - 1)]
    }
}

/// Draw one operation id with probability p_k; never returns a masked id.
pub fn sample_op(p: &PolicyParams, rng: &mut ChaCha8Rng) -> usize {
    PolicySampler::new(p).sample(rng)
}

const POLICY_MAGIC: &str = "AWSPOLICY";
const POLICY_VERSION: u32 = 1;

/// Serialize to the text policy format: version line, K, mask bits, then one
/// theta entry per line with 17 significant digits (exact f64 round trip).
pub fn policy_to_string(p: &PolicyParams) -> String {
    let mut out = String::new();
    out.push_str(&format!("{POLICY_MAGIC} {POLICY_VERSION}\n"));
    out.push_str(&format!("K {}\n", p.k()));
    out.push_str("mask ");
    for &m in &p.mask {
        out.push(if m { '1' } else { '0' });
    }
    out.push_str("\ntheta\n");
    for &t in &p.theta {
        out.push_str(&format!("{t:.16e}\n"));
    }
    out
}

pub fn policy_from_str(text: &str) -> Result<PolicyParams> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MalformedPolicy("empty file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(POLICY_MAGIC) {
        return Err(Error::MalformedPolicy("missing AWSPOLICY header".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::MalformedPolicy("missing version".into()))?;
    if version != POLICY_VERSION {
        return Err(Error::MalformedPolicy(format!("unsupported version {version}")));
    }
    let k_line = lines.next().ok_or_else(|| Error::MalformedPolicy("missing K line".into()))?;
    let k: usize = k_line
        .strip_prefix("K ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::MalformedPolicy("bad K line".into()))?;
    let mask_line = lines.next().ok_or_else(|| Error::MalformedPolicy("missing mask".into()))?;
    let bits = mask_line
        .strip_prefix("mask ")
        .ok_or_else(|| Error::MalformedPolicy("bad mask line".into()))?;
    if bits.len() != k {
        return Err(Error::MalformedPolicy(format!("mask has {} bits, want {k}", bits.len())));
    }
    let mask: Vec<bool> = bits.chars().map(|c| c == '1').collect();
    if lines.next() != Some("theta") {
        return Err(Error::MalformedPolicy("missing theta section".into()));
    }
    let mut theta = Vec::with_capacity(k);
    for line in lines.by_ref().take(k) {
        theta.push(
            line.trim()
                .parse::<f64>()
                .map_err(|e| Error::MalformedPolicy(format!("bad theta entry: {e}")))?,
        );
    }
    if theta.len() != k {
        return Err(Error::MalformedPolicy(format!("found {} theta entries, want {k}", theta.len())));
    }
    PolicyParams::new(theta, mask)
}

pub fn write_policy(p: &PolicyParams, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(policy_to_string(p).as_bytes())?;
    Ok(())
}

pub fn read_policy(path: &Path) -> Result<PolicyParams> {
    let f = std::fs::File::open(path)?;
    let mut text = String::new();
    std::io::BufReader::new(f).read_to_string(&mut text)?;
    policy_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn uniform_policy_probabilities() {
        let p = PolicyParams::uniform(NUM_OPS);
        let probs = probabilities(&p);
        for &v in &probs {
            assert!((v - 1.0 / 1296.0).abs() < 1e-15);
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_op_toy_probabilities() {
        let p = PolicyParams::new(vec![0.0, 3f64.ln()], vec![true, true]).unwrap();
        let probs = probabilities(&p);
        assert!((probs[0] - 0.4).abs() < 1e-12);
        assert!((probs[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn single_unmasked_entry_gets_all_mass() {
        let p = PolicyParams::new(vec![-3.0, 0.7, 2.0], vec![false, true, false]).unwrap();
        let probs = probabilities(&p);
        assert_eq!(probs[0], 0.0);
        assert_eq!(probs[2], 0.0);
        assert!((probs[1] - 1.0).abs() < 1e-15);
        assert_eq!(sample_op(&p, &mut derive_rng(1, 2, 3)), 1);
        assert_eq!(log_prob(&p, 1).unwrap(), 0.0);
    }

    #[test]
    fn log_prob_matches_probabilities() {
        let p = PolicyParams::uniform(NUM_OPS);
        let lp = log_prob(&p, 17).unwrap();
        assert!((lp - (1.0f64 / 1296.0).ln()).abs() < 1e-12);
        assert!((lp + 7.1670).abs() < 1e-3);

        let toy = PolicyParams::new(vec![0.0, 3f64.ln()], vec![true, true]).unwrap();
        assert!((log_prob(&toy, 0).unwrap() - 0.4f64.ln()).abs() < 1e-12);
        for k in [0usize, 1] {
            let via_log = log_prob(&toy, k).unwrap().exp();
            assert!((via_log - probabilities(&toy)[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn log_prob_of_masked_op_errors() {
        let p = PolicyParams::new(vec![0.0, 0.0], vec![true, false]).unwrap();
        let err = log_prob(&p, 1).unwrap_err();
        assert!(err.to_string().contains("operation removed from policy"));
    }

    #[test]
    fn grad_log_prob_hand_example() {
        let p = PolicyParams::new(vec![0.0, 0.0], vec![true, true]).unwrap();
        let counts = OpCounts { counts: vec![1, 0], total: 1 };
        let g = grad_log_prob(&p, &counts);
        assert!((g[0] - 0.25).abs() < 1e-15);
        assert!((g[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn grad_log_prob_zero_counts_is_zero() {
        let p = PolicyParams::new(vec![0.3, -1.0, 2.0], vec![true, true, true]).unwrap();
        let g = grad_log_prob(&p, &OpCounts::new(3));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn marginal_sums_to_one_and_handles_point_mass() {
        let p = PolicyParams::uniform(NUM_OPS);
        let m = first_element_marginal(&p);
        assert_eq!(m.len(), 36);
        for &v in &m {
            assert!((v - 1.0 / 36.0).abs() < 1e-12);
        }
        let mut mask = vec![false; NUM_OPS];
        mask[0] = true;
        let point = PolicyParams::new(vec![0.0; NUM_OPS], mask).unwrap();
        let m = first_element_marginal(&point);
        assert!((m[0] - 1.0).abs() < 1e-15);
        assert!(m[1..].iter().all(|&v| v == 0.0));

        let mut rng = derive_rng(5, 6, 7);
        let theta: Vec<f64> = (0..NUM_OPS).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = PolicyParams::new(theta, vec![true; NUM_OPS]).unwrap();
        let m = first_element_marginal(&p);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_top_k_examples() {
        let uniform = PolicyParams::uniform(4);
        let same = mask_top_k(&uniform, 0).unwrap();
        assert_eq!(same, uniform);
        // ties broken by lower id
        let one = mask_top_k(&uniform, 1).unwrap();
        assert!(!one.mask[0]);
        assert!(one.mask[1] && one.mask[2] && one.mask[3]);

        // probabilities (0.5, 0.3, 0.2): sigma proportional to (0.6, 0.36, 0.24)
        let logit = |s: f64| (s / (1.0 - s)).ln();
        let p = PolicyParams::new(
            vec![logit(0.6), logit(0.36), logit(0.24)],
            vec![true; 3],
        )
        .unwrap();
        let probs = probabilities(&p);
        assert!((probs[0] - 0.5).abs() < 1e-12);
        let masked = mask_top_k(&p, 2).unwrap();
        assert_eq!(masked.mask, vec![false, false, true]);
        assert!((probabilities(&masked)[2] - 1.0).abs() < 1e-15);

        let err = mask_top_k(&p, 3).unwrap_err();
        assert!(err.to_string().contains("cannot remove all operations"));
    }

    #[test]
    fn mask_top_k_preserves_survivor_order() {
        let mut rng = derive_rng(8, 9, 10);
        let theta: Vec<f64> = (0..50).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = PolicyParams::new(theta, vec![true; 50]).unwrap();
        let before = probabilities(&p);
        let masked = mask_top_k(&p, 10).unwrap();
        let after = probabilities(&masked);
        let mut survivors: Vec<usize> = (0..50).filter(|&i| masked.mask[i]).collect();
        survivors.sort_by(|&a, &b| before[b].partial_cmp(&before[a]).unwrap());
        for w in survivors.windows(2) {
            assert!(after[w[0]] >= after[w[1]]);
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let p = PolicyParams::uniform(NUM_OPS);
        let s = PolicySampler::new(&p);
        let a: Vec<usize> = {
            let mut rng = derive_rng(3, 3, 3);
            (0..100).map(|_| s.sample(&mut rng)).collect()
        };
        let b: Vec<usize> = {
            let mut rng = derive_rng(3, 3, 3);
            (0..100).map(|_| s.sample(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn sampler_never_returns_masked_ids() {
        let mut mask = vec![true; 16];
        for i in [0usize, 3, 7, 8, 9, 15] {
            mask[i] = false;
        }
        let p = PolicyParams::new(vec![0.5; 16], mask.clone()).unwrap();
        let s = PolicySampler::new(&p);
        let mut rng = derive_rng(9, 9, 9);
        for _ in 0..5000 {
            assert!(mask[s.sample(&mut rng)]);
        }
    }

    #[test]
    fn policy_file_round_trip_is_exact() {
        let mut rng = derive_rng(12, 13, 14);
        let theta: Vec<f64> = (0..NUM_OPS).map(|_| rng.random_range(-20.0..20.0)).collect();
        let mut mask = vec![true; NUM_OPS];
        mask[100] = false;
        let p = PolicyParams::new(theta, mask).unwrap();
        let text = policy_to_string(&p);
        let back = policy_from_str(&text).unwrap();
        assert_eq!(back.mask, p.mask);
        for (a, b) in back.theta.iter().zip(&p.theta) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn policy_parse_rejects_malformed_input() {
        assert!(policy_from_str("").is_err());
        assert!(policy_from_str("AWSPOLICY 9\nK 1\nmask 1\ntheta\n0.0\n").is_err());
        assert!(policy_from_str("AWSPOLICY 1\nK 2\nmask 1\ntheta\n0.0\n0.0\n").is_err());
        assert!(policy_from_str("AWSPOLICY 1\nK 2\nmask 11\ntheta\n0.0\n").is_err());
    }

    #[test]
    fn entropy_of_uniform_is_ln_k() {
        let p = PolicyParams::uniform(NUM_OPS);
        assert!((entropy(&p) - (NUM_OPS as f64).ln()).abs() < 1e-9);
    }
}
