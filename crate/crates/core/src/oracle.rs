//! Brute-force verification of the shared-policy KL property and the
//! finite-difference oracle used by the gradient tests.
//!
//! For a policy p over `k_ops` operations and a shared policy q, trajectories
//! of `n_steps` operations are distributed as
//!
//!   p_pp(tau) = prod_{i=1..N} p(tau_i)
//!   p_qp(tau) = prod_{i=1..K} q(tau_i) * prod_{i=K+1..N} p(tau_i)
//!
//! where K = `k_early` is the number of steps taken under the shared policy.
//! `kl_divergence` sums p_pp(tau) ln(p_pp(tau) / p_qp(tau)) over every
//! trajectory; it telescopes to K * KL(p || q).
//!
//! The shared policy is chosen before the searched policy is known, so the
//! quantity a shared policy is judged by is the divergence it incurs across
//! the whole (permutation-symmetric) policy class, not against one fixed p:
//! `verify_uniform_minimizer` averages the trajectory KL over all relabelings
//! of the given policy and checks that the uniform shared policy minimizes
//! that average over a simplex grid of candidates. For the uniform candidate
//! the average coincides with the plain KL, since uniform sampling is
//! invariant under relabeling.

use crate::error::{Error, Result};

/// A small, exhaustively enumerable trajectory space.
#[derive(Clone, Copy, Debug)]
pub struct TrajectorySpace {
    pub k_ops: usize,
    pub n_steps: usize,
    pub k_early: usize,
}

impl TrajectorySpace {
    pub fn new(k_ops: usize, n_steps: usize, k_early: usize) -> Result<Self> {
        if k_ops == 0 || n_steps == 0 || k_early > n_steps {
            return Err(Error::InvalidConfig(format!(
                "bad trajectory space: k_ops={k_ops}, n_steps={n_steps}, k_early={k_early}"
            )));
        }
        let size = (k_ops as f64).powi(n_steps as i32);
        if size > 60_000.0 {
            return Err(Error::InvalidConfig(format!(
                "trajectory space too large to enumerate: {k_ops}^{n_steps}"
            )));
        }
        Ok(Self { k_ops, n_steps, k_early })
    }

    pub fn trajectories(&self) -> usize {
        self.k_ops.pow(self.n_steps as u32)
    }
}

/// Single-step KL divergence sum_o p(o) ln(p(o)/q(o)); +inf when q is zero
/// somewhere p is not.
pub fn single_step_kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        kl += pi * (pi.ln() - qi.ln());
    }
    kl
}

/// Exact trajectory-space KL divergence by full enumeration.
pub fn kl_divergence(space: &TrajectorySpace, p_theta: &[f64], p_theta_bar: &[f64]) -> f64 {
    assert_eq!(p_theta.len(), space.k_ops);
    assert_eq!(p_theta_bar.len(), space.k_ops);
    // Any op with p > 0 but q = 0 appears in the early steps of a
    // positive-probability trajectory, so the divergence is infinite.
    if space.k_early > 0
        && p_theta
            .iter()
            .zip(p_theta_bar)
            .any(|(&pi, &qi)| pi > 0.0 && qi == 0.0)
    {
        return f64::INFINITY;
    }
    let ln_p: Vec<f64> = p_theta.iter().map(|&v| if v > 0.0 { v.ln() } else { 0.0 }).collect();
    let ln_q: Vec<f64> =
        p_theta_bar.iter().map(|&v| if v > 0.0 { v.ln() } else { 0.0 }).collect();
    let mut sum = 0.0;
    let mut digits = vec![0usize; space.n_steps];
    for _ in 0..space.trajectories() {
        let mut prob = 1.0;
        let mut log_ratio = 0.0;
        for (i, &d) in digits.iter().enumerate() {
            prob *= p_theta[d];
            if i < space.k_early {
                log_ratio += ln_p[d] - ln_q[d];
            }
        }
        if prob > 0.0 {
            sum += prob * log_ratio;
        }
        // increment mixed-radix counter
        for d in digits.iter_mut() {
            *d += 1;
            if *d < space.k_ops {
                break;
            }
            *d = 0;
        }
    }
    sum
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    fn heap(k: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(idx.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, idx, out);
            if k % 2 == 0 {
                idx.swap(i, k - 1);
            } else {
                idx.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut idx, &mut out);
    out
}

/// Average of `k_early * KL(p . pi || q)` over every relabeling pi of the
/// policy: the divergence a shared policy incurs across the symmetric policy
/// class generated by `p_theta`.
pub fn symmetrized_kl(space: &TrajectorySpace, p_theta: &[f64], p_theta_bar: &[f64]) -> f64 {
    let perms = permutations(space.k_ops);
    let mut acc = 0.0;
    let mut scratch = vec![0.0; space.k_ops];
    for perm in &perms {
        for (slot, &src) in scratch.iter_mut().zip(perm) {
            *slot = p_theta[src];
        }
        let kl = single_step_kl(&scratch, p_theta_bar);
        if kl.is_infinite() {
            return f64::INFINITY;
        }
        acc += kl;
    }
    space.k_early as f64 * acc / perms.len() as f64
}

/// All compositions of `resolution` into `k` parts, normalized onto the simplex.
pub fn simplex_grid(k: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for take in 0..=remaining {
            prefix.push(take);
            rec(k - 1, remaining - take, prefix, out);
            prefix.pop();
        }
    }
    let mut raw = Vec::new();
    rec(k, resolution, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|parts| parts.into_iter().map(|c| c as f64 / resolution as f64).collect())
        .collect()
}

/// Outcome of the grid search for the minimizing shared policy.
#[derive(Clone, Debug)]
pub struct MinimizerReport {
    /// True iff no grid candidate beats the uniform shared policy.
    pub uniform_is_minimum: bool,
    /// Symmetrized divergence of the uniform shared policy (equals the plain
    /// trajectory KL against uniform).
    pub uniform_value: f64,
    /// Smallest candidate-minus-uniform gap over non-uniform candidates.
    pub margin: f64,
    pub candidates: usize,
}

/// Check that uniform sampling minimizes the symmetrized trajectory KL over
/// a resolution-`grid_resolution` simplex grid of shared-policy candidates
/// (the exact uniform point is always included).
pub fn verify_uniform_minimizer(
    space: &TrajectorySpace,
    p_theta: &[f64],
    grid_resolution: usize,
) -> Result<MinimizerReport> {
    if grid_resolution < 3 {
        return Err(Error::InvalidConfig("grid_resolution must be >= 3".into()));
    }
    let k = space.k_ops;
    let uniform = vec![1.0 / k as f64; k];
    let uniform_value = symmetrized_kl(space, p_theta, &uniform);
    // Spot-check the enumeration against the telescoped closed form so the
    // grid scan rests on a verified brute force.
    let brute = kl_divergence(space, p_theta, &uniform);
    let closed = space.k_early as f64 * single_step_kl(p_theta, &uniform);
    if (brute - closed).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "trajectory enumeration disagrees with closed form: {brute} vs {closed}"
        )));
    }
    let mut margin = f64::INFINITY;
    let mut uniform_is_minimum = true;
    let grid = simplex_grid(k, grid_resolution);
    let candidates = grid.len();
    for candidate in &grid {
        let is_uniform_point = candidate.iter().all(|&v| (v - 1.0 / k as f64).abs() < 1e-15);
        let value = symmetrized_kl(space, p_theta, candidate);
        if value + 1e-12 < uniform_value {
            uniform_is_minimum = false;
        }
        if !is_uniform_point {
            margin = margin.min(value - uniform_value);
        }
    }
    Ok(MinimizerReport { uniform_is_minimum, uniform_value, margin, candidates })
}

/// Central finite differences (f(x + h e_j) - f(x - h e_j)) / 2h.
pub fn finite_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>> {
    assert!(h > 0.0);
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let up = f(&probe);
        probe[j] = x[j] - h;
        let down = f(&probe);
        probe[j] = x[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "non-finite evaluation in finite differences at coordinate {j}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn dirichlet_like(k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| -(rng.random::<f64>()).ln()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn kl_zero_for_identical_policies() {
        let space = TrajectorySpace::new(3, 3, 2).unwrap();
        let p = vec![0.5, 0.3, 0.2];
        assert_eq!(kl_divergence(&space, &p, &p), 0.0);
    }

    #[test]
    fn kl_zero_when_no_shared_steps() {
        let space = TrajectorySpace::new(3, 3, 0).unwrap();
        let p = vec![0.5, 0.3, 0.2];
        let q = vec![0.1, 0.1, 0.8];
        assert_eq!(kl_divergence(&space, &p, &q), 0.0);
    }

    #[test]
    fn kl_telescopes_to_per_step_closed_form() {
        let space = TrajectorySpace::new(3, 3, 2).unwrap();
        let p = vec![0.5, 0.3, 0.2];
        let uniform = vec![1.0 / 3.0; 3];
        let brute = kl_divergence(&space, &p, &uniform);
        let closed = 2.0 * single_step_kl(&p, &uniform);
        assert!((brute - closed).abs() < 1e-12, "{brute} vs {closed}");
    }

    #[test]
    fn kl_reports_infinity_on_support_mismatch() {
        let space = TrajectorySpace::new(2, 2, 1).unwrap();
        let p = vec![0.5, 0.5];
        let q = vec![1.0, 0.0];
        assert!(kl_divergence(&space, &p, &q).is_infinite());
    }

    #[test]
    fn kl_nonnegative_on_random_instances() {
        let mut rng = derive_rng(21, 1, 0);
        for _ in 0..30 {
            let space = TrajectorySpace::new(4, 3, 2).unwrap();
            let p = dirichlet_like(4, &mut rng);
            let q = dirichlet_like(4, &mut rng);
            let kl = kl_divergence(&space, &p, &q);
            assert!(kl >= -1e-15, "kl = {kl}");
        }
    }

    #[test]
    fn uniform_theta_has_zero_divergence_and_strict_margin() {
        let space = TrajectorySpace::new(3, 2, 1).unwrap();
        let p = vec![1.0 / 3.0; 3];
        let report = verify_uniform_minimizer(&space, &p, 6).unwrap();
        assert!(report.uniform_is_minimum);
        assert!(report.uniform_value.abs() < 1e-15);
        assert!(report.margin > 0.0);
    }

    #[test]
    fn spec_toy_space_minimizer_is_uniform_with_positive_margin() {
        let space = TrajectorySpace::new(4, 2, 1).unwrap();
        let p = vec![0.4, 0.3, 0.2, 0.1];
        let report = verify_uniform_minimizer(&space, &p, 10).unwrap();
        assert!(report.uniform_is_minimum);
        assert!(report.margin > 0.0);
        // uniform candidate value = plain KL(p || uniform)
        let expected = single_step_kl(&p, &vec![0.25; 4]);
        assert!((report.uniform_value - expected).abs() < 1e-12);
    }

    #[test]
    fn minimizer_holds_for_random_policies() {
        let mut rng = derive_rng(22, 2, 0);
        for trial in 0..10 {
            let k = 3 + trial % 3;
            let space = TrajectorySpace::new(k, 3, 2).unwrap();
            let p = dirichlet_like(k, &mut rng);
            let report = verify_uniform_minimizer(&space, &p, 7).unwrap();
            assert!(report.uniform_is_minimum, "failed for p = {p:?}");
        }
    }

    #[test]
    fn simplex_grid_counts_and_normalization() {
        let grid = simplex_grid(3, 4);
        // C(4 + 2, 2) = 15 compositions
        assert_eq!(grid.len(), 15);
        for point in &grid {
            assert!((point.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let g = finite_diff(f, &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - 4.0).abs() < 1e-8);
        let c = finite_diff(|_| 3.5, &[0.3, -0.2, 0.0], 1e-5).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn finite_diff_rejects_non_finite() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { x[0] };
        assert!(finite_diff(f, &[0.5], 1e-2).is_err());
    }

    #[test]
    fn space_size_guard() {
        assert!(TrajectorySpace::new(10, 6, 3).is_err());
        assert!(TrajectorySpace::new(3, 2, 3).is_err());
    }
}
