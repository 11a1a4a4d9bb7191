//! Exact soft dynamic programming on finite MDPs.
//!
//! Everything here is computed by explicit summation, which makes the
//! operators usable as ground truth for the function-approximation code and
//! lets the contraction and improvement properties be checked numerically.

use rand::Rng;

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `P(s' | s, a)` at `(s * n_actions + a) * n_states + s'`
    transitions: Vec<f64>,
    /// `r(s, a)` at `s * n_actions + a`
    rewards: Vec<f64>,
    gamma: f64,
    alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

fn check_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        alpha: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("MDP needs at least one state and one action"));
        }
        if transitions.len() != n_states * n_actions * n_states {
            return Err(Error::shape(
                "transition tensor",
                n_states * n_actions * n_states,
                transitions.len(),
            ));
        }
        if rewards.len() != n_states * n_actions {
            return Err(Error::shape("reward table", n_states * n_actions, rewards.len()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma = {gamma} outside [0, 1)")));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha = {alpha} must be positive")));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward table".into()));
        }
        for (i, row) in transitions.chunks_exact(n_states).enumerate() {
            check_row(row, &format!("P(.|s={}, a={})", i / n_actions, i % n_actions))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            alpha,
        })
    }

    /// Random MDP with `1..=max_states` states and `1..=max_actions` actions.
    /// About a third of the transition entries are zeroed to get sparse rows.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_states: usize, max_actions: usize) -> Self {
        let n_states = rng.random_range(1..=max_states);
        let n_actions = rng.random_range(1..=max_actions);
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transitions.extend(random_simplex(rng, n_states, 0.3));
        }
        let rewards = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gamma = rng.random_range(0.0..0.95);
        let alpha = rng.random_range(0.05..2.0);
        Self::new(n_states, n_actions, transitions, rewards, gamma, alpha).expect("generated MDP is valid")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transitions[i..i + self.n_states]
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.n_states != self.n_states || policy.n_actions != self.n_actions {
            return Err(Error::invalid(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states, policy.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    fn check_q(&self, q: &QTable) -> Result<()> {
        if q.n_states != self.n_states || q.n_actions != self.n_actions {
            return Err(Error::invalid(format!(
                "Q table is {}x{}, MDP is {}x{}",
                q.n_states, q.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// Random point on the simplex; each coordinate is zeroed with probability
/// `sparsity` (at least one stays positive).
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize, sparsity: f64) -> Vec<f64> {
    let keep = rng.random_range(0..n);
    let mut row: Vec<f64> = (0..n)
        .map(|i| {
            if i != keep && rng.random::<f64>() < sparsity {
                0.0
            } else {
                rng.random_range(0.01..1.0)
            }
        })
        .collect();
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= sum);
    row
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::shape("policy table", n_states * n_actions, probs.len()));
        }
        for (s, row) in probs.chunks_exact(n_actions).enumerate() {
            check_row(row, &format!("pi(.|s={s})"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> Self {
        let probs = (0..n_states)
            .flat_map(|_| random_simplex(rng, n_actions, 0.2))
            .collect();
        Self {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Largest per-state total-variation distance to `other`.
    pub fn max_total_variation(&self, other: &TabularPolicy) -> f64 {
        (0..self.n_states)
            .map(|s| {
                0.5 * self
                    .row(s)
                    .iter()
                    .zip(other.row(s))
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::shape("Q table", n_states * n_actions, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q table".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `x log x` with the `0 log 0 = 0` convention.
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Soft state values `V(s) = sum_a pi(a|s) (Q(s,a) - alpha log pi(a|s))`.
pub fn soft_values(mdp: &TabularMdp, policy: &TabularPolicy, q: &QTable) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    mdp.check_q(q)?;
    Ok((0..mdp.n_states)
        .map(|s| {
            policy
                .row(s)
                .iter()
                .zip(q.row(s))
                .map(|(&p, &qv)| p * qv - mdp.alpha * xlogx(p))
                .sum()
        })
        .collect())
}

fn backup_with_values(mdp: &TabularMdp, v: &[f64]) -> QTable {
    let mut out = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let ev: f64 = mdp.transition_row(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
            out.values[s * mdp.n_actions + a] = mdp.reward(s, a) + mdp.gamma * ev;
        }
    }
    out
}

/// One application of `T^pi`:
/// `Q(s,a) <- r(s,a) + gamma E_{s'~P, a'~pi}[Q(s',a') - alpha log pi(a'|s')]`.
pub fn soft_backup(mdp: &TabularMdp, policy: &TabularPolicy, q: &QTable) -> Result<QTable> {
    let v = soft_values(mdp, policy, q)?;
    Ok(backup_with_values(mdp, &v))
}

/// Iterates `T^pi` from `Q = 0` until successive tables differ by less than
/// `tol` in sup norm.
pub fn soft_policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    mdp.check_policy(policy)?;
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    loop {
        let next = soft_backup(mdp, policy, &q)?;
        let delta = next.sup_distance(&q);
        q = next;
        if delta < tol {
            return Ok(q);
        }
    }
}

/// Boltzmann policy `pi(a|s) ∝ exp(Q(s,a) / alpha)`, the exact maximizer of
/// `E_pi[Q] + alpha H(pi)` in every state.
pub fn soft_policy_improvement(mdp: &TabularMdp, q: &QTable) -> Result<TabularPolicy> {
    mdp.check_q(q)?;
    let mut probs = Vec::with_capacity(q.values.len());
    for s in 0..mdp.n_states {
        probs.extend(boltzmann(q.row(s), mdp.alpha));
    }
    Ok(TabularPolicy {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        probs,
    })
}

fn boltzmann(row: &[f64], alpha: f64) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|q| ((q - max) / alpha).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `alpha * log sum_a exp(Q(s,a) / alpha)` per state: the optimal soft value
/// when `Q` is optimal.
pub fn log_sum_exp_values(q: &QTable, alpha: f64) -> Vec<f64> {
    (0..q.n_states)
        .map(|s| {
            let row = q.row(s);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + alpha * row.iter().map(|v| ((v - max) / alpha).exp()).sum::<f64>().ln()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterationResult {
    pub policy: TabularPolicy,
    pub q: QTable,
    /// soft state values of each evaluated policy, in order
    pub value_trace: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates exact evaluation and Boltzmann improvement from the uniform
/// policy until successive policies are within `tol` in total variation.
pub fn soft_policy_iteration(mdp: &TabularMdp, tol: f64, max_iters: usize) -> Result<PolicyIterationResult> {
    soft_policy_iteration_from(mdp, TabularPolicy::uniform(mdp.n_states, mdp.n_actions), tol, max_iters)
}

pub fn soft_policy_iteration_from(
    mdp: &TabularMdp,
    start: TabularPolicy,
    tol: f64,
    max_iters: usize,
) -> Result<PolicyIterationResult> {
    mdp.check_policy(&start)?;
    // evaluate more tightly than the outer stopping rule
    let eval_tol = tol * 1e-2;
    let mut policy = start;
    let mut value_trace = Vec::new();
    for iter in 1..=max_iters {
        let q = soft_policy_evaluation(mdp, &policy, eval_tol)?;
        value_trace.push(soft_values(mdp, &policy, &q)?);
        let improved = soft_policy_improvement(mdp, &q)?;
        let tv = policy.max_total_variation(&improved);
        policy = improved;
        if tv < tol {
            let q = soft_policy_evaluation(mdp, &policy, eval_tol)?;
            value_trace.push(soft_values(mdp, &policy, &q)?);
            return Ok(PolicyIterationResult {
                policy,
                q,
                value_trace,
                iterations: iter,
                converged: true,
            });
        }
    }
    let q = soft_policy_evaluation(mdp, &policy, eval_tol)?;
    value_trace.push(soft_values(mdp, &policy, &q)?);
    Ok(PolicyIterationResult {
        policy,
        q,
        value_trace,
        iterations: max_iters,
        converged: false,
    })
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn discrete_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&x| xlogx(x)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEntropy {
    pub mixture: f64,
    pub weighted_components: f64,
    pub components: Vec<f64>,
}

impl MixtureEntropy {
    /// `H(mix) >= sum_i w_i H_i` up to `tol`.
    pub fn jensen_holds(&self, tol: f64) -> bool {
        self.mixture >= self.weighted_components - tol
    }

    /// Whether the mixture is at least as entropic as its best component.
    /// This is not true in general.
    pub fn exceeds_every_component(&self) -> bool {
        self.components.iter().all(|&h| self.mixture >= h)
    }
}

pub fn mixture_entropy_gap(weights: &[f64], distributions: &[Vec<f64>]) -> Result<MixtureEntropy> {
    if weights.is_empty() || weights.len() != distributions.len() {
        return Err(Error::shape("mixture components", weights.len(), distributions.len()));
    }
    check_row(weights, "mixture weights")?;
    let k = distributions[0].len();
    for (i, d) in distributions.iter().enumerate() {
        if d.len() != k {
            return Err(Error::shape("mixture component", k, d.len()));
        }
        check_row(d, &format!("component {i}"))?;
    }
    let mut mix = vec![0.0; k];
    for (w, d) in weights.iter().zip(distributions) {
        for (m, p) in mix.iter_mut().zip(d) {
            *m += w * p;
        }
    }
    let components: Vec<f64> = distributions.iter().map(|d| discrete_entropy(d)).collect();
    Ok(MixtureEntropy {
        mixture: discrete_entropy(&mix),
        weighted_components: weights.iter().zip(&components).map(|(w, h)| w * h).sum(),
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn bandit(gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 0.0], gamma, 1.0).unwrap()
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    /// Q^pi as the solution of (I - gamma P_pi) Q = r + gamma P H_pi.
    fn linear_solve_q(mdp: &TabularMdp, pi: &TabularPolicy) -> Vec<f64> {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let n = ns * na;
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for s in 0..ns {
            for act in 0..na {
                let i = s * na + act;
                a[i][i] += 1.0;
                b[i] = mdp.reward(s, act);
                for (s2, &p) in mdp.transition_row(s, act).iter().enumerate() {
                    for a2 in 0..na {
                        let q = pi.prob(s2, a2);
                        a[i][s2 * na + a2] -= mdp.gamma() * p * q;
                        if q > 0.0 {
                            b[i] -= mdp.gamma() * p * mdp.alpha() * q * q.ln();
                        }
                    }
                }
            }
        }
        solve(a, b)
    }

    #[test]
    fn rejects_invalid_rows() {
        assert!(TabularMdp::new(1, 2, vec![0.5, 1.0], vec![0.0, 0.0], 0.5, 1.0).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0, 1.0).is_err());
        assert!(TabularPolicy::new(1, 2, vec![0.7, 0.2]).is_err());
        assert!(TabularPolicy::new(1, 2, vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn zero_gamma_backup_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = TabularMdp::random(&mut rng, 5, 4);
        let mdp = TabularMdp { gamma: 0.0, ..base };
        let pi = TabularPolicy::random(&mut rng, mdp.n_states(), mdp.n_actions());
        let q = QTable::from_values(
            mdp.n_states(),
            mdp.n_actions(),
            (0..mdp.n_states() * mdp.n_actions()).map(|i| i as f64).collect(),
        )
        .unwrap();
        let out = soft_backup(&mdp, &pi, &q).unwrap();
        assert_eq!(out.values(), &mdp.rewards[..]);
        let evald = soft_policy_evaluation(&mdp, &pi, 1e-10).unwrap();
        assert_eq!(evald.values(), &mdp.rewards[..]);
    }

    #[test]
    fn bandit_backup_by_hand() {
        let mdp = bandit(0.5);
        let out = soft_backup(&mdp, &TabularPolicy::uniform(1, 2), &QTable::zeros(1, 2)).unwrap();
        assert!((out.get(0, 0) - (1.0 + 0.5 * LN_2)).abs() < 1e-15);
        assert!((out.get(0, 1) - 0.5 * LN_2).abs() < 1e-15);
        assert!((0.5 * LN_2 - 0.346_573_590_279_972_6).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_actions_have_no_log_term() {
        let mdp = bandit(0.5);
        let pi = TabularPolicy::new(1, 2, vec![1.0, 0.0]).unwrap();
        let q = QTable::from_values(1, 2, vec![2.0, 5.0]).unwrap();
        let out = soft_backup(&mdp, &pi, &q).unwrap();
        assert_eq!(out.values(), &[2.0, 1.0]);
    }

    #[test]
    fn contraction_on_random_mdps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mdp = TabularMdp::random(&mut rng, 6, 6);
            let (ns, na) = (mdp.n_states(), mdp.n_actions());
            let pi = TabularPolicy::random(&mut rng, ns, na);
            let q1 = QTable::from_values(ns, na, (0..ns * na).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
            let q2 = QTable::from_values(ns, na, (0..ns * na).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
            let lhs = soft_backup(&mdp, &pi, &q1)
                .unwrap()
                .sup_distance(&soft_backup(&mdp, &pi, &q2).unwrap());
            assert!(lhs <= mdp.gamma() * q1.sup_distance(&q2) + 1e-12);
        }
    }

    #[test]
    fn evaluation_matches_linear_solve() {
        let mdp = bandit(0.9);
        let pi = TabularPolicy::uniform(1, 2);
        let q = soft_policy_evaluation(&mdp, &pi, 1e-12).unwrap();
        let exact = linear_solve_q(&mdp, &pi);
        for (a, b) in q.values().iter().zip(&exact) {
            assert!((a - b).abs() < 1e-9);
        }
        // closed form: c = (mean r + gamma alpha ln 2) / (1 - gamma)
        let c = (0.5 + 0.9 * LN_2) / 0.1;
        assert!((q.get(0, 0) - (1.0 + 0.9 * (c + LN_2))).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let mdp = TabularMdp::random(&mut rng, 6, 6);
            let pi = TabularPolicy::random(&mut rng, mdp.n_states(), mdp.n_actions());
            let q = soft_policy_evaluation(&mdp, &pi, 1e-12).unwrap();
            let exact = linear_solve_q(&mdp, &pi);
            let residual = soft_backup(&mdp, &pi, &q).unwrap().sup_distance(&q);
            assert!(residual < 1e-12 * (1.0 + mdp.gamma()) / (1.0 - mdp.gamma()));
            for (a, b) in q.values().iter().zip(&exact) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn evaluation_matches_monte_carlo_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let transitions = vec![
            0.7, 0.3, 0.0, 0.1, 0.1, 0.8, //
            0.0, 0.5, 0.5, 0.3, 0.3, 0.4, //
            1.0, 0.0, 0.0, 0.2, 0.0, 0.8,
        ];
        let rewards = vec![1.0, -0.5, 0.2, 0.0, -1.0, 0.7];
        let mdp = TabularMdp::new(3, 2, transitions, rewards, 0.6, 0.5).unwrap();
        let pi = TabularPolicy::new(3, 2, vec![0.3, 0.7, 0.5, 0.5, 0.9, 0.1]).unwrap();
        let q = soft_policy_evaluation(&mdp, &pi, 1e-12).unwrap();

        let horizon = 40; // 0.6^40 ~ 1e-9
        let per_pair = 1_000_000 / (6 * horizon);
        let draw = |rng: &mut ChaCha8Rng, row: &[f64]| -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            row.len() - 1
        };
        for s0 in 0..3 {
            for a0 in 0..2 {
                let mut sum = 0.0;
                let mut sum_sq = 0.0;
                for _ in 0..per_pair {
                    let mut g = mdp.reward(s0, a0);
                    let mut s = draw(&mut rng, mdp.transition_row(s0, a0));
                    let mut disc = 1.0;
                    for _ in 1..horizon {
                        disc *= mdp.gamma();
                        let a = draw(&mut rng, pi.row(s));
                        g += disc * (mdp.reward(s, a) - mdp.alpha() * pi.prob(s, a).ln());
                        s = draw(&mut rng, mdp.transition_row(s, a));
                    }
                    sum += g;
                    sum_sq += g * g;
                }
                let n = per_pair as f64;
                let mean = sum / n;
                let se = ((sum_sq / n - mean * mean) / n).sqrt();
                assert!(
                    (mean - q.get(s0, a0)).abs() < 3.0 * se + 1e-8,
                    "({s0},{a0}) {mean} vs {} se {se}",
                    q.get(s0, a0)
                );
            }
        }
    }

    #[test]
    fn improvement_examples() {
        let mdp = bandit(0.5);
        let flat = soft_policy_improvement(&mdp, &QTable::from_values(1, 2, vec![3.0, 3.0]).unwrap()).unwrap();
        assert_eq!(flat.row(0), &[0.5, 0.5]);
        let pi = soft_policy_improvement(&mdp, &QTable::from_values(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        assert!((pi.prob(0, 0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        let hot = TabularMdp { alpha: 1e3, ..mdp };
        let q = QTable::from_values(1, 2, vec![1.0, 0.0]).unwrap();
        let pi = soft_policy_improvement(&hot, &q).unwrap();
        assert!((pi.prob(0, 0) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn bandit_optimum_is_log_sum_exp() {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0, 0.0], 0.0, 1.0).unwrap();
        let out = soft_policy_iteration(&mdp, 1e-10, 100).unwrap();
        assert!(out.converged);
        let v = out.value_trace.last().unwrap()[0];
        assert!((v - (1.0 + std::f64::consts::E).ln()).abs() < 1e-9);
        assert!((v - 1.313_261_687_518_222_8).abs() < 1e-9);
        assert!((out.policy.prob(0, 0) - 0.731_058_578_630_004_9).abs() < 1e-9);
        assert!((out.policy.prob(0, 1) - 0.268_941_421_369_995_1).abs() < 1e-9);
    }

    #[test]
    fn optimal_start_converges_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = TabularMdp::random(&mut rng, 4, 3);
        let first = soft_policy_iteration(&mdp, 1e-10, 200).unwrap();
        let again = soft_policy_iteration_from(&mdp, first.policy.clone(), 1e-10, 200).unwrap();
        assert_eq!(again.iterations, 1);
        assert!(again.q.sup_distance(&first.q) < 1e-9);
    }

    #[test]
    fn policy_iteration_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mdp = TabularMdp::random(&mut rng, 6, 6);
            let out = soft_policy_iteration(&mdp, 1e-10, 200).unwrap();
            assert!(out.converged);
            for w in out.value_trace.windows(2) {
                for (old, new) in w[0].iter().zip(&w[1]) {
                    assert!(*new >= old - 1e-8);
                }
            }
            let residual = soft_backup(&mdp, &out.policy, &out.q).unwrap().sup_distance(&out.q);
            assert!(residual < 1e-8);
            let re = soft_policy_improvement(&mdp, &out.q).unwrap();
            assert!(re.max_total_variation(&out.policy) < 1e-8);
            for _ in 0..50 {
                let pi = TabularPolicy::random(&mut rng, mdp.n_states(), mdp.n_actions());
                let q = soft_policy_evaluation(&mdp, &pi, 1e-10).unwrap();
                for (best, other) in out.q.values().iter().zip(q.values()) {
                    assert!(*best >= other - 1e-8);
                }
            }
        }
    }

    #[test]
    fn max_iterations_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = TabularMdp {
            gamma: 0.9,
            ..TabularMdp::random(&mut rng, 5, 5)
        };
        let out = soft_policy_iteration(&mdp, 1e-14, 1).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn mixture_entropy_examples() {
        let same = mixture_entropy_gap(&[0.3, 0.7], &[vec![0.2, 0.8], vec![0.2, 0.8]]).unwrap();
        assert!((same.mixture - same.components[0]).abs() < 1e-15);

        let disjoint = mixture_entropy_gap(&[0.5, 0.5], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((disjoint.mixture - LN_2).abs() < 1e-15);
        assert_eq!(disjoint.weighted_components, 0.0);

        let skewed = mixture_entropy_gap(&[0.01, 0.99], &[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        // mixture (0.995, 0.005)
        assert!(
            (skewed.mixture - 0.031_479_065_947_166_75).abs() < 1e-12,
            "{}",
            skewed.mixture
        );
        assert!(skewed.mixture < skewed.components[0]);
        assert!(!skewed.exceeds_every_component());
        assert!(skewed.jensen_holds(1e-12));

        assert!(mixture_entropy_gap(&[0.6, 0.6], &[vec![1.0], vec![1.0]]).is_err());
        assert!(mixture_entropy_gap(&[1.0], &[vec![0.5, 0.6]]).is_err());
    }

    #[test]
    fn jensen_bound_on_random_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let k = rng.random_range(1..=5);
            let n = rng.random_range(1..=6);
            let w = random_simplex(&mut rng, k, 0.2);
            let d: Vec<Vec<f64>> = (0..k).map(|_| random_simplex(&mut rng, n, 0.3)).collect();
            assert!(mixture_entropy_gap(&w, &d).unwrap().jensen_holds(1e-12));
        }
    }
}
