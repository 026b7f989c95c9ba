//! Group relative policy optimization with the global cooperation constraint.
//!
//! One epoch:
//!
//! 1. snapshot `theta_old <- theta` and read `g` from the committed grid;
//! 2. every agent draws `eta` candidate actions from `theta_old` at its
//!    neighborhood and scores each by its counterfactual payoff (only the
//!    agent's own cell changes), scaled for cooperators by `1 + rho g (1 - g)`;
//! 3. rewards are normalized within each agent's candidate group;
//! 4. `zeta` Adam steps on the negated clipped-surrogate-minus-KL objective,
//!    averaged over agents;
//! 5. every agent commits a fresh sample from the updated policy;
//! 6. the reference policy is refreshed every `ref_update_period` epochs.
//!
//! The policy is shared by all agents and only sees the 5-bit neighborhood,
//! so forward and backward passes are done once per distinct neighborhood.
//! Per-agent contributions to `dLoss/dlogits` are reduced in ascending agent
//! order, which keeps results bitwise identical for any thread count.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{
    counterfactual_payoff, gcc_adjust, global_coop_rate, neighborhood_code, GlobalSignal, Strategy, StrategyGrid,
};
use crate::policy::{
    adam_step, backward, clamp_prob, code_to_input, forward, kl_two_point, kl_two_point_dp, AdamState, ForwardCache,
    LrSchedule, MlpParams, PROB_FLOOR,
};
use crate::seed::{self, tag};

/// Number of distinct neighborhood codes.
const STATES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoHyper {
    pub clip_eps: f64,
    pub beta: f64,
    /// Candidates sampled per agent.
    pub eta: usize,
    /// Inner updates per epoch.
    pub zeta: usize,
    pub rho: f64,
    pub sigma_guard: f64,
    pub ref_update_period: usize,
}

impl Default for GrpoHyper {
    fn default() -> Self {
        GrpoHyper {
            clip_eps: 0.2,
            beta: 0.04,
            eta: 8,
            zeta: 3,
            rho: 1.0,
            sigma_guard: 1e-8,
            ref_update_period: 1,
        }
    }
}

/// Current, old-policy and reference parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTriplet {
    pub current: MlpParams,
    pub old: MlpParams,
    pub reference: MlpParams,
}

impl PolicyTriplet {
    pub fn new(params: MlpParams) -> Self {
        PolicyTriplet {
            old: params.clone(),
            reference: params.clone(),
            current: params,
        }
    }
}

/// One agent's sampled candidate group.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub agent: usize,
    pub state_code: u8,
    pub actions: Vec<Strategy>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// `pi_old(a^g | s)`, clamped.
    pub old_probs: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `(R - mean) / std` with the population standard deviation. Returns all
/// zeros when `std <= sigma_guard`.
pub fn normalize_advantages(rewards: &[f64], sigma_guard: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std <= sigma_guard {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// GCC-adjusted counterfactual reward of each action for the agent at
/// `index`, indexed by [`Strategy::as_index`].
pub fn candidate_rewards(grid: &StrategyGrid, index: usize, r: f64, signal: &GlobalSignal) -> [f64; 2] {
    let c = grid.coord_of(index);
    Strategy::ALL.map(|s| gcc_adjust(counterfactual_payoff(grid, c, s, r), s, signal))
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
#[inline]
pub fn clipped_surrogate_term(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// Per-agent objective and its derivative with respect to the logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentTerms {
    pub objective: f64,
    pub kl: f64,
    pub dobjective_dlogits: [f64; 2],
}

/// Objective of one agent given the current and reference action
/// probabilities at its state.
pub fn agent_terms(
    probs: [f64; 2],
    ref_probs: [f64; 2],
    cands: &CandidateSet,
    hyper: &GrpoHyper,
) -> Result<AgentTerms> {
    let g = cands.len() as f64;
    let mut objective = 0.0;
    let mut dz = [0.0; 2];
    for ((&a, &adv), &old) in cands.actions.iter().zip(&cands.advantages).zip(&cands.old_probs) {
        if old.is_nan() || old < PROB_FLOOR {
            return Err(Error::Invariant(format!(
                "stored old-policy probability {old} is below the clamp floor"
            )));
        }
        let a = a.as_index();
        let raw = probs[a];
        let pa = clamp_prob(raw);
        let ratio = pa / old;
        let unclipped = ratio * adv;
        let term = clipped_surrogate_term(ratio, adv, hyper.clip_eps);
        objective += term / g;
        // The gradient flows only when min() picks the unclipped branch.
        if unclipped <= term && pa == raw && adv != 0.0 {
            let scale = adv / (old * g);
            for (b, d) in dz.iter_mut().enumerate() {
                let kronecker = if a == b { 1.0 } else { 0.0 };
                *d += scale * raw * (kronecker - probs[b]);
            }
        }
    }
    let (p, q) = (probs[1], ref_probs[1]);
    let kl = kl_two_point(p, q);
    objective -= hyper.beta * kl;
    if hyper.beta != 0.0 {
        // dp/dz1 = p(1-p), dp/dz0 = -p(1-p)
        let dkl_dz1 = kl_two_point_dp(p, q) * p * (1.0 - p);
        dz[1] -= hyper.beta * dkl_dz1;
        dz[0] += hyper.beta * dkl_dz1;
    }
    Ok(AgentTerms {
        objective,
        kl,
        dobjective_dlogits: dz,
    })
}

/// Objective value and the gradient of its negation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub objective: f64,
    pub mean_kl: f64,
    /// Gradient of `-objective` with respect to `theta`.
    pub grad: MlpParams,
}

/// Clipped surrogate minus `beta * KL` for a single agent.
pub fn grpo_gcc_loss(
    theta: &MlpParams,
    cands: &CandidateSet,
    state: &[f64],
    theta_ref: &MlpParams,
    hyper: &GrpoHyper,
) -> Result<LossAndGrad> {
    let cache = forward(theta, state)?;
    let ref_probs = forward(theta_ref, state)?.probs;
    let t = agent_terms(cache.probs, ref_probs, cands, hyper)?;
    let mut grad = theta.zeros_like();
    backward(theta, &cache, t.dobjective_dlogits.map(|d| -d), &mut grad)?;
    Ok(LossAndGrad {
        objective: t.objective,
        mean_kl: t.kl,
        grad,
    })
}

/// Every agent's candidate group for one epoch, in ascending agent order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochBatch {
    pub candidates: Vec<CandidateSet>,
    pub signal: GlobalSignal,
}

impl EpochBatch {
    /// Samples candidates from `theta_old` with per-agent streams keyed by
    /// `(seed, epoch, agent)`.
    pub fn sample(
        grid: &StrategyGrid,
        theta_old: &MlpParams,
        hyper: &GrpoHyper,
        r: f64,
        seed: u64,
        epoch: usize,
    ) -> Result<Self> {
        let signal = GlobalSignal::new(global_coop_rate(grid), hyper.rho)?;
        let old_probs = state_probs(theta_old)?;
        let candidates = (0..grid.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|agent| {
                let code = neighborhood_code(grid, grid.coord_of(agent));
                let p_coop = old_probs[code as usize][1];
                let mut rng = seed::stream(seed, &[tag::CANDIDATES, epoch as u64, agent as u64]);
                let actions: Vec<Strategy> = (0..hyper.eta)
                    .map(|_| Strategy::from_bool(rng.random::<f64>() < p_coop))
                    .collect();
                let by_action = candidate_rewards(grid, agent, r, &signal);
                let rewards: Vec<f64> = actions.iter().map(|a| by_action[a.as_index()]).collect();
                let advantages = normalize_advantages(&rewards, hyper.sigma_guard);
                let old = actions
                    .iter()
                    .map(|a| clamp_prob(old_probs[code as usize][a.as_index()]))
                    .collect();
                CandidateSet {
                    agent,
                    state_code: code,
                    actions,
                    rewards,
                    advantages,
                    old_probs: old,
                }
            })
            .collect();
        Ok(EpochBatch { candidates, signal })
    }

    /// Mean over agents of the per-agent objective, and the gradient of its
    /// negation.
    pub fn objective(&self, theta: &MlpParams, theta_ref: &MlpParams, hyper: &GrpoHyper) -> Result<LossAndGrad> {
        let caches = state_caches(theta)?;
        let ref_probs = state_probs(theta_ref)?;
        let terms = self
            .candidates
            .par_iter()
            .with_min_len(256)
            .map(|c| {
                let s = c.state_code as usize;
                agent_terms(caches[s].probs, ref_probs[s], c, hyper)
            })
            .collect::<Result<Vec<_>>>()?;

        let n = self.candidates.len() as f64;
        let mut objective = 0.0;
        let mut kl = 0.0;
        let mut dz = [[0.0f64; 2]; STATES];
        for (c, t) in self.candidates.iter().zip(&terms) {
            objective += t.objective;
            kl += t.kl;
            let acc = &mut dz[c.state_code as usize];
            acc[0] += t.dobjective_dlogits[0];
            acc[1] += t.dobjective_dlogits[1];
        }
        let mut grad = theta.zeros_like();
        for (cache, d) in caches.iter().zip(&dz) {
            backward(theta, cache, [-d[0] / n, -d[1] / n], &mut grad)?;
        }
        Ok(LossAndGrad {
            objective: objective / n,
            mean_kl: kl / n,
            grad,
        })
    }

    /// Population std of each agent's advantages, averaged over agents. Near 1
    /// when groups are mixed, 0 when every candidate agreed.
    pub fn mean_advantage_std(&self) -> f64 {
        let total: f64 = self
            .candidates
            .iter()
            .map(|c| {
                let n = c.advantages.len() as f64;
                let mean = c.advantages.iter().sum::<f64>() / n;
                (c.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .sum();
        total / self.candidates.len() as f64
    }
}

fn state_caches(theta: &MlpParams) -> Result<Vec<ForwardCache>> {
    (0..STATES as u8).map(|c| forward(theta, &code_to_input(c))).collect()
}

/// `[pi(defect), pi(cooperate)]` for every neighborhood code.
pub fn state_probs(theta: &MlpParams) -> Result<Vec<[f64; 2]>> {
    Ok(state_caches(theta)?.into_iter().map(|c| c.probs).collect())
}

/// Diagnostics of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Cooperation fraction of the committed next grid.
    pub coop_fraction: f64,
    /// Mean over inner steps of the negated objective.
    pub mean_loss: f64,
    pub mean_kl: f64,
    pub mean_adv_std: f64,
    pub lr: f64,
}

/// Policy, optimizer and sampling state for a GRPO(-GCC) run.
#[derive(Debug, Clone)]
pub struct GrpoTrainer {
    pub policies: PolicyTriplet,
    pub adam: AdamState,
    pub schedule: LrSchedule,
    pub hyper: GrpoHyper,
    pub r: f64,
    pub seed: u64,
}

impl GrpoTrainer {
    /// Fresh trainer with fan-balanced initial weights drawn from the
    /// seed's policy stream.
    pub fn new(hidden: [usize; 3], hyper: GrpoHyper, schedule: LrSchedule, r: f64, seed: u64) -> Self {
        let params = MlpParams::glorot(hidden, &mut seed::stream(seed, &[tag::POLICY_INIT]));
        GrpoTrainer::with_params(params, hyper, schedule, r, seed)
    }

    pub fn with_params(params: MlpParams, hyper: GrpoHyper, schedule: LrSchedule, r: f64, seed: u64) -> Self {
        GrpoTrainer {
            adam: AdamState::new(&params),
            policies: PolicyTriplet::new(params),
            schedule,
            hyper,
            r,
            seed,
        }
    }

    pub fn train_epoch(&mut self, grid: &StrategyGrid, epoch: usize) -> Result<(StrategyGrid, EpochReport)> {
        let hyper = self.hyper;
        self.policies.old = self.policies.current.clone();
        let batch = EpochBatch::sample(grid, &self.policies.old, &hyper, self.r, self.seed, epoch)?;
        let lr = self.schedule.effective_lr(epoch);

        let mut loss_sum = 0.0;
        let mut kl_sum = 0.0;
        for step in 0..hyper.zeta {
            let out = batch.objective(&self.policies.current, &self.policies.reference, &hyper)?;
            if !out.objective.is_finite() || !out.grad.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    diagnostics: format!(
                        "inner step {step}, objective {}, mean kl {}, lr {lr}",
                        out.objective, out.mean_kl
                    ),
                });
            }
            loss_sum -= out.objective;
            kl_sum += out.mean_kl;
            adam_step(&mut self.policies.current, &out.grad, &mut self.adam, lr)?;
        }

        let probs = state_probs(&self.policies.current)?;
        let cells: Vec<Strategy> = (0..grid.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|agent| {
                let code = neighborhood_code(grid, grid.coord_of(agent)) as usize;
                let mut rng = seed::stream(self.seed, &[tag::COMMIT, epoch as u64, agent as u64]);
                Strategy::from_bool(rng.random::<f64>() < probs[code][1])
            })
            .collect();
        let next = StrategyGrid::new(grid.side(), cells)?;

        let period = hyper.ref_update_period.max(1);
        if epoch % period == period - 1 {
            self.policies.reference = self.policies.current.clone();
        }

        let report = EpochReport {
            epoch,
            coop_fraction: global_coop_rate(&next),
            mean_loss: loss_sum / hyper.zeta as f64,
            mean_kl: kl_sum / hyper.zeta as f64,
            mean_adv_std: batch.mean_advantage_std(),
            lr,
        };
        Ok((next, report))
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lattice::Strategy;
    use crate::lattice::{init_lattice, total_payoff, InitMode};

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn schedule() -> LrSchedule {
        LrSchedule {
            base_alpha: 1e-3,
            halve_period: 1000,
        }
    }

    fn set(actions: &[u8], rewards: &[f64], old: &[f64]) -> CandidateSet {
        CandidateSet {
            agent: 0,
            state_code: 0,
            actions: actions.iter().map(|&a| Strategy::from_bool(a == 1)).collect(),
            rewards: rewards.to_vec(),
            advantages: normalize_advantages(rewards, 1e-8),
            old_probs: old.to_vec(),
        }
    }

    #[test]
    fn advantage_examples() {
        let a = normalize_advantages(&[1.0, 2.0, 3.0], 1e-8);
        assert_relative_eq!(a[0], -1.224745, epsilon = 1e-6);
        assert_eq!(a[1], 0.0);
        assert_relative_eq!(a[2], 1.224745, epsilon = 1e-6);
        assert_eq!(normalize_advantages(&[7.0; 4], 1e-8), vec![0.0; 4]);
        assert_eq!(normalize_advantages(&[0.0, 4.0], 1e-8), vec![-1.0, 1.0]);
    }

    #[test]
    fn surrogate_term_examples() {
        assert_relative_eq!(clipped_surrogate_term(1.5, 1.0, 0.2), 1.2);
        assert_relative_eq!(clipped_surrogate_term(0.5, -1.0, 0.2), -0.8);
        assert_relative_eq!(clipped_surrogate_term(1.1, 2.0, 0.2), 2.2);
    }

    #[test]
    fn on_policy_objective_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = MlpParams::glorot([8, 8, 8], &mut rng);
        let x = code_to_input(19);
        let p = forward(&theta, &x).unwrap().probs;
        let c = set(&[1, 0, 1, 1], &[2.0, 1.0, 2.0, 2.0], &[p[1], p[0], p[1], p[1]]);
        let out = grpo_gcc_loss(&theta, &c, &x, &theta, &GrpoHyper::default()).unwrap();
        assert!(out.objective.abs() < 1e-12);
        assert_eq!(out.mean_kl, 0.0);
    }

    #[test]
    fn clipped_branch_blocks_gradient() {
        let hyper = GrpoHyper {
            beta: 0.0,
            ..GrpoHyper::default()
        };
        // ratio = 0.8 / 0.5 = 1.6 > 1.2 with a positive advantage.
        let probs = [0.2, 0.8];
        let mut c = set(&[1], &[1.0], &[0.5]);
        c.advantages = vec![1.0];
        let t = agent_terms(probs, probs, &c, &hyper).unwrap();
        assert_relative_eq!(t.objective, 1.2);
        assert_eq!(t.dobjective_dlogits, [0.0, 0.0]);
        // Same ratio with a negative advantage keeps the unclipped branch.
        c.advantages = vec![-1.0];
        let t = agent_terms(probs, probs, &c, &hyper).unwrap();
        assert_relative_eq!(t.objective, -1.6);
        assert!(t.dobjective_dlogits[1] < 0.0);
    }

    #[test]
    fn old_probability_below_floor_is_rejected() {
        let c = set(&[1, 0], &[1.0, 0.0], &[1e-9, 0.5]);
        let err = agent_terms([0.5, 0.5], [0.5, 0.5], &c, &GrpoHyper::default());
        assert!(matches!(err, Err(Error::Invariant(_))));
    }

    #[test]
    fn single_agent_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hidden = [5, 4, 6];
        let old = MlpParams::glorot(hidden, &mut rng);
        let flat: Vec<f64> = old
            .to_flat()
            .iter()
            .map(|v| v + rng.random_range(-0.05..0.05))
            .collect();
        let theta = MlpParams::from_flat(hidden, &flat).unwrap();
        let reference = MlpParams::glorot(hidden, &mut rng);
        let x = code_to_input(13);
        let p_old = forward(&old, &x).unwrap().probs;
        let actions = [1u8, 0, 0, 1, 1, 0];
        let c = set(
            &actions,
            &[3.0, 1.0, 1.0, 3.0, 3.0, 1.0],
            &actions.map(|a| p_old[a as usize]),
        );
        let hyper = GrpoHyper::default();
        let out = grpo_gcc_loss(&theta, &c, &x, &reference, &hyper).unwrap();
        let f = |v: &[f64]| {
            let p = MlpParams::from_flat(hidden, v).unwrap();
            -grpo_gcc_loss(&p, &c, &x, &reference, &hyper).unwrap().objective
        };
        let h = 1e-6;
        for (i, a) in out.grad.to_flat().iter().enumerate() {
            let (mut plus, mut minus) = (flat.clone(), flat.clone());
            plus[i] += h;
            minus[i] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!(rel_err(*a, fd) < 1e-4, "param {i}: {a} vs {fd}");
        }
    }

    #[test]
    fn on_policy_gradient_is_reinforce() {
        // At theta == theta_old == theta_ref the gradient of the objective is
        // (1/G) sum_g A_g grad log pi(a_g).
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = MlpParams::glorot([6, 6, 6], &mut rng);
        let x = code_to_input(22);
        let cache = forward(&theta, &x).unwrap();
        let p = cache.probs;
        let actions = [1u8, 1, 0, 1, 0];
        let c = set(&actions, &[5.0, 5.0, 2.0, 5.0, 2.0], &actions.map(|a| p[a as usize]));
        let out = grpo_gcc_loss(&theta, &c, &x, &theta, &GrpoHyper::default()).unwrap();

        let mut reinforce = theta.zeros_like();
        for (a, adv) in c.actions.iter().zip(&c.advantages) {
            let a = a.as_index();
            // d log softmax_a / dz_b = delta_ab - p_b; negate for the loss.
            let dz: [f64; 2] = std::array::from_fn(|b| -(adv / 5.0) * (f64::from(u8::from(a == b)) - p[b]));
            backward(&theta, &cache, dz, &mut reinforce).unwrap();
        }
        for (a, b) in out.grad.to_flat().iter().zip(reinforce.to_flat()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_rho_rewards_are_raw_payoffs() {
        let g = init_lattice(6, InitMode::Bernoulli(0.5), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let signal = GlobalSignal::new(global_coop_rate(&g), 0.0).unwrap();
        for i in 0..g.len() {
            let rewards = candidate_rewards(&g, i, 4.2, &signal);
            for s in Strategy::ALL {
                let mut h = g.clone();
                h.set(g.coord_of(i), s);
                assert_eq!(
                    rewards[s.as_index()].to_bits(),
                    total_payoff(&h, g.coord_of(i), 4.2).to_bits()
                );
            }
        }
    }

    #[test]
    fn uniform_policy_commits_fair_coin_flips() {
        let grid = init_lattice(50, InitMode::HalfHalf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut t = GrpoTrainer::with_params(MlpParams::zeros([8, 8, 8]), GrpoHyper::default(), schedule(), 4.0, 99);
        // lr 0 keeps theta at zero through the inner updates.
        t.schedule.base_alpha = 0.0;
        let (next, report) = t.train_epoch(&grid, 0).unwrap();
        // 3 sigma band for Binomial(2500, 0.5): 1250 +/- 75.
        let c = next.cooperator_count();
        assert!((1175..=1325).contains(&c), "{c}");
        assert_eq!(report.coop_fraction, c as f64 / 2500.0);
    }

    #[test]
    fn reference_tracks_current_with_period_one() {
        let grid = init_lattice(8, InitMode::HalfHalf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut t = GrpoTrainer::new([8, 8, 8], GrpoHyper::default(), schedule(), 6.0, 5);
        let (next, _) = t.train_epoch(&grid, 0).unwrap();
        assert_eq!(t.policies.reference, t.policies.current);
        assert_ne!(t.policies.current, t.policies.old);
        t.train_epoch(&next, 1).unwrap();
        assert_eq!(t.policies.reference, t.policies.current);
    }

    #[test]
    fn reference_refreshes_on_period_boundary() {
        let grid = init_lattice(8, InitMode::HalfHalf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let hyper = GrpoHyper {
            ref_update_period: 3,
            ..GrpoHyper::default()
        };
        let mut t = GrpoTrainer::new([8, 8, 8], hyper, schedule(), 6.0, 5);
        let initial = t.policies.reference.clone();
        let mut g = grid;
        for epoch in 0..2 {
            g = t.train_epoch(&g, epoch).unwrap().0;
            assert_eq!(t.policies.reference, initial);
        }
        t.train_epoch(&g, 2).unwrap();
        assert_eq!(t.policies.reference, t.policies.current);
    }

    #[test]
    fn epoch_is_deterministic() {
        let grid = init_lattice(12, InitMode::Bernoulli(0.5), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let run = || {
            let mut t = GrpoTrainer::new([8, 8, 8], GrpoHyper::default(), schedule(), 4.4, 21);
            let (g1, r1) = t.train_epoch(&grid, 0).unwrap();
            let (g2, r2) = t.train_epoch(&g1, 1).unwrap();
            (
                g2,
                r1,
                r2,
                t.policies
                    .current
                    .to_flat()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kl_vanishes_when_current_equals_reference() {
        let grid = init_lattice(6, InitMode::Bernoulli(0.5), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let theta = MlpParams::glorot([8, 8, 8], &mut ChaCha8Rng::seed_from_u64(6));
        let hyper = GrpoHyper::default();
        let batch = EpochBatch::sample(&grid, &theta, &hyper, 4.0, 1, 0).unwrap();
        let out = batch.objective(&theta, &theta, &hyper).unwrap();
        assert_eq!(out.mean_kl, 0.0);
        assert!(out.objective.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn advantages_are_standardized(rewards in proptest::collection::vec(-100.0f64..100.0, 2..16)) {
            let a = normalize_advantages(&rewards, 1e-8);
            let n = a.len() as f64;
            let mean = rewards.iter().sum::<f64>() / n;
            let sigma = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sigma > 1e-8 {
                let m = a.iter().sum::<f64>() / n;
                let sd = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(m.abs() <= 1e-9);
                prop_assert!((sd - 1.0).abs() <= 1e-6);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }
    }
}
