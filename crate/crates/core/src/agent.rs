//! Goal-conditioned DDPG over concatenated `(observation, goal)` inputs.

use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::GoalEnv;
use crate::error::{Error, Result};
use crate::nn::{adam_step, init_net, polyak_update, AdamState, DenseNet, OutputActivation};
use crate::replay::{filter_batch, FilterConfig, QEvaluator, RelabelConfig, RelabeledSample, ReplayBuffer};
use crate::rewards::RewardFn;
use crate::types::{Action, Observation, RewardConstants, Transition, TransitionTruth};
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub reward_constants: RewardConstants,
    /// Fraction of the target network retained on each Polyak update.
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub explore_sigma: f64,
    pub explore_random_prob: f64,
    pub normalize_obs: bool,
    pub target_clip: (f64, f64),
    /// Hidden-layer widths shared by actor and critic.
    pub hidden: Vec<usize>,
    /// Weight of the `mean(a²)` penalty in the actor loss.
    pub action_l2: f64,
}

impl AgentConfig {
    /// Defaults: 3×256 hidden layers, batch 256 (128 for image
    /// observations), normalization on unless the inputs are images, and a
    /// small action penalty that keeps the tanh output off its rails.
    pub fn new(reward_constants: RewardConstants, pixel: bool) -> Self {
        Self {
            reward_constants,
            tau: 0.98,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            batch_size: if pixel { 128 } else { 256 },
            explore_sigma: 0.2,
            explore_random_prob: 0.3,
            normalize_obs: !pixel,
            target_clip: (reward_constants.q_min(), reward_constants.q_max()),
            hidden: vec![256, 256, 256],
            action_l2: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reward_constants.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.explore_sigma >= 0.0) || !(0.0..=1.0).contains(&self.explore_random_prob) {
            return bad("exploration parameters out of range".into());
        }
        if !(self.target_clip.0 < self.target_clip.1) {
            return bad(format!("empty target_clip {:?}", self.target_clip));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("invalid hidden sizes {:?}", self.hidden));
        }
        if !(self.action_l2 >= 0.0) {
            return bad("action_l2 must be non-negative".into());
        }
        Ok(())
    }
}

/// Per-dimension running mean and variance with clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: u64,
    pub clip: f64,
    pub var_floor: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], m2: vec![0.0; dim], count: 0, clip: 5.0, var_floor: 1e-8 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance, floored.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|m| (m / n).max(self.var_floor)).collect()
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), actual: x.len() });
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
        Ok(())
    }

    /// Appends the normalized `x` to `out`. Identity until the first update.
    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        if self.count == 0 {
            out.extend_from_slice(x);
            return;
        }
        let n = self.count as f64;
        for ((v, m), s) in x.iter().zip(&self.mean).zip(&self.m2) {
            let sd = (s / n).max(self.var_floor).sqrt();
            out.push(((v - m) / sd).clamp(-self.clip, self.clip));
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }
}

/// Anything that can act in an environment.
pub trait Policy {
    fn act(&self, obs: &Observation, goal: &Observation, explore: bool, rng: &mut Rng)
        -> Result<Action>;
}

/// Uniform random actions in `[-1, 1]^d`.
#[derive(Clone, Copy, Debug)]
pub struct RandomPolicy {
    pub action_dim: usize,
}

impl Policy for RandomPolicy {
    fn act(&self, _: &Observation, _: &Observation, _: bool, rng: &mut Rng) -> Result<Action> {
        Action::new((0..self.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub sampled: usize,
    /// Batch size after filtering.
    pub kept: usize,
    pub filtered_fraction: f64,
    pub mean_q: f64,
    pub mean_target: f64,
    pub positive_fraction: f64,
    pub critic_loss: f64,
    /// Every sample was filtered and no update happened.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    /// Ground-truth success after each step.
    pub successes: Vec<bool>,
    /// State-space distance to the goal after the last step.
    pub final_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over episodes and steps of ground-truth success.
    pub success: f64,
    pub final_distance: f64,
}

#[derive(Clone, Debug)]
pub struct DDPGAgent {
    config: AgentConfig,
    obs_dim: usize,
    action_dim: usize,
    actor: DenseNet,
    critic: DenseNet,
    actor_target: DenseNet,
    critic_target: DenseNet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    normalizer: RunningNormalizer,
}

impl DDPGAgent {
    pub fn new(config: AgentConfig, obs_dim: usize, action_dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || action_dim == 0 {
            return Err(Error::Config("observation and action dims must be positive".into()));
        }
        let dims = |input: usize, output: usize| -> Vec<usize> {
            std::iter::once(input).chain(config.hidden.iter().copied()).chain([output]).collect()
        };
        let actor = init_net(&dims(2 * obs_dim, action_dim), OutputActivation::Tanh, rng, 0.0)?;
        let critic = init_net(
            &dims(2 * obs_dim + action_dim, 1),
            OutputActivation::Linear,
            rng,
            config.reward_constants.q_min(),
        )?;
        Ok(Self {
            actor_opt: AdamState::new(&actor, config.lr_actor),
            critic_opt: AdamState::new(&critic, config.lr_critic),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            normalizer: RunningNormalizer::new(obs_dim),
            config,
            obs_dim,
            action_dim,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn actor_target(&self) -> &DenseNet {
        &self.actor_target
    }

    pub fn critic_target(&self) -> &DenseNet {
        &self.critic_target
    }

    pub fn normalizer(&self) -> &RunningNormalizer {
        &self.normalizer
    }

    /// Mutable critic, for tests that plant a specific value function.
    pub fn critic_mut(&mut self) -> &mut DenseNet {
        &mut self.critic
    }

    /// Feeds every observation and the goal of a stored episode into the
    /// normalizer. No-op when normalization is off.
    pub fn observe_episode(&mut self, episode: &[Transition]) -> Result<()> {
        if !self.config.normalize_obs {
            return Ok(());
        }
        for tr in episode {
            self.normalizer.update(tr.obs.as_slice())?;
        }
        if let Some(last) = episode.last() {
            self.normalizer.update(last.next_obs.as_slice())?;
            self.normalizer.update(last.goal_obs.as_slice())?;
        }
        Ok(())
    }

    fn check_obs(&self, o: &Observation) -> Result<()> {
        if o.len() != self.obs_dim {
            return Err(Error::Dimension { expected: self.obs_dim, actual: o.len() });
        }
        Ok(())
    }

    fn push_input(&self, obs: &[f64], goal: &[f64], out: &mut Vec<f64>) {
        if self.config.normalize_obs {
            self.normalizer.normalize_into(obs, out);
            self.normalizer.normalize_into(goal, out);
        } else {
            out.extend_from_slice(obs);
            out.extend_from_slice(goal);
        }
    }

    /// Deterministic actor output.
    pub fn greedy_action(&self, obs: &Observation, goal: &Observation) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        self.check_obs(goal)?;
        let mut x = Vec::with_capacity(2 * self.obs_dim);
        self.push_input(obs.as_slice(), goal.as_slice(), &mut x);
        self.actor.predict(&x)
    }

    /// Behaviour policy. Exploration always draws one uniform, `d` uniforms
    /// and `d` normals, whichever branch is taken, so RNG consumption does
    /// not depend on the outcome.
    pub fn select_action(
        &self,
        obs: &Observation,
        goal: &Observation,
        explore: bool,
        rng: &mut Rng,
    ) -> Result<Action> {
        let greedy = self.greedy_action(obs, goal)?;
        if !explore {
            return Action::clipped(greedy);
        }
        let u: f64 = rng.random();
        let random: Vec<f64> = (0..self.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let noise: Vec<f64> = (0..self.action_dim).map(|_| rng.sample(StandardNormal)).collect();
        if u < self.config.explore_random_prob {
            Action::clipped(random)
        } else {
            Action::clipped(
                greedy.iter().zip(&noise).map(|(a, n): (&f64, &f64)| a + self.config.explore_sigma * n).collect(),
            )
        }
    }

    /// Q of every sample under the main critic.
    fn batch_inputs(&self, batch: &[RelabeledSample]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = batch.len();
        let mut cur = Vec::with_capacity(n * 2 * self.obs_dim);
        let mut next = Vec::with_capacity(n * 2 * self.obs_dim);
        let mut actions = Vec::with_capacity(n * self.action_dim);
        for s in batch {
            self.push_input(s.obs.as_slice(), s.goal_obs.as_slice(), &mut cur);
            self.push_input(s.next_obs.as_slice(), s.goal_obs.as_slice(), &mut next);
            actions.extend_from_slice(s.action.as_slice());
        }
        (cur, next, actions)
    }

    /// Row-wise `[obs_goal | action]`.
    fn critic_input(&self, obs_goal: &[f64], actions: &[f64], n: usize) -> Vec<f64> {
        let w = 2 * self.obs_dim;
        let mut x = Vec::with_capacity(n * (w + self.action_dim));
        for i in 0..n {
            x.extend_from_slice(&obs_goal[i * w..(i + 1) * w]);
            x.extend_from_slice(&actions[i * self.action_dim..(i + 1) * self.action_dim]);
        }
        x
    }

    /// Clipped Bellman targets `r + γ Q'(o', π'(o', g), g)`.
    pub fn compute_targets(&self, batch: &[RelabeledSample]) -> Result<Vec<f64>> {
        let n = batch.len();
        let (_, next, _) = self.batch_inputs(batch);
        self.targets_from(batch, &next, n)
    }

    fn targets_from(&self, batch: &[RelabeledSample], next: &[f64], n: usize) -> Result<Vec<f64>> {
        let next_actions = self.actor_target.predict_batch(next, n)?;
        let q_next = self.critic_target.predict_batch(&self.critic_input(next, &next_actions, n), n)?;
        let (lo, hi) = self.config.target_clip;
        let gamma = self.config.reward_constants.gamma;
        Ok(batch.iter().zip(&q_next).map(|(s, q)| (s.reward + gamma * q).clamp(lo, hi)).collect())
    }

    /// Samples, relabels and runs [`DDPGAgent::train_on_batch`].
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        relabel: &RelabelConfig,
        filter: &FilterConfig,
        reward_fn: &mut dyn RewardFn,
        rng: &mut Rng,
    ) -> Result<TrainStats> {
        let batch = buffer.sample_relabeled(relabel, reward_fn, rng)?;
        self.train_on_batch(batch, filter)
    }

    /// Filter, one critic step, one actor step, then Polyak updates.
    pub fn train_on_batch(&mut self, batch: Vec<RelabeledSample>, filter: &FilterConfig) -> Result<TrainStats> {
        let c = self.config.reward_constants;
        let sampled = batch.len();
        let outcome = filter_batch(batch, &*self, filter, &c);
        let filtered_fraction = outcome.filtered_fraction();
        let batch = outcome.kept;
        let n = batch.len();
        if n == 0 {
            return Ok(TrainStats { sampled, filtered_fraction, skipped: true, ..Default::default() });
        }
        let positive_fraction = batch.iter().filter(|s| s.reward == c.r_plus).count() as f64 / n as f64;
        let (cur, next, actions) = self.batch_inputs(&batch);
        let targets = self.targets_from(&batch, &next, n)?;

        // critic: mean squared error against the frozen targets
        let (q, cache) = self.critic.forward_batch(&self.critic_input(&cur, &actions, n), n)?;
        let grad_q: Vec<f64> = q.iter().zip(&targets).map(|(q, y)| 2.0 * (q - y) / n as f64).collect();
        let critic_loss = q.iter().zip(&targets).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() / n as f64;
        let grads = self.critic.backward(&cache, &grad_q)?;
        adam_step(&mut self.critic, &grads, &mut self.critic_opt)?;

        // actor: ascend Q(o, π(o, g), g) through the critic
        let (pi, actor_cache) = self.actor.forward_batch(&cur, n)?;
        let (_, q_cache) = self.critic.forward_batch(&self.critic_input(&cur, &pi, n), n)?;
        let q_grads = self.critic.backward(&q_cache, &vec![-1.0 / n as f64; n])?;
        let w = 2 * self.obs_dim + self.action_dim;
        let l2 = self.config.action_l2;
        let grad_pi: Vec<f64> = (0..n * self.action_dim)
            .map(|k| {
                let (row, col) = (k / self.action_dim, k % self.action_dim);
                q_grads.input[row * w + 2 * self.obs_dim + col] + 2.0 * l2 * pi[k] / n as f64
            })
            .collect();
        let actor_grads = self.actor.backward(&actor_cache, &grad_pi)?;
        adam_step(&mut self.actor, &actor_grads, &mut self.actor_opt)?;

        polyak_update(&mut self.actor_target, &self.actor, self.config.tau)?;
        polyak_update(&mut self.critic_target, &self.critic, self.config.tau)?;

        Ok(TrainStats {
            sampled,
            kept: n,
            filtered_fraction,
            mean_q: q.iter().sum::<f64>() / n as f64,
            mean_target: targets.iter().sum::<f64>() / n as f64,
            positive_fraction,
            critic_loss,
            skipped: false,
        })
    }

    /// Writes the four networks, the normalizer and a manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, net) in self.named_nets() {
            net.save(&dir.join(format!("{name}.net")))?;
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            obs_dim: self.obs_dim,
            action_dim: self.action_dim,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }

    /// Restores a checkpoint. Optimizer moments start fresh.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.toml"))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Checkpoint(format!("unsupported manifest format `{}`", m.format)));
        }
        let load = |name: &str| DenseNet::load(&dir.join(format!("{name}.net")));
        let actor = load("actor")?;
        let critic = load("critic")?;
        let agent = Self {
            actor_opt: AdamState::new(&actor, m.config.lr_actor),
            critic_opt: AdamState::new(&critic, m.config.lr_critic),
            actor_target: load("actor_target")?,
            critic_target: load("critic_target")?,
            actor,
            critic,
            normalizer: m.normalizer,
            config: m.config,
            obs_dim: m.obs_dim,
            action_dim: m.action_dim,
        };
        if agent.actor.input_dim() != 2 * agent.obs_dim
            || agent.actor.output_dim() != agent.action_dim
            || agent.critic.input_dim() != 2 * agent.obs_dim + agent.action_dim
        {
            return Err(Error::Checkpoint("network shapes disagree with manifest".into()));
        }
        Ok(agent)
    }

    fn named_nets(&self) -> [(&'static str, &DenseNet); 4] {
        [
            ("actor", &self.actor),
            ("critic", &self.critic),
            ("actor_target", &self.actor_target),
            ("critic_target", &self.critic_target),
        ]
    }
}

const MANIFEST_FORMAT: &str = "goalrl-agent v1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    obs_dim: usize,
    action_dim: usize,
    config: AgentConfig,
    normalizer: RunningNormalizer,
}

impl QEvaluator for DDPGAgent {
    fn q_values(&self, batch: &[RelabeledSample]) -> Vec<f64> {
        let n = batch.len();
        let (cur, _, actions) = self.batch_inputs(batch);
        self.critic
            .predict_batch(&self.critic_input(&cur, &actions, n), n)
            .expect("batch inputs are shaped from the agent's own dims")
    }
}

impl Policy for DDPGAgent {
    fn act(&self, obs: &Observation, goal: &Observation, explore: bool, rng: &mut Rng) -> Result<Action> {
        self.select_action(obs, goal, explore, rng)
    }
}

/// Rolls one full-horizon episode with `policy`.
pub fn run_episode(
    policy: &dyn Policy,
    env: &dyn GoalEnv,
    rng: &mut Rng,
    explore: bool,
) -> Result<(Vec<Transition>, EpisodeStats)> {
    let (mut state, mut obs, goal) = env.reset(rng);
    let horizon = env.spec().horizon;
    let mut episode = Vec::with_capacity(horizon);
    let mut successes = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let action = policy.act(&obs, &goal.goal_obs, explore, rng)?;
        let (next_state, next_obs) = env.step(&state, &action)?;
        successes.push(env.true_success(&next_state.ground_truth, &goal.goal_state));
        let truth = TransitionTruth {
            state: state.ground_truth.clone(),
            next_state: next_state.ground_truth.clone(),
            goal_state: goal.goal_state.clone(),
        };
        // store the clipped action that was actually executed
        let executed = Action::clipped(action.into_inner())?;
        episode.push(Transition::new(obs, executed, next_obs.clone(), goal.goal_obs.clone(), t, truth));
        state = next_state;
        obs = next_obs;
    }
    let final_distance = env.goal_distance(&state.ground_truth, &goal.goal_state);
    Ok((episode, EpisodeStats { successes, final_distance }))
}

/// Greedy rollouts: mean per-step success and mean final distance.
pub fn evaluate(policy: &dyn Policy, env: &dyn GoalEnv, n_episodes: usize, rng: &mut Rng) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let (mut success, mut distance) = (0.0, 0.0);
    for _ in 0..n_episodes {
        let (_, stats) = run_episode(policy, env, rng, false)?;
        success += stats.successes.iter().filter(|s| **s).count() as f64 / stats.successes.len() as f64;
        distance += stats.final_distance;
    }
    Ok(EvalReport { success: success / n_episodes as f64, final_distance: distance / n_episodes as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvSpec, GridGoalWorld, GridMove, PointReach};
    use crate::replay::{derive_q0, FnCritic};
    use crate::rewards::{IndicatorReward, OracleReward};
    use crate::seeded_rng;
    use crate::types::GroundTruthState;

    fn small_config(c: RewardConstants) -> AgentConfig {
        AgentConfig { hidden: vec![16, 16], batch_size: 32, ..AgentConfig::new(c, false) }
    }

    fn filled_buffer(env: &dyn GoalEnv, episodes: usize, seed: u64) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(env.spec().horizon, 10_000).unwrap();
        let mut rng = seeded_rng(seed, 0);
        let policy = RandomPolicy { action_dim: env.spec().action_dim };
        for _ in 0..episodes {
            let (ep, _) = run_episode(&policy, env, &mut rng, true).unwrap();
            buf.store_episode(&ep).unwrap();
        }
        buf
    }

    #[test]
    fn normalizer_matches_batch_statistics() {
        let mut n = RunningNormalizer::new(2);
        let xs = [[1.0, 10.0], [2.0, 10.0], [3.0, 10.0], [6.0, 10.0]];
        assert_eq!(n.normalize(&[4.0, 4.0]), vec![4.0, 4.0]);
        for x in &xs {
            n.update(x).unwrap();
        }
        assert!((n.mean()[0] - 3.0).abs() < 1e-12);
        let var = n.variance();
        assert!((var[0] - 3.5).abs() < 1e-12);
        assert_eq!(var[1], 1e-8);
        let z = n.normalize(&[3.0 + 3.5f64.sqrt(), 11.0]);
        assert!((z[0] - 1.0).abs() < 1e-12);
        // constant dimension: floored variance, clipped
        assert_eq!(z[1], 5.0);
        assert!(n.update(&[1.0]).is_err());
    }

    #[test]
    fn greedy_actions_are_deterministic_and_small_at_init() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let agent = DDPGAgent::new(small_config(c), 2, 2, &mut seeded_rng(1, 1)).unwrap();
        let mut rng = seeded_rng(1, 2);
        for _ in 0..100 {
            let (_, o, g) = env.reset(&mut rng);
            let a1 = agent.select_action(&o, &g.goal_obs, false, &mut rng).unwrap();
            let a2 = agent.select_action(&o, &g.goal_obs, false, &mut rng).unwrap();
            assert_eq!(a1, a2);
            assert!(a1.as_slice().iter().all(|v| v.abs() < 0.01));
        }
    }

    #[test]
    fn full_random_exploration_is_uniform() {
        let env = PointReach::reach_2d();
        let mut cfg = small_config(env.reward_constants());
        cfg.explore_random_prob = 1.0;
        let agent = DDPGAgent::new(cfg, 2, 2, &mut seeded_rng(2, 1)).unwrap();
        let mut rng = seeded_rng(2, 2);
        let o = Observation::new(vec![0.5, 0.5]).unwrap();
        let n = 10_000;
        let mut cols = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for _ in 0..n {
            let a = agent.select_action(&o, &o, true, &mut rng).unwrap();
            for (col, v) in cols.iter_mut().zip(a.as_slice()) {
                col.push(*v);
            }
        }
        for mut col in cols {
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ks = col
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let cdf = (v + 1.0) / 2.0;
                    (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
                })
                .fold(0.0, f64::max);
            // 1% critical value
            assert!(ks < 1.628 / (n as f64).sqrt(), "{ks}");
        }
    }

    #[test]
    fn exploration_consumes_a_fixed_number_of_draws() {
        let env = PointReach::reach_2d();
        let o = Observation::new(vec![0.2, 0.7]).unwrap();
        let mut positions = Vec::new();
        for p in [0.0, 0.3, 1.0] {
            let mut cfg = small_config(env.reward_constants());
            cfg.explore_random_prob = p;
            let agent = DDPGAgent::new(cfg, 2, 2, &mut seeded_rng(3, 1)).unwrap();
            let mut rng = seeded_rng(3, 2);
            for _ in 0..50 {
                agent.select_action(&o, &o, true, &mut rng).unwrap();
            }
            positions.push(rng.get_word_pos());
        }
        assert!(positions.windows(2).all(|w| w[0] == w[1]));
    }

    /// Exact per-step success probability of a uniform random walk, by
    /// propagating the joint (cell, goal) distribution.
    fn exact_random_walk_success(grid: &GridGoalWorld) -> f64 {
        let n = grid.n_cells();
        let horizon = grid.spec().horizon;
        // dist[cell] for a fixed goal; average over goals at the end
        let mut total = 0.0;
        for goal in 0..n {
            let mut dist = vec![1.0 / n as f64; n];
            let mut acc = 0.0;
            for _ in 0..horizon {
                let mut next = vec![0.0; n];
                for (cell, p) in dist.iter().enumerate() {
                    for mv in GridMove::ALL {
                        next[grid.next_cell(cell, mv)] += p / 5.0;
                    }
                }
                dist = next;
                acc += dist[goal];
            }
            total += acc / horizon as f64;
        }
        total / n as f64
    }

    #[test]
    fn random_agent_on_small_grid_matches_exact_walk() {
        let grid = GridGoalWorld::new(4);
        let exact = exact_random_walk_success(&grid);
        let policy = RandomPolicy { action_dim: 1 };
        let mut rng = seeded_rng(4, 0);
        let per_episode: Vec<f64> = (0..1000)
            .map(|_| {
                let (ep, stats) = run_episode(&policy, &grid, &mut rng, true).unwrap();
                assert_eq!(ep.len(), grid.spec().horizon);
                let g = &ep[0].goal_obs;
                assert!(ep.iter().all(|t| &t.goal_obs == g));
                stats.successes.iter().filter(|s| **s).count() as f64 / stats.successes.len() as f64
            })
            .collect();
        let m = per_episode.iter().sum::<f64>() / 1000.0;
        let var = per_episode.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 999.0;
        let se = (var / 1000.0).sqrt();
        assert!((m - exact).abs() < 2.0 * se, "{m} vs {exact} (se {se})");
    }

    /// One-dimensional world where the next state is the action itself.
    struct Teleport {
        spec: EnvSpec,
    }

    impl Teleport {
        fn new() -> Self {
            Self {
                spec: EnvSpec {
                    name: "teleport".into(),
                    obs_dim: 1,
                    state_dim: 1,
                    action_dim: 1,
                    horizon: 10,
                    epsilon: 1e-9,
                    action_scale: 1.0,
                },
            }
        }
    }

    impl GoalEnv for Teleport {
        fn spec(&self) -> &EnvSpec {
            &self.spec
        }
        fn sample_state(&self, rng: &mut Rng) -> GroundTruthState {
            GroundTruthState::new(vec![rng.random_range(-1.0..1.0)]).unwrap()
        }
        fn transition(&self, _: &GroundTruthState, a: &Action) -> GroundTruthState {
            GroundTruthState::new(a.as_slice().to_vec()).unwrap()
        }
        fn render(&self, s: &GroundTruthState) -> Observation {
            Observation::new(s.as_slice().to_vec()).unwrap()
        }
        fn achieved_goal(&self, s: &GroundTruthState) -> Vec<f64> {
            s.as_slice().to_vec()
        }
    }

    struct GoalSeeker;

    impl Policy for GoalSeeker {
        fn act(&self, _: &Observation, goal: &Observation, _: bool, _: &mut Rng) -> Result<Action> {
            Action::new(goal.as_slice().to_vec())
        }
    }

    #[test]
    fn ideal_policy_scores_perfectly() {
        let env = Teleport::new();
        let report = evaluate(&GoalSeeker, &env, 20, &mut seeded_rng(5, 0)).unwrap();
        assert_eq!(report.success, 1.0);
        assert_eq!(report.final_distance, 0.0);
        assert!(evaluate(&GoalSeeker, &env, 0, &mut seeded_rng(5, 0)).is_err());
    }

    #[test]
    fn frozen_agent_evaluation_is_reproducible() {
        let env = PointReach::reach_2d();
        let agent = DDPGAgent::new(small_config(env.reward_constants()), 2, 2, &mut seeded_rng(6, 1)).unwrap();
        let a = evaluate(&agent, &env, 10, &mut seeded_rng(6, 4)).unwrap();
        let b = evaluate(&agent, &env, 10, &mut seeded_rng(6, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_agent_distance_matches_static_rollout_oracle() {
        let env = PointReach::reach_2d();
        let agent = DDPGAgent::new(small_config(env.reward_constants()), 2, 2, &mut seeded_rng(7, 1)).unwrap();
        let n = 400;
        let report = evaluate(&agent, &env, n, &mut seeded_rng(7, 4)).unwrap();
        // the same resets with the point held still
        let mut rng = seeded_rng(7, 4);
        let mut oracle = 0.0;
        for _ in 0..n {
            let (s, _, g) = env.reset(&mut rng);
            oracle += env.goal_distance(&s.ground_truth, &g.goal_state);
        }
        oracle /= n as f64;
        // actions below 0.01 move the point at most 0.01 * 0.05 * 50 per episode
        assert!((report.final_distance - oracle).abs() <= 0.025 + 1e-12);
        // mean distance of two uniform points in the unit square
        assert!((oracle - 0.5214).abs() < 0.05, "{oracle}");
    }

    #[test]
    fn targets_are_clipped_to_the_value_range() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let buf = filled_buffer(&env, 5, 8);
        let mut agent = DDPGAgent::new(small_config(c), 2, 2, &mut seeded_rng(8, 1)).unwrap();
        // blow up the target critic so raw targets leave the range in both directions
        agent.critic_target.layers_mut().last_mut().unwrap().bias[0] = 1e4;
        let mut rng = seeded_rng(8, 2);
        let relabel = RelabelConfig::balanced(10_000, 64);
        let mut reward = OracleReward { env: &env, constants: c };
        let batch = buf.sample_relabeled(&relabel, &mut reward, &mut rng).unwrap();
        let y = agent.compute_targets(&batch).unwrap();
        assert!(y.iter().all(|v| *v <= c.q_max() && *v >= c.q_min()));
        assert!(y.iter().any(|v| *v == c.q_max()));
        agent.critic_target.layers_mut().last_mut().unwrap().bias[0] = -1e4;
        let y = agent.compute_targets(&batch).unwrap();
        assert!(y.iter().all(|v| *v == c.q_min()));
    }

    #[test]
    fn critic_at_its_targets_has_zero_gradient() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let buf = filled_buffer(&env, 3, 9);
        let agent = DDPGAgent::new(small_config(c), 2, 2, &mut seeded_rng(9, 1)).unwrap();
        let mut reward = IndicatorReward { constants: c };
        let batch = buf
            .sample_relabeled(&RelabelConfig::balanced(10_000, 32), &mut reward, &mut seeded_rng(9, 2))
            .unwrap();
        let targets = agent.compute_targets(&batch).unwrap();
        let n = batch.len();
        let (cur, _, actions) = agent.batch_inputs(&batch);
        let (q, cache) = agent.critic.forward_batch(&agent.critic_input(&cur, &actions, n), n).unwrap();
        // gradient of the MSE at q = y
        let grad: Vec<f64> = q.iter().zip(&q).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
        assert!(agent.critic.backward(&cache, &grad).unwrap().norm() < 1e-10);
        assert_eq!(targets.len(), n);
    }

    #[test]
    fn unit_tau_leaves_targets_untouched() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let buf = filled_buffer(&env, 3, 10);
        let mut cfg = small_config(c);
        cfg.tau = 1.0;
        let mut agent = DDPGAgent::new(cfg, 2, 2, &mut seeded_rng(10, 1)).unwrap();
        let (a0, c0) = (agent.actor_target.clone(), agent.critic_target.clone());
        let mut reward = IndicatorReward { constants: c };
        let stats = agent
            .train_step(&buf, &RelabelConfig::balanced(10_000, 32), &FilterConfig::disabled(), &mut reward, &mut seeded_rng(10, 2))
            .unwrap();
        assert!(!stats.skipped);
        assert_eq!(agent.actor_target, a0);
        assert_eq!(agent.critic_target, c0);
        assert_ne!(agent.critic, c0);
        assert_ne!(agent.actor, a0);
    }

    #[test]
    fn pessimistic_init_filters_nothing_on_first_cycle() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let buf = filled_buffer(&env, 4, 11);
        let mut agent = DDPGAgent::new(small_config(c), 2, 2, &mut seeded_rng(11, 1)).unwrap();
        let filter = FilterConfig::from_constants(&c, true).unwrap();
        let mut reward = IndicatorReward { constants: c };
        let mut rng = seeded_rng(11, 2);
        for _ in 0..40 {
            let s = agent.train_step(&buf, &RelabelConfig::balanced(10_000, 32), &filter, &mut reward, &mut rng).unwrap();
            assert_eq!(s.filtered_fraction, 0.0);
        }
    }

    #[test]
    fn fully_filtered_batch_is_a_reported_no_op() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let buf = filled_buffer(&env, 2, 12);
        let mut agent = DDPGAgent::new(small_config(c), 2, 2, &mut seeded_rng(12, 1)).unwrap();
        agent.critic.layers_mut().last_mut().unwrap().bias[0] = 1e3;
        let before = agent.critic.clone();
        let mut reward = IndicatorReward { constants: c };
        // original goals only: every indicator reward is negative
        let relabel = RelabelConfig { p_achieved: 0.0, p_future: 0.0, p_original: 1.0, capacity: 10_000, batch_size: 16 };
        let filter = FilterConfig::from_constants(&c, true).unwrap();
        let s = agent.train_step(&buf, &relabel, &filter, &mut reward, &mut seeded_rng(12, 2)).unwrap();
        assert!(s.skipped);
        assert_eq!(s.kept, 0);
        assert_eq!(s.filtered_fraction, 1.0);
        assert_eq!(agent.critic, before);
    }

    #[test]
    fn oracle_and_indicator_differ_only_in_rewards() {
        // same seeds: identical batches apart from the reward column
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let buf = filled_buffer(&env, 4, 13);
        let relabel = RelabelConfig::balanced(10_000, 256);
        let mut oracle = OracleReward { env: &env, constants: c };
        let mut indicator = IndicatorReward { constants: c };
        let a = buf.sample_relabeled(&relabel, &mut oracle, &mut seeded_rng(13, 2)).unwrap();
        let b = buf.sample_relabeled(&relabel, &mut indicator, &mut seeded_rng(13, 2)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.obs, &x.goal_obs, &x.action, x.t), (&y.obs, &y.goal_obs, &y.action, y.t));
        }
        assert!(a.iter().filter(|s| s.reward == c.r_plus).count() >= b.iter().filter(|s| s.reward == c.r_plus).count());
    }

    #[test]
    fn training_moves_the_critic_toward_positive_rewards() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let buf = filled_buffer(&env, 10, 14);
        let mut agent = DDPGAgent::new(small_config(c), 2, 2, &mut seeded_rng(14, 1)).unwrap();
        let mut reward = OracleReward { env: &env, constants: c };
        let mut rng = seeded_rng(14, 2);
        let relabel = RelabelConfig::balanced(10_000, 32);
        let first = agent.train_step(&buf, &relabel, &FilterConfig::disabled(), &mut reward, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = agent.train_step(&buf, &relabel, &FilterConfig::disabled(), &mut reward, &mut rng).unwrap();
        }
        assert!(last.mean_q > first.mean_q + 1.0, "{} -> {}", first.mean_q, last.mean_q);
        assert!(last.mean_q.is_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let mut agent = DDPGAgent::new(small_config(c), 2, 2, &mut seeded_rng(15, 1)).unwrap();
        let buf = filled_buffer(&env, 2, 15);
        let mut rng = seeded_rng(15, 0);
        let (ep, _) = run_episode(&agent, &env, &mut rng, true).unwrap();
        agent.observe_episode(&ep).unwrap();
        let mut reward = IndicatorReward { constants: c };
        agent
            .train_step(&buf, &RelabelConfig::balanced(10_000, 32), &FilterConfig::disabled(), &mut reward, &mut rng)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        agent.save(dir.path()).unwrap();
        let back = DDPGAgent::load(dir.path()).unwrap();
        assert_eq!(back.actor, agent.actor);
        assert_eq!(back.critic_target, agent.critic_target);
        assert_eq!(back.normalizer, agent.normalizer);
        assert_eq!(back.config, agent.config);
        std::fs::write(dir.path().join("manifest.toml"), "format = \"nope\"").unwrap();
        assert!(DDPGAgent::load(dir.path()).is_err());
    }

    #[test]
    fn rewards_use_raw_observations_even_with_normalization() {
        let env = PointReach::reach_2d();
        let c = env.reward_constants();
        let buf = filled_buffer(&env, 3, 16);
        let mut reward = IndicatorReward { constants: c };
        let relabel = RelabelConfig { p_achieved: 1.0, p_future: 0.0, p_original: 0.0, capacity: 10_000, batch_size: 64 };
        let batch = buf.sample_relabeled(&relabel, &mut reward, &mut seeded_rng(16, 2)).unwrap();
        assert!(batch.iter().all(|s| s.reward == c.r_plus));
        let q0 = derive_q0(&c).unwrap();
        let high = FnCritic(|_: &Observation, _: &Action, _: &Observation| q0 + 1.0);
        let out = filter_batch(batch, &high, &FilterConfig::from_constants(&c, true).unwrap(), &c);
        assert_eq!(out.removed, 0);
    }
}
