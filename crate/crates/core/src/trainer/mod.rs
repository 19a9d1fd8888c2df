//! Training loop: burn-in, alternating data generation and prediction / RL
//! update phases, evaluation, and the frozen-summarizer probe.

mod config;
mod metrics;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, Transitions};
use crate::env::{EnvSpec, Environment};
use crate::numerics::{AdamConfig, AdamW, Checkpoint, Matrix, ParamStore, Tape, Var};
use crate::psr::{channel_hits, extract_core_tests, psr_loss, CoreTests, Extraction};
use crate::rollout::{tokens_for, ReplayBuffer, Trajectory};
use crate::seqmodel::{ReprModel, TokenBatch};
use crate::{Error, Result};

pub use config::{Mode, RunConfig};
pub use metrics::{read_rows, write_rows, write_trajectories, BurnInPoint, MetricsRow, ProbePoint};

/// How actions are chosen while rolling out episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Uniform,
    Sample,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Train,
    Eval,
    Holdout,
}

/// Update and data counters; all prediction counts exclude burn-in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub env_steps: u64,
    pub episodes: u64,
    pub burn_in_updates: u64,
    pub psr_updates: u64,
    pub rl_updates: u64,
    pub epochs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsrStats {
    pub loss: f64,
    pub hits: usize,
    pub scored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    /// Largest absolute RL-loss gradient on any summarizer or embedding
    /// parameter; `None` when latents came from the cache.
    pub phi_grad_linf: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub psr_updates: u64,
    pub rl_updates: u64,
    pub psr_loss_sum: f64,
    pub hits: usize,
    pub scored: usize,
    pub actor_loss_sum: f64,
    pub critic_loss_sum: f64,
}

impl EpochStats {
    fn merge(&mut self, o: &EpochStats) {
        self.psr_updates += o.psr_updates;
        self.rl_updates += o.rl_updates;
        self.psr_loss_sum += o.psr_loss_sum;
        self.hits += o.hits;
        self.scored += o.scored;
        self.actor_loss_sum += o.actor_loss_sum;
        self.critic_loss_sum += o.critic_loss_sum;
    }

    fn row(&self, counters: &Counters, eval_return: Option<f64>) -> MetricsRow {
        let mean = |s: f64, n: u64| (n > 0).then(|| s / n as f64);
        MetricsRow {
            step: counters.env_steps,
            episodes: counters.episodes,
            psr_loss: mean(self.psr_loss_sum, self.psr_updates),
            actor_loss: mean(self.actor_loss_sum, self.rl_updates),
            critic_loss: mean(self.critic_loss_sum, self.rl_updates),
            eval_return,
            prediction_accuracy: (self.scored > 0).then(|| self.hits as f64 / self.scored as f64),
        }
    }
}

/// Prediction quality on a fixed episode set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldoutScore {
    pub loss: f64,
    pub accuracy: f64,
}

/// Losses of one batch evaluated without updating anything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub psr: Option<f64>,
    pub critic: f64,
    pub actor: f64,
}

/// Everything a finished run produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub metrics: Vec<MetricsRow>,
    pub burn_in: Vec<BurnInPoint>,
    pub probe: Vec<ProbePoint>,
    pub counters: Counters,
    pub out_dir: Option<PathBuf>,
}

impl RunReport {
    pub fn final_return(&self) -> Option<f64> {
        self.metrics.iter().rev().find_map(|r| r.eval_return)
    }
}

pub struct Trainer {
    pub config: RunConfig,
    pub spec: EnvSpec,
    pub model: ReprModel,
    pub repr_store: ParamStore,
    repr_opt: AdamW,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub counters: Counters,
    /// Freezes the summarizer: no prediction updates at all.
    pub phi_frozen: bool,
    envs: Vec<Box<dyn Environment>>,
    init_rng: ChaCha8Rng,
    train_rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    holdout_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    cache: HashMap<u64, Rc<Matrix>>,
    next_id: u64,
    /// Accuracy on the reward channel only counts steps `t >= min_step`.
    accuracy_min_step: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env_config = config.env_config();
        let env = env_config.build()?;
        let spec = env.spec().clone();
        let mut init_rng = stream(config.seed, 0);
        let mut repr_store = ParamStore::new();
        let model = ReprModel::new(&mut repr_store, &mut init_rng, &spec, config.model_config(spec.horizon));
        let repr_opt = AdamW::new(&repr_store, seq_adam(&config));
        let agent = Agent::new(&mut init_rng, model.latent_dim(), spec.action_cardinality, config.sac_config());
        let buffer = ReplayBuffer::new(ReplayBuffer::capacity_for(config.buffer_size, spec.horizon));
        Ok(Self {
            accuracy_min_step: env_config.recall_distance().unwrap_or(0),
            spec,
            model,
            repr_store,
            repr_opt,
            agent,
            buffer,
            counters: Counters::default(),
            phi_frozen: false,
            envs: vec![env],
            init_rng,
            train_rng: stream(config.seed, 1),
            eval_rng: stream(config.seed, 2),
            holdout_rng: stream(config.seed, 3),
            act_rng: stream(config.seed, 4),
            sample_rng: stream(config.seed, 5),
            cache: HashMap::new(),
            next_id: 0,
            config,
        })
    }

    fn ensure_envs(&mut self, n: usize) -> Result<()> {
        while self.envs.len() < n {
            self.envs.push(self.config.env_config().build()?);
        }
        Ok(())
    }

    /// Roll out `n` episodes in lockstep. With `mark`, each episode draws one
    /// timestep uniformly from the horizon and takes the environment's test
    /// action there.
    pub fn generate(&mut self, n: usize, behavior: Behavior, mark: bool) -> Result<Vec<Trajectory>> {
        self.generate_from(n, behavior, mark, Stream::Train)
    }

    fn generate_from(&mut self, n: usize, behavior: Behavior, mark: bool, which: Stream) -> Result<Vec<Trajectory>> {
        self.ensure_envs(n)?;
        let horizon = self.spec.horizon;
        let mut episodes = Vec::with_capacity(n);
        let mut marks = Vec::with_capacity(n);
        for i in 0..n {
            let rng = match which {
                Stream::Train => &mut self.train_rng,
                Stream::Eval => &mut self.eval_rng,
                Stream::Holdout => &mut self.holdout_rng,
            };
            let seed: u64 = rng.random();
            marks.push(if mark { Some(rng.random_range(0..horizon)) } else { None });
            let obs = self.envs[i].reset(seed);
            episodes.push(Trajectory {
                id: self.next_id,
                observations: vec![obs],
                actions: Vec::new(),
                rewards: Vec::new(),
                test_step: marks[i],
            });
            self.next_id += 1;
        }
        let mut active: Vec<usize> = (0..n).collect();
        let mut t = 0;
        while !active.is_empty() {
            let policy_actions = match behavior {
                Behavior::Uniform => None,
                Behavior::Sample | Behavior::Greedy => {
                    let z = self.prefix_latents(&episodes, &active, t);
                    Some(self.agent.act(&z, &mut self.act_rng, behavior == Behavior::Greedy))
                }
            };
            for (j, &i) in active.iter().enumerate() {
                let env = &mut self.envs[i];
                let a = if marks[i] == Some(t) {
                    env.sample_test_action(&mut self.act_rng)
                } else if let Some(acts) = &policy_actions {
                    acts[j]
                } else {
                    self.act_rng.random_range(0..self.spec.action_cardinality)
                };
                let step = env.step(a);
                let ep = &mut episodes[i];
                ep.actions.push(a);
                ep.rewards.push(step.reward);
                ep.observations.push(step.observation);
            }
            active.retain(|&i| !self.envs[i].is_done());
            t += 1;
        }
        Ok(episodes)
    }

    /// Latent at step `t` for each listed in-progress episode.
    fn prefix_latents(&self, episodes: &[Trajectory], active: &[usize], t: usize) -> Matrix {
        let none = self.spec.action_cardinality;
        let mut tokens = TokenBatch::new(&self.spec, t + 1, active.len());
        for (b, &i) in active.iter().enumerate() {
            for s in 0..=t {
                let (obs, a, r) = episodes[i].token(s, none);
                tokens.set(s, b, obs, a, r);
            }
        }
        let tape = Tape::new();
        let z = self.model.summarize(&tape, &self.repr_store, &tokens).value();
        let rows = t * active.len();
        z.slice(ndarray::s![rows..rows + active.len(), ..]).to_owned()
    }

    /// Generate `n` training episodes with the current policy into the buffer.
    pub fn collect(&mut self, n: usize, behavior: Behavior) -> Result<()> {
        let eps = self.generate(n, behavior, true)?;
        for ep in eps {
            self.counters.env_steps += ep.len() as u64;
            self.counters.episodes += 1;
            self.buffer.push(ep);
        }
        Ok(())
    }

    /// Mean undiscounted greedy return over `n` fresh episodes.
    pub fn evaluate(&mut self, n: usize) -> Result<f64> {
        let eps = self.generate_from(n, Behavior::Greedy, false, Stream::Eval)?;
        Ok(eps.iter().map(Trajectory::total_return).sum::<f64>() / n as f64)
    }

    /// Random-policy episodes from a stream reserved for held-out scoring.
    pub fn holdout_set(&mut self, n: usize) -> Result<Vec<Trajectory>> {
        self.generate_from(n, Behavior::Uniform, true, Stream::Holdout)
    }

    fn sample_batch(&mut self) -> Vec<Arc<Trajectory>> {
        self.buffer.sample(&mut self.sample_rng, self.config.batch_size)
    }

    fn score(&self, hits: &[Vec<bool>], tests: &CoreTests) -> (usize, usize) {
        let mut h = 0;
        let mut n = 0;
        match self.spec.reward_channel {
            Some(c) => {
                for (i, &hit) in hits[c].iter().enumerate() {
                    if tests.steps[i] >= self.accuracy_min_step {
                        n += 1;
                        h += usize::from(hit);
                    }
                }
            }
            None => {
                for col in hits {
                    n += col.len();
                    h += col.iter().filter(|&&x| x).count();
                }
            }
        }
        (h, n)
    }

    fn psr_forward<'t>(&self, tape: &'t Tape, refs: &[&Trajectory], tests: &CoreTests) -> (Var<'t>, usize, usize) {
        let tokens = tokens_for(&self.spec, refs, None);
        let latents = self.model.summarize(tape, &self.repr_store, &tokens);
        let out = psr_loss(tape, &self.repr_store, &self.model, latents, tests);
        let hits: Vec<Vec<bool>> = (0..out.logits.len()).map(|c| channel_hits(&out, tests, c)).collect();
        let (h, n) = self.score(&hits, tests);
        (out.loss, h, n)
    }

    /// One gradient step on the prediction loss over a replay batch.
    pub fn psr_update(&mut self) -> Result<PsrStats> {
        let mut tries = 0;
        let (batch, tests) = loop {
            let batch = self.sample_batch();
            let refs: Vec<&Trajectory> = batch.iter().map(|e| e.as_ref()).collect();
            let tests = extract_core_tests(&self.spec, &refs, self.config.core_tests(), self.config.extraction())?;
            if !tests.is_empty() {
                break (batch, tests);
            }
            tries += 1;
            if tries >= 100 {
                return Err(Error::Config("replay batches contain no usable prediction samples".into()));
            }
        };
        let refs: Vec<&Trajectory> = batch.iter().map(|e| e.as_ref()).collect();
        let tape = Tape::new();
        let (loss, hits, scored) = self.psr_forward(&tape, &refs, &tests);
        let value = loss.scalar();
        let grads = tape.backward(loss).map_err(|e| with_context(e, "prediction loss"))?;
        grads.accumulate_into(&mut self.repr_store);
        self.repr_opt.step(&mut self.repr_store)?;
        self.cache.clear();
        Ok(PsrStats { loss: value, hits, scored })
    }

    fn transitions(&self, refs: &[&Trajectory]) -> Transitions {
        let batch = refs.len();
        let mut tr = Transitions::default();
        for (b, ep) in refs.iter().enumerate() {
            for t in 0..ep.len() {
                if ep.is_test_action(t) && !self.config.include_test_transitions {
                    continue;
                }
                let next = (t + 1 < ep.len()).then(|| (t + 1) * batch + b);
                tr.push(t * batch + b, next, ep.actions[t], ep.rewards[t]);
            }
        }
        tr
    }

    /// Latent matrix for a batch from per-episode cache entries.
    fn cached_latents(&mut self, refs: &[&Trajectory]) -> Matrix {
        let missing: Vec<&Trajectory> = {
            let mut seen = std::collections::HashSet::new();
            refs.iter()
                .copied()
                .filter(|e| !self.cache.contains_key(&e.id) && seen.insert(e.id))
                .collect()
        };
        if !missing.is_empty() {
            let tokens = tokens_for(&self.spec, &missing, None);
            let tape = Tape::new();
            let z = self.model.summarize(&tape, &self.repr_store, &tokens).value();
            let m = missing.len();
            for (b, ep) in missing.iter().enumerate() {
                let rows: Vec<usize> = (0..ep.len()).map(|t| t * m + b).collect();
                self.cache.insert(ep.id, Rc::new(z.select(ndarray::Axis(0), &rows)));
            }
        }
        let seq = refs.iter().map(|e| e.len()).max().unwrap_or(1);
        let batch = refs.len();
        let mut out = Matrix::zeros((seq * batch, self.model.latent_dim()));
        for (b, ep) in refs.iter().enumerate() {
            let z = &self.cache[&ep.id];
            for t in 0..ep.len() {
                out.row_mut(t * batch + b).assign(&z.row(t));
            }
        }
        out
    }

    /// One actor-critic update on a replay batch.
    ///
    /// With `live`, latents come from a fresh summarizer pass and the RL-loss
    /// gradient on the summarizer is measured; in DRL2 mode that pass is
    /// gradient-blocked. Otherwise, when the summarizer does not learn from
    /// RL, latents come from a cache valid until the next prediction update.
    pub fn rl_update(&mut self, live: bool) -> Result<RlStats> {
        let batch = self.sample_batch();
        let refs: Vec<&Trajectory> = batch.iter().map(|e| e.as_ref()).collect();
        let tr = self.transitions(&refs);
        if tr.is_empty() {
            return Err(Error::Config("replay batch has no RL transitions".into()));
        }
        let through = self.config.mode.rl_reaches_summarizer();
        let tape = Tape::new();
        let latents = if live || through {
            let tokens = tokens_for(&self.spec, &refs, None);
            let z = self.model.summarize(&tape, &self.repr_store, &tokens);
            if through {
                z
            } else {
                tape.stop_gradient(z)
            }
        } else {
            let z = self.cached_latents(&refs);
            tape.constant(z)
        };
        let losses = self.agent.losses(&tape, latents, &tr);
        let (actor_loss, critic_loss) = (losses.actor.scalar(), losses.critic.scalar());
        for (v, what) in [(actor_loss, "actor loss"), (critic_loss, "critic loss")] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    context: what.into(),
                    value: v,
                });
            }
        }
        let grads = tape.backward(losses.total()).map_err(|e| with_context(e, "rl loss"))?;
        self.agent.apply(&grads)?;
        let mut phi_grad_linf = None;
        if live || through {
            grads.accumulate_into(&mut self.repr_store);
            phi_grad_linf = Some(self.repr_store.grad_linf());
            if through {
                self.repr_opt.step(&mut self.repr_store)?;
                self.cache.clear();
            } else {
                self.repr_store.zero_grad();
            }
        }
        self.counters.rl_updates += 1;
        Ok(RlStats {
            actor_loss,
            critic_loss,
            phi_grad_linf,
        })
    }

    /// Prediction updates scheduled for the next epoch.
    fn planned_psr_updates(&self) -> u64 {
        if self.phi_frozen || !self.config.mode.trains_prediction() {
            return 0;
        }
        match self.config.psr_rl_ratio {
            Some(r) => {
                let rl_after = self.counters.rl_updates + self.config.t_rl as u64;
                let due = (r * rl_after as f64 + 1e-9).floor() as u64;
                due.saturating_sub(self.counters.psr_updates)
            }
            None => self.config.t_psr as u64,
        }
    }

    /// Generate `t_gen` episodes, then run the prediction phase and the RL
    /// phase. Update counts are checked against the schedule.
    pub fn train_epoch(&mut self) -> Result<EpochStats> {
        self.collect(self.config.t_gen, Behavior::Sample)?;
        let planned_psr = self.planned_psr_updates();
        let planned_rl = self.config.t_rl as u64;
        let before = self.counters;
        let mut stats = EpochStats::default();
        for _ in 0..planned_psr {
            let s = self.psr_update()?;
            self.counters.psr_updates += 1;
            stats.psr_updates += 1;
            stats.psr_loss_sum += s.loss;
            stats.hits += s.hits;
            stats.scored += s.scored;
        }
        for _ in 0..planned_rl {
            let s = self.rl_update(false)?;
            stats.rl_updates += 1;
            stats.actor_loss_sum += s.actor_loss;
            stats.critic_loss_sum += s.critic_loss;
        }
        assert_eq!(self.counters.psr_updates - before.psr_updates, planned_psr, "prediction update count");
        assert_eq!(self.counters.rl_updates - before.rl_updates, planned_rl, "rl update count");
        if let Some(r) = self.config.psr_rl_ratio {
            if !self.phi_frozen && self.config.mode.trains_prediction() {
                let due = (r * self.counters.rl_updates as f64 + 1e-9).floor() as u64;
                assert_eq!(self.counters.psr_updates, due, "ratio schedule drifted");
            }
        }
        self.counters.epochs += 1;
        Ok(stats)
    }

    /// Prediction loss and accuracy on fixed episodes, all steps with a
    /// complete future window.
    pub fn holdout_score(&self, episodes: &[Trajectory]) -> Result<HoldoutScore> {
        let mut loss_sum = 0.0;
        let mut samples = 0usize;
        let mut hits = 0usize;
        let mut scored = 0usize;
        for chunk in episodes.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&Trajectory> = chunk.iter().collect();
            let tests = extract_core_tests(&self.spec, &refs, self.config.core_tests(), Extraction::Dense)?;
            if tests.is_empty() {
                continue;
            }
            let tape = Tape::new();
            let (loss, h, n) = self.psr_forward(&tape, &refs, &tests);
            loss_sum += loss.scalar() * tests.len() as f64;
            samples += tests.len();
            hits += h;
            scored += n;
        }
        if samples == 0 {
            return Err(Error::Config("held-out episodes yield no prediction samples".into()));
        }
        Ok(HoldoutScore {
            loss: loss_sum / samples as f64,
            accuracy: if scored > 0 { hits as f64 / scored as f64 } else { f64::NAN },
        })
    }

    /// Fill the buffer with uniform-policy episodes, then (for modes that
    /// learn from prediction) pre-train the summarizer and predictor.
    pub fn burn_in(&mut self) -> Result<Vec<BurnInPoint>> {
        let mut curve = Vec::new();
        if self.config.burn_in_episodes == 0 {
            return Ok(curve);
        }
        let mut left = self.config.burn_in_episodes;
        while left > 0 {
            let n = left.min(256);
            for ep in self.generate(n, Behavior::Uniform, true)? {
                self.buffer.push(ep);
            }
            left -= n;
        }
        if !self.config.mode.trains_prediction() || self.config.burn_in_updates == 0 {
            return Ok(curve);
        }
        let holdout = self.holdout_set(self.config.holdout_episodes.max(1))?;
        let every = self.config.burn_in_eval_every.max(1) as u64;
        let mut window = (0.0, 0u64);
        for u in 1..=self.config.burn_in_updates as u64 {
            let s = self.psr_update()?;
            self.counters.burn_in_updates += 1;
            window.0 += s.loss;
            window.1 += 1;
            if u % every == 0 || u == self.config.burn_in_updates as u64 {
                let score = self.holdout_score(&holdout)?;
                curve.push(BurnInPoint {
                    update: u,
                    train_loss: window.0 / window.1 as f64,
                    holdout_loss: score.loss,
                    holdout_accuracy: score.accuracy,
                });
                window = (0.0, 0);
                log::debug!("burn-in {u}: holdout loss {:.4} acc {:.4}", score.loss, score.accuracy);
                if self.config.burn_in_target_accuracy.is_some_and(|a| score.accuracy >= a) {
                    break;
                }
            }
        }
        Ok(curve)
    }

    /// Burn-in followed by epochs until the step budget is spent, evaluating
    /// every `eval_every` environment steps.
    pub fn train(&mut self) -> Result<(Vec<BurnInPoint>, Vec<MetricsRow>)> {
        let burn = self.burn_in()?;
        let rows = self.train_loop()?;
        Ok((burn, rows))
    }

    fn train_loop(&mut self) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        let mut window = EpochStats::default();
        let every = self.config.eval_every.max(1);
        let mut next_eval = self.counters.env_steps + every;
        let start = self.counters.env_steps;
        while self.counters.env_steps - start < self.config.total_steps {
            let s = self.train_epoch()?;
            window.merge(&s);
            if self.counters.env_steps >= next_eval {
                let ret = self.evaluate(self.config.eval_episodes)?;
                rows.push(window.row(&self.counters, Some(ret)));
                log::info!(
                    "step {} episodes {} eval return {ret:.4}",
                    self.counters.env_steps,
                    self.counters.episodes
                );
                window = EpochStats::default();
                while next_eval <= self.counters.env_steps {
                    next_eval += every;
                }
            }
        }
        if rows.last().is_none_or(|r| r.step != self.counters.env_steps) {
            let ret = self.evaluate(self.config.eval_episodes)?;
            rows.push(window.row(&self.counters, Some(ret)));
        }
        Ok(rows)
    }

    /// Train the summarizer on prediction alone until the held-out loss
    /// reaches each target in turn; for every target reached, freeze that
    /// snapshot and train a fresh policy on it.
    pub fn probe(&mut self) -> Result<Vec<ProbePoint>> {
        if self.buffer.is_empty() {
            for ep in self.generate(self.config.burn_in_episodes.max(self.config.batch_size), Behavior::Uniform, true)? {
                self.buffer.push(ep);
            }
        }
        let holdout = self.holdout_set(self.config.holdout_episodes.max(1))?;
        let burn_buffer = self.buffer.clone();
        let tol = 1.0 + self.config.probe_tolerance;
        let mut snapshots = Vec::new();
        let mut score = self.holdout_score(&holdout)?;
        let mut updates = 0u64;
        let mut points = Vec::new();
        for &target in &self.config.probe_targets.clone() {
            while score.loss > target * tol && updates < self.config.probe_max_updates as u64 {
                for _ in 0..self.config.probe_check_every.max(1) {
                    self.psr_update()?;
                    updates += 1;
                }
                score = self.holdout_score(&holdout)?;
            }
            if score.loss > target * tol {
                log::warn!("probe target {target} not reached (held-out loss {:.4})", score.loss);
                points.push(ProbePoint {
                    target,
                    reached: false,
                    psr_loss: Some(score.loss),
                    psr_updates: updates,
                    final_return: None,
                });
                continue;
            }
            snapshots.push((points.len(), self.repr_store.clone(), score.loss));
            points.push(ProbePoint {
                target,
                reached: true,
                psr_loss: Some(score.loss),
                psr_updates: updates,
                final_return: None,
            });
        }

        let agent_seed: u64 = self.init_rng.random();
        for (slot, store, _) in snapshots {
            self.repr_store.copy_values_from(&store);
            self.cache.clear();
            self.phi_frozen = true;
            self.agent = self.agent.reinitialized(&mut ChaCha8Rng::seed_from_u64(agent_seed));
            self.buffer = burn_buffer.clone();
            self.counters.env_steps = 0;
            self.counters.episodes = 0;
            let rows = self.train_loop()?;
            points[slot].final_return = rows.last().and_then(|r| r.eval_return);
        }
        Ok(points)
    }

    /// Parameters of every network plus the config digest.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.hash());
        ck.add_store("repr.", &self.repr_store);
        ck.add_store("actor.", &self.agent.actor_store);
        ck.add_store("critic.", &self.agent.critic_store);
        ck.add_store("target.", &self.agent.target_store);
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.restore_store("repr.", &mut self.repr_store)?;
        ck.restore_store("actor.", &mut self.agent.actor_store)?;
        ck.restore_store("critic.", &mut self.agent.critic_store)?;
        ck.restore_store("target.", &mut self.agent.target_store)?;
        self.cache.clear();
        Ok(())
    }

    /// Prediction and RL losses of a batch, with padded positions optionally
    /// overwritten by random symbols. Nothing is updated.
    pub fn batch_losses(&self, episodes: &[&Trajectory], noise: Option<&mut dyn rand::RngCore>) -> Result<BatchLosses> {
        let tokens = tokens_for(&self.spec, episodes, noise);
        let tape = Tape::new();
        let latents = self.model.summarize(&tape, &self.repr_store, &tokens);
        let tests = extract_core_tests(&self.spec, episodes, self.config.core_tests(), self.config.extraction())?;
        let psr = (!tests.is_empty()).then(|| psr_loss(&tape, &self.repr_store, &self.model, latents, &tests).loss.scalar());
        let rl = self.agent.losses(&tape, latents, &self.transitions(episodes));
        Ok(BatchLosses {
            psr,
            critic: rl.critic.scalar(),
            actor: rl.actor.scalar(),
        })
    }

    /// Full run. With `out`, writes `config.toml`, `metrics.csv`,
    /// `burnin.csv`, `probe.csv` (probe mode), `checkpoint.bin` and
    /// `trajectories.csv` under `out/<run name>/`.
    pub fn run(mut self, out: Option<&Path>) -> Result<RunReport> {
        let dir = match out {
            Some(root) => {
                let dir = root.join(self.config.run_name());
                std::fs::create_dir_all(&dir).map_err(|e| Error::at_path(&dir, e))?;
                let cfg = dir.join("config.toml");
                std::fs::write(&cfg, self.config.to_text()).map_err(|e| Error::at_path(&cfg, e))?;
                Some(dir)
            }
            None => None,
        };
        let mut report = RunReport::default();
        if self.config.mode == Mode::Probe {
            report.probe = self.probe()?;
        } else {
            let (burn, rows) = self.train()?;
            report.burn_in = burn;
            report.metrics = rows;
        }
        report.counters = self.counters;
        if let Some(dir) = &dir {
            write_rows(&dir.join("metrics.csv"), &report.metrics)?;
            write_rows(&dir.join("burnin.csv"), &report.burn_in)?;
            if self.config.mode == Mode::Probe {
                write_rows(&dir.join("probe.csv"), &report.probe)?;
            }
            self.checkpoint().save(dir.join("checkpoint.bin"))?;
            let n = self.config.dump_episodes.min(self.buffer.len());
            let recent: Vec<&Trajectory> = (self.buffer.len() - n..self.buffer.len())
                .map(|i| self.buffer.get(i).as_ref())
                .collect();
            write_trajectories(&dir.join("trajectories.csv"), &self.spec, &recent)?;
        }
        report.out_dir = dir;
        Ok(report)
    }
}

fn seq_adam(config: &RunConfig) -> AdamConfig {
    AdamConfig {
        lr: config.seq_lr,
        weight_decay: config.weight_decay,
        clip_norm: (config.clip_norm > 0.0).then_some(config.clip_norm),
        ..AdamConfig::default()
    }
}

fn with_context(e: Error, context: &str) -> Error {
    match e {
        Error::NonFiniteLoss { value, .. } => Error::NonFiniteLoss {
            context: context.into(),
            value,
        },
        other => other,
    }
}
