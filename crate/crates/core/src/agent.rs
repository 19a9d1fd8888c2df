//! Discrete soft actor-critic on top of history latents.

use rand::Rng;

use crate::numerics::{AdamConfig, AdamW, Gradients, Matrix, ParamStore, Tape, Var};
use crate::psr::argmax;
use crate::seqmodel::TanhMlp;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    /// Fixed entropy coefficient.
    pub entropy: f64,
    /// Target-network averaging rate per update.
    pub tau: f64,
    pub hidden: usize,
    pub clip_norm: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-4,
            critic_lr: 2e-4,
            gamma: 0.99,
            entropy: 0.01,
            tau: 0.005,
            hidden: 256,
            clip_norm: Some(1.0),
        }
    }
}

/// RL samples drawn from a latent matrix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transitions {
    /// Latent row of the state the action was taken in.
    pub rows: Vec<usize>,
    /// Latent row of the following state; `None` when the step ended the episode.
    pub next_rows: Vec<Option<usize>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Transitions {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: usize, next: Option<usize>, action: usize, reward: f64) {
        self.rows.push(row);
        self.next_rows.push(next);
        self.actions.push(action);
        self.rewards.push(reward);
    }
}

#[derive(Debug)]
pub struct RlLosses<'t> {
    pub critic: Var<'t>,
    pub actor: Var<'t>,
    /// Soft Bellman targets the critics regressed onto.
    pub targets: Vec<f64>,
}

impl<'t> RlLosses<'t> {
    pub fn total(&self) -> Var<'t> {
        self.critic.add(self.actor)
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: SacConfig,
    pub num_actions: usize,
    pub latent_dim: usize,
    pub actor: TanhMlp,
    pub actor_store: ParamStore,
    pub critics: [TanhMlp; 2],
    pub critic_store: ParamStore,
    pub target_store: ParamStore,
    actor_opt: AdamW,
    critic_opt: AdamW,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, latent_dim: usize, num_actions: usize, config: SacConfig) -> Self {
        let mut actor_store = ParamStore::new();
        let actor = TanhMlp::new(&mut actor_store, rng, "actor", latent_dim, config.hidden, num_actions);
        let mut critic_store = ParamStore::new();
        let critics = [
            TanhMlp::new(&mut critic_store, rng, "critic0", latent_dim, config.hidden, num_actions),
            TanhMlp::new(&mut critic_store, rng, "critic1", latent_dim, config.hidden, num_actions),
        ];
        let target_store = critic_store.clone();
        let adam = |lr| AdamConfig {
            lr,
            clip_norm: config.clip_norm,
            ..AdamConfig::default()
        };
        let actor_opt = AdamW::new(&actor_store, adam(config.actor_lr));
        let critic_opt = AdamW::new(&critic_store, adam(config.critic_lr));
        Self {
            config,
            num_actions,
            latent_dim,
            actor,
            actor_store,
            critics,
            critic_store,
            target_store,
            actor_opt,
            critic_opt,
        }
    }

    pub fn logits<'t>(&self, tape: &'t Tape, latents: Var<'t>) -> Var<'t> {
        self.actor.forward(tape, &self.actor_store, latents)
    }

    /// One action per latent row: sampled from the softmax policy, or the
    /// argmax with ties going to the lowest index.
    pub fn act<R: Rng + ?Sized>(&self, latents: &Matrix, rng: &mut R, greedy: bool) -> Vec<usize> {
        let tape = Tape::new();
        let logits = self.logits(&tape, tape.constant(latents.clone())).value();
        logits
            .rows()
            .into_iter()
            .map(|row| {
                if greedy {
                    argmax(row.iter().copied())
                } else {
                    sample_softmax(row.iter().copied(), rng)
                }
            })
            .collect()
    }

    fn q_values(&self, store: &ParamStore, latents: &Matrix) -> [Matrix; 2] {
        let tape = Tape::new();
        let z = tape.constant(latents.clone());
        [0, 1].map(|i| self.critics[i].forward(&tape, store, z).value().as_ref().clone())
    }

    /// Soft Bellman targets `r + gamma * V(s')` with
    /// `V(s') = sum_a pi(a|s') (min_i Qbar_i(s', a) - entropy * log pi(a|s'))`.
    pub fn bellman_targets(&self, latents: &Matrix, batch: &Transitions) -> Vec<f64> {
        let next: Vec<usize> = batch.next_rows.iter().flatten().copied().collect();
        let mut values = Vec::with_capacity(next.len());
        if !next.is_empty() {
            let z = latents.select(ndarray::Axis(0), &next);
            let [q0, q1] = self.q_values(&self.target_store, &z);
            let tape = Tape::new();
            let logp = self.logits(&tape, tape.constant(z)).log_softmax().value();
            for i in 0..next.len() {
                let v: f64 = (0..self.num_actions)
                    .map(|a| {
                        let lp = logp[[i, a]];
                        lp.exp() * (q0[[i, a]].min(q1[[i, a]]) - self.config.entropy * lp)
                    })
                    .sum();
                values.push(v);
            }
        }
        let mut v = values.into_iter();
        batch
            .next_rows
            .iter()
            .zip(&batch.rewards)
            .map(|(n, &r)| match n {
                Some(_) => r + self.config.gamma * v.next().expect("one value per live next state"),
                None => r,
            })
            .collect()
    }

    /// Critic and actor losses on `latents` (`[rows, latent_dim]`).
    ///
    /// The critic loss differentiates through `latents`; the actor sees them
    /// gradient-blocked and treats Q-values as constants.
    pub fn losses<'t>(&self, tape: &'t Tape, latents: Var<'t>, batch: &Transitions) -> RlLosses<'t> {
        assert!(!batch.is_empty(), "rl update needs at least one transition");
        let values = latents.value();
        let targets = self.bellman_targets(&values, batch);
        let n = batch.len() as f64;
        let y = tape.constant(Matrix::from_shape_vec((targets.len(), 1), targets.clone()).expect("column"));

        let z = latents.gather_rows(&batch.rows);
        let mut critic = None;
        let mut q = Vec::with_capacity(2);
        for net in &self.critics {
            let qa = net.forward(tape, &self.critic_store, z);
            q.push(qa.value());
            let l = qa.pick_cols(&batch.actions).sub(y).square().sum().scale(1.0 / n);
            critic = Some(match critic {
                None => l,
                Some(c) => l.add(c),
            });
        }
        let min_q = Matrix::from_shape_fn(q[0].raw_dim(), |ix| q[0][ix].min(q[1][ix]));

        let logp = self.logits(tape, tape.stop_gradient(z)).log_softmax();
        let inner = logp.scale(self.config.entropy).sub(tape.constant(min_q));
        let actor = logp.exp().mul(inner).sum().scale(1.0 / n);
        RlLosses {
            critic: critic.expect("two critics"),
            actor,
            targets,
        }
    }

    /// Apply gradients from a backward pass over [`RlLosses::total`], then
    /// move the target critics towards the online ones.
    pub fn apply(&mut self, grads: &Gradients) -> Result<()> {
        grads.accumulate_into(&mut self.actor_store);
        grads.accumulate_into(&mut self.critic_store);
        self.actor_opt.step(&mut self.actor_store)?;
        self.critic_opt.step(&mut self.critic_store)?;
        self.target_store.soft_update_from(&self.critic_store, self.config.tau);
        Ok(())
    }

    /// Fresh policy and critics with the same configuration.
    pub fn reinitialized<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        Self::new(rng, self.latent_dim, self.num_actions, self.config.clone())
    }
}

fn sample_softmax<R: Rng + ?Sized>(logits: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}
