use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::SacConfig;
use crate::env::{Difficulty, EnvConfig, EnvKind, MatchRule};
use crate::psr::{CoreTestSpec, Extraction};
use crate::seqmodel::{Backbone, ModelConfig};
use crate::{Error, Result};

/// How the summarizer is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Summarizer trained by the prediction loss only; RL sees blocked latents.
    Drl2,
    /// Summarizer trained by the critic loss only; no prediction updates.
    E2e,
    /// Train the summarizer to fixed prediction-loss levels, freeze it, then train RL.
    Probe,
    /// No history: the agent sees the current observation embedding, trained by RL.
    Stateless,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Drl2 => "drl2",
            Mode::E2e => "e2e",
            Mode::Probe => "probe",
            Mode::Stateless => "stateless",
        }
    }

    /// Whether prediction updates touch the summarizer.
    pub fn trains_prediction(self) -> bool {
        matches!(self, Mode::Drl2 | Mode::Probe)
    }

    /// Whether RL gradients reach the summarizer / embedding.
    pub fn rl_reaches_summarizer(self) -> bool {
        matches!(self, Mode::E2e | Mode::Stateless)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drl2" => Ok(Mode::Drl2),
            "e2e" => Ok(Mode::E2e),
            "probe" => Ok(Mode::Probe),
            "stateless" => Ok(Mode::Stateless),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Every knob of a training run, read from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvKind,
    pub difficulty: Difficulty,
    pub k: Option<usize>,
    pub horizon: Option<usize>,
    pub cards: Option<usize>,
    pub balls: Option<usize>,
    pub match_rule: MatchRule,

    pub mode: Mode,
    pub backbone: Backbone,
    pub seed: u64,
    /// Environment-step budget after burn-in.
    pub total_steps: u64,

    pub burn_in_episodes: usize,
    pub burn_in_updates: usize,
    /// Stop burn-in updates early once held-out accuracy reaches this value.
    pub burn_in_target_accuracy: Option<f64>,
    pub burn_in_eval_every: usize,
    pub holdout_episodes: usize,

    pub t_gen: usize,
    pub t_psr: usize,
    pub t_rl: usize,
    /// Overrides `t_psr`: prediction updates are scheduled so that their
    /// running total is `floor(ratio * rl_updates)`.
    pub psr_rl_ratio: Option<f64>,

    pub actor_lr: f64,
    pub critic_lr: f64,
    pub seq_lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub entropy: f64,
    pub tau: f64,
    pub clip_norm: f64,

    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub predictor_hidden: usize,
    pub hidden: usize,
    pub batch_size: usize,
    /// Replay capacity in timesteps; divided by the horizon to get episodes.
    pub buffer_size: usize,

    pub core_test_k: usize,
    pub dense_extraction: bool,
    pub include_test_transitions: bool,

    pub eval_every: u64,
    pub eval_episodes: usize,

    /// Prediction-loss levels for probe mode, in decreasing order.
    pub probe_targets: Vec<f64>,
    pub probe_max_updates: usize,
    pub probe_check_every: usize,
    /// Relative tolerance for hitting a probe target.
    pub probe_tolerance: f64,

    /// Episodes written to the trajectory dump at the end of a run.
    pub dump_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::GridWorld,
            difficulty: Difficulty::Easy,
            k: None,
            horizon: None,
            cards: None,
            balls: None,
            match_rule: MatchRule::default(),
            mode: Mode::Drl2,
            backbone: Backbone::Transformer,
            seed: 0,
            total_steps: 100_000,
            burn_in_episodes: 5000,
            burn_in_updates: 1000,
            burn_in_target_accuracy: None,
            burn_in_eval_every: 100,
            holdout_episodes: 200,
            t_gen: 10,
            t_psr: 50,
            t_rl: 500,
            psr_rl_ratio: None,
            actor_lr: 1e-4,
            critic_lr: 2e-4,
            seq_lr: 5e-5,
            weight_decay: 1e-4,
            gamma: 0.99,
            entropy: 0.01,
            tau: 0.005,
            clip_norm: 1.0,
            embed_dim: 128,
            layers: 3,
            heads: 4,
            predictor_hidden: 16,
            hidden: 256,
            batch_size: 64,
            buffer_size: 30_000,
            core_test_k: 1,
            dense_extraction: false,
            include_test_transitions: false,
            eval_every: 10_000,
            eval_episodes: 100,
            probe_targets: Vec::new(),
            probe_max_updates: 20_000,
            probe_check_every: 50,
            probe_tolerance: 0.02,
            dump_episodes: 20,
        }
    }
}

impl RunConfig {
    /// Defaults for an environment family, with burn-in and update schedule
    /// taken from the per-environment table used for the benchmark runs.
    pub fn for_env(env: EnvKind) -> Self {
        let mut c = RunConfig {
            env,
            ..RunConfig::default()
        };
        if env != EnvKind::GridWorld {
            c.embed_dim = 256;
        }
        let (burn_in, t_gen, t_psr, t_rl) = match env {
            EnvKind::GridWorld => (5000, 10, 50, 500),
            EnvKind::AutoEncode => (10_000, 2, 200, 500),
            EnvKind::Battleship | EnvKind::Concentration | EnvKind::Minesweeper => {
                (10_000, if env == EnvKind::Battleship { 5 } else { 10 }, 50, 500)
            }
            EnvKind::RepeatPrevious => (4000, 2, 200, 500),
            EnvKind::DelayedCatch => (0, 10, 3, 100),
            EnvKind::DarkKeyToDoor => (0, 10, 100, 10),
        };
        c.burn_in_episodes = burn_in;
        c.t_gen = t_gen;
        c.t_psr = t_psr;
        c.t_rl = t_rl;
        c.psr_rl_ratio = match env {
            EnvKind::DelayedCatch => Some(0.03),
            EnvKind::DarkKeyToDoor => Some(10.0),
            _ => None,
        };
        if env == EnvKind::Concentration {
            c.embed_dim = if c.difficulty == Difficulty::Medium { 208 } else { 260 };
        }
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Short stable digest of the full configuration, seed excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let digest = Sha256::digest(c.to_text().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Directory name for this run's outputs.
    pub fn run_name(&self) -> String {
        format!("{}-{}-{}-seed{}", self.env.as_str(), self.mode, self.hash(), self.seed)
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            kind: self.env,
            difficulty: self.difficulty,
            k: self.k,
            horizon: self.horizon,
            cards: self.cards,
            balls: self.balls,
            match_rule: self.match_rule,
        }
    }

    pub fn model_config(&self, max_len: usize) -> ModelConfig {
        ModelConfig {
            backbone: if self.mode == Mode::Stateless {
                Backbone::Stateless
            } else {
                self.backbone
            },
            embed_dim: self.embed_dim,
            layers: self.layers,
            heads: self.heads,
            predictor_hidden: self.predictor_hidden,
            max_len,
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            gamma: self.gamma,
            entropy: self.entropy,
            tau: self.tau,
            hidden: self.hidden,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }

    pub fn core_tests(&self) -> CoreTestSpec {
        CoreTestSpec { k: self.core_test_k }
    }

    pub fn extraction(&self) -> Extraction {
        if self.dense_extraction {
            Extraction::Dense
        } else {
            Extraction::Marked
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.t_gen == 0 {
            return fail("t_gen must be positive".into());
        }
        if self.core_test_k == 0 {
            return fail("core_test_k must be at least 1".into());
        }
        if self.embed_dim == 0 || (self.backbone == Backbone::Transformer && !self.embed_dim.is_multiple_of(self.heads.max(1))) {
            return fail(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be positive".into());
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("seq_lr", self.seq_lr),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return fail("gamma and tau must lie in [0, 1]".into());
        }
        if let Some(r) = self.psr_rl_ratio {
            if !(r.is_finite() && r >= 0.0) {
                return fail("psr_rl_ratio must be finite and non-negative".into());
            }
        }
        if self.mode == Mode::Probe {
            if self.probe_targets.is_empty() {
                return fail("probe mode needs probe_targets".into());
            }
            if self.probe_targets.windows(2).any(|w| w[1] >= w[0]) {
                return fail("probe_targets must be strictly decreasing".into());
            }
        }
        self.env_config().build().map(|_| ())
    }
}
