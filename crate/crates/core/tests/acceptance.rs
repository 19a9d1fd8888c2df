//! End-to-end acceptance runs. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `cargo test --release -p prl-core --test acceptance -- 4 7` runs a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{gradient_error, readout, rng};
use prl_core::env::{
    AutoEncode, Battleship, DarkKeyToDoor, EnvConfig, EnvKind, Environment, GridWorld,
};
use prl_core::numerics::{normal, ParamStore};
use prl_core::report::{spearman, write_report, ReportKind, RunFrame};
use prl_core::rollout::{tokens_for, Trajectory};
use prl_core::seqmodel::{
    Backbone, CausalTransformer, Gru, InputEmbedding, ModelConfig, ReprModel, TanhMlp, TokenBatch,
};
use prl_core::trainer::{Behavior, Mode, RunConfig, Trainer};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Verdict;

const CRITERIA: [(u32, &str, Check, Duration); 9] = [
    (1, "finite-difference gradients", gradients, Duration::from_secs(60)),
    (2, "gradient blocking", blocking, Duration::from_secs(120)),
    (3, "environment oracles", env_oracles, Duration::from_secs(300)),
    (4, "burn-in recall accuracy", burn_in_recall, Duration::from_secs(1800)),
    (5, "frozen-summarizer correlation", frozen_probe, Duration::from_secs(3600)),
    (6, "gridworld ordering", gridworld_ordering, Duration::from_secs(3600)),
    (7, "drl2 vs e2e recall", drl2_vs_e2e, Duration::from_secs(7200)),
    (8, "update-ratio sweep", ratio_sweep, Duration::from_secs(3600)),
    (9, "determinism and padding", determinism, Duration::from_secs(300)),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check, budget) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = verdict.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {id} ({name}): {} | {} | {:.1}s of {}s{}",
            if pass { "PASS" } else { "FAIL" },
            verdict.detail,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { " (over time budget)" },
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn normalized_repeat_return(r: f64) -> f64 {
    (r + 0.5) / 1.5
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

// 1 ----------------------------------------------------------------------

const FD_TOL: f64 = 1e-4;

fn repeat_spec(k: usize, h: usize) -> prl_core::env::EnvSpec {
    EnvConfig::repeat_previous(k, h).build().unwrap().spec().clone()
}

fn random_tokens(spec: &prl_core::env::EnvSpec, seq: usize, batch: usize, seed: u64) -> TokenBatch {
    let mut r = rng(seed);
    let mut tokens = TokenBatch::new(spec, seq, batch);
    for t in 0..seq {
        for b in 0..batch {
            let obs = prl_core::env::Observation::discrete(
                spec.channel_cardinalities.iter().map(|&c| r.random_range(0..c)).collect(),
            );
            let a = if t == 0 { spec.action_cardinality } else { r.random_range(0..spec.action_cardinality) };
            tokens.set(t, b, &obs, a, r.random_range(0..3));
        }
    }
    tokens
}

fn gradients() -> Verdict {
    let mut errors = Vec::new();

    let spec = repeat_spec(2, 6);
    let tokens = random_tokens(&spec, 4, 2, 1);
    let mut s = ParamStore::new();
    let emb = InputEmbedding::new(&mut s, &mut rng(2), &spec, 8);
    errors.push(("embedding", gradient_error(&mut s, |t, s| readout(t, emb.embed(t, s, &tokens), 3))));

    let mut s = ParamStore::new();
    let gru = Gru::new(&mut s, &mut rng(4), "gru", 5, 6);
    let x = s.add("x", normal(&mut rng(5), 3 * 2, 5, 1.0));
    let h0 = s.add("h0", normal(&mut rng(6), 2, 6, 0.5));
    errors.push((
        "gru cell",
        gradient_error(&mut s, |t, s| {
            let out = gru.forward(t, s, t.param(s, x), 3, 2, Some(t.param(s, h0)));
            readout(t, out, 7)
        }),
    ));

    let mut s = ParamStore::new();
    let tf = CausalTransformer::new(&mut s, &mut rng(8), "tf", 8, 1, 2, 4);
    let x = s.add("x", normal(&mut rng(9), 4 * 2, 8, 1.0));
    errors.push((
        "attention block",
        gradient_error(&mut s, |t, s| readout(t, tf.forward(t, s, t.param(s, x), 4, 2), 10)),
    ));

    let mut s = ParamStore::new();
    let mlp = TanhMlp::new(&mut s, &mut rng(11), "mlp", 6, 7, 4);
    let x = s.add("x", normal(&mut rng(12), 5, 6, 1.0));
    errors.push((
        "mlp head",
        gradient_error(&mut s, |t, s| readout(t, mlp.forward(t, s, t.param(s, x)).log_softmax(), 13)),
    ));

    // Whole prediction path: embedding, summarizer, predictor and loss.
    let gspec = EnvConfig::new(EnvKind::GridWorld).build().unwrap().spec().clone();
    let mut s = ParamStore::new();
    let cfg = ModelConfig {
        backbone: Backbone::Transformer,
        embed_dim: 8,
        layers: 1,
        heads: 2,
        predictor_hidden: 4,
        max_len: gspec.horizon,
    };
    let model = ReprModel::new(&mut s, &mut rng(14), &gspec, cfg);
    let mut tr = Trainer::new(RunConfig {
        env: EnvKind::GridWorld,
        ..RunConfig::default()
    })
    .unwrap();
    let eps = tr.generate(3, Behavior::Uniform, true).unwrap();
    let refs: Vec<&Trajectory> = eps.iter().collect();
    let tests = prl_core::psr::extract_core_tests(
        &gspec,
        &refs,
        prl_core::psr::CoreTestSpec { k: 2 },
        prl_core::psr::Extraction::Dense,
    )
    .unwrap();
    let toks = tokens_for(&gspec, &refs, None);
    errors.push((
        "prediction loss",
        gradient_error(&mut s, |t, s| {
            let z = model.summarize(t, s, &toks);
            prl_core::psr::psr_loss(t, s, &model, z, &tests).loss
        }),
    ));

    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Verdict::new(worst < FD_TOL, format!("max rel error {worst:.2e} < {FD_TOL:e}; {}", detail.join(", ")))
}

// 2 ----------------------------------------------------------------------

fn small_repeat(mode: Mode) -> RunConfig {
    RunConfig {
        env: EnvKind::RepeatPrevious,
        k: Some(2),
        horizon: Some(8),
        mode,
        embed_dim: 16,
        layers: 2,
        heads: 2,
        hidden: 32,
        batch_size: 8,
        burn_in_episodes: 64,
        burn_in_updates: 10,
        holdout_episodes: 16,
        ..RunConfig::default()
    }
}

fn blocking() -> Verdict {
    let count = |mode| {
        let mut t = Trainer::new(small_repeat(mode)).unwrap();
        t.burn_in().unwrap();
        let norms: Vec<f64> = (0..100).map(|_| t.rl_update(true).unwrap().phi_grad_linf.unwrap()).collect();
        (norms.iter().filter(|&&g| g == 0.0).count(), norms.iter().filter(|&&g| g > 0.0).count())
    };
    let (drl2_zero, _) = count(Mode::Drl2);
    let (_, e2e_live) = count(Mode::E2e);
    Verdict::new(
        drl2_zero == 100 && e2e_live >= 95,
        format!("drl2 zero-gradient updates {drl2_zero}/100; e2e non-zero {e2e_live}/100 (need >= 95)"),
    )
}

// 3 ----------------------------------------------------------------------

fn battleship_totals(size: usize, ships: &[usize], episodes: usize) -> (f64, f64) {
    let mut env = Battleship::new(size, ships);
    let cells = size * size;
    let mut r = rng(31);
    let mut perfect_worst: f64 = 0.0;
    let mut random_sum = 0.0;
    for ep in 0..episodes {
        env.reset(r.random());
        if ep < 2000 {
            let mut total = 0.0;
            for c in 0..cells {
                if env.is_done() {
                    break;
                }
                if env.is_ship(c) {
                    total += env.step(c).reward;
                }
            }
            assert!(env.is_done(), "sinking every ship ends the episode");
            perfect_worst = perfect_worst.max((total - 1.0).abs());
            env.reset(r.random());
        }
        let mut order: Vec<usize> = (0..cells).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let mut total = 0.0;
        for c in order {
            if env.is_done() {
                break;
            }
            total += env.step(c).reward;
        }
        random_sum += total;
    }
    (perfect_worst, random_sum / episodes as f64)
}

fn env_oracles() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();

    for (size, ships) in [(6, vec![2, 3]), (8, vec![2, 3, 4]), (10, vec![2, 3, 4, 5])] {
        let (perfect_dev, random_mean) = battleship_totals(size, &ships, 100_000);
        ok &= perfect_dev <= 1e-9 && random_mean.abs() <= 0.02;
        notes.push(format!("battleship {size}x{size} perfect dev {perfect_dev:.1e} random {random_mean:+.4}"));
    }

    let mut grid = GridWorld::new();
    let mut r = rng(32);
    let (mut agree, mut steps) = (0usize, 0usize);
    while steps < 100_000 {
        grid.reset(r.random());
        while !grid.is_done() {
            let s = grid.step(r.random_range(0..4));
            agree += usize::from((s.observation.discrete[2] == 1) == grid.last_move_was_closer());
            steps += 1;
        }
    }
    let acc = agree as f64 / steps as f64;
    ok &= (acc - 0.9).abs() <= 0.01;
    notes.push(format!("gridworld indicator {acc:.4}"));

    let mut ae_range = (f64::INFINITY, f64::NEG_INFINITY);
    for cards in [3, 6, 9, 52] {
        let mut env = AutoEncode::new(cards);
        for ep in 0..5000 {
            env.reset(r.random());
            let shown = env.shown().to_vec();
            let mut total = 0.0;
            let mut t = 0;
            while !env.is_done() {
                let a = match ep % 3 {
                    // perfect, always wrong, random
                    0 if t >= cards => shown[2 * cards - 1 - t],
                    1 if t >= cards => (shown[2 * cards - 1 - t] + 1) % 4,
                    _ => r.random_range(0..4),
                };
                total += env.step(a).reward;
                t += 1;
            }
            ae_range = (ae_range.0.min(total), ae_range.1.max(total));
        }
    }
    ok &= ae_range.0 >= -1.0 - 1e-9 && ae_range.1 <= 1.0 + 1e-9;
    notes.push(format!("autoencode returns in [{:.3}, {:.3}]", ae_range.0, ae_range.1));

    let mut env = DarkKeyToDoor::new();
    let mut seen = [0usize; 3];
    let mut order_ok = true;
    for _ in 0..20_000 {
        env.reset(r.random());
        let mut total = 0.0;
        while !env.is_done() {
            let had_key = env.has_key();
            let s = env.step(r.random_range(0..4));
            if s.reward > 0.0 {
                let at_door = env.position() == env.door();
                // The first payment is the key; the second needs the key and ends the episode.
                order_ok &= if had_key { at_door && s.done } else { env.position() == env.key() && env.has_key() };
            }
            total += s.reward;
        }
        let tot = total.round() as usize;
        order_ok &= (total - tot as f64).abs() < 1e-12 && tot <= 2;
        seen[tot.min(2)] += 1;
    }
    ok &= order_ok && seen.iter().all(|&n| n > 0);
    notes.push(format!("key-to-door returns 0/1/2 seen {seen:?}, ordering {order_ok}"));

    Verdict::new(ok, notes.join("; "))
}

// 4 ----------------------------------------------------------------------

/// Shared burn-in setup for the recall study; only backbone and k vary.
fn recall_burn_in(backbone: Backbone, k: usize, updates: usize) -> RunConfig {
    RunConfig {
        env: EnvKind::RepeatPrevious,
        k: Some(k),
        horizon: Some(32),
        backbone,
        embed_dim: 32,
        layers: 2,
        heads: 4,
        batch_size: 16,
        dense_extraction: true,
        seq_lr: 1e-3,
        burn_in_episodes: 2000,
        burn_in_updates: updates,
        burn_in_eval_every: 250,
        holdout_episodes: 100,
        ..RunConfig::default()
    }
}

fn best_burn_in_accuracy(mut cfg: RunConfig, stop_at: f64) -> f64 {
    cfg.burn_in_target_accuracy = Some(stop_at);
    let mut t = Trainer::new(cfg).unwrap();
    t.burn_in()
        .unwrap()
        .iter()
        .map(|p| p.holdout_accuracy)
        .fold(0.0, f64::max)
}

fn burn_in_recall() -> Verdict {
    const BUDGET: usize = 20_000;
    let mut ok = true;
    let mut notes = Vec::new();
    for k in [2, 4, 8] {
        let acc = best_burn_in_accuracy(recall_burn_in(Backbone::Transformer, k, BUDGET), 0.95);
        ok &= acc >= 0.95;
        notes.push(format!("transformer k={k} {acc:.3} (>= 0.95)"));
    }
    let acc2 = best_burn_in_accuracy(recall_burn_in(Backbone::Gru, 2, BUDGET), 0.95);
    ok &= acc2 >= 0.95;
    notes.push(format!("gru k=2 {acc2:.3} (>= 0.95)"));
    // Stop as soon as the bound is broken; the best value is what is judged.
    let acc8 = best_burn_in_accuracy(recall_burn_in(Backbone::Gru, 8, BUDGET), 0.8 + 1e-9);
    ok &= acc8 <= 0.80;
    notes.push(format!("gru k=8 {acc8:.3} (<= 0.80)"));
    Verdict::new(ok, format!("best held-out accuracy within {BUDGET} updates: {}", notes.join(", ")))
}

// 5 ----------------------------------------------------------------------

const PROBE_TARGETS: [f64; 3] = [0.96, 0.85, 0.73];

fn probe_config(seed: u64) -> RunConfig {
    RunConfig {
        mode: Mode::Probe,
        seed,
        burn_in_episodes: 1000,
        probe_targets: PROBE_TARGETS.to_vec(),
        probe_max_updates: 20_000,
        probe_check_every: 10,
        total_steps: 4000,
        t_gen: 4,
        t_rl: 100,
        hidden: 64,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        eval_every: 4000,
        eval_episodes: 100,
        ..recall_burn_in(Backbone::Transformer, 2, 0)
    }
}

fn frozen_probe() -> Verdict {
    let mut losses = Vec::new();
    let mut returns = Vec::new();
    let mut per_target = vec![Vec::new(); PROBE_TARGETS.len()];
    let mut missing = 0;
    for seed in 0..3 {
        let report = Trainer::new(probe_config(seed)).unwrap().run(None).unwrap();
        for (i, p) in report.probe.iter().enumerate() {
            match (p.reached, p.psr_loss, p.final_return) {
                (true, Some(l), Some(r)) => {
                    losses.push(l);
                    returns.push(r);
                    per_target[i].push(r);
                }
                _ => missing += 1,
            }
        }
    }
    let rho = spearman(&losses, &returns);
    let means: Vec<f64> = per_target.iter().map(|v| if v.is_empty() { f64::NAN } else { mean(v) }).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    Verdict::new(
        missing == 0 && monotone && !rho.degenerate && rho.rho <= -0.8,
        format!(
            "spearman {:.3} over {} (loss, return) pairs (<= -0.8); mean return per target {:?} = {} monotone {monotone}; unreached {missing}",
            rho.rho,
            losses.len(),
            PROBE_TARGETS,
            fmt_list(&means)
        ),
    )
}

// 6 ----------------------------------------------------------------------

fn gridworld_config(mode: Mode, seed: u64) -> RunConfig {
    RunConfig {
        mode,
        seed,
        total_steps: 100_000,
        t_gen: 10,
        t_psr: 10,
        t_rl: 50,
        batch_size: 32,
        hidden: 64,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        embed_dim: 32,
        layers: 2,
        heads: 4,
        seq_lr: 1e-3,
        eval_every: 10_000,
        eval_episodes: 200,
        ..RunConfig::for_env(EnvKind::GridWorld)
    }
}

/// Mean greedy return over the last `n` evaluations of a run; single
/// 200-episode evaluations swing by several hundredths.
fn plateau(rows: &[prl_core::trainer::MetricsRow], n: usize) -> f64 {
    let r: Vec<f64> = rows.iter().filter_map(|m| m.eval_return).collect();
    mean(&r[r.len().saturating_sub(n)..])
}

fn gridworld_ordering() -> Verdict {
    let mut stateless = Vec::new();
    let mut sampled = Vec::new();
    let mut drl2 = Vec::new();
    for seed in 0..3 {
        let mut t = Trainer::new(gridworld_config(Mode::Stateless, seed)).unwrap();
        let (_, rows) = t.train().unwrap();
        stateless.push(plateau(&rows, 3));
        // Reported for context only: the stochastic policy's return.
        let eps = t.generate(1000, Behavior::Sample, false).unwrap();
        sampled.push(mean(&eps.iter().map(Trajectory::total_return).collect::<Vec<_>>()));
        let (_, rows) = Trainer::new(gridworld_config(Mode::Drl2, seed)).unwrap().train().unwrap();
        drl2.push(plateau(&rows, 3));
    }
    let (s, d) = (mean(&stateless), mean(&drl2));
    Verdict::new(
        (s - 0.12).abs() <= 0.05 && d >= 1.5 * s,
        format!(
            "mean of last 3 greedy evals: stateless {s:.3} {} (0.12 +- 0.05); drl2 {d:.3} {} (>= {:.3}); \
             stateless sampled-policy return {:.3} {}",
            fmt_list(&stateless),
            fmt_list(&drl2),
            1.5 * s,
            mean(&sampled),
            fmt_list(&sampled),
        ),
    )
}

// 7 ----------------------------------------------------------------------

fn recall_rl_config(mode: Mode, k: usize, seed: u64) -> RunConfig {
    RunConfig {
        mode,
        seed,
        burn_in_target_accuracy: Some(0.97),
        total_steps: 16_000,
        t_gen: 4,
        t_psr: 20,
        t_rl: 100,
        hidden: 64,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        eval_every: 2000,
        eval_episodes: 50,
        ..recall_burn_in(Backbone::Gru, k, 20_000)
    }
}

fn drl2_vs_e2e() -> Verdict {
    let mut finals = std::collections::BTreeMap::new();
    for k in [8, 2] {
        for mode in [Mode::Drl2, Mode::E2e] {
            let r: Vec<f64> = (0..3)
                .map(|seed| {
                    let report = Trainer::new(recall_rl_config(mode, k, seed)).unwrap().run(None).unwrap();
                    normalized_repeat_return(report.final_return().unwrap())
                })
                .collect();
            finals.insert((k, mode.as_str()), r);
        }
    }
    let m = |k, mode| mean(&finals[&(k, mode)]);
    let gap8 = m(8, "drl2") - m(8, "e2e");
    let ok = gap8 >= 0.2 && m(2, "drl2") >= 0.8 && m(2, "e2e") >= 0.8;
    let detail: Vec<String> = finals
        .iter()
        .map(|((k, mode), r)| format!("k={k} {mode} {:.3} {}", mean(r), fmt_list(r)))
        .collect();
    Verdict::new(
        ok,
        format!("normalized final returns: {}; k=8 gap {gap8:.3} (>= 0.2); k=2 both >= 0.8", detail.join(", ")),
    )
}

// 8 ----------------------------------------------------------------------

fn ratio_sweep() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let mut notes = Vec::new();
    let mut exact = true;
    for ratio in [0.03, 1.0, 10.0] {
        let cfg = RunConfig {
            psr_rl_ratio: Some(ratio),
            total_steps: 6000,
            t_gen: 10,
            t_rl: 20,
            embed_dim: 32,
            layers: 2,
            heads: 4,
            hidden: 64,
            batch_size: 16,
            seq_lr: 1e-3,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            eval_every: 1000,
            eval_episodes: 20,
            ..RunConfig::for_env(EnvKind::DelayedCatch)
        };
        // Each epoch asserts its own counts; the totals are checked here too.
        let report = Trainer::new(cfg).unwrap().run(Some(&runs)).unwrap();
        let c = report.counters;
        let due = (ratio * c.rl_updates as f64 + 1e-9).floor() as u64;
        exact &= c.psr_updates == due && c.rl_updates == c.epochs * 20;
        notes.push(format!("ratio {ratio}: rl {} psr {} (floor {due})", c.rl_updates, c.psr_updates));
    }
    let frames: Vec<RunFrame> = std::fs::read_dir(&runs)
        .unwrap()
        .map(|e| RunFrame::load(&e.unwrap().path()).unwrap())
        .collect();
    let out = write_report(&frames, ReportKind::Ratio, &dir.path().join("report")).unwrap();
    let complete = ["0.03", "1", "10"].iter().all(|r| {
        ["csv", "svg"].iter().all(|ext| {
            let f = dir.path().join("report").join(format!("ratio_{r}.{ext}"));
            out.files.contains(&f) && std::fs::metadata(&f).is_ok_and(|m| m.len() > 0)
        })
    });
    Verdict::new(
        exact && complete && out.warnings.is_empty(),
        format!("{}; report files {} complete {complete}", notes.join(", "), out.files.len()),
    )
}

// 9 ----------------------------------------------------------------------

fn determinism() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for mode in [Mode::Drl2, Mode::E2e] {
        let cfg = RunConfig {
            total_steps: 400,
            t_gen: 2,
            t_psr: 5,
            t_rl: 10,
            eval_every: 100,
            eval_episodes: 5,
            ..small_repeat(mode)
        };
        let dir = tempfile::tempdir().unwrap();
        let a = Trainer::new(cfg.clone()).unwrap().run(Some(&dir.path().join("a"))).unwrap();
        let b = Trainer::new(cfg.clone()).unwrap().run(Some(&dir.path().join("b"))).unwrap();
        let read = |r: &prl_core::trainer::RunReport| std::fs::read(r.out_dir.as_ref().unwrap().join("metrics.csv")).unwrap();
        let same = a.metrics == b.metrics && a.burn_in == b.burn_in && read(&a) == read(&b);
        ok &= same && !a.metrics.is_empty();
        notes.push(format!("{mode} {} rows identical {same}", a.metrics.len()));
    }

    // Variable-length episodes so that batches carry tail padding.
    let mut max_diff: f64 = 0.0;
    let mut batches = 0;
    for (env, mode, backbone) in [
        (EnvKind::Battleship, Mode::Drl2, Backbone::Transformer),
        (EnvKind::Minesweeper, Mode::E2e, Backbone::Gru),
        (EnvKind::GridWorld, Mode::Stateless, Backbone::Transformer),
        (EnvKind::DarkKeyToDoor, Mode::Drl2, Backbone::Gru),
    ] {
        let cfg = RunConfig {
            mode,
            backbone,
            embed_dim: 16,
            layers: 1,
            heads: 2,
            hidden: 16,
            ..RunConfig::for_env(env)
        };
        let mut t = Trainer::new(cfg).unwrap();
        let eps = t.generate(64, Behavior::Uniform, true).unwrap();
        let mut noise = rng(77);
        for chunk in eps.chunks(8) {
            let refs: Vec<&Trajectory> = chunk.iter().collect();
            let clean = t.batch_losses(&refs, None).unwrap();
            let noisy = t.batch_losses(&refs, Some(&mut noise)).unwrap();
            for (x, y) in [(clean.critic, noisy.critic), (clean.actor, noisy.actor)]
                .into_iter()
                .chain(clean.psr.zip(noisy.psr))
            {
                max_diff = max_diff.max((x - y).abs());
            }
            batches += 1;
        }
    }
    ok &= max_diff == 0.0;
    notes.push(format!("padding randomized on {batches} batches, max loss change {max_diff:e}"));
    Verdict::new(ok, notes.join("; "))
}
