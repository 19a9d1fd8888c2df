//! Future-observation prediction loss and the extraction of core-test
//! samples from stored episodes.

use std::rc::Rc;

use crate::env::EnvSpec;
use crate::numerics::{Matrix, ParamStore, Tape, Var};
use crate::rollout::Trajectory;
use crate::seqmodel::ReprModel;
use crate::{Error, Result};

/// Number of future steps predicted per core test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreTestSpec {
    pub k: usize,
}

impl Default for CoreTestSpec {
    fn default() -> Self {
        Self { k: 1 }
    }
}

/// Which timesteps become prediction samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extraction {
    /// Only the episode's marked test-action step.
    #[default]
    Marked,
    /// Every step with a complete future window (uses the on-policy actions).
    Dense,
}

/// Prediction samples for one episode batch laid out time-major with
/// `batch` columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoreTests {
    pub k: usize,
    /// Latent row (`t * batch + b`) each sample is anchored at.
    pub rows: Vec<usize>,
    /// Anchor timestep `t` of each sample.
    pub steps: Vec<usize>,
    /// `actions[j][i]`: action of predicted step `j` for sample `i`.
    pub actions: Vec<Vec<usize>>,
    /// `discrete[j][c][i]`: target symbol of channel `c`.
    pub discrete: Vec<Vec<Vec<usize>>>,
    /// `continuous[j][c][i]`: target value of continuous channel `c`.
    pub continuous: Vec<Vec<Vec<f64>>>,
}

impl CoreTests {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Collect core-test samples. Samples whose future window runs past the end
/// of the episode are dropped. In `Marked` mode an episode without a marked
/// step is an error.
pub fn extract_core_tests(
    spec: &EnvSpec,
    episodes: &[&Trajectory],
    test: CoreTestSpec,
    extraction: Extraction,
) -> Result<CoreTests> {
    assert!(test.k >= 1, "core tests need k >= 1");
    let k = test.k;
    let batch = episodes.len();
    let mut out = CoreTests {
        k,
        actions: vec![Vec::new(); k],
        discrete: vec![vec![Vec::new(); spec.num_discrete()]; k],
        continuous: vec![vec![Vec::new(); spec.num_continuous()]; k],
        ..CoreTests::default()
    };
    for (b, ep) in episodes.iter().enumerate() {
        let anchors: Vec<usize> = match extraction {
            Extraction::Marked => vec![ep.test_step.ok_or(Error::MissingTestStep)?],
            Extraction::Dense => (0..ep.len()).collect(),
        };
        for t in anchors {
            // The last step is terminal, so a window must end strictly before it.
            if t + k >= ep.len() {
                continue;
            }
            out.rows.push(t * batch + b);
            out.steps.push(t);
            for j in 0..k {
                out.actions[j].push(ep.actions[t + j]);
                let obs = &ep.observations[t + j + 1];
                for (col, &s) in out.discrete[j].iter_mut().zip(&obs.discrete) {
                    col.push(s);
                }
                for (col, &x) in out.continuous[j].iter_mut().zip(&obs.continuous) {
                    col.push(x);
                }
            }
        }
    }
    Ok(out)
}

/// Loss plus the raw scores it was computed from.
#[derive(Debug)]
pub struct PsrOutput<'t> {
    pub loss: Var<'t>,
    /// Per discrete channel, `[k * n, cardinality]` scores.
    pub logits: Vec<Rc<Matrix>>,
    pub continuous: Vec<Rc<Matrix>>,
}

/// Mean over samples, predicted steps and channels of cross-entropy
/// (discrete channels) and squared error (continuous channels).
///
/// `latents` are the summarizer outputs for the whole batch; samples pick
/// their anchor rows out of it. Panics on an empty sample set.
pub fn psr_loss<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    model: &ReprModel,
    latents: Var<'t>,
    tests: &CoreTests,
) -> PsrOutput<'t> {
    assert!(!tests.is_empty(), "psr_loss needs at least one sample");
    let anchors = latents.gather_rows(&tests.rows);
    let pred = model.predict(tape, store, anchors, &tests.actions);
    let channels = pred.logits.len() + pred.continuous.len();
    let count = (tests.len() * tests.k * channels) as f64;

    let mut terms = Vec::with_capacity(channels);
    for (c, logits) in pred.logits.iter().enumerate() {
        let targets: Vec<usize> = (0..tests.k).flat_map(|j| tests.discrete[j][c].iter().copied()).collect();
        terms.push(logits.log_softmax().pick_cols(&targets).sum().scale(-1.0));
    }
    for (c, out) in pred.continuous.iter().enumerate() {
        let targets: Vec<f64> = (0..tests.k).flat_map(|j| tests.continuous[j][c].iter().copied()).collect();
        let y = tape.constant(Matrix::from_shape_vec((targets.len(), 1), targets).expect("column"));
        terms.push(out.sub(y).square().sum());
    }
    let total = terms[1..].iter().fold(terms[0], |acc, &t| acc.add(t));
    PsrOutput {
        loss: total.scale(1.0 / count),
        logits: pred.logits.iter().map(|l| l.value()).collect(),
        continuous: pred.continuous.iter().map(|l| l.value()).collect(),
    }
}

/// Per-sample argmax hits on discrete channel `channel` for predicted step 0.
/// Ties resolve to the lowest symbol.
pub fn channel_hits(output: &PsrOutput<'_>, tests: &CoreTests, channel: usize) -> Vec<bool> {
    let logits = &output.logits[channel];
    (0..tests.len())
        .map(|i| argmax(logits.row(i).iter().copied()) == tests.discrete[0][channel][i])
        .collect()
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
