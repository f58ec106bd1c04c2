//! Tier-2 deep Q-network that scores ground nodes for data collection.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::WorldConfig;
use crate::error::{Error, Result};
use crate::neural::{Adam, Mlp, MlpGrads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnHyper {
    pub hidden: Vec<usize>,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub gamma: f64,
    pub target_sync_steps: u64,
}

impl DqnHyper {
    pub fn from_config(cfg: &WorldConfig) -> Self {
        let l = &cfg.learning;
        Self {
            hidden: vec![l.hidden_width; l.hidden_layers],
            lr_start: l.dqn_lr_start,
            lr_end: l.dqn_lr_end,
            epsilon_start: l.epsilon_start,
            epsilon_end: l.epsilon_end,
            epsilon_decay_fraction: l.epsilon_decay_fraction,
            gamma: l.gamma,
            target_sync_steps: l.target_sync_steps,
        }
    }

    pub fn epsilon(&self, episode: usize, episodes: usize) -> f64 {
        let span = (self.epsilon_decay_fraction * episodes as f64).max(1.0);
        let frac = episode as f64 / span;
        if frac >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    /// Exponential decay from `lr_start` at the first episode to `lr_end` at
    /// the last.
    pub fn learning_rate(&self, episode: usize, episodes: usize) -> f64 {
        if episodes <= 1 {
            return self.lr_start;
        }
        let frac = (episode as f64 / (episodes - 1) as f64).min(1.0);
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

/// One sub-slot of one UAV. `action` is `None` when the UAV did not collect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierTwoExperience {
    pub obs: Vec<f64>,
    pub action: Option<usize>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnModel {
    pub hyper: DqnHyper,
    pub eval: Mlp<f64>,
    pub target: Mlp<f64>,
    opt: Adam,
    train_steps: u64,
}

impl DqnModel {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        num_actions: usize,
        hyper: DqnHyper,
        rng: &mut R,
    ) -> Self {
        let widths: Vec<usize> = std::iter::once(obs_dim)
            .chain(hyper.hidden.iter().copied())
            .chain(std::iter::once(num_actions))
            .collect();
        let eval = Mlp::new(&widths, rng);
        Self {
            target: eval.clone(),
            opt: Adam::new(hyper.lr_start),
            hyper,
            eval,
            train_steps: 0,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.eval.output_width()
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt.lr = lr;
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.eval.forward_one(obs)
    }

    /// Epsilon-greedy scores: with probability `epsilon` a random permutation
    /// of the Q-values, so the resulting ranking is uniform.
    pub fn select_scores<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut q = self.q_values(obs)?;
        if epsilon > 0.0 && rng.random_bool(epsilon.min(1.0)) {
            q.shuffle(rng);
        }
        Ok(q)
    }

    /// Mean squared TD error over the non-silent experiences and its gradient.
    /// Returns `None` when every experience is silent.
    pub fn loss_and_grads(
        &self,
        batch: &[&TierTwoExperience],
    ) -> Result<Option<(f64, MlpGrads<f64>)>> {
        let live: Vec<&TierTwoExperience> = batch
            .iter()
            .copied()
            .filter(|e| e.action.is_some())
            .collect();
        if live.is_empty() {
            return Ok(None);
        }
        let d = self.eval.input_width();
        let n = live.len();
        let mut obs = Array2::zeros((n, d));
        let mut next = Array2::zeros((n, d));
        for (i, e) in live.iter().enumerate() {
            if e.obs.len() != d || e.next_obs.len() != d {
                return Err(Error::WidthMismatch {
                    expected: d,
                    got: e.obs.len(),
                });
            }
            obs.row_mut(i)
                .iter_mut()
                .zip(&e.obs)
                .for_each(|(a, &b)| *a = b);
            next.row_mut(i)
                .iter_mut()
                .zip(&e.next_obs)
                .for_each(|(a, &b)| *a = b);
        }
        let q_next = self.target.forward(next.view())?;
        let (q, cache) = self.eval.forward_cached(obs.view())?;
        let mut grad = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (i, e) in live.iter().enumerate() {
            let a = e.action.expect("filtered");
            if a >= q.ncols() {
                return Err(Error::WidthMismatch {
                    expected: q.ncols(),
                    got: a + 1,
                });
            }
            let best_next = q_next
                .index_axis(Axis(0), i)
                .fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let cont = if e.done { 0.0 } else { self.hyper.gamma };
            let y = e.reward + cont * best_next;
            let err = q[[i, a]] - y;
            loss += err * err;
            grad[[i, a]] = 2.0 * err / n as f64;
        }
        let grads = self.eval.backward_params(&cache, grad.view());
        Ok(Some((loss / n as f64, grads)))
    }

    /// One Adam step; the target network is synced every
    /// `target_sync_steps` steps. Returns the loss, or `None` for an
    /// all-silent batch (no step is taken).
    pub fn train_step(&mut self, batch: &[&TierTwoExperience]) -> Result<Option<f64>> {
        let Some((loss, grads)) = self.loss_and_grads(batch)? else {
            return Ok(None);
        };
        self.opt.step_mlp(&mut self.eval, &grads);
        self.train_steps += 1;
        if self.hyper.target_sync_steps > 0
            && self
                .train_steps
                .is_multiple_of(self.hyper.target_sync_steps)
        {
            self.target = self.eval.clone();
        }
        Ok(Some(loss))
    }
}
