//! Tier-1 soft actor-critic: a tanh-squashed Gaussian actor on the local
//! observation, twin Q critics and a V critic with a soft-updated target on
//! the joint state, and a learned temperature.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{EntropyTarget, WorldConfig};
use crate::environment::SlotAction;
use crate::error::{Error, Result};
use crate::neural::{Adam, Checkpoint, Mlp, MlpGrads, CHECKPOINT_VERSION};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Hyper-parameters of one SAC model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacHyper {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub entropy_target: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl SacHyper {
    pub fn from_config(cfg: &WorldConfig) -> Self {
        let l = &cfg.learning;
        let dim = cfg.tier1_obs_dim() as f64;
        Self {
            hidden: vec![l.hidden_width; l.hidden_layers],
            lr: l.sac_lr,
            alpha_lr: l.alpha_lr,
            init_alpha: l.init_alpha,
            gamma: l.gamma,
            tau: l.tau,
            entropy_target: match l.entropy_target {
                EntropyTarget::ObservationDim => dim,
                EntropyTarget::NegObservationDim => -dim,
            },
            log_std_min: l.log_std_min,
            log_std_max: l.log_std_max,
        }
    }
}

/// Input and output widths of one SAC model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SacDims {
    /// Local observation width.
    pub obs: usize,
    /// Joint state width.
    pub state: usize,
    pub action: usize,
    /// Offset of this agent's observation inside the joint state.
    pub obs_offset: usize,
}

impl SacDims {
    pub fn for_uav(cfg: &WorldConfig, uav: usize) -> Self {
        Self {
            obs: cfg.tier1_obs_dim(),
            state: cfg.joint_state_dim(),
            action: 3,
            obs_offset: uav * cfg.tier1_obs_dim(),
        }
    }
}

/// One slot of joint experience, shared by all UAVs' models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierOneExperience {
    pub state: Vec<f64>,
    /// Squashed action of every UAV, each in `[-1, 1]^3`.
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SacLosses {
    pub v: f64,
    pub q1: f64,
    pub q2: f64,
    pub policy: f64,
    pub alpha: f64,
}

/// Gradients of every trainable parameter group.
#[derive(Debug, Clone)]
pub struct SacGrads {
    pub actor: MlpGrads<f64>,
    pub v1: MlpGrads<f64>,
    pub q1: MlpGrads<f64>,
    pub q2: MlpGrads<f64>,
    pub log_alpha: f64,
}

/// Reparameterized draw from the squashed Gaussian for a batch.
#[derive(Debug, Clone)]
struct Squashed {
    noise: Array2<f64>,
    std: Array2<f64>,
    /// Pre-squash sample.
    u: Array2<f64>,
    action: Array2<f64>,
    log_prob: Array1<f64>,
    /// 1 where the log-std was inside its clamp range.
    log_std_live: Array2<f64>,
}

/// `log(1 - tanh(u)^2)` without cancellation.
fn log1m_tanh2(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Maps a squashed action in `[-1, 1]^3` to heading, speed and WET flag.
pub fn map_action(squashed: &[f64], v_max: f64) -> SlotAction {
    let tau = std::f64::consts::TAU;
    SlotAction {
        heading: ((squashed[0] + 1.0) / 2.0 * tau).rem_euclid(tau),
        speed: ((squashed[1] + 1.0) / 2.0 * v_max).clamp(0.0, v_max),
        wet: squashed[2] > 0.0,
    }
}

/// Versioned actor parameters pushed to a UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSnapshot {
    pub version: u32,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub network: Checkpoint,
}

/// Acting-only copy of an actor, as held by a UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: Mlp<f64>,
    pub action_dim: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Actor {
    /// Squashed action; the mean when `deterministic`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let out = self.net.forward_one(obs)?;
        let a = self.action_dim;
        Ok((0..a)
            .map(|i| {
                if deterministic {
                    out[i].tanh()
                } else {
                    let std = out[a + i].clamp(self.log_std_min, self.log_std_max).exp();
                    let e: f64 = rng.sample(StandardNormal);
                    (out[i] + std * e).tanh()
                }
            })
            .collect())
    }

    pub fn snapshot(&self) -> ActorSnapshot {
        ActorSnapshot {
            version: CHECKPOINT_VERSION,
            obs_dim: self.net.input_width(),
            action_dim: self.action_dim,
            log_std_min: self.log_std_min,
            log_std_max: self.log_std_max,
            network: self.net.to_checkpoint("actor"),
        }
    }

    pub fn from_snapshot(snap: &ActorSnapshot) -> Result<Self> {
        if snap.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported actor version {}",
                snap.version
            )));
        }
        let net = Mlp::from_checkpoint(&snap.network)?;
        if net.input_width() != snap.obs_dim {
            return Err(Error::WidthMismatch {
                expected: snap.obs_dim,
                got: net.input_width(),
            });
        }
        if net.output_width() != 2 * snap.action_dim {
            return Err(Error::WidthMismatch {
                expected: 2 * snap.action_dim,
                got: net.output_width(),
            });
        }
        Ok(Self {
            net,
            action_dim: snap.action_dim,
            log_std_min: snap.log_std_min,
            log_std_max: snap.log_std_max,
        })
    }
}

/// The five networks and temperature of one UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacModel {
    pub dims: SacDims,
    pub hyper: SacHyper,
    pub actor: Mlp<f64>,
    pub v1: Mlp<f64>,
    pub v2: Mlp<f64>,
    pub q1: Mlp<f64>,
    pub q2: Mlp<f64>,
    pub log_alpha: f64,
    actor_opt: Adam,
    v1_opt: Adam,
    q1_opt: Adam,
    q2_opt: Adam,
    alpha_opt: Adam,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

impl SacModel {
    pub fn new<R: Rng + ?Sized>(dims: SacDims, hyper: SacHyper, rng: &mut R) -> Self {
        let h = &hyper.hidden;
        let actor = Mlp::new(&widths(dims.obs, h, 2 * dims.action), rng);
        let v1 = Mlp::new(&widths(dims.state, h, 1), rng);
        let v2 = v1.clone();
        let q1 = Mlp::new(&widths(dims.state + dims.action, h, 1), rng);
        let q2 = Mlp::new(&widths(dims.state + dims.action, h, 1), rng);
        Self {
            actor_opt: Adam::new(hyper.lr),
            v1_opt: Adam::new(hyper.lr),
            q1_opt: Adam::new(hyper.lr),
            q2_opt: Adam::new(hyper.lr),
            alpha_opt: Adam::new(hyper.alpha_lr),
            log_alpha: hyper.init_alpha.ln(),
            dims,
            hyper,
            actor,
            v1,
            v2,
            q1,
            q2,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn export_actor(&self) -> ActorSnapshot {
        self.acting_actor().snapshot()
    }

    pub fn import_actor(&mut self, snap: &ActorSnapshot) -> Result<()> {
        let actor = Actor::from_snapshot(snap)?;
        if actor.net.widths() != self.actor.widths() {
            return Err(Error::WidthMismatch {
                expected: self.dims.obs,
                got: actor.net.input_width(),
            });
        }
        self.actor = actor.net;
        Ok(())
    }

    pub fn acting_actor(&self) -> Actor {
        Actor {
            net: self.actor.clone(),
            action_dim: self.dims.action,
            log_std_min: self.hyper.log_std_min,
            log_std_max: self.hyper.log_std_max,
        }
    }

    /// Samples (or takes the mean of) the policy and maps it to a slot action.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        deterministic: bool,
        v_max: f64,
        rng: &mut R,
    ) -> Result<(SlotAction, Vec<f64>)> {
        let squashed = self.acting_actor().act(obs, deterministic, rng)?;
        Ok((map_action(&squashed, v_max), squashed))
    }

    fn squash(&self, out: &Array2<f64>, noise: Array2<f64>) -> Squashed {
        let a = self.dims.action;
        let mean = out.slice(s![.., 0..a]);
        let raw = out.slice(s![.., a..2 * a]);
        let (lo, hi) = (self.hyper.log_std_min, self.hyper.log_std_max);
        let log_std = raw.mapv(|x| x.clamp(lo, hi));
        let log_std_live = raw.mapv(|x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 });
        let std = log_std.mapv(f64::exp);
        let u = &mean + &(&std * &noise);
        let action = u.mapv(f64::tanh);
        let mut log_prob = Array1::zeros(out.nrows());
        for n in 0..out.nrows() {
            log_prob[n] = (0..a)
                .map(|i| {
                    -0.5 * noise[[n, i]].powi(2)
                        - log_std[[n, i]]
                        - HALF_LN_2PI
                        - log1m_tanh2(u[[n, i]])
                })
                .sum();
        }
        Squashed {
            noise,
            std,
            u,
            action,
            log_prob,
            log_std_live,
        }
    }

    fn draw_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, self.dims.action), || rng.sample(StandardNormal))
    }

    fn batch_arrays(&self, batch: &[&TierOneExperience], uav: usize) -> BatchArrays {
        let n = batch.len();
        let d = self.dims;
        let mut state = Array2::zeros((n, d.state));
        let mut next = Array2::zeros((n, d.state));
        let mut action = Array2::zeros((n, d.action));
        let mut reward = Array1::zeros(n);
        let mut not_done = Array1::zeros(n);
        for (i, e) in batch.iter().enumerate() {
            state.row_mut(i).assign(
                &ArrayView2::from_shape((1, d.state), &e.state)
                    .unwrap()
                    .row(0),
            );
            next.row_mut(i).assign(
                &ArrayView2::from_shape((1, d.state), &e.next_state)
                    .unwrap()
                    .row(0),
            );
            for (j, &x) in e.actions[uav].iter().enumerate() {
                action[[i, j]] = x;
            }
            reward[i] = e.rewards[uav];
            not_done[i] = if e.done { 0.0 } else { 1.0 };
        }
        let obs = state
            .slice(s![.., d.obs_offset..d.obs_offset + d.obs])
            .to_owned();
        BatchArrays {
            state,
            obs,
            next,
            action,
            reward,
            not_done,
        }
    }

    fn check_batch(&self, batch: &[&TierOneExperience], uav: usize) -> Result<()> {
        for e in batch {
            if e.state.len() != self.dims.state || e.next_state.len() != self.dims.state {
                return Err(Error::WidthMismatch {
                    expected: self.dims.state,
                    got: e.state.len(),
                });
            }
            if e.actions.get(uav).map(Vec::len) != Some(self.dims.action) || e.rewards.len() <= uav
            {
                return Err(Error::WidthMismatch {
                    expected: self.dims.action,
                    got: e.actions.get(uav).map_or(0, Vec::len),
                });
            }
        }
        Ok(())
    }

    /// `min(Q1, Q2)(s, a') - alpha * log pi(a' | o)` for a batch of states,
    /// observations and noise.
    pub fn value_targets(
        &self,
        state: &Array2<f64>,
        obs: &Array2<f64>,
        noise: &Array2<f64>,
    ) -> Result<Array1<f64>> {
        let out = self.actor.forward(obs.view())?;
        let sq = self.squash(&out, noise.clone());
        let sa = concat_cols(state, &sq.action);
        let q1 = self.q1.forward(sa.view())?.column(0).to_owned();
        let q2 = self.q2.forward(sa.view())?.column(0).to_owned();
        let alpha = self.alpha();
        Ok(ndarray::Zip::from(&q1)
            .and(&q2)
            .and(&sq.log_prob)
            .map_collect(|&a, &b, &lp| a.min(b) - alpha * lp))
    }

    /// All five losses and their gradients with explicit noise for the value
    /// target (`noise_v`) and the policy loss (`noise_pi`).
    pub fn losses_and_grads(
        &self,
        batch: &[&TierOneExperience],
        uav: usize,
        noise_v: &Array2<f64>,
        noise_pi: &Array2<f64>,
    ) -> Result<(SacLosses, SacGrads)> {
        self.check_batch(batch, uav)?;
        let b = self.batch_arrays(batch, uav);
        let n = batch.len() as f64;
        let alpha = self.alpha();
        let a_dim = self.dims.action;

        let (actor_out, actor_cache) = self.actor.forward_cached(b.obs.view())?;

        // Value critic.
        let sq_v = self.squash(&actor_out, noise_v.clone());
        let sa_v = concat_cols(&b.state, &sq_v.action);
        let q1_v = self.q1.forward(sa_v.view())?.column(0).to_owned();
        let q2_v = self.q2.forward(sa_v.view())?.column(0).to_owned();
        let v_target = ndarray::Zip::from(&q1_v)
            .and(&q2_v)
            .and(&sq_v.log_prob)
            .map_collect(|&a, &c, &lp| a.min(c) - alpha * lp);
        let (v_pred, v_cache) = self.v1.forward_cached(b.state.view())?;
        let v_err = &v_pred.column(0) - &v_target;
        let v_loss = 0.5 * v_err.mapv(|e| e * e).sum() / n;
        let v1_grads = self
            .v1
            .backward_params(&v_cache, (v_err / n).insert_axis(Axis(1)).view());

        // Twin Q critics.
        let v_next = self.v2.forward(b.next.view())?.column(0).to_owned();
        let q_target = &b.reward + &(self.hyper.gamma * &b.not_done * &v_next);
        let sa = concat_cols(&b.state, &b.action);
        let mut q_losses = [0.0; 2];
        let mut q_grads = Vec::with_capacity(2);
        for (m, net) in [&self.q1, &self.q2].into_iter().enumerate() {
            let (q, cache) = net.forward_cached(sa.view())?;
            let err = &q.column(0) - &q_target;
            q_losses[m] = 0.5 * err.mapv(|e| e * e).sum() / n;
            q_grads.push(net.backward_params(&cache, (err / n).insert_axis(Axis(1)).view()));
        }

        // Policy through the reparameterized action.
        let sq = self.squash(&actor_out, noise_pi.clone());
        let sa_pi = concat_cols(&b.state, &sq.action);
        let (q1_pi, c1) = self.q1.forward_cached(sa_pi.view())?;
        let (q2_pi, c2) = self.q2.forward_cached(sa_pi.view())?;
        let use_q1: Vec<bool> = q1_pi
            .column(0)
            .iter()
            .zip(q2_pi.column(0))
            .map(|(a, c)| a <= c)
            .collect();
        let min_q: Array1<f64> = use_q1
            .iter()
            .enumerate()
            .map(|(i, &first)| if first { q1_pi[[i, 0]] } else { q2_pi[[i, 0]] })
            .collect();
        let policy_loss = (alpha * &sq.log_prob - &min_q).sum() / n;
        let sel = |first: bool| {
            Array2::from_shape_fn((use_q1.len(), 1), |(i, _)| {
                if use_q1[i] == first {
                    -1.0 / n
                } else {
                    0.0
                }
            })
        };
        let dx1 = self.q1.backward_input(&c1, sel(true).view());
        let dx2 = self.q2.backward_input(&c2, sel(false).view());
        let d_action = (&dx1 + &dx2).slice(s![.., self.dims.state..]).to_owned();
        let mut d_out = Array2::zeros(actor_out.raw_dim());
        for i in 0..batch.len() {
            for j in 0..a_dim {
                let t = sq.action[[i, j]];
                let da_du = 1.0 - t * t;
                let se = sq.std[[i, j]] * sq.noise[[i, j]];
                let tanh_u = sq.u[[i, j]].tanh();
                d_out[[i, j]] = alpha * 2.0 * tanh_u / n + d_action[[i, j]] * da_du;
                d_out[[i, a_dim + j]] = sq.log_std_live[[i, j]]
                    * (alpha * (-1.0 + 2.0 * tanh_u * se) / n + d_action[[i, j]] * da_du * se);
            }
        }
        let actor_grads = self.actor.backward_params(&actor_cache, d_out.view());

        // Temperature, in log space.
        let gap = (&sq_v.log_prob + self.hyper.entropy_target).sum() / n;
        let alpha_loss = -alpha * gap;
        let log_alpha_grad = -alpha * gap;

        let mut q_grads = q_grads.into_iter();
        Ok((
            SacLosses {
                v: v_loss,
                q1: q_losses[0],
                q2: q_losses[1],
                policy: policy_loss,
                alpha: alpha_loss,
            },
            SacGrads {
                actor: actor_grads,
                v1: v1_grads,
                q1: q_grads.next().expect("two critics"),
                q2: q_grads.next().expect("two critics"),
                log_alpha: log_alpha_grad,
            },
        ))
    }

    /// One gradient step on every network for UAV `uav`'s view of the batch,
    /// followed by the soft update of the target value network.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &[&TierOneExperience],
        uav: usize,
        rng: &mut R,
    ) -> Result<SacLosses> {
        if batch.is_empty() {
            return Err(Error::UndersizedBuffer { have: 0, need: 1 });
        }
        let noise_v = self.draw_noise(batch.len(), rng);
        let noise_pi = self.draw_noise(batch.len(), rng);
        let (losses, g) = self.losses_and_grads(batch, uav, &noise_v, &noise_pi)?;
        self.v1_opt.step_mlp(&mut self.v1, &g.v1);
        self.q1_opt.step_mlp(&mut self.q1, &g.q1);
        self.q2_opt.step_mlp(&mut self.q2, &g.q2);
        self.actor_opt.step_mlp(&mut self.actor, &g.actor);
        self.alpha_opt.update(
            vec![std::slice::from_mut(&mut self.log_alpha)],
            vec![&[g.log_alpha][..]],
        );
        self.v2.blend_from(&self.v1, self.hyper.tau);
        Ok(losses)
    }
}

struct BatchArrays {
    state: Array2<f64>,
    obs: Array2<f64>,
    next: Array2<f64>,
    action: Array2<f64>,
    reward: Array1<f64>,
    not_done: Array1<f64>,
}

fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("matching rows")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Dense;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hyper(hidden: Vec<usize>) -> SacHyper {
        SacHyper {
            hidden,
            lr: 3e-4,
            alpha_lr: 2e-4,
            init_alpha: 0.2,
            gamma: 0.9,
            tau: 0.995,
            entropy_target: -1.0,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }

    fn dims() -> SacDims {
        SacDims {
            obs: 4,
            state: 8,
            action: 3,
            obs_offset: 4,
        }
    }

    fn random_batch(n: usize, rng: &mut ChaCha8Rng) -> Vec<TierOneExperience> {
        (0..n)
            .map(|_| TierOneExperience {
                state: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
                actions: (0..2)
                    .map(|_| (0..3).map(|_| rng.random_range(-0.9..0.9)).collect())
                    .collect(),
                rewards: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                next_state: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: rng.random_bool(0.1),
            })
            .collect()
    }

    #[test]
    fn action_mapping_ends() {
        let lo = map_action(&[-1.0, -1.0, -0.2], 20.0);
        assert_eq!(
            lo,
            SlotAction {
                heading: 0.0,
                speed: 0.0,
                wet: false
            }
        );
        let hi = map_action(&[1.0 - 1e-12, 1.0, 0.3], 20.0);
        assert!(hi.heading < std::f64::consts::TAU && hi.heading > std::f64::consts::TAU - 1e-9);
        assert_eq!(hi.speed, 20.0);
        assert!(hi.wet);
        assert!(map_action(&[1.0, 0.0, 0.0], 20.0).heading < std::f64::consts::TAU);
    }

    #[test]
    fn stable_log_term_matches_naive_form() {
        for u in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let naive = (1.0 - f64::tanh(u).powi(2)).ln();
            assert!((log1m_tanh2(u) - naive).abs() < 1e-12);
        }
        assert!(log1m_tanh2(40.0).is_finite());
    }

    #[test]
    fn acting_is_seed_deterministic() {
        let m = SacModel::new(dims(), hyper(vec![8]), &mut ChaCha8Rng::seed_from_u64(1));
        let obs = [0.1, 0.2, 0.3, 0.4];
        let a = m
            .act(&obs, false, 20.0, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        let b = m
            .act(&obs, false, 20.0, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        assert_eq!(a, b);
        let d1 = m
            .act(&obs, true, 20.0, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        let d2 = m
            .act(&obs, true, 20.0, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        assert_eq!(d1, d2);
        assert!(d1.0.speed <= 20.0);
    }

    #[test]
    fn actor_export_import_round_trip() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut m = SacModel::new(dims(), hyper(vec![8]), &mut r);
        let snap = m.export_actor();
        assert_eq!(snap.version, CHECKPOINT_VERSION);
        let json = serde_json::to_string(&snap).unwrap();
        let back: ActorSnapshot = serde_json::from_str(&json).unwrap();
        m.import_actor(&back).unwrap();
        assert_eq!(m.export_actor(), snap);
        let other = SacModel::new(
            SacDims {
                obs: 5,
                state: 10,
                action: 3,
                obs_offset: 0,
            },
            hyper(vec![8]),
            &mut r,
        );
        assert!(m.import_actor(&other.export_actor()).is_err());
    }

    #[test]
    fn tau_one_keeps_target_value_net() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let mut h = hyper(vec![8]);
        h.tau = 1.0;
        let mut m = SacModel::new(dims(), h, &mut r);
        let v2 = m.v2.clone();
        let batch = random_batch(16, &mut r);
        let refs: Vec<&TierOneExperience> = batch.iter().collect();
        m.train_step(&refs, 1, &mut r).unwrap();
        assert_eq!(m.v2, v2);
        assert_ne!(m.v1, v2);
    }

    #[test]
    fn swapping_critics_keeps_value_targets() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut m = SacModel::new(dims(), hyper(vec![8]), &mut r);
        let state = Array2::from_shape_fn((6, 8), |_| r.random_range(-1.0..1.0));
        let obs = state.slice(s![.., 4..8]).to_owned();
        let noise = Array2::from_shape_fn((6, 3), |_| r.sample(StandardNormal));
        let a = m.value_targets(&state, &obs, &noise).unwrap();
        std::mem::swap(&mut m.q1, &mut m.q2);
        let b = m.value_targets(&state, &obs, &noise).unwrap();
        assert_eq!(a, b);
    }

    fn affine(w: Vec<f64>, b: f64) -> Mlp<f64> {
        let n = w.len();
        Mlp::from_layers(vec![Dense {
            weight: Array2::from_shape_vec((n, 1), w).unwrap(),
            bias: array![b],
        }])
    }

    #[test]
    fn single_transition_losses_match_hand_derivation() {
        // One observation feature, one action dim, state = obs; linear nets.
        let d = SacDims {
            obs: 1,
            state: 1,
            action: 1,
            obs_offset: 0,
        };
        let mut m = SacModel::new(d, hyper(vec![]), &mut ChaCha8Rng::seed_from_u64(8));
        m.actor = Mlp::from_layers(vec![Dense {
            weight: array![[0.5, 0.0]],
            bias: array![0.1, -1.0],
        }]);
        m.v1 = affine(vec![2.0], 0.5);
        m.v2 = affine(vec![1.0], 0.0);
        m.q1 = affine(vec![1.0, 3.0], 0.0);
        m.q2 = affine(vec![1.0, 2.0], 0.25);
        m.log_alpha = 0.2f64.ln();
        let e = TierOneExperience {
            state: vec![0.4],
            actions: vec![vec![0.3]],
            rewards: vec![1.5],
            next_state: vec![-0.2],
            done: false,
        };
        let (eps_v, eps_pi) = (0.7, -0.3);
        let (l, _) = m
            .losses_and_grads(&[&e], 0, &array![[eps_v]], &array![[eps_pi]])
            .unwrap();

        let s = 0.4;
        let mu = 0.5 * s + 0.1;
        let sigma = (-1.0f64).exp();
        let logp = |eps: f64| {
            let u = mu + sigma * eps;
            -0.5 * eps * eps
                - (-1.0)
                - 0.5 * (2.0 * std::f64::consts::PI).ln()
                - (1.0 - u.tanh().powi(2)).ln()
        };
        let a_v = (mu + sigma * eps_v).tanh();
        let q1 = |a: f64| s + 3.0 * a;
        let q2 = |a: f64| s + 2.0 * a + 0.25;
        let v_target = q1(a_v).min(q2(a_v)) - 0.2 * logp(eps_v);
        let v = 2.0 * s + 0.5;
        assert!((l.v - 0.5 * (v - v_target).powi(2)).abs() < 1e-9);

        let y = 1.5 + 0.9 * (-0.2);
        assert!((l.q1 - 0.5 * (q1(0.3) - y).powi(2)).abs() < 1e-9);
        assert!((l.q2 - 0.5 * (q2(0.3) - y).powi(2)).abs() < 1e-9);

        let a_pi = (mu + sigma * eps_pi).tanh();
        assert!((l.policy - (0.2 * logp(eps_pi) - q1(a_pi).min(q2(a_pi)))).abs() < 1e-9);
        assert!((l.alpha - (-0.2 * (logp(eps_v) + -1.0))).abs() < 1e-9);
    }

    #[test]
    fn value_at_target_gives_zero_loss_and_gradient() {
        let d = SacDims {
            obs: 1,
            state: 1,
            action: 1,
            obs_offset: 0,
        };
        let mut m = SacModel::new(d, hyper(vec![]), &mut ChaCha8Rng::seed_from_u64(9));
        let e = TierOneExperience {
            state: vec![0.4],
            actions: vec![vec![0.3]],
            rewards: vec![1.0],
            next_state: vec![0.1],
            done: true,
        };
        let state = array![[0.4]];
        let noise = array![[0.2]];
        let target = m.value_targets(&state, &state, &noise).unwrap()[0];
        m.v1 = affine(vec![0.0], target);
        let (l, g) = m.losses_and_grads(&[&e], 0, &noise, &noise).unwrap();
        assert!(l.v < 1e-24);
        assert!(g.v1.max_abs() < 1e-12);
    }

    fn fd_check(
        m: &mut SacModel,
        batch: &[&TierOneExperience],
        nv: &Array2<f64>,
        np: &Array2<f64>,
        which: usize,
        probes: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let (_, g) = m.losses_and_grads(batch, 1, nv, np).unwrap();
        let (analytic, net_len) = match which {
            0 => (g.v1.flat(), m.v1.num_params()),
            1 => (g.q1.flat(), m.q1.num_params()),
            2 => (g.q2.flat(), m.q2.num_params()),
            _ => (g.actor.flat(), m.actor.num_params()),
        };
        let get = |m: &SacModel| match which {
            0 => m.v1.flat_params(),
            1 => m.q1.flat_params(),
            2 => m.q2.flat_params(),
            _ => m.actor.flat_params(),
        };
        let set = |m: &mut SacModel, p: &[f64]| match which {
            0 => m.v1.set_flat_params(p).unwrap(),
            1 => m.q1.set_flat_params(p).unwrap(),
            2 => m.q2.set_flat_params(p).unwrap(),
            _ => m.actor.set_flat_params(p).unwrap(),
        };
        let loss = |m: &SacModel| {
            let (l, _) = m.losses_and_grads(batch, 1, nv, np).unwrap();
            match which {
                0 => l.v,
                1 => l.q1,
                2 => l.q2,
                _ => l.policy,
            }
        };
        let base = get(m);
        let h = 1e-6;
        let idx = rand::seq::index::sample(rng, net_len, probes.min(net_len)).into_vec();
        for &i in &idx {
            let mut p = base.clone();
            p[i] += h;
            set(m, &p);
            let up = loss(m);
            p[i] -= 2.0 * h;
            set(m, &p);
            let down = loss(m);
            set(m, &base);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-7);
            assert!(
                rel < 1e-4,
                "net {which} param {i}: fd {fd} analytic {}",
                analytic[i]
            );
        }
        idx.len()
    }

    #[test]
    fn every_sac_loss_passes_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(10);
        let mut m = SacModel::new(dims(), hyper(vec![16, 16]), &mut r);
        let batch = random_batch(12, &mut r);
        let refs: Vec<&TierOneExperience> = batch.iter().collect();
        let nv = Array2::from_shape_fn((12, 3), |_| r.sample(StandardNormal));
        let np = Array2::from_shape_fn((12, 3), |_| r.sample(StandardNormal));
        for which in 0..4 {
            assert!(fd_check(&mut m, &refs, &nv, &np, which, 120, &mut r) >= 100);
        }
        // Temperature.
        let (_, g) = m.losses_and_grads(&refs, 1, &nv, &np).unwrap();
        let h = 1e-6;
        let base = m.log_alpha;
        m.log_alpha = base + h;
        let up = m.losses_and_grads(&refs, 1, &nv, &np).unwrap().0.alpha;
        m.log_alpha = base - h;
        let down = m.losses_and_grads(&refs, 1, &nv, &np).unwrap().0.alpha;
        m.log_alpha = base;
        let fd = (up - down) / (2.0 * h);
        assert!((fd - g.log_alpha).abs() / fd.abs().max(1e-7) < 1e-4);
    }

    #[test]
    fn squashed_density_matches_monte_carlo() {
        // One-dimensional slice: histogram of tanh(mu + sigma * eps) against
        // the change-of-variables density.
        let (mu, sigma) = (0.3f64, 0.8f64);
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let bins = 40;
        let draws = 200_000;
        let mut counts = vec![0usize; bins];
        for _ in 0..draws {
            let e: f64 = r.sample(StandardNormal);
            let a = (mu + sigma * e).tanh();
            let k = (((a + 1.0) / 2.0) * bins as f64)
                .floor()
                .clamp(0.0, (bins - 1) as f64) as usize;
            counts[k] += 1;
        }
        let density = |a: f64| {
            let u = a.atanh();
            let eps = (u - mu) / sigma;
            (-0.5 * eps * eps - sigma.ln() - HALF_LN_2PI - log1m_tanh2(u)).exp()
        };
        let width = 2.0 / bins as f64;
        let mut kl = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let p = c as f64 / draws as f64;
            // Midpoint rule with 20 sub-points per bin.
            let lo = -1.0 + k as f64 * width;
            let q: f64 = (0..20)
                .map(|j| density(lo + (j as f64 + 0.5) * width / 20.0))
                .sum::<f64>()
                * width
                / 20.0;
            if p > 0.0 {
                kl += p * (p / q).ln();
            }
        }
        assert!(kl < 0.01, "KL {kl}");
    }

    #[test]
    fn losses_decrease_on_stationary_data() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let d = SacDims {
            obs: 2,
            state: 2,
            action: 1,
            obs_offset: 0,
        };
        let mut h = hyper(vec![32, 32]);
        h.lr = 1e-3;
        h.alpha_lr = 1e-3;
        h.gamma = 0.5;
        let mut m = SacModel::new(d, h, &mut r);
        let data: Vec<TierOneExperience> = (0..512)
            .map(|_| {
                let s: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
                let a: f64 = r.random_range(-1.0..1.0);
                TierOneExperience {
                    rewards: vec![-(a - 0.5 * s[0]).powi(2)],
                    state: s,
                    actions: vec![vec![a]],
                    next_state: (0..2).map(|_| r.random_range(-1.0..1.0)).collect(),
                    done: false,
                }
            })
            .collect();
        let mut hist = Vec::new();
        for _ in 0..500 {
            let idx = rand::seq::index::sample(&mut r, data.len(), 64).into_vec();
            let batch: Vec<&TierOneExperience> = idx.iter().map(|&i| &data[i]).collect();
            hist.push(m.train_step(&batch, 0, &mut r).unwrap());
        }
        let mean = |f: &dyn Fn(&SacLosses) -> f64, range: std::ops::Range<usize>| {
            let n = range.len() as f64;
            hist[range].iter().map(f).sum::<f64>() / n
        };
        let fields: [(&str, &dyn Fn(&SacLosses) -> f64); 5] = [
            ("v", &|l| l.v),
            ("q1", &|l| l.q1),
            ("q2", &|l| l.q2),
            ("policy", &|l| l.policy),
            ("alpha", &|l| l.alpha),
        ];
        for (name, f) in fields {
            let early = mean(f, 0..50);
            let late = mean(f, 450..500);
            assert!(late < early, "{name}: {early} -> {late}");
        }
    }
}
