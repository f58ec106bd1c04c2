//! Small learning problems with known solutions, used to sanity-check both
//! agents outside the full simulator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dqn::{DqnHyper, DqnModel, TierTwoExperience};
use crate::error::Result;
use crate::neural::ReplayBuffer;
use crate::sac::{SacDims, SacHyper, SacModel, TierOneExperience};

/// Outcome of one bandit run.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditOutcome {
    pub best_arm: usize,
    pub greedy_arm: usize,
}

impl BanditOutcome {
    pub fn solved(&self) -> bool {
        self.best_arm == self.greedy_arm
    }
}

/// Five-armed Gaussian bandit with observations shaped like a tier-2
/// observation for `W = 5` (width 8). The context is fixed per seed and the
/// discount is zero.
pub fn dqn_bandit(seed: u64) -> Result<BanditOutcome> {
    const ARMS: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: [f64; ARMS] = [0.1, 0.3, 0.5, 0.7, 0.9];
    means.shuffle(&mut rng);
    let best_arm = (0..ARMS)
        .max_by(|&a, &b| means[a].total_cmp(&means[b]))
        .expect("arms");
    let noise = Normal::new(0.0, 0.2).expect("valid sd");
    let obs: Vec<f64> = (0..ARMS + 3).map(|_| rng.random_range(0.0..1.0)).collect();

    let hyper = DqnHyper {
        hidden: vec![32, 32],
        lr_start: 1e-2,
        lr_end: 1e-4,
        epsilon_start: 0.9,
        epsilon_end: 0.02,
        epsilon_decay_fraction: 0.8,
        gamma: 0.0,
        target_sync_steps: 200,
    };
    let mut model = DqnModel::new(ARMS + 3, ARMS, hyper.clone(), &mut rng);
    let mut buffer = ReplayBuffer::new(4096);
    let rounds = 40;
    let pulls = 50;
    for round in 0..rounds {
        let eps = hyper.epsilon(round, rounds);
        model.set_learning_rate(hyper.learning_rate(round, rounds));
        for _ in 0..pulls {
            let scores = model.select_scores(&obs, eps, &mut rng)?;
            let arm = argmax(&scores);
            buffer.push(TierTwoExperience {
                obs: obs.clone(),
                action: Some(arm),
                reward: means[arm] + noise.sample(&mut rng),
                next_obs: obs.clone(),
                done: true,
            });
            if buffer.len() >= 128 {
                let batch = buffer.sample(64, &mut rng)?;
                model.train_step(&batch)?;
            }
        }
    }
    Ok(BanditOutcome {
        best_arm,
        greedy_arm: argmax(&model.q_values(&obs)?),
    })
}

/// Index of the largest score; ties go to the lower index.
fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Settings of the one-dimensional reach task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachTask {
    pub arena: f64,
    pub max_step: f64,
    pub steps: usize,
    pub episodes: usize,
    pub eval_episodes: usize,
}

impl Default for ReachTask {
    fn default() -> Self {
        Self {
            arena: 1.0,
            max_step: 0.1,
            steps: 20,
            episodes: 200,
            eval_episodes: 10,
        }
    }
}

/// SAC agent on a line segment: observe `(x, goal)`, move by `a * max_step`,
/// reward `-|x - goal|`. Returns the mean terminal distance of deterministic
/// evaluation episodes, as a fraction of the arena width.
pub fn sac_reach(seed: u64, task: ReachTask) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = SacDims {
        obs: 2,
        state: 2,
        action: 1,
        obs_offset: 0,
    };
    let hyper = SacHyper {
        hidden: vec![32, 32],
        lr: 3e-3,
        alpha_lr: 3e-3,
        init_alpha: 0.1,
        gamma: 0.9,
        tau: 0.99,
        entropy_target: -1.0,
        log_std_min: -20.0,
        log_std_max: 2.0,
    };
    let mut model = SacModel::new(dims, hyper, &mut rng);
    let mut buffer = ReplayBuffer::new(20_000);
    let norm = |x: f64, g: f64| vec![2.0 * x / task.arena - 1.0, 2.0 * g / task.arena - 1.0];

    for _ in 0..task.episodes {
        let mut x = rng.random_range(0.0..task.arena);
        let goal = rng.random_range(0.0..task.arena);
        for t in 0..task.steps {
            let obs = norm(x, goal);
            let a = model.acting_actor().act(&obs, false, &mut rng)?;
            x = (x + a[0] * task.max_step).clamp(0.0, task.arena);
            buffer.push(TierOneExperience {
                state: obs,
                actions: vec![a],
                rewards: vec![-(x - goal).abs() / task.arena],
                next_state: norm(x, goal),
                done: t + 1 == task.steps,
            });
            if buffer.len() >= 128 {
                let batch = buffer.sample(64, &mut rng)?;
                model.train_step(&batch, 0, &mut rng)?;
            }
        }
    }

    let actor = model.acting_actor();
    let mut total = 0.0;
    for _ in 0..task.eval_episodes {
        let mut x = rng.random_range(0.0..task.arena);
        let goal = rng.random_range(0.0..task.arena);
        for _ in 0..task.steps {
            let a = actor.act(&norm(x, goal), true, &mut rng)?;
            x = (x + a[0] * task.max_step).clamp(0.0, task.arena);
        }
        total += (x - goal).abs();
    }
    Ok(total / task.eval_episodes as f64 / task.arena)
}
