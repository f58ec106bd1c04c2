//! Two-tier training loop: central SAC on joint states, local DQN scheduling,
//! actor distribution, evaluation, the benchmark schemes and parameter sweeps.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{DqnTrainCadence, Relation, WorldConfig};
use crate::dqn::{DqnHyper, DqnModel, TierTwoExperience};
use crate::environment::{
    Environment, EpisodeReport, SlotAction, SlotOutcome, SlotRecord, WetWeighting,
};
use crate::error::{Error, Result};
use crate::neural::{Mlp, ReplayBuffer};
use crate::sac::{map_action, Actor, SacDims, SacHyper, SacModel, TierOneExperience};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    Mahdrl,
    MahdrlNoHoe,
    PhaseDivision,
    Team,
    RandomWdc,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::Mahdrl,
        SchemeId::MahdrlNoHoe,
        SchemeId::PhaseDivision,
        SchemeId::Team,
        SchemeId::RandomWdc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Mahdrl => "mahdrl",
            SchemeId::MahdrlNoHoe => "mahdrl_no_hoe",
            SchemeId::PhaseDivision => "phase_division",
            SchemeId::Team => "team",
            SchemeId::RandomWdc => "random_wdc",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// A scheme together with its WET/WDC switch slot (phase division only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheme {
    pub id: SchemeId,
    /// First WDC slot (1-based) under phase division; slots before it are WET only.
    pub tbar: usize,
}

impl Scheme {
    pub fn new(id: SchemeId) -> Self {
        Self { id, tbar: 0 }
    }

    pub fn phase_division(tbar: usize) -> Self {
        Self {
            id: SchemeId::PhaseDivision,
            tbar,
        }
    }

    /// Whether UAV `u` may collect data in the 0-based slot `t`.
    pub fn collects(&self, t: usize, u: usize, num_uavs: usize) -> bool {
        match self.id {
            SchemeId::PhaseDivision => t + 1 >= self.tbar,
            SchemeId::Team => u >= num_uavs / 2,
            _ => true,
        }
    }

    /// Whether UAV `u` may transfer energy in the 0-based slot `t`.
    pub fn may_wet(&self, t: usize, u: usize, num_uavs: usize) -> bool {
        match self.id {
            SchemeId::PhaseDivision => t + 1 < self.tbar,
            SchemeId::Team => u < num_uavs / 2,
            _ => true,
        }
    }

    pub fn mask_action(
        &self,
        t: usize,
        u: usize,
        num_uavs: usize,
        mut a: SlotAction,
    ) -> SlotAction {
        if !self.may_wet(t, u, num_uavs) {
            a.wet = false;
        }
        a
    }

    pub fn wet_weighting(&self) -> WetWeighting {
        match self.id {
            SchemeId::MahdrlNoHoe => WetWeighting::Uniform,
            _ => WetWeighting::Hoe,
        }
    }

    pub fn trains_dqn(&self) -> bool {
        self.id != SchemeId::RandomWdc
    }
}

/// One row of the per-episode metrics CSV. Loss columns are episode means,
/// empty when no gradient step was taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub c_total: f64,
    /// Tier-1 return, averaged over UAVs.
    pub mean_return: f64,
    pub v_loss: Option<f64>,
    pub q1_loss: Option<f64>,
    pub q2_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub dqn_loss: Option<f64>,
    pub epsilon: f64,
    pub dqn_lr: f64,
    pub d_min_violations: usize,
    pub c_min_failures: usize,
    pub b_min_failures: usize,
    pub min_uav_battery: f64,
}

/// Column order of [`EpisodeMetrics`] in CSV form.
pub const METRICS_COLUMNS: [&str; 16] = [
    "episode",
    "c_total",
    "mean_return",
    "v_loss",
    "q1_loss",
    "q2_loss",
    "policy_loss",
    "alpha_loss",
    "alpha",
    "dqn_loss",
    "epsilon",
    "dqn_lr",
    "d_min_violations",
    "c_min_failures",
    "b_min_failures",
    "min_uav_battery",
];

/// Writes rows with a header line.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Raw decisions of one slot, before scheme masking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotLog {
    pub actions: Vec<SlotAction>,
    /// `scores[k][u]`; `None` where the UAV did not score.
    pub scores: Vec<Vec<Option<Vec<f64>>>>,
}

/// Everything one episode produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    /// Seed the environment was reset with.
    pub episode_seed: u64,
    pub metrics: EpisodeMetrics,
    pub report: EpisodeReport,
    /// Filled when recording.
    pub trajectory: Vec<SlotRecord>,
    /// Filled when recording.
    pub log: Vec<SlotLog>,
}

struct Tier2Step {
    obs: Vec<f64>,
    action: Option<usize>,
    reward: f64,
}

struct SlotTrace {
    /// `tier2[k][u]`.
    tier2: Vec<Vec<Tier2Step>>,
    scores: Vec<Vec<Option<Vec<f64>>>>,
    outcome: SlotOutcome,
}

/// Plays one slot: masks and applies the tier-1 actions, then runs every
/// sub-slot with the scores returned by `score(u, k, tier2_obs)` for UAVs the
/// scheme lets collect.
fn play_slot<F>(
    env: &mut Environment,
    scheme: &Scheme,
    raw: &[SlotAction],
    mut score: F,
) -> Result<SlotTrace>
where
    F: FnMut(usize, usize, &[f64]) -> Result<Option<Vec<f64>>>,
{
    let n = raw.len();
    let t = env.slot();
    let masked: Vec<SlotAction> = raw
        .iter()
        .enumerate()
        .map(|(u, &a)| scheme.mask_action(t, u, n, a))
        .collect();
    env.apply_slot_actions(&masked)?;
    let subslots = env.config().subslots;
    let mut tier2 = Vec::with_capacity(subslots);
    let mut all_scores = Vec::with_capacity(subslots);
    for k in 1..=subslots {
        let mut obs = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for u in 0..n {
            let o = env.make_tier2_observation(u, k);
            scores.push(if scheme.collects(t, u, n) {
                score(u, k, &o)?
            } else {
                None
            });
            obs.push(o);
        }
        let schedule = env.resolve_wdc_associations(&scores);
        let out = env.step_subslot(&schedule)?;
        tier2.push(
            obs.into_iter()
                .enumerate()
                .map(|(u, obs)| Tier2Step {
                    obs,
                    action: schedule.assignment[u],
                    reward: out.rewards[u],
                })
                .collect(),
        );
        all_scores.push(scores);
    }
    Ok(SlotTrace {
        tier2,
        scores: all_scores,
        outcome: env.end_slot()?,
    })
}

/// Replays a decision log through the scheme's masking and the environment.
pub fn replay_episode(
    cfg: &WorldConfig,
    exemptions: &[Relation],
    scheme: Scheme,
    episode_seed: u64,
    log: &[SlotLog],
) -> Result<(Vec<SlotRecord>, EpisodeReport)> {
    let mut env = Environment::with_exemptions(cfg.clone(), exemptions)?;
    env.set_wet_weighting(scheme.wet_weighting());
    env.set_recording(true);
    env.reset(episode_seed);
    for (t, slot) in log.iter().enumerate() {
        play_slot(&mut env, &scheme, &slot.actions, |u, k, _| {
            slot.scores
                .get(k - 1)
                .and_then(|row| row.get(u))
                .cloned()
                .ok_or(Error::SlotOrder("decision log lacks a score row"))
        })
        .map_err(|e| match e {
            Error::EpisodeFinished => {
                Error::Config(format!("decision log runs past the horizon at slot {t}"))
            }
            e => e,
        })?;
    }
    Ok((env.trajectory().to_vec(), env.episode_report()))
}

#[derive(Default)]
struct LossTotals {
    sac: [f64; 5],
    sac_n: usize,
    dqn: f64,
    dqn_n: usize,
}

impl LossTotals {
    fn mean(sum: f64, n: usize) -> Option<f64> {
        (n > 0).then(|| sum / n as f64)
    }
}

fn train_dqn<R: Rng + ?Sized>(
    model: &mut DqnModel,
    buffer: &ReplayBuffer<TierTwoExperience>,
    batch: usize,
    rng: &mut R,
    totals: &mut LossTotals,
) -> Result<()> {
    if buffer.len() < batch {
        return Ok(());
    }
    let b = buffer.sample(batch, rng)?;
    if let Some(loss) = model.train_step(&b)? {
        totals.dqn += loss;
        totals.dqn_n += 1;
    }
    Ok(())
}

fn unseeded() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Eval,
}

/// Central trainer state. The serialized form excludes the RNG, which is
/// saved and restored separately; both together resume a run bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    cfg: WorldConfig,
    scheme: Scheme,
    exemptions: Vec<Relation>,
    sac: Vec<SacModel>,
    /// Actor copies held by the UAVs, refreshed every `actor_sync_interval` slots.
    actors: Vec<Actor>,
    dqn: Vec<DqnModel>,
    sac_buffer: ReplayBuffer<TierOneExperience>,
    dqn_buffers: Vec<ReplayBuffer<TierTwoExperience>>,
    #[serde(skip, default = "unseeded")]
    rng: ChaCha8Rng,
    /// Planned episode count; drives the exploration and learning-rate schedules.
    episodes: usize,
    slots_trained: u64,
    metrics: Vec<EpisodeMetrics>,
}

impl Trainer {
    pub fn new(cfg: WorldConfig, scheme: Scheme, seed: u64, episodes: usize) -> Result<Self> {
        Self::with_exemptions(cfg, scheme, seed, episodes, &[])
    }

    pub fn with_exemptions(
        cfg: WorldConfig,
        scheme: Scheme,
        seed: u64,
        episodes: usize,
        exemptions: &[Relation],
    ) -> Result<Self> {
        Environment::with_exemptions(cfg.clone(), exemptions)?;
        if scheme.id == SchemeId::PhaseDivision && !(2..=cfg.horizon_slots).contains(&scheme.tbar) {
            return Err(Error::Config(format!(
                "phase-division switch slot {} outside 2..={}",
                scheme.tbar, cfg.horizon_slots
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sac_hyper = SacHyper::from_config(&cfg);
        let dqn_hyper = DqnHyper::from_config(&cfg);
        let sac: Vec<SacModel> = (0..cfg.num_uavs)
            .map(|u| SacModel::new(SacDims::for_uav(&cfg, u), sac_hyper.clone(), &mut rng))
            .collect();
        let dqn = (0..cfg.num_uavs)
            .map(|_| {
                DqnModel::new(
                    cfg.tier2_obs_dim(),
                    cfg.num_wns,
                    dqn_hyper.clone(),
                    &mut rng,
                )
            })
            .collect();
        let capacity = cfg.learning.buffer_capacity;
        Ok(Self {
            actors: sac.iter().map(SacModel::acting_actor).collect(),
            sac,
            dqn,
            sac_buffer: ReplayBuffer::new(capacity),
            dqn_buffers: (0..cfg.num_uavs)
                .map(|_| ReplayBuffer::new(capacity))
                .collect(),
            rng,
            episodes,
            slots_trained: 0,
            metrics: Vec::new(),
            exemptions: exemptions.to_vec(),
            scheme,
            cfg,
        })
    }

    /// Evaluation-only trainer from exported actors and tier-2 networks.
    pub fn from_policies(
        cfg: WorldConfig,
        scheme: Scheme,
        actors: Vec<Actor>,
        dqn_nets: Vec<Mlp<f64>>,
    ) -> Result<Self> {
        let mut t = Self::new(cfg, scheme, 0, 1)?;
        if actors.len() != t.cfg.num_uavs || dqn_nets.len() != t.cfg.num_uavs {
            return Err(Error::WidthMismatch {
                expected: t.cfg.num_uavs,
                got: actors.len().min(dqn_nets.len()),
            });
        }
        for (a, s) in actors.iter().zip(&t.actors) {
            if a.net.widths() != s.net.widths() {
                return Err(Error::WidthMismatch {
                    expected: s.net.input_width(),
                    got: a.net.input_width(),
                });
            }
        }
        for (net, d) in dqn_nets.iter().zip(&t.dqn) {
            if net.widths() != d.eval.widths() {
                return Err(Error::WidthMismatch {
                    expected: d.eval.input_width(),
                    got: net.input_width(),
                });
            }
        }
        t.actors = actors;
        for (d, net) in t.dqn.iter_mut().zip(dqn_nets) {
            d.target = net.clone();
            d.eval = net;
        }
        t.sac.clear();
        Ok(t)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn metrics(&self) -> &[EpisodeMetrics] {
        &self.metrics
    }

    pub fn episodes_planned(&self) -> usize {
        self.episodes
    }

    pub fn episodes_done(&self) -> usize {
        self.metrics.len()
    }

    pub fn sac_models(&self) -> &[SacModel] {
        &self.sac
    }

    pub fn dqn_models(&self) -> &[DqnModel] {
        &self.dqn
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn sac_buffer(&self) -> &ReplayBuffer<TierOneExperience> {
        &self.sac_buffer
    }

    pub fn dqn_buffers(&self) -> &[ReplayBuffer<TierTwoExperience>] {
        &self.dqn_buffers
    }

    /// Replaces the RNG stream, e.g. when resuming without a saved RNG state.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn rng_state(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn restore_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// Raises the planned episode count, e.g. to extend a finished run.
    pub fn set_episodes_planned(&mut self, episodes: usize) {
        self.episodes = episodes;
    }

    /// One training episode.
    pub fn train_episode(&mut self) -> Result<EpisodeMetrics> {
        Ok(self.train_episode_recorded(false)?.metrics)
    }

    pub fn train_episode_recorded(&mut self, record: bool) -> Result<EpisodeRun> {
        if self.sac.is_empty() {
            return Err(Error::Config("evaluation-only trainer cannot train".into()));
        }
        let mut rng = self.rng.clone();
        let seed = rng.random::<u64>();
        let run = self.run_episode(Mode::Train, seed, &mut rng, record);
        self.rng = rng;
        let run = run?;
        self.metrics.push(run.metrics.clone());
        Ok(run)
    }

    /// Trains until the planned episode count is reached.
    pub fn train_to_end(&mut self) -> Result<()> {
        while self.metrics.len() < self.episodes {
            self.train_episode()?;
        }
        Ok(())
    }

    /// Deterministic-policy episode (actor means, greedy scheduling) that
    /// leaves the learning state untouched.
    pub fn evaluate(&self, seed: u64, record: bool) -> Result<EpisodeRun> {
        let mut shadow = Trainer {
            cfg: self.cfg.clone(),
            scheme: self.scheme,
            exemptions: self.exemptions.clone(),
            sac: Vec::new(),
            actors: self.actors.clone(),
            dqn: self.dqn.clone(),
            sac_buffer: ReplayBuffer::new(1),
            dqn_buffers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            episodes: self.episodes,
            slots_trained: self.slots_trained,
            metrics: self.metrics.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let episode_seed = rng.random::<u64>();
        shadow.run_episode(Mode::Eval, episode_seed, &mut rng, record)
    }

    /// `episodes` evaluation episodes with seeds drawn from `seed`.
    pub fn run_evaluation(
        &self,
        episodes: usize,
        seed: u64,
        record: bool,
    ) -> Result<Vec<EpisodeRun>> {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        (0..episodes)
            .map(|_| self.evaluate(seeds.random(), record))
            .collect()
    }

    fn run_episode(
        &mut self,
        mode: Mode,
        episode_seed: u64,
        rng: &mut ChaCha8Rng,
        record: bool,
    ) -> Result<EpisodeRun> {
        let cfg = self.cfg.clone();
        let l = &cfg.learning;
        let (n_uav, n_wn, horizon) = (cfg.num_uavs, cfg.num_wns, cfg.horizon_slots);
        let train = mode == Mode::Train;
        let scheme = self.scheme;
        let mut env = Environment::with_exemptions(cfg.clone(), &self.exemptions)?;
        env.set_wet_weighting(scheme.wet_weighting());
        env.set_recording(record);
        let mut obs = env.reset(episode_seed);

        let episode = self.metrics.len();
        let dqn_hyper = DqnHyper::from_config(&cfg);
        let epsilon = if train {
            dqn_hyper.epsilon(episode, self.episodes)
        } else {
            0.0
        };
        let dqn_lr = dqn_hyper.learning_rate(episode, self.episodes);
        if train {
            self.dqn
                .iter_mut()
                .for_each(|d| d.set_learning_rate(dqn_lr));
        }
        let train_dqn_now = train && scheme.trains_dqn();
        let per_subslot = train_dqn_now && l.dqn_cadence == DqnTrainCadence::PerSubslot;

        let mut totals = LossTotals::default();
        let mut returns = vec![0.0; n_uav];
        let mut log = Vec::new();
        // Tier-2 experience of (k, u) waits one slot for its next observation.
        let mut pending: Vec<Vec<Option<TierTwoExperience>>> =
            (0..cfg.subslots).map(|_| vec![None; n_uav]).collect();

        for t in 0..horizon {
            let state = if train { env.joint_state() } else { Vec::new() };
            let mut raw = Vec::with_capacity(n_uav);
            let mut squashed = Vec::with_capacity(n_uav);
            for (u, o) in obs.iter().enumerate() {
                let sq = self.actors[u].act(o, !train, rng)?;
                raw.push(map_action(&sq, cfg.v_max));
                squashed.push(sq);
            }

            let dqn = &mut self.dqn;
            let buffers = &self.dqn_buffers;
            let trace = play_slot(&mut env, &scheme, &raw, |u, _, o2| {
                if scheme.id == SchemeId::RandomWdc {
                    return Ok(Some((0..n_wn).map(|_| rng.random::<f64>()).collect()));
                }
                if per_subslot {
                    train_dqn(&mut dqn[u], &buffers[u], l.batch_size, rng, &mut totals)?;
                }
                dqn[u].select_scores(o2, epsilon, rng).map(Some)
            })?;
            let done = trace.outcome.done;
            debug_assert_eq!(done, t + 1 == horizon);

            for (k, row) in trace.tier2.into_iter().enumerate() {
                for (u, step) in row.into_iter().enumerate() {
                    if let Some(mut prev) = pending[k][u].take() {
                        prev.next_obs = step.obs.clone();
                        if train_dqn_now {
                            self.dqn_buffers[u].push(prev);
                        }
                    }
                    // Only collecting steps carry a learning signal.
                    if step.action.is_none() {
                        continue;
                    }
                    let exp = TierTwoExperience {
                        next_obs: if done { step.obs.clone() } else { Vec::new() },
                        obs: step.obs,
                        action: step.action,
                        reward: step.reward,
                        done,
                    };
                    if done {
                        if train_dqn_now {
                            self.dqn_buffers[u].push(exp);
                        }
                    } else {
                        pending[k][u] = Some(exp);
                    }
                }
            }

            let rewards: Vec<f64> = trace.outcome.rewards.iter().map(|r| r.r_total).collect();
            returns.iter_mut().zip(&rewards).for_each(|(a, r)| *a += r);
            obs = env.tier1_observations();

            if train {
                self.sac_buffer.push(TierOneExperience {
                    state,
                    actions: squashed,
                    rewards,
                    next_state: env.joint_state(),
                    done,
                });
                self.slots_trained += 1;
                if self.sac_buffer.len() >= l.batch_size
                    && self
                        .slots_trained
                        .is_multiple_of(l.sac_train_interval.max(1) as u64)
                {
                    let batch = self.sac_buffer.sample(l.batch_size, rng)?;
                    for (u, m) in self.sac.iter_mut().enumerate() {
                        let losses = m.train_step(&batch, u, rng)?;
                        for (acc, v) in totals.sac.iter_mut().zip([
                            losses.v,
                            losses.q1,
                            losses.q2,
                            losses.policy,
                            losses.alpha,
                        ]) {
                            *acc += v;
                        }
                        totals.sac_n += 1;
                    }
                }
                if train_dqn_now && l.dqn_cadence == DqnTrainCadence::PerSlot {
                    for (m, b) in self.dqn.iter_mut().zip(&self.dqn_buffers) {
                        train_dqn(m, b, l.batch_size, rng, &mut totals)?;
                    }
                }
                if self
                    .slots_trained
                    .is_multiple_of(l.actor_sync_interval.max(1) as u64)
                {
                    self.actors = self.sac.iter().map(SacModel::acting_actor).collect();
                }
            }
            if record {
                log.push(SlotLog {
                    actions: raw,
                    scores: trace.scores,
                });
            }
        }

        let report = env.episode_report();
        let alpha = (!self.sac.is_empty())
            .then(|| self.sac.iter().map(SacModel::alpha).sum::<f64>() / self.sac.len() as f64);
        let m = |i: usize| LossTotals::mean(totals.sac[i], totals.sac_n);
        let metrics = EpisodeMetrics {
            episode,
            c_total: report.c_total,
            mean_return: returns.iter().sum::<f64>() / n_uav as f64,
            v_loss: m(0),
            q1_loss: m(1),
            q2_loss: m(2),
            policy_loss: m(3),
            alpha_loss: m(4),
            alpha,
            dqn_loss: LossTotals::mean(totals.dqn, totals.dqn_n),
            epsilon,
            dqn_lr,
            d_min_violations: report.d_min_violations,
            c_min_failures: report.wn_meets_c_min.iter().filter(|&&ok| !ok).count(),
            b_min_failures: report.uav_meets_b_min.iter().filter(|&&ok| !ok).count(),
            min_uav_battery: report
                .uav_end_battery
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        };
        Ok(EpisodeRun {
            episode_seed,
            metrics,
            report,
            trajectory: env.trajectory().to_vec(),
            log,
        })
    }
}

/// Mixed into a training seed to derive the evaluation seed of benchmarks and sweeps.
pub const EVAL_SEED_SALT: u64 = 0x5eed;

/// Mean evaluation `C_total` of a trained policy.
pub fn mean_eval_c_total(trainer: &Trainer, episodes: usize, seed: u64) -> Result<f64> {
    let runs = trainer.run_evaluation(episodes, seed, false)?;
    Ok(runs.iter().map(|r| r.report.c_total).sum::<f64>() / runs.len().max(1) as f64)
}

/// One point of the phase-division search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TbarPoint {
    pub tbar: usize,
    pub c_total: f64,
}

/// Candidate switch slots `2, 2 + stride, ...`, always ending at `T`.
pub fn tbar_candidates(horizon: usize, stride: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (2..=horizon).step_by(stride.max(1)).collect();
    if c.last() != Some(&horizon) && horizon >= 2 {
        c.push(horizon);
    }
    c
}

/// Exhaustive one-dimensional search over the phase-division switch slot.
/// Each candidate is trained for `episodes` episodes and scored by its mean
/// evaluation `C_total`.
pub fn tbar_sweep(
    cfg: &WorldConfig,
    seed: u64,
    candidates: &[usize],
    episodes: usize,
    eval_episodes: usize,
) -> Result<Vec<TbarPoint>> {
    candidates
        .iter()
        .map(|&tbar| {
            let mut t = Trainer::new(cfg.clone(), Scheme::phase_division(tbar), seed, episodes)?;
            t.train_to_end()?;
            Ok(TbarPoint {
                tbar,
                c_total: mean_eval_c_total(&t, eval_episodes, seed ^ EVAL_SEED_SALT)?,
            })
        })
        .collect()
}

/// Candidate with the largest `C_total`; ties go to the earlier candidate.
pub fn best_tbar(curve: &[TbarPoint]) -> Option<TbarPoint> {
    curve
        .iter()
        .copied()
        .fold(None, |best: Option<TbarPoint>, p| match best {
            Some(b) if b.c_total >= p.c_total => Some(b),
            _ => Some(p),
        })
}

/// A trained benchmark and its evaluation.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub scheme: Scheme,
    pub trainer: Trainer,
    pub evaluations: Vec<EpisodeReport>,
    pub eval_c_total: f64,
    /// Phase-division search curve; empty for other schemes.
    pub tbar_curve: Vec<TbarPoint>,
}

/// Trains and evaluates one scheme. Phase division first searches its switch
/// slot with `learning.tbar_episodes` episodes per candidate.
pub fn run_benchmark(
    id: SchemeId,
    cfg: &WorldConfig,
    seed: u64,
    episodes: usize,
    eval_episodes: usize,
) -> Result<BenchmarkRun> {
    let (scheme, tbar_curve) = if id == SchemeId::PhaseDivision {
        let candidates = tbar_candidates(cfg.horizon_slots, cfg.learning.tbar_stride);
        let curve = tbar_sweep(
            cfg,
            seed,
            &candidates,
            cfg.learning.tbar_episodes,
            eval_episodes,
        )?;
        let best =
            best_tbar(&curve).ok_or_else(|| Error::Config("empty switch-slot grid".into()))?;
        (Scheme::phase_division(best.tbar), curve)
    } else {
        (Scheme::new(id), Vec::new())
    };
    run_benchmark_with(scheme, cfg, seed, episodes, eval_episodes).map(|mut b| {
        b.tbar_curve = tbar_curve;
        b
    })
}

/// Trains and evaluates a fully specified scheme.
pub fn run_benchmark_with(
    scheme: Scheme,
    cfg: &WorldConfig,
    seed: u64,
    episodes: usize,
    eval_episodes: usize,
) -> Result<BenchmarkRun> {
    let mut trainer = Trainer::new(cfg.clone(), scheme, seed, episodes)?;
    trainer.train_to_end()?;
    let evaluations: Vec<EpisodeReport> = trainer
        .run_evaluation(eval_episodes, seed ^ EVAL_SEED_SALT, false)?
        .into_iter()
        .map(|r| r.report)
        .collect();
    let eval_c_total =
        evaluations.iter().map(|r| r.c_total).sum::<f64>() / evaluations.len().max(1) as f64;
    Ok(BenchmarkRun {
        scheme,
        trainer,
        evaluations,
        eval_c_total,
        tbar_curve: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub num_uavs: usize,
    pub num_wns: usize,
    pub c_min: f64,
    pub c_total: f64,
}

/// MAHDRL `C_total` for every `(U, C_min)` cell with `W = 2U`.
pub fn scalability_sweep(
    base: &WorldConfig,
    uavs: &[usize],
    c_mins: &[f64],
    episodes: usize,
    eval_episodes: usize,
    seed: u64,
) -> Result<Vec<ScalabilityRow>> {
    let mut rows = Vec::new();
    for &u in uavs {
        for &c_min in c_mins {
            let mut cfg = base.clone();
            cfg.num_uavs = u;
            cfg.num_wns = 2 * u;
            cfg.c_min = c_min;
            // A single UAV is a legitimate point of this sweep.
            let exempt: &[Relation] = if u == 1 {
                &[Relation::AtLeastTwoUavs]
            } else {
                &[]
            };
            let mut t = Trainer::with_exemptions(
                cfg,
                Scheme::new(SchemeId::Mahdrl),
                seed,
                episodes,
                exempt,
            )?;
            t.train_to_end()?;
            rows.push(ScalabilityRow {
                num_uavs: u,
                num_wns: 2 * u,
                c_min,
                c_total: mean_eval_c_total(&t, eval_episodes, seed ^ EVAL_SEED_SALT)?,
            });
        }
    }
    Ok(rows)
}

/// Sample mean with a two-sided 95% Student-t half width; the half width is
/// `None` for fewer than two samples.
pub fn mean_ci95(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive dof")
        .inverse_cdf(0.975);
    (mean, Some(t * (var / n as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub d_cov: f64,
    pub seed: u64,
    pub c_total: f64,
}

/// MAHDRL `C_total` for every reporting range and seed.
pub fn coverage_sweep(
    base: &WorldConfig,
    d_covs: &[f64],
    seeds: &[u64],
    episodes: usize,
    eval_episodes: usize,
) -> Result<Vec<CoverageRow>> {
    let mut rows = Vec::new();
    for &d_cov in d_covs {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.d_cov_m = d_cov;
            let run = run_benchmark_with(
                Scheme::new(SchemeId::Mahdrl),
                &cfg,
                seed,
                episodes,
                eval_episodes,
            )?;
            rows.push(CoverageRow {
                d_cov,
                seed,
                c_total: run.eval_c_total,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> WorldConfig {
        let mut cfg = WorldConfig::desk();
        cfg.num_uavs = 2;
        cfg.num_wns = 3;
        cfg.horizon_slots = 5;
        cfg.area_width_m = 30.0;
        cfg.area_height_m = 30.0;
        cfg.learning.hidden_width = 8;
        cfg.learning.hidden_layers = 2;
        cfg.learning.batch_size = 4;
        cfg
    }

    #[test]
    fn ci_matches_t_table() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        // t(0.975, 2) = 4.302653, s = 1
        assert!((h.unwrap() - 4.302653 / 3f64.sqrt()).abs() < 1e-5);
        assert_eq!(mean_ci95(&[5.0]), (5.0, None));
    }

    #[test]
    fn scheme_names_round_trip() {
        for id in SchemeId::ALL {
            assert_eq!(id.name().parse::<SchemeId>().unwrap(), id);
            assert_eq!(
                serde_json::to_string(&id).unwrap(),
                format!("\"{}\"", id.name())
            );
        }
        assert!("nope".parse::<SchemeId>().is_err());
    }

    #[test]
    fn scheme_masks() {
        let pd = Scheme::phase_division(3);
        assert!(pd.may_wet(0, 0, 2) && pd.may_wet(1, 1, 2) && !pd.may_wet(2, 0, 2));
        assert!(!pd.collects(1, 0, 2) && pd.collects(2, 0, 2));
        let team = Scheme::new(SchemeId::Team);
        assert!(team.may_wet(5, 0, 4) && team.may_wet(5, 1, 4) && !team.may_wet(5, 2, 4));
        assert!(!team.collects(5, 1, 4) && team.collects(5, 3, 4));
        let a = SlotAction {
            heading: 1.0,
            speed: 2.0,
            wet: true,
        };
        assert!(!team.mask_action(0, 3, 4, a).wet);
        assert_eq!(
            Scheme::new(SchemeId::MahdrlNoHoe).wet_weighting(),
            WetWeighting::Uniform
        );
        assert!(!Scheme::new(SchemeId::RandomWdc).trains_dqn());
    }

    #[test]
    fn tbar_grid_and_argmax() {
        assert_eq!(
            tbar_candidates(300, 50),
            vec![2, 52, 102, 152, 202, 252, 300]
        );
        assert_eq!(tbar_candidates(4, 1), vec![2, 3, 4]);
        let curve = [
            TbarPoint {
                tbar: 2,
                c_total: 1.0,
            },
            TbarPoint {
                tbar: 3,
                c_total: 5.0,
            },
            TbarPoint {
                tbar: 4,
                c_total: 5.0,
            },
        ];
        assert_eq!(best_tbar(&curve).unwrap().tbar, 3);
        assert!(best_tbar(&[]).is_none());
    }

    #[test]
    fn smoke_run_emits_one_row_and_fixed_widths() {
        let mut cfg = tiny();
        cfg.learning.dqn_cadence = DqnTrainCadence::PerSubslot;
        let mut t = Trainer::new(cfg.clone(), Scheme::new(SchemeId::Mahdrl), 3, 1).unwrap();
        t.train_to_end().unwrap();
        assert_eq!(t.metrics().len(), 1);
        assert!(t
            .sac_buffer()
            .iter()
            .all(|e| e.state.len() == 24 && e.next_state.len() == 24));
        assert_eq!(t.sac_buffer().len(), 5);
        for b in t.dqn_buffers() {
            assert!(b.iter().all(|e| e.obs.len() == 6 && e.next_obs.len() == 6));
        }
    }

    #[test]
    fn same_seed_same_metrics() {
        let run = |seed| {
            let mut t = Trainer::new(tiny(), Scheme::new(SchemeId::Mahdrl), seed, 3).unwrap();
            t.train_to_end().unwrap();
            let mut buf = Vec::new();
            write_csv(t.metrics(), &mut buf).unwrap();
            buf
        };
        let a = run(11);
        assert_eq!(a, run(11));
        assert_ne!(a, run(12));
    }

    #[test]
    fn evaluation_leaves_trainer_untouched() {
        let mut t = Trainer::new(tiny(), Scheme::new(SchemeId::Mahdrl), 4, 2).unwrap();
        t.train_episode().unwrap();
        let before = serde_json::to_string(&t).unwrap();
        let a = t.evaluate(9, true).unwrap();
        let b = t.evaluate(9, true).unwrap();
        assert_eq!(
            (&a.report, &a.trajectory, &a.log),
            (&b.report, &b.trajectory, &b.log)
        );
        assert_eq!(serde_json::to_string(&t).unwrap(), before);
        assert_eq!(a.trajectory.len(), 5);
    }

    #[test]
    fn replayed_log_reproduces_trajectory() {
        let mut t = Trainer::new(tiny(), Scheme::new(SchemeId::Mahdrl), 5, 2).unwrap();
        t.train_episode().unwrap();
        let run = t.evaluate(21, true).unwrap();
        let seed = ChaCha8Rng::seed_from_u64(21).random::<u64>();
        assert_eq!(run.episode_seed, seed);
        let (traj, report) = replay_episode(t.config(), &[], t.scheme(), seed, &run.log).unwrap();
        assert_eq!(traj, run.trajectory);
        assert_eq!(report, run.report);
    }

    #[test]
    fn evaluation_only_trainer_rejects_mismatched_policies() {
        let t = Trainer::new(tiny(), Scheme::new(SchemeId::Mahdrl), 6, 1).unwrap();
        let actors = t.actors().to_vec();
        let nets: Vec<Mlp<f64>> = t.dqn_models().iter().map(|d| d.eval.clone()).collect();
        let e = Trainer::from_policies(tiny(), t.scheme(), actors.clone(), nets.clone()).unwrap();
        assert!(e.clone().train_episode().is_err());
        let mut wider = tiny();
        wider.num_wns = 4;
        assert!(Trainer::from_policies(wider, t.scheme(), actors, nets).is_err());
    }

    #[test]
    fn phase_division_rejects_out_of_range_switch() {
        assert!(Trainer::new(tiny(), Scheme::phase_division(1), 0, 1).is_err());
        assert!(Trainer::new(tiny(), Scheme::phase_division(6), 0, 1).is_err());
        assert!(Trainer::new(tiny(), Scheme::phase_division(5), 0, 1).is_ok());
    }

    #[test]
    fn metrics_csv_round_trips_with_fixed_header() {
        let mut t = Trainer::new(tiny(), Scheme::new(SchemeId::RandomWdc), 7, 2).unwrap();
        t.train_to_end().unwrap();
        let mut buf = Vec::new();
        write_csv(t.metrics(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));
        let back: Vec<EpisodeMetrics> = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(t.metrics()) {
            assert_eq!(a.c_total, b.c_total);
            assert_eq!(a.episode, b.episode);
        }
        // Random scheduling never trains the tier-2 networks.
        assert!(t.metrics().iter().all(|m| m.dqn_loss.is_none()));
    }

    #[test]
    fn serialized_state_with_rng_resumes_exactly() {
        let mut straight = Trainer::new(tiny(), Scheme::new(SchemeId::Mahdrl), 8, 4).unwrap();
        straight.train_to_end().unwrap();

        let mut first = Trainer::new(tiny(), Scheme::new(SchemeId::Mahdrl), 8, 4).unwrap();
        first.train_episode().unwrap();
        first.train_episode().unwrap();
        let state = serde_json::to_string(&first).unwrap();
        let rng = serde_json::to_string(first.rng_state()).unwrap();
        let mut resumed: Trainer = serde_json::from_str(&state).unwrap();
        resumed.restore_rng(serde_json::from_str(&rng).unwrap());
        resumed.train_to_end().unwrap();

        let csv = |t: &Trainer| {
            let mut b = Vec::new();
            write_csv(t.metrics(), &mut b).unwrap();
            b
        };
        assert_eq!(csv(&resumed), csv(&straight));
    }
}
