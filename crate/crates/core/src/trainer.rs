//! The GRPO training loop: deliberate prompts, grouped rollouts, rule-based
//! rewards, clipped surrogate updates, checkpoints and JSON-lines logs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::ops::Deref;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{make_dataset, read_jsonl, render_prompt, EnvConfig, PromptInstance, PromptRegistry};
use crate::error::{Error, Result};
use crate::grammar::{spec_for, ReasoningMode, StrategyKind};
use crate::grpo::{group_advantages_with, objective_gradient, surrogate_terms, GrpoConfig, RolloutGroup};
use crate::policy::{ContextFeatures, GroupGradients, PolicyModel, PolicyParams, PriorConfig};
use crate::reward::{combined_reward, RewardWeights};
use crate::vocab::Vocab;
use crate::seed::{stream_rng, Stream};

/// Checkpoint schema version.
pub const CHECKPOINT_VERSION: &str = "1";

/// Dataset generation settings used when no dataset files are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub split_ratio: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { count: 1000, split_ratio: 0.8 }
    }
}

/// Evaluation settings read from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub k_max: usize,
    pub greedy: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { k_max: 3, greedy: false }
    }
}

/// Everything that determines a training run.
///
/// Read from TOML with flat dotted keys, e.g. `grpo.kl_beta = 0.04`. Missing
/// keys take their defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: StrategyKind,
    pub steps: usize,
    pub batch_prompts: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Worker threads for rollouts and evaluation. Results do not depend on it.
    pub workers: usize,
    /// Record elapsed seconds per step. Off by default so logs stay
    /// byte-identical across runs.
    pub log_wall_time: bool,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub grpo: GrpoConfig,
    pub reward: RewardWeights,
    pub prior: PriorConfig,
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: StrategyKind::Base,
            steps: 300,
            batch_prompts: 32,
            seed: 0,
            checkpoint_every: 50,
            workers: 1,
            log_wall_time: false,
            train_data: None,
            test_data: None,
            grpo: GrpoConfig::default(),
            reward: RewardWeights::default(),
            prior: PriorConfig::default(),
            env: EnvConfig::default(),
            dataset: DatasetConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.grpo.validate()?;
        self.env.validate()?;
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.steps == 0 {
            return fail("steps must be at least 1");
        }
        if self.batch_prompts == 0 {
            return fail("batch_prompts must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be at least 1");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if self.eval.k_max == 0 {
            return fail("eval.k_max must be at least 1");
        }
        let w = self.reward;
        if !(w.format >= 0.0 && w.accuracy >= 0.0 && w.format + w.accuracy <= 1.0 + 1e-12) {
            return fail("reward weights must be non-negative with a sum of at most 1");
        }
        Ok(())
    }

    /// The config as canonical JSON, without the settings that cannot change
    /// results (`workers`).
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("config is an object").remove("workers");
        // serde_json maps are sorted by key, which makes the output canonical.
        serde_json::to_string(&value).expect("value serializes")
    }

    /// Train and test splits generated from the `dataset` and `env` sections
    /// with the run seed.
    pub fn generate_splits(&self, vocab: &Vocab) -> Result<(Vec<PromptInstance>, Vec<PromptInstance>)> {
        let mut rng = stream_rng(self.seed, Stream::Data, &[]);
        make_dataset(&mut rng, self.dataset.count, self.dataset.split_ratio, &self.env, vocab)
    }

    /// Hex SHA-256 of [`TrainConfig::canonical_json`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainLogRecord {
    pub step: usize,
    pub mean_total_reward: f64,
    pub mean_format_reward: f64,
    pub mean_accuracy_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub wall_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    /// Completed steps; every stream of the next step derives from it.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: String,
    pub step: usize,
    pub policy: PolicyParams,
    pub reference: PolicyParams,
    pub config_digest: String,
    pub rng_state: RngState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported format_version {:?}",
                path.display(),
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}

/// Read-only copy of a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenParams(Arc<PolicyParams>);

impl Deref for FrozenParams {
    type Target = PolicyParams;

    fn deref(&self) -> &PolicyParams {
        &self.0
    }
}

/// Deep copy of the live parameters; later updates do not reach it.
pub fn snapshot(policy: &PolicyParams) -> FrozenParams {
    FrozenParams(Arc::new(policy.clone()))
}

/// One prompt's rollouts with the step features cached for reuse.
struct Rollout {
    group: RolloutGroup,
    features: Vec<Vec<ContextFeatures>>,
}

fn rollout(
    model: &PolicyModel,
    policy: &PolicyParams,
    reference: &PolicyParams,
    instance: &PromptInstance,
    registry: &PromptRegistry,
    config: &TrainConfig,
    stream: &[u64],
) -> Result<Rollout> {
    let mode = ReasoningMode::Deliberate;
    let prompt = render_prompt(instance, config.strategy, mode, registry, model.lexicon())?;
    let ctx = model.prompt_context(&prompt);
    let spec = spec_for(config.strategy, mode);
    let mut rng = stream_rng(config.seed, Stream::Rollout, stream);
    let n = config.grpo.group_size;
    let mut group = RolloutGroup {
        prompt_id: instance.id.clone(),
        responses: Vec::with_capacity(n),
        logp_theta: Vec::with_capacity(n),
        logp_old: Vec::with_capacity(n),
        logp_ref: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
    };
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        let (response, logp) = model.sample_response(policy, &prompt, &config.grpo, &mut rng);
        let feats = model.response_features(&ctx, &response);
        group.logp_ref.push(model.token_logprobs(reference, &feats, &response, config.grpo.temperature));
        group.rewards.push(combined_reward(&response, &spec, &instance.gold, mode, config.reward, model.vocab()));
        group.logp_theta.push(logp.clone());
        group.logp_old.push(logp);
        group.responses.push(response);
        features.push(feats);
    }
    Ok(Rollout { group, features })
}

fn collect_rollouts(
    model: &PolicyModel,
    old: &PolicyParams,
    reference: &PolicyParams,
    batch: &[PromptInstance],
    registry: &PromptRegistry,
    config: &TrainConfig,
    step: usize,
) -> Result<Vec<Rollout>> {
    batch
        .par_iter()
        .enumerate()
        .map(|(i, inst)| rollout(model, old, reference, inst, registry, config, &[step as u64, i as u64]))
        .collect()
}

/// The rollout groups `train_step` samples for `batch` at `step`, with
/// `old` as the sampling policy.
pub fn rollout_groups(
    model: &PolicyModel,
    old: &PolicyParams,
    reference: &PolicyParams,
    batch: &[PromptInstance],
    registry: &PromptRegistry,
    config: &TrainConfig,
    step: usize,
) -> Result<Vec<RolloutGroup>> {
    Ok(collect_rollouts(model, old, reference, batch, registry, config, step)?.into_iter().map(|r| r.group).collect())
}

/// One optimization step on `batch`. `step` counts completed steps and keys
/// the rollout streams.
///
/// Samples `group_size` responses per prompt from the current policy (which
/// is also π_old for this step), then runs `inner_epochs` rounds of gradient
/// ascent on the mean of the per-group surrogate objectives.
pub fn train_step(
    model: &PolicyModel,
    policy: &PolicyParams,
    reference: &PolicyParams,
    batch: &[PromptInstance],
    registry: &PromptRegistry,
    config: &TrainConfig,
    step: usize,
) -> Result<(PolicyParams, TrainLogRecord)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty training batch".into()));
    }
    let start = Instant::now();
    let grpo = &config.grpo;
    let old = snapshot(policy);
    let rollouts = collect_rollouts(model, &old, reference, batch, registry, config, step)?;
    let advantages = rollouts
        .iter()
        .map(|r| group_advantages_with(&r.group.total_rewards(), grpo.std_floor, grpo.std_kind))
        .collect::<Result<Vec<_>>>()?;

    let mut theta = policy.clone();
    let (mut kl_sum, mut clipped, mut terms_seen) = (0.0, 0usize, 0usize);
    let mut grad_norm = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for epoch in 0..grpo.inner_epochs {
        let per_group: Vec<(Vec<f64>, f64, usize)> = rollouts
            .par_iter()
            .zip(&advantages)
            .map(|(r, adv)| {
                let mut group = r.group.clone();
                if epoch > 0 {
                    group.logp_theta = r
                        .features
                        .iter()
                        .zip(&group.responses)
                        .map(|(f, y)| model.token_logprobs(&theta, f, y, grpo.temperature))
                        .collect();
                }
                let terms = surrogate_terms(&group, adv, grpo)?;
                let grads = GroupGradients {
                    model,
                    params: &theta,
                    features: &r.features,
                    responses: &group.responses,
                    temperature: grpo.temperature,
                };
                let g = objective_gradient(&group, adv, &grads, grpo)?;
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient { prompt_id: group.prompt_id.clone() });
                }
                let n_clipped = terms.clipped.iter().filter(|&&c| c).count();
                Ok((g, terms.kl.iter().sum::<f64>(), n_clipped))
            })
            .collect::<Result<_>>()?;

        // Fixed-order reduction keeps the update independent of scheduling.
        let mut total = vec![0.0; theta.as_slice().len()];
        for (g, kl, n_clipped) in &per_group {
            for (t, x) in total.iter_mut().zip(g) {
                *t += scale * x;
            }
            kl_sum += kl;
            clipped += n_clipped;
            terms_seen += grpo.group_size;
        }
        let norm = total.iter().map(|x| x * x).sum::<f64>().sqrt();
        if epoch == 0 {
            grad_norm = norm;
        }
        let shrink = if norm > grpo.max_grad_norm { grpo.max_grad_norm / norm } else { 1.0 };
        theta.add_scaled(&total, grpo.learning_rate * shrink)?;
    }

    let n = (batch.len() * grpo.group_size) as f64;
    let mean = |f: fn(&crate::reward::RewardBreakdown) -> f64| {
        rollouts.iter().flat_map(|r| r.group.rewards.iter().map(f)).sum::<f64>() / n
    };
    let record = TrainLogRecord {
        step: step + 1,
        mean_total_reward: mean(|r| r.total),
        mean_format_reward: mean(|r| r.format),
        mean_accuracy_reward: mean(|r| r.accuracy),
        mean_kl: kl_sum / terms_seen as f64,
        clip_fraction: clipped as f64 / terms_seen as f64,
        grad_norm,
        wall_time: config.log_wall_time.then(|| start.elapsed().as_secs_f64()),
    };
    Ok((theta, record))
}

/// Training-set indices used by step `step` (0-based).
///
/// Each epoch visits the set in its own seeded order without replacement; a
/// batch that crosses an epoch boundary takes the tail of one order and the
/// head of the next.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for pos in step * batch..(step + 1) * batch {
        let epoch = pos / n;
        if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch as u64]));
            cached = Some((epoch, order));
        }
        out.push(cached.as_ref().expect("filled above").1[pos % n]);
    }
    out
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))
}

/// Live training state.
pub struct Trainer {
    model: PolicyModel,
    config: TrainConfig,
    registry: PromptRegistry,
    train_set: Vec<PromptInstance>,
    policy: PolicyParams,
    reference: FrozenParams,
    step: usize,
    pool: rayon::ThreadPool,
}

impl Trainer {
    /// Start from the prior policy, which also becomes the frozen reference.
    pub fn new(model: PolicyModel, config: TrainConfig, train_set: Vec<PromptInstance>) -> Result<Trainer> {
        let policy = model.initial_params(&config.prior);
        let reference = snapshot(&policy);
        Trainer::assemble(model, config, train_set, policy, reference, 0)
    }

    pub fn from_checkpoint(
        model: PolicyModel,
        config: TrainConfig,
        train_set: Vec<PromptInstance>,
        checkpoint: Checkpoint,
    ) -> Result<Trainer> {
        if checkpoint.config_digest != config.digest() {
            return Err(Error::Checkpoint(format!(
                "config digest {} does not match the checkpoint's {}",
                config.digest(),
                checkpoint.config_digest
            )));
        }
        if checkpoint.rng_state != (RngState { seed: config.seed, step: checkpoint.step }) {
            return Err(Error::Checkpoint("rng state disagrees with step or seed".into()));
        }
        let reference = snapshot(&checkpoint.reference);
        Trainer::assemble(model, config, train_set, checkpoint.policy, reference, checkpoint.step)
    }

    fn assemble(
        model: PolicyModel,
        config: TrainConfig,
        train_set: Vec<PromptInstance>,
        policy: PolicyParams,
        reference: FrozenParams,
        step: usize,
    ) -> Result<Trainer> {
        config.validate()?;
        if train_set.is_empty() {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        model.check_params(&policy)?;
        model.check_params(&reference)?;
        let registry = PromptRegistry::standard(model.vocab())?;
        let pool = worker_pool(config.workers)?;
        Ok(Trainer { model, config, registry, train_set, policy, reference, step, pool })
    }

    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn reference(&self) -> &FrozenParams {
        &self.reference
    }

    /// Completed steps.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn step(&mut self) -> Result<TrainLogRecord> {
        let idx = batch_indices(self.train_set.len(), self.config.batch_prompts, self.config.seed, self.step);
        let batch: Vec<PromptInstance> = idx.iter().map(|&i| self.train_set[i].clone()).collect();
        let (policy, record) = self.pool.install(|| {
            train_step(&self.model, &self.policy, &self.reference, &batch, &self.registry, &self.config, self.step)
        })?;
        self.policy = policy;
        self.step += 1;
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION.to_string(),
            step: self.step,
            policy: self.policy.clone(),
            reference: (*self.reference).clone(),
            config_digest: self.config.digest(),
            rng_state: RngState { seed: self.config.seed, step: self.step },
        }
    }
}

/// Files written by [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub records: Vec<TrainLogRecord>,
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.json";

pub fn checkpoint_path(out_dir: &Path, step: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step:06}.json"))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<TrainLogRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn log_line(record: &TrainLogRecord) -> String {
    let mut s = serde_json::to_string(record).expect("record serializes");
    s.push('\n');
    s
}

/// Run (or resume) training from the dataset named by `config.train_data`,
/// writing `train_log.jsonl`, periodic checkpoints under `checkpoints/`, and
/// the final `checkpoint.json` into `out_dir`.
///
/// When resuming, log records after the checkpoint's step are dropped before
/// new ones are appended.
pub fn run_training(config: &TrainConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let train_path = config
        .train_data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("train_data is not set".into()))?;
    let model = PolicyModel::new(Vocab::canonical(), config.grpo.max_response_len)?;
    let train_set = read_jsonl(train_path, model.vocab())?;
    fs::create_dir_all(out_dir.join("checkpoints")).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);

    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(model, config.clone(), train_set, Checkpoint::load(p)?)?,
        None => Trainer::new(model, config.clone(), train_set)?,
    };
    let mut records = Vec::new();
    if trainer.steps_done() > 0 && log_path.exists() {
        records = read_log(&log_path)?;
        records.retain(|r| r.step <= trainer.steps_done());
    }
    let mut text: String = records.iter().map(log_line).collect();
    fs::write(&log_path, &text).map_err(|e| Error::io(&log_path, e))?;
    let mut log = fs::OpenOptions::new().append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;

    while trainer.steps_done() < config.steps {
        let record = trainer.step()?;
        text = log_line(&record);
        log.write_all(text.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        log::info!(
            "step {} total {:.3} format {:.3} accuracy {:.3} kl {:.4}",
            record.step,
            record.mean_total_reward,
            record.mean_format_reward,
            record.mean_accuracy_reward,
            record.mean_kl
        );
        records.push(record);
        let done = trainer.steps_done();
        if done % config.checkpoint_every == 0 || done == config.steps {
            trainer.checkpoint().save(checkpoint_path(out_dir, done))?;
        }
    }
    let checkpoint = trainer.checkpoint();
    let checkpoint_path = out_dir.join(FINAL_CHECKPOINT);
    checkpoint.save(&checkpoint_path)?;
    Ok(TrainOutcome { checkpoint, checkpoint_path, log_path, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch_once() {
        let n = 10;
        let mut seen = Vec::new();
        for step in 0..5 {
            seen.extend(batch_indices(n, 4, 3, step));
        }
        let mut first: Vec<usize> = seen[..10].to_vec();
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        let mut second: Vec<usize> = seen[10..20].to_vec();
        second.sort_unstable();
        assert_eq!(second, (0..10).collect::<Vec<_>>());
        assert_eq!(batch_indices(n, 4, 3, 2), batch_indices(n, 4, 3, 2));
    }

    #[test]
    fn toml_round_trip_with_dotted_keys() {
        let cfg = TrainConfig::from_toml_str(
            "strategy = \"loc\"\nsteps = 7\ngrpo.kl_beta = 0.1\ngrpo.kl_in_clip = true\nenv.width = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.strategy, StrategyKind::Loc);
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.grpo.kl_beta, 0.1);
        assert!(cfg.grpo.kl_in_clip);
        assert_eq!(cfg.env.width, 3);
        assert_eq!(cfg.grpo.group_size, 8);
        assert!(TrainConfig::from_toml_str("grpo.unknown = 1\n").is_err());
    }

    #[test]
    fn digest_ignores_workers_only() {
        let a = TrainConfig::default();
        let b = TrainConfig { workers: 4, ..a.clone() };
        assert_eq!(a.digest(), b.digest());
        let c = TrainConfig { strategy: StrategyKind::Loc, ..a.clone() };
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn validation_guards() {
        assert!(TrainConfig { steps: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_prompts: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn snapshot_is_detached() {
        let mut live = PolicyParams::zeros(2, 2);
        let frozen = snapshot(&live);
        let again = snapshot(&frozen);
        live.set(0, 0, 1.0);
        assert_eq!(frozen.get(0, 0), 0.0);
        assert_eq!(again, frozen);
    }
}
