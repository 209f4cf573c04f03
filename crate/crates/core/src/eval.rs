//! Evaluation under deliberate (D2D) or intuitive (D2I) prompts, with
//! pass@k as coverage over the first k seeded samples.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{render_prompt, PromptInstance, PromptRegistry};
use crate::error::{Error, Result};
use crate::grammar::{spec_for, ReasoningMode, StrategyKind};
use crate::grpo::GrpoConfig;
use crate::policy::{PolicyModel, PolicyParams};
use crate::reward::{combined_reward, RewardBreakdown, RewardWeights};
use crate::seed::{derive_seed, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: ReasoningMode,
    /// Selects the prompt and format in deliberate mode; intuitive prompts
    /// are the same for every strategy.
    pub strategy: StrategyKind,
    pub k_max: usize,
    /// Decode once by arg-max instead of sampling `k_max` times.
    pub greedy: bool,
    pub seed: u64,
    pub temperature: f64,
    pub max_response_len: usize,
}

impl EvalConfig {
    pub fn new(mode: ReasoningMode, strategy: StrategyKind, k_max: usize, seed: u64) -> EvalConfig {
        let grpo = GrpoConfig::default();
        EvalConfig {
            mode,
            strategy,
            k_max,
            greedy: false,
            seed,
            temperature: grpo.temperature,
            max_response_len: grpo.max_response_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive and finite".into()));
        }
        if self.max_response_len == 0 {
            return Err(Error::InvalidConfig("max_response_len must be at least 1".into()));
        }
        Ok(())
    }

    /// Samples drawn per item.
    pub fn samples(&self) -> usize {
        if self.greedy {
            1
        } else {
            self.k_max
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub response: String,
    pub format: f64,
    pub accuracy: f64,
}

/// Outcome for one test item; one JSON-lines record per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    /// Seed of this item's sampling stream; identical across modes.
    pub seed: u64,
    pub gold: String,
    pub samples: Vec<SampleRecord>,
}

impl ItemRecord {
    fn correct_within(&self, k: usize) -> bool {
        self.samples.iter().take(k).any(|s| s.accuracy == 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: ReasoningMode,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub greedy: bool,
    pub n_items: usize,
    /// Fraction of items whose first sample is correct.
    pub accuracy: f64,
    /// Fraction of items whose first sample validates under the active format.
    pub format_compliance: f64,
    /// `k` → fraction of items with a correct answer among the first `k` samples.
    pub pass_at: BTreeMap<usize, f64>,
    /// Written separately as JSON lines.
    #[serde(skip)]
    pub items: Vec<ItemRecord>,
}

impl EvalReport {
    /// Aggregate per-item records.
    pub fn from_items(config: &EvalConfig, items: Vec<ItemRecord>) -> Result<EvalReport> {
        if items.is_empty() {
            return Err(Error::EmptyTestSet);
        }
        let n = items.len() as f64;
        let first = |f: fn(&SampleRecord) -> f64| items.iter().map(|i| i.samples.first().map_or(0.0, f)).sum::<f64>() / n;
        let samples = items.iter().map(|i| i.samples.len()).min().unwrap_or(0);
        let pass_at = (1..=samples)
            .map(|k| (k, items.iter().filter(|i| i.correct_within(k)).count() as f64 / n))
            .collect();
        Ok(EvalReport {
            mode: config.mode,
            strategy: config.strategy,
            seed: config.seed,
            greedy: config.greedy,
            n_items: items.len(),
            accuracy: first(|s| s.accuracy),
            format_compliance: first(|s| s.format),
            pass_at,
            items,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn items_jsonl(&self) -> String {
        self.items
            .iter()
            .map(|i| serde_json::to_string(i).expect("item serializes") + "\n")
            .collect()
    }

    /// Write `<stem>.json` and `<stem>.items.jsonl` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report = dir.join(format!("{stem}.json"));
        std::fs::write(&report, self.to_json()).map_err(|e| Error::io(&report, e))?;
        let items = dir.join(format!("{stem}.items.jsonl"));
        std::fs::write(&items, self.items_jsonl()).map_err(|e| Error::io(&items, e))
    }
}

fn evaluate_item(
    model: &PolicyModel,
    params: &PolicyParams,
    index: usize,
    inst: &PromptInstance,
    config: &EvalConfig,
    registry: &PromptRegistry,
) -> Result<ItemRecord> {
    let vocab = model.vocab();
    let prompt = render_prompt(inst, config.strategy, config.mode, registry, model.lexicon())?;
    let spec = spec_for(config.strategy, config.mode);
    let seed = derive_seed(config.seed, Stream::Eval, &[index as u64]);
    let responses = if config.greedy {
        vec![model.greedy_response(params, &prompt, config.max_response_len)]
    } else {
        let grpo = GrpoConfig {
            temperature: config.temperature,
            max_response_len: config.max_response_len,
            ..GrpoConfig::default()
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        (0..config.k_max).map(|_| model.sample_response(params, &prompt, &grpo, &mut rng).0).collect()
    };
    let samples = responses
        .iter()
        .map(|r| {
            let RewardBreakdown { format, accuracy, .. } =
                combined_reward(r, &spec, &inst.gold, config.mode, RewardWeights::default(), vocab);
            SampleRecord { response: vocab.detokenize(r), format, accuracy }
        })
        .collect();
    Ok(ItemRecord { id: inst.id.clone(), seed, gold: inst.gold.to_string(), samples })
}

/// Score `params` on `test_set`. Items run in parallel on the current rayon
/// pool and are reported in input order.
pub fn evaluate(
    model: &PolicyModel,
    params: &PolicyParams,
    test_set: &[PromptInstance],
    config: &EvalConfig,
    registry: &PromptRegistry,
) -> Result<EvalReport> {
    config.validate()?;
    model.check_params(params)?;
    if test_set.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let items = test_set
        .par_iter()
        .enumerate()
        .map(|(i, inst)| evaluate_item(model, params, i, inst, config, registry))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_items(config, items)
}

/// Deliberate and intuitive evaluations of the same items and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub deliberate: EvalReport,
    pub intuitive: EvalReport,
    /// Intuitive minus deliberate.
    pub delta_accuracy: f64,
    pub delta_pass_at: BTreeMap<usize, f64>,
}

pub fn compare_modes(
    model: &PolicyModel,
    params: &PolicyParams,
    test_set: &[PromptInstance],
    config: &EvalConfig,
    registry: &PromptRegistry,
) -> Result<PairedReport> {
    let run = |mode| evaluate(model, params, test_set, &EvalConfig { mode, ..config.clone() }, registry);
    let deliberate = run(ReasoningMode::Deliberate)?;
    let intuitive = run(ReasoningMode::Intuitive)?;
    let delta_pass_at = intuitive
        .pass_at
        .iter()
        .filter_map(|(k, v)| deliberate.pass_at.get(k).map(|d| (*k, v - d)))
        .collect();
    Ok(PairedReport {
        strategy: config.strategy,
        seed: config.seed,
        delta_accuracy: intuitive.accuracy - deliberate.accuracy,
        delta_pass_at,
        deliberate,
        intuitive,
    })
}
