//! Synthetic grid-scene tasks standing in for image + question pairs.
//!
//! Each instance is a small grid of integer-valued cells and a templated
//! question about one "crucial" cell: `value at cell ( c , r ) <rule>`. The
//! answer is the rule applied to that cell's value.
//!
//! Prompt layout: `<instruction> grid ( 0 , 0 ) v ( 1 , 0 ) v ... <question>`,
//! cells serialized row-major with their (col, row) coordinates.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{ReasoningMode, StrategyKind};
use crate::reward::GoldAnswer;
use crate::vocab::{TokenClass, TokenId, Vocab};

/// Constant added by [`Rule::AddConst`].
pub const ADD_CONST: i64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Identity,
    AddConst,
    Double,
    Complement180,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Identity, Rule::AddConst, Rule::Double, Rule::Complement180];

    /// Question word naming the rule.
    pub fn word(self) -> &'static str {
        match self {
            Rule::Identity => "same",
            Rule::AddConst => "plus",
            Rule::Double => "double",
            Rule::Complement180 => "complement",
        }
    }

    pub fn from_word(word: &str) -> Option<Rule> {
        Rule::ALL.into_iter().find(|r| r.word() == word)
    }

    pub fn apply(self, value: i64) -> i64 {
        match self {
            Rule::Identity => value,
            Rule::AddConst => value + ADD_CONST,
            Rule::Double => 2 * value,
            Rule::Complement180 => 180 - value,
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

/// Range of cell values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    /// Values in `0..=9`.
    Easy,
    /// Values in `0..=99`.
    #[default]
    Standard,
}

impl Difficulty {
    pub fn max_value(self) -> u8 {
        match self {
            Difficulty::Easy => 9,
            Difficulty::Standard => 99,
        }
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "standard" => Ok(Difficulty::Standard),
            _ => Err(format!("unknown difficulty {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub width: usize,
    pub height: usize,
    pub difficulty: Difficulty,
    pub rules: Vec<Rule>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { width: 4, height: 4, difficulty: Difficulty::Standard, rules: Rule::ALL.to_vec() }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        // Coordinates are serialized as single digit tokens.
        if !(1..=10).contains(&self.width) || !(1..=10).contains(&self.height) {
            return Err(Error::InvalidConfig("env.width and env.height must lie in 1..=10".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::InvalidConfig("env.rules must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridScene {
    pub width: usize,
    pub height: usize,
    /// Row-major cell values.
    pub cells: Vec<u8>,
}

impl GridScene {
    pub fn get(&self, col: usize, row: usize) -> Option<u8> {
        (col < self.width && row < self.height).then(|| self.cells[row * self.width + col])
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.cells.chunks(self.width).map(<[u8]>::to_vec).collect()
    }
}

/// One task: scene, question, gold answer.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub id: String,
    pub scene: GridScene,
    pub question: Vec<TokenId>,
    pub gold: GoldAnswer,
    pub crucial_cell: (usize, usize),
    pub rule: Rule,
}

impl PromptInstance {
    pub fn new(id: String, scene: GridScene, crucial_cell: (usize, usize), rule: Rule, vocab: &Vocab) -> Result<Self> {
        let (c, r) = crucial_cell;
        let value = scene.get(c, r).ok_or_else(|| {
            Error::InvalidConfig(format!("crucial cell ({c}, {r}) outside a {}x{} grid", scene.width, scene.height))
        })?;
        let question = Lexicon::new(vocab)?.question(crucial_cell, rule);
        Ok(PromptInstance {
            id,
            scene,
            question,
            gold: GoldAnswer::Numeric(rule.apply(value as i64)),
            crucial_cell,
            rule,
        })
    }

    /// Recompute the answer from scene, cell and rule.
    pub fn recompute_gold(&self) -> Option<GoldAnswer> {
        let (c, r) = self.crucial_cell;
        self.scene.get(c, r).map(|v| GoldAnswer::Numeric(self.rule.apply(v as i64)))
    }

    pub fn crucial_value(&self) -> u8 {
        self.scene.get(self.crucial_cell.0, self.crucial_cell.1).expect("validated at construction")
    }

    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            id: self.id.clone(),
            cells: self.scene.rows(),
            crucial_cell: [self.crucial_cell.0, self.crucial_cell.1],
            rule: self.rule,
            gold: self.gold.clone(),
        }
    }

    pub fn from_record(rec: InstanceRecord, vocab: &Vocab) -> Result<Self> {
        let height = rec.cells.len();
        let width = rec.cells.first().map_or(0, Vec::len);
        if width == 0 || rec.cells.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidConfig(format!("instance {}: ragged or empty grid", rec.id)));
        }
        if rec.cells.iter().flatten().any(|&v| v > 99) {
            return Err(Error::InvalidConfig(format!("instance {}: cell value above 99", rec.id)));
        }
        let scene = GridScene { width, height, cells: rec.cells.concat() };
        let inst = PromptInstance::new(rec.id, scene, (rec.crucial_cell[0], rec.crucial_cell[1]), rec.rule, vocab)?;
        if inst.gold != rec.gold {
            return Err(Error::InvalidConfig(format!(
                "instance {}: stored gold {} disagrees with recomputed {}",
                inst.id, rec.gold, inst.gold
            )));
        }
        Ok(inst)
    }
}

/// One line of a dataset file.
///
/// ```json
/// {"id":"i00003","cells":[[12,7],[40,3]],"crucial_cell":[0,1],"rule":"complement180",
///  "gold":{"kind":"numeric","canonical":140}}
/// ```
///
/// `cells` is row-major (`cells[row][col]`), `crucial_cell` is `[col, row]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub id: String,
    pub cells: Vec<Vec<u8>>,
    pub crucial_cell: [usize; 2],
    pub rule: Rule,
    pub gold: GoldAnswer,
}

/// Token ids the environment needs, resolved once.
#[derive(Debug, Clone)]
pub struct Lexicon {
    grid: TokenId,
    cell: TokenId,
    value: TokenId,
    at: TokenId,
    lparen: TokenId,
    rparen: TokenId,
    comma: TokenId,
    digits: [TokenId; 10],
    rules: [TokenId; 4],
}

impl Lexicon {
    pub fn new(vocab: &Vocab) -> Result<Lexicon> {
        let id = |s: &str| vocab.expect_id(s);
        let mut digits = [TokenId(0); 10];
        for (d, slot) in digits.iter_mut().enumerate() {
            *slot = id(&d.to_string())?;
        }
        let mut rules = [TokenId(0); 4];
        for r in Rule::ALL {
            rules[r.ordinal()] = id(r.word())?;
        }
        Ok(Lexicon {
            grid: id("grid")?,
            cell: id("cell")?,
            value: id("value")?,
            at: id("at")?,
            lparen: id("(")?,
            rparen: id(")")?,
            comma: id(",")?,
            digits,
            rules,
        })
    }

    fn push_number(&self, out: &mut Vec<TokenId>, n: u64) {
        for ch in n.to_string().bytes() {
            out.push(self.digits[(ch - b'0') as usize]);
        }
    }

    fn push_coord(&self, out: &mut Vec<TokenId>, (c, r): (usize, usize)) {
        out.push(self.lparen);
        self.push_number(out, c as u64);
        out.push(self.comma);
        self.push_number(out, r as u64);
        out.push(self.rparen);
    }

    pub fn question(&self, cell: (usize, usize), rule: Rule) -> Vec<TokenId> {
        let mut out = vec![self.value, self.at, self.cell];
        self.push_coord(&mut out, cell);
        out.push(self.rules[rule.ordinal()]);
        out
    }

    pub fn scene(&self, scene: &GridScene) -> Vec<TokenId> {
        let mut out = vec![self.grid];
        for row in 0..scene.height {
            for col in 0..scene.width {
                self.push_coord(&mut out, (col, row));
                self.push_number(&mut out, scene.cells[row * scene.width + col] as u64);
            }
        }
        out
    }

    fn digit_of(&self, vocab: &Vocab, t: TokenId) -> Option<u8> {
        match vocab.class(t) {
            TokenClass::Digit(d) => Some(d),
            _ => None,
        }
    }

    /// Parse `( int , int )` at `s[0..]`, returning the pair and its length.
    fn parse_coord(&self, vocab: &Vocab, s: &[TokenId]) -> Option<((usize, usize), usize)> {
        let mut i = 0;
        let int = |i: &mut usize| -> Option<usize> {
            let start = *i;
            let mut v = 0usize;
            while let Some(d) = s.get(*i).and_then(|&t| self.digit_of(vocab, t)) {
                v = v.checked_mul(10)?.checked_add(d as usize)?;
                *i += 1;
            }
            (*i > start).then_some(v)
        };
        if s.first() != Some(&self.lparen) {
            return None;
        }
        i += 1;
        let c = int(&mut i)?;
        if s.get(i) != Some(&self.comma) {
            return None;
        }
        i += 1;
        let r = int(&mut i)?;
        if s.get(i) != Some(&self.rparen) {
            return None;
        }
        Some(((c, r), i + 1))
    }

    /// Inverse of [`Lexicon::question`].
    pub fn parse_question(&self, vocab: &Vocab, q: &[TokenId]) -> Option<((usize, usize), Rule)> {
        if q.len() < 4 || q[..3] != [self.value, self.at, self.cell] {
            return None;
        }
        let (cell, n) = self.parse_coord(vocab, &q[3..])?;
        let rest = &q[3 + n..];
        let [word] = rest else { return None };
        let rule = Rule::ALL.into_iter().find(|r| self.rules[r.ordinal()] == *word)?;
        Some((cell, rule))
    }

    /// Read the question of a rendered prompt and look its cell up in the
    /// serialized scene.
    pub fn read_query(&self, vocab: &Vocab, prompt: &[TokenId]) -> Option<Query> {
        let q_start = prompt.iter().rposition(|&t| t == self.value)?;
        let (cell, rule) = self.parse_question(vocab, &prompt[q_start..])?;
        let g = prompt[..q_start].iter().rposition(|&t| t == self.grid)?;
        let mut i = g + 1;
        while i < q_start {
            let (coord, n) = self.parse_coord(vocab, &prompt[i..q_start])?;
            i += n;
            let mut value = 0u32;
            let start = i;
            while i < q_start {
                match self.digit_of(vocab, prompt[i]) {
                    Some(d) => value = value * 10 + d as u32,
                    None => break,
                }
                i += 1;
            }
            if i == start || value > 99 {
                return None;
            }
            if coord == cell {
                return Some(Query { cell, rule, value: value as u8 });
            }
        }
        None
    }
}

/// What the question of a prompt asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub cell: (usize, usize),
    pub rule: Rule,
    pub value: u8,
}

/// Draw one instance: uniform values, uniform crucial cell, uniform rule.
pub fn generate_instance<R: Rng + ?Sized>(rng: &mut R, config: &EnvConfig, id: String, vocab: &Vocab) -> Result<PromptInstance> {
    config.validate()?;
    let max = config.difficulty.max_value();
    let cells = (0..config.width * config.height).map(|_| rng.gen_range(0..=max)).collect();
    let scene = GridScene { width: config.width, height: config.height, cells };
    let cell = (rng.gen_range(0..config.width), rng.gen_range(0..config.height));
    let rule = *config.rules.choose(rng).expect("validated non-empty");
    PromptInstance::new(id, scene, cell, rule, vocab)
}

/// Generate `count` instances and split them into disjoint train and test sets.
pub fn make_dataset<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    split_ratio: f64,
    config: &EnvConfig,
    vocab: &Vocab,
) -> Result<(Vec<PromptInstance>, Vec<PromptInstance>)> {
    if count < 2 {
        return Err(Error::InvalidSplit(format!("need at least 2 instances, got {count}")));
    }
    if !(0.0..=1.0).contains(&split_ratio) {
        return Err(Error::InvalidSplit(format!("split ratio {split_ratio} outside [0, 1]")));
    }
    let n_train = (count as f64 * split_ratio).round() as usize;
    if n_train == 0 || n_train >= count {
        return Err(Error::InvalidSplit(format!(
            "ratio {split_ratio} of {count} leaves an empty train or test set"
        )));
    }
    let mut all = (0..count)
        .map(|i| generate_instance(rng, config, format!("i{i:05}"), vocab))
        .collect::<Result<Vec<_>>>()?;
    let test = all.split_off(n_train);
    Ok((all, test))
}

pub fn write_jsonl(path: impl AsRef<Path>, instances: &[PromptInstance]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&inst.to_record()).map_err(|e| Error::json("dataset record", e))?);
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Vec<PromptInstance>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::DatasetMissing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord { path: path.to_path_buf(), line: n + 1, message };
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let inst = PromptInstance::from_record(rec, vocab).map_err(|e| malformed(e.to_string()))?;
        if !ids.insert(inst.id.clone()) {
            return Err(malformed(format!("duplicate id {}", inst.id)));
        }
        out.push(inst);
    }
    Ok(out)
}

/// Instruction segments keyed by (strategy, mode).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptRegistry {
    entries: BTreeMap<(StrategyKind, ReasoningMode), Vec<TokenId>>,
}

/// Instruction used for every strategy in intuitive mode.
pub const INTUITIVE_INSTRUCTION: &str = "you are a helpful assistant think step then answer";

impl PromptRegistry {
    pub fn standard(vocab: &Vocab) -> Result<PromptRegistry> {
        const PREFIX: &str = "you are a helpful assistant";
        let deliberate = [
            (StrategyKind::Base, "think <think> </think> then answer <answer> </answer>"),
            (
                StrategyKind::Loc,
                "think <think> </think> box region <box> </box> then answer <answer> </answer>",
            ),
            (
                StrategyKind::Jus,
                "think <think> </think> crucial region <crucial> </crucial> then answer <answer> </answer>",
            ),
            (
                StrategyKind::Par,
                "first parse <parse> </parse> think <think> </think> then answer <answer> </answer>",
            ),
        ];
        let mut entries = BTreeMap::new();
        for (strategy, text) in deliberate {
            entries.insert((strategy, ReasoningMode::Deliberate), vocab.tokenize(&format!("{PREFIX} {text}"))?);
            entries.insert((strategy, ReasoningMode::Intuitive), vocab.tokenize(INTUITIVE_INSTRUCTION)?);
        }
        Ok(PromptRegistry { entries })
    }

    pub fn empty() -> PromptRegistry {
        PromptRegistry { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, strategy: StrategyKind, mode: ReasoningMode, instruction: Vec<TokenId>) {
        self.entries.insert((strategy, mode), instruction);
    }

    pub fn get(&self, strategy: StrategyKind, mode: ReasoningMode) -> Result<&[TokenId]> {
        self.entries
            .get(&(strategy, mode))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingRegistryEntry(format!("({strategy}, {mode})")))
    }
}

/// Instruction, serialized scene, question.
pub fn render_prompt(
    instance: &PromptInstance,
    strategy: StrategyKind,
    mode: ReasoningMode,
    registry: &PromptRegistry,
    lexicon: &Lexicon,
) -> Result<Vec<TokenId>> {
    let mut out = registry.get(strategy, mode)?.to_vec();
    out.extend(lexicon.scene(&instance.scene));
    out.extend_from_slice(&instance.question);
    Ok(out)
}
