//! Tag-structured response parsing and validation.
//!
//! A response is a flat token sequence. [`parse_tagged`] recovers the block
//! structure (matched opener/closer pairs), and [`validate`] checks that
//! structure against the [`FormatSpec`] of one (strategy, mode) pair.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::vocab::{TagKind, TokenClass, TokenId, Vocab};

/// Response format a policy is trained (or evaluated) against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// `<think>` then `<answer>`.
    Base,
    /// Region localization: coordinates in a `<box>` nested in `<think>`.
    Loc,
    /// Region justification: a `<crucial>` description between `<think>` and `<answer>`.
    Jus,
    /// Parsing consistency: a `<parse>` block of predicates at the very start.
    Par,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] =
        [StrategyKind::Base, StrategyKind::Loc, StrategyKind::Jus, StrategyKind::Par];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Base => "base",
            StrategyKind::Loc => "loc",
            StrategyKind::Jus => "jus",
            StrategyKind::Par => "par",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?} (expected base, loc, jus or par)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningMode {
    Deliberate,
    Intuitive,
}

impl ReasoningMode {
    pub fn name(self) -> &'static str {
        match self {
            ReasoningMode::Deliberate => "deliberate",
            ReasoningMode::Intuitive => "intuitive",
        }
    }
}

impl fmt::Display for ReasoningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReasoningMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "deliberate" => Ok(ReasoningMode::Deliberate),
            "intuitive" => Ok(ReasoningMode::Intuitive),
            _ => Err(format!("unknown mode {s:?} (expected deliberate or intuitive)")),
        }
    }
}

/// Where a required block may sit relative to its siblings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionRule {
    /// Must be the first block of the response.
    First,
    /// Must start after the given block has closed.
    After(TagKind),
    Anywhere,
}

/// Content validators for required blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentRule {
    /// At least one token.
    NonEmpty,
    /// `( int , int ) , ( int , int )`.
    Coordinates,
    /// At least three content tokens, at least one of them a word.
    Description,
    /// At least one `word ( arg {, arg} )` run, where an arg is a word or an integer.
    Predicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRule {
    pub tag: TagKind,
    pub position: PositionRule,
    pub parent: Option<TagKind>,
    pub content: ContentRule,
}

/// Machine-checkable grammar for one (strategy, mode) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatSpec {
    pub strategy: StrategyKind,
    pub mode: ReasoningMode,
    /// Required blocks in template order.
    pub required: Vec<BlockRule>,
    pub allow_untagged: bool,
}

impl FormatSpec {
    pub fn rule(&self, tag: TagKind) -> Option<&BlockRule> {
        self.required.iter().find(|r| r.tag == tag)
    }

    pub fn required_tags(&self) -> impl Iterator<Item = TagKind> + '_ {
        self.required.iter().map(|r| r.tag)
    }
}

/// The grammar for `strategy` under `mode`.
///
/// Intuitive mode has no required blocks and admits every response.
pub fn spec_for(strategy: StrategyKind, mode: ReasoningMode) -> FormatSpec {
    use ContentRule::*;
    use PositionRule::*;
    use TagKind::*;

    if mode == ReasoningMode::Intuitive {
        return FormatSpec { strategy, mode, required: Vec::new(), allow_untagged: true };
    }
    let rule = |tag, position, parent, content| BlockRule { tag, position, parent, content };
    let required = match strategy {
        StrategyKind::Base => vec![
            rule(Think, First, None, NonEmpty),
            rule(Answer, After(Think), None, NonEmpty),
        ],
        StrategyKind::Loc => vec![
            rule(Think, First, None, NonEmpty),
            rule(Box, Anywhere, Some(Think), Coordinates),
            rule(Answer, After(Think), None, NonEmpty),
        ],
        StrategyKind::Jus => vec![
            rule(Think, First, None, NonEmpty),
            rule(Crucial, After(Think), None, Description),
            rule(Answer, After(Crucial), None, NonEmpty),
        ],
        StrategyKind::Par => vec![
            rule(Parse, First, None, Predicate),
            rule(Think, Anywhere, None, NonEmpty),
            rule(Answer, After(Think), None, NonEmpty),
        ],
    };
    FormatSpec { strategy, mode, required, allow_untagged: false }
}

/// One matched opener/closer pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub tag: TagKind,
    /// Index of the opener token.
    pub open: usize,
    /// Index of the closer token.
    pub close: usize,
    /// Number of enclosing blocks.
    pub depth: usize,
    /// Index (into `ParsedResponse::blocks`) of the innermost enclosing block.
    pub parent: Option<usize>,
}

impl Block {
    /// Token span strictly between the opener and the closer.
    pub fn content(&self) -> Range<usize> {
        self.open + 1..self.close
    }

    fn extent(&self) -> Range<usize> {
        self.open..self.close + 1
    }
}

/// Segmentation of a token sequence into tagged blocks plus residual text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub tokens: Vec<TokenId>,
    /// Matched blocks ordered by opener position.
    pub blocks: Vec<Block>,
    /// Maximal runs of tokens outside every block, in document order.
    pub residual: Vec<Range<usize>>,
    /// Tag tokens that are not part of any matched pair.
    pub unmatched: Vec<usize>,
    /// Openers still open at the end of the sequence, outermost first.
    pub open_at_end: Vec<usize>,
    pub well_nested: bool,
}

impl ParsedResponse {
    pub fn content(&self, block: &Block) -> &[TokenId] {
        &self.tokens[block.content()]
    }

    pub fn blocks_with(&self, tag: TagKind) -> impl Iterator<Item = &Block> + '_ {
        self.blocks.iter().filter(move |b| b.tag == tag)
    }

    /// The innermost tag still open at the end of the sequence.
    pub fn open_top(&self, vocab: &Vocab) -> Option<TagKind> {
        self.open_at_end.last().map(|&i| match vocab.class(self.tokens[i]) {
            TokenClass::Open(t) => t,
            other => unreachable!("open stack holds a non-opener {other:?}"),
        })
    }
}

/// Recover the block structure of `tokens`.
///
/// Closers that do not match the innermost open tag close the nearest
/// matching opener further out; the openers skipped over are left unmatched.
/// Closers with no matching opener at all are unmatched. Either case clears
/// `well_nested`, as does any opener still open at the end.
pub fn parse_tagged(tokens: &[TokenId], vocab: &Vocab) -> ParsedResponse {
    let mut stack: Vec<(TagKind, usize)> = Vec::new();
    let mut pairs: Vec<(TagKind, usize, usize)> = Vec::new();
    let mut unmatched = Vec::new();

    for (i, &tok) in tokens.iter().enumerate() {
        match vocab.class(tok) {
            TokenClass::Open(tag) => stack.push((tag, i)),
            TokenClass::Close(tag) => match stack.iter().rposition(|&(t, _)| t == tag) {
                Some(pos) => {
                    unmatched.extend(stack.drain(pos + 1..).map(|(_, j)| j));
                    let (_, open) = stack.pop().expect("position found above");
                    pairs.push((tag, open, i));
                }
                None => unmatched.push(i),
            },
            _ => {}
        }
    }
    let open_at_end: Vec<usize> = stack.iter().map(|&(_, j)| j).collect();
    unmatched.extend(open_at_end.iter().copied());
    unmatched.sort_unstable();

    pairs.sort_by_key(|&(_, open, _)| open);
    let mut blocks: Vec<Block> = Vec::with_capacity(pairs.len());
    for &(tag, open, close) in &pairs {
        // Matched pairs never cross, so the enclosing blocks are exactly the
        // earlier ones whose closer lies beyond this opener.
        let enclosing: Vec<usize> =
            (0..blocks.len()).filter(|&j| blocks[j].close > open).collect();
        blocks.push(Block {
            tag,
            open,
            close,
            depth: enclosing.len(),
            parent: enclosing.last().copied(),
        });
    }

    let mut covered = vec![false; tokens.len()];
    for b in blocks.iter().filter(|b| b.depth == 0) {
        covered[b.extent()].iter_mut().for_each(|c| *c = true);
    }
    let mut residual = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if covered[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < tokens.len() && !covered[i] {
            i += 1;
        }
        residual.push(start..i);
    }

    ParsedResponse {
        tokens: tokens.to_vec(),
        well_nested: unmatched.is_empty(),
        blocks,
        residual,
        unmatched,
        open_at_end,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    MissingTag,
    DuplicateTag,
    WrongOrder,
    WrongNesting,
    BadContent,
    StrayText,
    Unbalanced,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 7] = [
        ViolationKind::MissingTag,
        ViolationKind::DuplicateTag,
        ViolationKind::WrongOrder,
        ViolationKind::WrongNesting,
        ViolationKind::BadContent,
        ViolationKind::StrayText,
        ViolationKind::Unbalanced,
    ];
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A failed grammar rule. `tag` is `None` for untagged stray text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub tag: Option<TagKind>,
}

impl Violation {
    pub fn new(kind: ViolationKind, tag: Option<TagKind>) -> Violation {
        Violation { kind, tag }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag {
            Some(tag) => write!(f, "{} {}", self.kind, tag),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// Check `parsed` against `spec`, listing every failed rule.
///
/// Returns `true` iff the list is empty.
pub fn validate(parsed: &ParsedResponse, spec: &FormatSpec, vocab: &Vocab) -> (bool, Vec<Violation>) {
    use ViolationKind::*;

    if spec.allow_untagged {
        return (true, Vec::new());
    }
    let mut out: Vec<Violation> = Vec::new();
    let class = |i: usize| vocab.class(parsed.tokens[i]);

    for &i in &parsed.unmatched {
        if let TokenClass::Open(t) | TokenClass::Close(t) = class(i) {
            out.push(Violation::new(Unbalanced, Some(t)));
        }
    }

    // Blocks whose tag is not part of the template are extraneous text.
    for b in &parsed.blocks {
        if spec.rule(b.tag).is_none() {
            out.push(Violation::new(StrayText, Some(b.tag)));
        }
    }
    let stray_untagged = parsed
        .residual
        .iter()
        .flat_map(|r| r.clone())
        .any(|i| class(i).is_content());
    if stray_untagged {
        out.push(Violation::new(StrayText, None));
    }

    let unique = |tag: TagKind| -> Option<&Block> {
        let mut it = parsed.blocks_with(tag);
        match (it.next(), it.next()) {
            (Some(b), None) => Some(b),
            _ => None,
        }
    };

    for rule in &spec.required {
        let count = parsed.blocks_with(rule.tag).count();
        match count {
            0 => {
                out.push(Violation::new(MissingTag, Some(rule.tag)));
                continue;
            }
            1 => {}
            _ => out.push(Violation::new(DuplicateTag, Some(rule.tag))),
        }
        for b in parsed.blocks_with(rule.tag) {
            let parent_tag = b.parent.map(|p| parsed.blocks[p].tag);
            if parent_tag != rule.parent {
                out.push(Violation::new(WrongNesting, Some(rule.tag)));
            }
            if !content_ok(rule.content, parsed.content(b), vocab) {
                out.push(Violation::new(BadContent, Some(rule.tag)));
            }
        }
        let Some(block) = unique(rule.tag) else { continue };
        let in_order = match rule.position {
            PositionRule::Anywhere => true,
            PositionRule::First => parsed.blocks.first().is_some_and(|b| b.open == block.open),
            PositionRule::After(prev) => unique(prev).is_none_or(|p| block.open > p.close),
        };
        if !in_order {
            out.push(Violation::new(WrongOrder, Some(rule.tag)));
        }
    }

    out.sort();
    out.dedup();
    (out.is_empty(), out)
}

fn content_ok(rule: ContentRule, content: &[TokenId], vocab: &Vocab) -> bool {
    let classes: Vec<TokenClass> = content.iter().map(|&t| vocab.class(t)).collect();
    match rule {
        ContentRule::NonEmpty => classes.iter().any(|&c| c != TokenClass::End),
        ContentRule::Coordinates => is_coordinate_pair(&classes),
        ContentRule::Description => {
            let content: Vec<TokenClass> = classes.into_iter().filter(|c| c.is_content()).collect();
            content.len() >= 3 && content.contains(&TokenClass::Word)
        }
        ContentRule::Predicate => (0..classes.len()).any(|i| predicate_at(&classes[i..])),
    }
}

fn is_digit(c: &TokenClass) -> bool {
    matches!(c, TokenClass::Digit(_))
}

/// Length of the integer (digit run) at the start of `s`.
fn integer_len(s: &[TokenClass]) -> usize {
    s.iter().take_while(|c| is_digit(c)).count()
}

/// Matches `( int , int )` at the start of `s`, returning its length.
fn point_len(s: &[TokenClass]) -> Option<usize> {
    let mut i = 0;
    let expect = |i: &mut usize, c: TokenClass| -> Option<()> {
        (s.get(*i) == Some(&c)).then(|| *i += 1)
    };
    let int = |i: &mut usize| -> Option<()> {
        let n = integer_len(&s[*i..]);
        (n > 0).then(|| *i += n)
    };
    expect(&mut i, TokenClass::LParen)?;
    int(&mut i)?;
    expect(&mut i, TokenClass::Comma)?;
    int(&mut i)?;
    expect(&mut i, TokenClass::RParen)?;
    Some(i)
}

fn is_coordinate_pair(s: &[TokenClass]) -> bool {
    let Some(a) = point_len(s) else { return false };
    if s.get(a) != Some(&TokenClass::Comma) {
        return false;
    }
    point_len(&s[a + 1..]).is_some_and(|b| a + 1 + b == s.len())
}

/// `word ( arg {, arg} )` at the start of `s`.
fn predicate_at(s: &[TokenClass]) -> bool {
    if s.len() < 4 || s[0] != TokenClass::Word || s[1] != TokenClass::LParen {
        return false;
    }
    let mut i = 2;
    loop {
        let arg = if s.get(i) == Some(&TokenClass::Word) { 1 } else { integer_len(&s[i..]) };
        if arg == 0 {
            return false;
        }
        i += arg;
        match s.get(i) {
            Some(TokenClass::Comma) => i += 1,
            Some(TokenClass::RParen) => return true,
            _ => return false,
        }
    }
}
