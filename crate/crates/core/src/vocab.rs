//! Token vocabulary and the whitespace/longest-match tokenizer.
//!
//! A vocabulary file is plain text, one token per line; the line number
//! (starting at zero) is the token id.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The vocabulary shipped with the crate.
pub const CANONICAL_VOCAB: &str = include_str!("../vocab.txt");

/// Token string of the end-of-response marker.
pub const END_MARKER: &str = "<eos>";

/// Index of a token in a [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Block tags recognised by the response grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagKind {
    Think,
    Answer,
    Box,
    Crucial,
    Parse,
}

impl TagKind {
    pub const ALL: [TagKind; 5] = [
        TagKind::Think,
        TagKind::Answer,
        TagKind::Box,
        TagKind::Crucial,
        TagKind::Parse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TagKind::Think => "think",
            TagKind::Answer => "answer",
            TagKind::Box => "box",
            TagKind::Crucial => "crucial",
            TagKind::Parse => "parse",
        }
    }

    pub fn from_name(name: &str) -> Option<TagKind> {
        TagKind::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Position in [`TagKind::ALL`].
    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lexical class of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenClass {
    Open(TagKind),
    Close(TagKind),
    Digit(u8),
    Comma,
    LParen,
    RParen,
    Degree,
    Minus,
    Word,
    End,
}

impl TokenClass {
    fn of(s: &str) -> TokenClass {
        if s == END_MARKER {
            return TokenClass::End;
        }
        if let Some(inner) = s.strip_prefix("</").and_then(|r| r.strip_suffix('>')) {
            if let Some(tag) = TagKind::from_name(inner) {
                return TokenClass::Close(tag);
            }
        } else if let Some(inner) = s.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
            if let Some(tag) = TagKind::from_name(inner) {
                return TokenClass::Open(tag);
            }
        }
        match s {
            "," => TokenClass::Comma,
            "(" => TokenClass::LParen,
            ")" => TokenClass::RParen,
            "°" => TokenClass::Degree,
            "-" => TokenClass::Minus,
            _ => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_digit() => TokenClass::Digit(c as u8 - b'0'),
                    _ => TokenClass::Word,
                }
            }
        }
    }

    pub fn is_tag(self) -> bool {
        matches!(self, TokenClass::Open(_) | TokenClass::Close(_))
    }

    /// Everything that may appear as block content: words, digits, punctuation.
    pub fn is_content(self) -> bool {
        !self.is_tag() && self != TokenClass::End
    }

    /// Digit, minus or degree sign: the alphabet of a numeric answer.
    pub fn is_numeric(self) -> bool {
        matches!(self, TokenClass::Digit(_) | TokenClass::Minus | TokenClass::Degree)
    }
}

/// An ordered list of distinct token strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    classes: Vec<TokenClass>,
    index: HashMap<String, TokenId>,
    max_token_chars: usize,
}

impl Vocab {
    pub fn new<I, S>(tokens: I) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocab(format!("token {i} is empty or contains whitespace")));
            }
            if index.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(Error::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        let classes: Vec<TokenClass> = tokens.iter().map(|t| TokenClass::of(t)).collect();
        for tag in TagKind::ALL {
            let opens = classes.contains(&TokenClass::Open(tag));
            let closes = classes.contains(&TokenClass::Close(tag));
            if opens != closes {
                return Err(Error::InvalidVocab(format!("tag <{tag}> lacks its matching pair")));
            }
        }
        let max_token_chars = tokens.iter().map(|t| t.chars().count()).max().unwrap_or(0);
        Ok(Vocab { tokens, classes, index, max_token_chars })
    }

    /// The vocabulary compiled into the crate from `vocab.txt`.
    pub fn canonical() -> Vocab {
        Vocab::parse(CANONICAL_VOCAB).expect("shipped vocab.txt is valid")
    }

    /// Parse the one-token-per-line format. Blank trailing lines are ignored.
    pub fn parse(text: &str) -> Result<Vocab> {
        Vocab::new(text.lines().map(str::trim_end).filter(|l| !l.is_empty()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Vocab> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::parse(&text)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Like [`Vocab::id`] but for tokens the caller requires to exist.
    pub fn expect_id(&self, token: &str) -> Result<TokenId> {
        self.id(token).ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn class(&self, id: TokenId) -> TokenClass {
        self.classes[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as u32).map(TokenId)
    }

    pub fn open_tag(&self, tag: TagKind) -> Option<TokenId> {
        self.id(&format!("<{tag}>"))
    }

    pub fn close_tag(&self, tag: TagKind) -> Option<TokenId> {
        self.id(&format!("</{tag}>"))
    }

    pub fn digit(&self, d: u8) -> Option<TokenId> {
        self.id(&d.to_string())
    }

    pub fn end_marker(&self) -> Option<TokenId> {
        self.id(END_MARKER)
    }

    /// Whitespace-separated, greedy longest-match tokenization.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut rest = chunk;
            while !rest.is_empty() {
                let id = self
                    .longest_prefix(rest)
                    .ok_or_else(|| Error::UnknownToken(rest.to_string()))?;
                out.push(id);
                rest = &rest[self.token(id).len()..];
            }
        }
        Ok(out)
    }

    fn longest_prefix(&self, s: &str) -> Option<TokenId> {
        let mut ends: Vec<usize> = s.char_indices().map(|(i, c)| i + c.len_utf8()).collect();
        ends.truncate(self.max_token_chars);
        ends.iter().rev().find_map(|&end| self.id(&s[..end]))
    }

    /// Tokens joined by single spaces.
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(t));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_vocab_shape() {
        let v = Vocab::canonical();
        let tags = v.ids().filter(|&t| v.class(t).is_tag()).count();
        assert_eq!(tags, 10);
        let digits = v.ids().filter(|&t| matches!(v.class(t), TokenClass::Digit(_))).count();
        assert_eq!(digits, 10);
        let words = v.ids().filter(|&t| v.class(t) == TokenClass::Word).count();
        assert!((20..=28).contains(&words), "{words} words");
        assert!(v.end_marker().is_some());
        for tag in TagKind::ALL {
            assert!(v.open_tag(tag).is_some() && v.close_tag(tag).is_some());
        }
    }

    #[test]
    fn tokenize_examples() {
        let v = Vocab::canonical();
        let toks = v.tokenize("<think> 4 0 </think>").unwrap();
        let strs: Vec<&str> = toks.iter().map(|&t| v.token(t)).collect();
        assert_eq!(strs, ["<think>", "4", "0", "</think>"]);
        assert!(v.tokenize("").unwrap().is_empty());
        assert!(matches!(v.tokenize("<zzz>"), Err(Error::UnknownToken(_))));
    }

    #[test]
    fn tokenize_splits_glued_text() {
        let v = Vocab::canonical();
        let toks = v.tokenize("(5,79)").unwrap();
        assert_eq!(v.detokenize(&toks), "( 5 , 7 9 )");
        let toks = v.tokenize("40°").unwrap();
        assert_eq!(v.detokenize(&toks), "4 0 °");
    }

    #[test]
    fn rejects_bad_vocabularies() {
        assert!(Vocab::new(["a", "a"]).is_err());
        assert!(Vocab::new(["a", ""]).is_err());
        assert!(Vocab::new(["a b"]).is_err());
        assert!(Vocab::new(["<think>", "x"]).is_err());
        assert!(Vocab::new(["<think>", "</think>"]).is_ok());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::canonical();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, v.to_file_string()).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }

    proptest! {
        #[test]
        fn detokenize_then_tokenize_is_identity(ids in proptest::collection::vec(0u32..51, 0..40)) {
            let v = Vocab::canonical();
            let toks: Vec<TokenId> = ids.into_iter().map(TokenId).collect();
            let text = v.detokenize(&toks);
            prop_assert_eq!(v.tokenize(&text).unwrap(), toks);
        }
    }
}
