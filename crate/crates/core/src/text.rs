//! Tweet-aware tokenization, normalization and length trimming.
//!
//! The tokenizer follows a fixed grammar, tried left to right at every
//! position:
//!
//! 1. placeholders already produced by normalization (`<url>`, `<user>`, `<hashtag>`)
//! 2. URLs (`http://…`, `https://…`, `www.…`), trailing punctuation excluded
//! 3. `@mentions` and `#hashtags`
//! 4. western emoticons from [`EMOTICONS`]
//! 5. emoji (one token per pictograph, modifiers and variation selectors attached)
//! 6. numbers with inner separators (`10.5`, `12:30`, `1,000`)
//! 7. standalone clitics and clipped slang (`'ll`, `'bout`, `n't`)
//! 8. words, with trailing clitics split off (`we'll` → `we`, `'ll`; `don't` → `do`, `n't`)
//! 9. ellipses and runs of `!`/`?`
//! 10. any other single non-space character
//!
//! Whitespace separates tokens and is never part of one.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
pub const HASHTAG_TOKEN: &str = "<hashtag>";
pub const PLACEHOLDERS: [&str; 3] = [URL_TOKEN, USER_TOKEN, HASHTAG_TOKEN];

pub const DEFAULT_MAX_QUESTION_LEN: usize = 60;
pub const DEFAULT_MAX_ANSWER_LEN: usize = 70;

/// Emoticons recognized as single tokens.
pub const EMOTICONS: &[&str] = &[
    ">:(", ">:-(", ":'(", ":'-(", ":-)", ":)", ":-(", ":(", ";-)", ";)", ":-D", ":D", ":-P",
    ":P", ":-p", ":p", ":-/", ":/", ":-|", ":|", ":-O", ":O", ":-o", ":o", ":*", ":-*", "=)",
    "=(", "=D", "<3", "</3", "^_^", "^^", "-_-", "o_O", "O_o",
];

const CLITICS: [&str; 6] = ["ll", "d", "re", "ve", "m", "s"];
const SLANG: [&str; 5] = ["bout", "til", "cause", "em", "round"];

static TOKEN_RE: LazyLock<Regex> = LazyLock::new(|| {
    let mut emoticons: Vec<&str> = EMOTICONS.to_vec();
    emoticons.sort_by_key(|e| std::cmp::Reverse(e.len()));
    let emoticons = emoticons
        .iter()
        .map(|e| {
            let escaped = regex::escape(e);
            // letter-final emoticons must not swallow the start of a word
            if e.chars().last().is_some_and(|c| c.is_alphanumeric()) {
                format!(r"{escaped}\b")
            } else {
                escaped
            }
        })
        .collect::<Vec<_>>()
        .join("|");
    let emoji = r"[\x{1F1E6}-\x{1F1FF}\x{1F300}-\x{1FAFF}\x{2600}-\x{27BF}\x{2B00}-\x{2BFF}][\x{FE0F}\x{1F3FB}-\x{1F3FF}]*";
    let pattern = [
        r"<(?:url|user|hashtag)>".to_string(),
        r#"(?i:https?://|www\.)[^\s]*[^\s.,!?;:)\]"'’]"#.to_string(),
        r"[@#]\w+".to_string(),
        emoticons,
        emoji.to_string(),
        r"\d+(?:[.,:]\d+)+".to_string(),
        format!(r"(?i:['’](?:{}|{})\b|n['’]t\b)", CLITICS.join("|"), SLANG.join("|")),
        r"\w+(?:['’]\w+)*".to_string(),
        r"\.{2,}|[!?]+".to_string(),
        r"[^\w\s]".to_string(),
    ]
    .join("|");
    Regex::new(&pattern).expect("token grammar compiles")
});

/// Ordered tokens; none empty, none containing whitespace.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::Data(format!("invalid token {bad:?}")));
        }
        Ok(Self(tokens))
    }

    /// Splits on whitespace, which always yields valid tokens.
    pub fn from_whitespace(text: &str) -> Self {
        Self(text.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Keeps the first `max_len` tokens.
    ///
    /// # Panics
    /// If `max_len` is zero.
    pub fn trim(&self, max_len: usize) -> Self {
        assert!(max_len >= 1, "trim length must be at least 1");
        Self(self.0.iter().take(max_len).cloned().collect())
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a TokenSequence>) -> Self {
        Self(parts.into_iter().flat_map(|p| p.0.iter().cloned()).collect())
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

fn split_clitic(word: &str) -> Vec<String> {
    let Some(pos) = word.rfind(['\'', '’']) else {
        return vec![word.to_string()];
    };
    let tail = word[pos..].trim_start_matches(['\'', '’']).to_lowercase();
    let head = &word[..pos];
    if tail == "t" && head.len() > 1 && head.ends_with(['n', 'N']) {
        let cut = pos - 1;
        return vec![word[..cut].to_string(), word[cut..].to_string()];
    }
    if pos > 0 && CLITICS.contains(&tail.as_str()) {
        return vec![head.to_string(), word[pos..].to_string()];
    }
    vec![word.to_string()]
}

pub fn tokenize(text: &str) -> TokenSequence {
    let mut out = Vec::new();
    for m in TOKEN_RE.find_iter(text) {
        let tok = m.as_str();
        if tok.contains(['\'', '’']) && tok.chars().next().is_some_and(char::is_alphanumeric) {
            out.extend(split_clitic(tok));
        } else {
            out.push(tok.to_string());
        }
    }
    TokenSequence(out)
}

/// Replacement tables applied during [`normalize`].
///
/// Keys are matched case-insensitively after folding `’` to `'`. A value may
/// expand to several tokens; no value token may itself be a key, which keeps
/// normalization idempotent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormalizationRules {
    replacements: BTreeMap<String, Vec<String>>,
}

impl Default for NormalizationRules {
    fn default() -> Self {
        let pairs = [
            // contractions
            ("'ll", "will"),
            ("'d", "would"),
            ("'re", "are"),
            ("'ve", "have"),
            ("'m", "am"),
            ("n't", "not"),
            // clipped slang
            ("'bout", "about"),
            ("'til", "until"),
            ("'cause", "because"),
            ("'em", "them"),
            ("'round", "around"),
        ];
        Self::from_pairs(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())))
            .expect("default rules are idempotent")
    }
}

fn fold(token: &str) -> String {
    token.to_lowercase().replace('’', "'")
}

impl NormalizationRules {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut rules = Self {
            replacements: BTreeMap::new(),
        };
        rules.extend(pairs)?;
        Ok(rules)
    }

    /// Adds or overrides entries, rejecting chains such as `a→b, b→c`.
    pub fn extend(&mut self, pairs: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (from, to) in pairs {
            let key = fold(from.trim());
            let value: Vec<String> = to.split_whitespace().map(fold).collect();
            if key.is_empty() || key.contains(char::is_whitespace) || value.is_empty() {
                return Err(Error::Config(format!("bad normalization rule {from:?} -> {to:?}")));
            }
            self.replacements.insert(key, value);
        }
        for (key, value) in &self.replacements {
            if let Some(v) = value.iter().find(|v| self.replacements.contains_key(*v)) {
                return Err(Error::Config(format!(
                    "normalization rule {key:?} produces {v:?}, which is itself rewritten"
                )));
            }
        }
        Ok(())
    }

    /// Reads `from<TAB>to` lines; blank lines and `#` comments are skipped.
    pub fn parse_overrides(text: &str) -> Result<Vec<(String, String)>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, line)| {
                line.split_once('\t')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| Error::Config(format!("override line {}: missing tab", i + 1)))
            })
            .collect()
    }

    pub fn with_override_file(path: &Path) -> Result<Self> {
        let mut rules = Self::default();
        rules.extend(Self::parse_overrides(&std::fs::read_to_string(path)?)?)?;
        Ok(rules)
    }

    pub fn get(&self, token: &str) -> Option<&[String]> {
        self.replacements.get(&fold(token)).map(Vec::as_slice)
    }
}

fn is_url(token: &str) -> bool {
    let lower = token.to_lowercase();
    lower.starts_with("http") || lower.starts_with("www.")
}

/// Maps URLs, mentions and hashtags to placeholders, expands contractions
/// and slang, and lowercases everything else.
pub fn normalize(tokens: &TokenSequence, rules: &NormalizationRules) -> TokenSequence {
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens.iter() {
        if PLACEHOLDERS.contains(&tok) {
            out.push(tok.to_string());
        } else if is_url(tok) {
            out.push(URL_TOKEN.to_string());
        } else if tok.starts_with('@') {
            out.push(USER_TOKEN.to_string());
        } else if tok.starts_with('#') {
            out.push(HASHTAG_TOKEN.to_string());
        } else if let Some(expansion) = rules.get(tok) {
            out.extend(expansion.iter().cloned());
        } else {
            out.push(tok.to_lowercase());
        }
    }
    TokenSequence(out)
}

/// Tokenize then normalize.
pub fn preprocess(text: &str, rules: &NormalizationRules) -> TokenSequence {
    normalize(&tokenize(text), rules)
}
