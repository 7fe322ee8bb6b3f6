//! Email text normalization and tokenization.
//!
//! `normalize` replaces dates, dollar amounts, email addresses and phone
//! numbers with fixed phrases, expands contractions from the bundled table
//! (`data/contractions.tsv`), lowercases and collapses whitespace. The
//! replacement phrases never re-match a pattern, and the whole rewrite is
//! iterated to a fixpoint, so `normalize` is idempotent.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_SEQ_LEN: usize = 100;

pub const DATE_PHRASE: &str = "this date";
pub const AMOUNT_PHRASE: &str = "this amount";
pub const EMAIL_PHRASE: &str = "this email address";
pub const PHONE_PHRASE: &str = "this phone number";

const CONTRACTIONS_TSV: &str = include_str!("../data/contractions.tsv");

const EMAIL_PATTERN: &str = r"[a-z0-9._%+\-]+@[a-z0-9.\-]+\.[a-z]{2,}";
const PHONE_PATTERN: &str =
    r"(?:\+?\b1[\s.\-]?)?(?:\(\d{3}\)\s?|\b\d{3}[\s.\-]?)\d{3}[\s.\-]?\d{4}\b";
const MONTH_DATE_PATTERN: &str = r"\b(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)\.?\s+\d{1,2}(?:st|nd|rd|th)?,?\s+\d{4}\b";
const NUMERIC_DATE_PATTERN: &str = r"\b\d{1,2}/\d{1,2}/\d{4}\b|\b\d{1,2}-\d{1,2}-\d{4}\b";
const AMOUNT_PATTERN: &str = r"\$\s?\d+(?:,\d{3})*(?:\.\d+)?";

const MAX_PASSES: usize = 32;

/// Contraction expansion table, one `contraction<TAB>expansion` rule per line.
#[derive(Clone, Debug)]
pub struct ContractionTable {
    pub version: u32,
    rules: Vec<(String, String)>,
}

impl ContractionTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version") {
                    version = Some(v.trim().parse::<u32>().map_err(|_| Error::Parse {
                        path: "contractions".into(),
                        line: i + 1,
                        msg: format!("bad version line {line:?}"),
                    })?);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(from), Some(to), None) if !from.is_empty() && !to.is_empty() => {
                    rules.push((fold_apostrophes(&from.to_lowercase()), to.to_lowercase()));
                }
                _ => {
                    return Err(Error::Parse {
                        path: "contractions".into(),
                        line: i + 1,
                        msg: "expected `contraction<TAB>expansion`".into(),
                    })
                }
            }
        }
        let version = version.ok_or_else(|| Error::Parse {
            path: "contractions".into(),
            line: 0,
            msg: "missing `# version` line".into(),
        })?;
        Ok(Self { version, rules })
    }

    pub fn builtin() -> &'static ContractionTable {
        &NORMALIZER.contractions
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub struct Normalizer {
    contractions: ContractionTable,
    contraction_map: HashMap<String, String>,
    contraction_re: Regex,
    email: Regex,
    phone: Regex,
    month_date: Regex,
    numeric_date: Regex,
    amount: Regex,
    whitespace: Regex,
}

static NORMALIZER: LazyLock<Normalizer> = LazyLock::new(|| {
    let table = ContractionTable::parse(CONTRACTIONS_TSV).expect("bundled contraction table");
    Normalizer::new(table).expect("bundled patterns compile")
});

impl Normalizer {
    pub fn new(contractions: ContractionTable) -> Result<Self> {
        let compile = |p: &str| Regex::new(p).map_err(|e| Error::Argument(e.to_string()));
        let mut keys: Vec<&str> = contractions.rules.iter().map(|(k, _)| k.as_str()).collect();
        // longest first so alternation never stops at a prefix
        keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
        let alternation = keys
            .iter()
            .map(|k| regex::escape(k))
            .collect::<Vec<_>>()
            .join("|");
        let contraction_re = if alternation.is_empty() {
            compile(r"[^\s\S]")?
        } else {
            compile(&format!(r"\b(?:{alternation})\b"))?
        };
        let contraction_map = contractions.rules.iter().cloned().collect();
        Ok(Self {
            contraction_map,
            contraction_re,
            email: compile(EMAIL_PATTERN)?,
            phone: compile(PHONE_PATTERN)?,
            month_date: compile(MONTH_DATE_PATTERN)?,
            numeric_date: compile(NUMERIC_DATE_PATTERN)?,
            amount: compile(AMOUNT_PATTERN)?,
            whitespace: compile(r"\s+")?,
            contractions,
        })
    }

    pub fn builtin() -> &'static Normalizer {
        &NORMALIZER
    }

    pub fn normalize(&self, raw: &str) -> String {
        let mut text = fold_apostrophes(&raw.to_lowercase());
        for _ in 0..MAX_PASSES {
            let next = self.pass(&text);
            if next == text {
                break;
            }
            text = next;
        }
        text
    }

    fn pass(&self, text: &str) -> String {
        let text = self.email.replace_all(text, EMAIL_PHRASE);
        let text = self.month_date.replace_all(&text, DATE_PHRASE);
        let text = self.numeric_date.replace_all(&text, DATE_PHRASE);
        let text = self.amount.replace_all(&text, AMOUNT_PHRASE);
        let text = self.phone.replace_all(&text, PHONE_PHRASE);
        let text = self.contraction_re.replace_all(&text, |c: &Captures| {
            self.contraction_map[c.get(0).unwrap().as_str()].clone()
        });
        self.whitespace.replace_all(text.trim(), " ").into_owned()
    }

    /// True if `text` still contains something the email or phone detector
    /// would flag.
    pub fn contains_pii(&self, text: &str) -> bool {
        self.email.is_match(text) || self.phone.is_match(text)
    }
}

fn fold_apostrophes(s: &str) -> String {
    s.replace(['\u{2019}', '\u{2018}', '\u{02bc}'], "'")
}

pub fn normalize(raw: &str) -> String {
    NORMALIZER.normalize(raw)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    /// Token count before truncation.
    pub original_len: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_edge_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | '!' | '?' | ';' | ':' | '"' | '(' | ')' | '[' | ']' | '{' | '}' | '<' | '>'
            | '\'' | '-'
    )
}

/// Whitespace split with edge punctuation stripped; keeps the first
/// `max_seq_len` tokens.
pub fn tokenize(normalized: &str, max_seq_len: usize) -> Result<TokenSequence> {
    if max_seq_len == 0 {
        return Err(Error::Argument("max_seq_len must be >= 1".into()));
    }
    let mut tokens: Vec<String> = normalized
        .split_whitespace()
        .map(|w| w.trim_matches(is_edge_punct).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    let original_len = tokens.len();
    tokens.truncate(max_seq_len);
    Ok(TokenSequence {
        tokens,
        original_len,
    })
}

pub fn preprocess(raw: &str, max_seq_len: usize) -> Result<TokenSequence> {
    tokenize(&normalize(raw), max_seq_len)
}

/// Replaces every token by the first 16 hex digits of its SHA-256 digest.
/// Hashed sequences cannot be embedded with a word-vector table.
pub fn hash_tokens(seq: &TokenSequence) -> TokenSequence {
    TokenSequence {
        tokens: seq
            .tokens
            .iter()
            .map(|t| {
                let digest = Sha256::digest(t.as_bytes());
                hex::encode(&digest[..8])
            })
            .collect(),
        original_len: seq.original_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_loads() {
        let t = ContractionTable::builtin();
        assert_eq!(t.version, 1);
        assert!(t.len() >= 40);
    }

    #[test]
    fn table_parse_errors() {
        assert!(ContractionTable::parse("# version\t1\nfoo\n").is_err());
        assert!(ContractionTable::parse("i'd\ti would\n").is_err());
        let t = ContractionTable::parse("# version\t3\nI'D\tI Would\n").unwrap();
        assert_eq!(t.version, 3);
        assert_eq!(t.rules()[0], ("i'd".to_string(), "i would".to_string()));
    }

    #[test]
    fn dates() {
        assert_eq!(normalize("April 29, 2017"), "this date");
        assert_eq!(normalize("paid on 04/29/2017."), "paid on this date.");
        assert_eq!(normalize("due 4-29-2017"), "due this date");
        assert_eq!(normalize("Sept. 3rd, 2019 ok"), "this date ok");
    }

    #[test]
    fn amounts() {
        assert_eq!(normalize("I owe $1,200.50 now"), "i owe this amount now");
        assert_eq!(normalize("$5"), "this amount");
        assert_eq!(normalize("$ 30000"), "this amount");
    }

    #[test]
    fn emails_and_phones() {
        assert_eq!(normalize("john.doe@gmail.com"), "this email address");
        assert_eq!(normalize("call (415) 555-0134"), "call this phone number");
        assert_eq!(normalize("call 415.555.0134!"), "call this phone number!");
        assert_eq!(normalize("+1 415-555-0134"), "this phone number");
        assert_eq!(normalize("4155550134"), "this phone number");
        // eleven bare digits is not a phone number
        assert_eq!(normalize("41555501345"), "41555501345");
    }

    #[test]
    fn chained_emails_are_fully_removed() {
        let out = normalize("a@b.com@c.com");
        assert!(!Normalizer::builtin().contains_pii(&out), "{out}");
        assert_eq!(normalize(&out), out);
    }

    #[test]
    fn contractions_curly_and_straight() {
        assert_eq!(normalize("I\u{2019}d like a loan"), "i would like a loan");
        assert_eq!(normalize("I'D like a loan"), "i would like a loan");
        assert_eq!(normalize("we can't, won't"), "we cannot, will not");
        assert_eq!(normalize("the seller's plan"), "the seller's plan");
    }

    #[test]
    fn tokenize_examples() {
        let t = tokenize("i would like a loan", 100).unwrap();
        assert_eq!(t.tokens, ["i", "would", "like", "a", "loan"]);
        assert_eq!(t.original_len, 5);
        let t = tokenize("", 100).unwrap();
        assert!(t.tokens.is_empty());
        assert_eq!(t.original_len, 0);
        let long = vec!["w"; 150].join(" ");
        let t = tokenize(&long, 100).unwrap();
        assert_eq!(t.len(), 100);
        assert_eq!(t.original_len, 150);
        assert!(tokenize("x", 0).is_err());
    }

    #[test]
    fn tokenize_punctuation() {
        let t = tokenize("hello, can i re-apply? it's \"urgent\"!! ...", 10).unwrap();
        assert_eq!(t.tokens, ["hello", "can", "i", "re-apply", "it's", "urgent"]);
    }

    #[test]
    fn hashing_is_stable_hex() {
        let t = tokenize("loan loan offer", 10).unwrap();
        let h = hash_tokens(&t);
        assert_eq!(h.tokens[0], h.tokens[1]);
        assert_ne!(h.tokens[0], h.tokens[2]);
        assert_eq!(h.tokens[0].len(), 16);
        assert!(h.tokens[0].chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(hash_tokens(&t), h);
    }
}
