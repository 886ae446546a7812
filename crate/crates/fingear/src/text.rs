//! Tokenization rules and small text utilities shared across the pipeline.
//!
//! Three tokenizer rules are registered by name:
//!
//! - `"word"` (default): lowercase, split on non-alphanumerics, keep decimal
//!   numbers such as `7.0` as single tokens.
//! - `"whitespace"`: split on Unicode whitespace, tokens kept verbatim.
//! - `"stem-en"`: the `word` rule followed by an English Snowball stemmer;
//!   used by the sparse BM25 scorer.

use rust_stemmers::{Algorithm, Stemmer};

use crate::error::{Error, Result};

/// A token plus its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte offset range [start, end) in the original string.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerRule {
    Word,
    Whitespace,
    StemmedEnglish,
}

impl TokenizerRule {
    pub fn name(&self) -> &'static str {
        match self {
            TokenizerRule::Word => "word",
            TokenizerRule::Whitespace => "whitespace",
            TokenizerRule::StemmedEnglish => "stem-en",
        }
    }
}

/// Look up a registered tokenizer rule by name.
pub fn tokenizer_by_name(name: &str) -> Result<TokenizerRule> {
    match name {
        "word" => Ok(TokenizerRule::Word),
        "whitespace" => Ok(TokenizerRule::Whitespace),
        "stem-en" => Ok(TokenizerRule::StemmedEnglish),
        other => Err(Error::UnknownTokenizer(other.to_string())),
    }
}

/// Tokenize `text` under `rule`. Deterministic: same input, same output.
pub fn tokenize(text: &str, rule: TokenizerRule) -> Vec<String> {
    tokenize_with_spans(text, rule)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

/// Tokenize keeping byte spans into the source, so chunking can slice the
/// original text back out (punctuation and casing preserved in chunk text).
pub fn tokenize_with_spans(text: &str, rule: TokenizerRule) -> Vec<Token> {
    match rule {
        TokenizerRule::Whitespace => whitespace_tokens(text),
        TokenizerRule::Word => word_tokens_spanned(text),
        TokenizerRule::StemmedEnglish => {
            let stemmer = Stemmer::create(Algorithm::English);
            word_tokens_spanned(text)
                .into_iter()
                .map(|mut t| {
                    t.text = stemmer.stem(&t.text).into_owned();
                    t
                })
                .collect()
        }
    }
}

/// Convenience: `word`-rule token strings.
pub fn word_tokens(text: &str) -> Vec<String> {
    tokenize(text, TokenizerRule::Word)
}

fn whitespace_tokens(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: text[s..i].to_string(),
                    start: s,
                    end: i,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: text[s..].to_string(),
            start: s,
            end: text.len(),
        });
    }
    out
}

fn word_tokens_spanned(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].1.is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = chars[i].0;
        let mut j = i;
        while j < chars.len() {
            let c = chars[j].1;
            if c.is_alphanumeric() {
                j += 1;
            } else if c == '.'
                && j > i
                && chars[j - 1].1.is_ascii_digit()
                && j + 1 < chars.len()
                && chars[j + 1].1.is_ascii_digit()
            {
                // Keep decimal points inside numbers: "7.0" stays one token.
                j += 1;
            } else {
                break;
            }
        }
        let end = if j < chars.len() { chars[j].0 } else { text.len() };
        out.push(Token {
            text: text[start..end].to_lowercase(),
            start,
            end,
        });
        i = j;
    }
    out
}

/// Split into paragraphs on blank lines.
pub fn paragraphs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for block in text.split("\n\n") {
        let trimmed = block.trim();
        if !trimmed.is_empty() {
            out.push(trimmed);
        }
    }
    out
}

/// Split into sentences on `.`, `!`, `?`. A `.` between two digits is part
/// of a decimal number and does not end a sentence.
pub fn sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let terminal = match c {
            '!' | '?' => true,
            '.' => {
                let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
                let next_digit = i + 1 < chars.len() && chars[i + 1].is_ascii_digit();
                !(prev_digit && next_digit)
            }
            _ => false,
        };
        if terminal {
            let s = cur.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

/// A normalized numeric value parsed from free text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsedNumber {
    pub value: f64,
}

/// Extract the first number in `text`, normalizing percent signs and scale
/// words: `7.0%` -> 0.07, `$1,200 million` -> 1.2e9. Tokens that merely
/// contain digits ("CET1") are not numbers.
pub fn extract_number(text: &str) -> Option<ParsedNumber> {
    let raw: Vec<&str> = text.split_whitespace().collect();
    for (i, tok) in raw.iter().enumerate() {
        let t = tok
            .trim_start_matches(['(', '$'])
            .trim_end_matches([')', ',', '.', ';', ':']);
        let (body, percent) = match t.strip_suffix('%') {
            Some(b) => (b, true),
            None => (t, false),
        };
        if body.is_empty() {
            continue;
        }
        let cleaned: String = body.chars().filter(|c| *c != ',').collect();
        if !cleaned.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            continue;
        }
        if !cleaned.chars().all(|c| c.is_ascii_digit() || c == '.') {
            continue;
        }
        if cleaned.matches('.').count() > 1 {
            continue;
        }
        let Ok(mut value) = cleaned.parse::<f64>() else {
            continue;
        };
        if percent {
            value /= 100.0;
        } else if let Some(next) = raw.get(i + 1) {
            let unit = next
                .trim_end_matches(['.', ',', ';', ':'])
                .to_ascii_lowercase();
            match unit.as_str() {
                "thousand" => value *= 1e3,
                "million" => value *= 1e6,
                "billion" => value *= 1e9,
                "%" => value /= 100.0,
                _ => {}
            }
        }
        return Some(ParsedNumber { value });
    }
    None
}

/// True when the text contains at least one standalone number.
pub fn contains_number(text: &str) -> bool {
    extract_number(text).is_some()
}

/// Small English stopword list used by the stub question generator to pick
/// content tokens.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "for", "from", "had", "has",
    "have", "in", "into", "is", "it", "its", "of", "on", "or", "our", "that", "the", "their",
    "these", "this", "to", "was", "we", "were", "which", "will", "with",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// FNV-1a over UTF-8 bytes; stable across platforms and runs, used wherever
/// the engine needs a deterministic hash (stub embeddings, derived seeds).
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_rule_keeps_tokens_verbatim() {
        assert_eq!(
            tokenize("net income rose", TokenizerRule::Whitespace),
            vec!["net", "income", "rose"]
        );
    }

    #[test]
    fn empty_input_yields_no_tokens() {
        assert!(tokenize("", TokenizerRule::Whitespace).is_empty());
        assert!(tokenize("", TokenizerRule::Word).is_empty());
    }

    #[test]
    fn word_rule_lowercases_and_keeps_decimals() {
        // Fixed rule, enumerated by hand: lowercase, punctuation stripped,
        // decimal survives as one token.
        assert_eq!(
            tokenize("CET1 ratio: 7.0%", TokenizerRule::Word),
            vec!["cet1", "ratio", "7.0"]
        );
    }

    #[test]
    fn word_rule_spans_slice_back_to_source() {
        let text = "Net income was $3.4 billion.";
        for tok in tokenize_with_spans(text, TokenizerRule::Word) {
            assert_eq!(text[tok.start..tok.end].to_lowercase(), tok.text);
        }
    }

    #[test]
    fn unknown_tokenizer_is_an_error() {
        assert!(matches!(
            tokenizer_by_name("bpe"),
            Err(Error::UnknownTokenizer(_))
        ));
    }

    #[test]
    fn stemmed_rule_stems_english() {
        let toks = tokenize("increasing revenues", TokenizerRule::StemmedEnglish);
        assert_eq!(toks, vec!["increas", "revenu"]);
    }

    #[test]
    fn sentences_do_not_split_inside_decimals() {
        let s = sentences("The CET1 ratio was 7.0% in 2008. Revenue grew.");
        assert_eq!(s.len(), 2);
        assert!(s[0].contains("7.0%"));
    }

    #[test]
    fn number_extraction_normalizes_percent_and_scale() {
        assert_eq!(extract_number("ratio was 7.0%").unwrap().value, 0.07);
        assert_eq!(extract_number("0.07").unwrap().value, 0.07);
        assert_eq!(
            extract_number("revenue of $1,200 million grew").unwrap().value,
            1.2e9
        );
        // "CET1" contains a digit but is not a number.
        assert!(extract_number("CET1 improved materially").is_none());
    }

    #[test]
    fn stopword_table_is_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
        assert!(is_stopword("the"));
        assert!(!is_stopword("revenue"));
    }

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(0, b"revenue"), fnv1a64(0, b"revenue"));
        assert_ne!(fnv1a64(0, b"revenue"), fnv1a64(1, b"revenue"));
    }
}
