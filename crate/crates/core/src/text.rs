//! Tokenization and surface normalization shared by the parser, the schema
//! vocabulary, the relatedness oracle and the product text index.
//!
//! [`normalize`] turns raw utterance text into the token stream every other
//! component works on: lowercase words, clause separators (`,` and `;`),
//! digit tokens for spelled-out numbers and a [`CURRENCY`] marker for
//! "$", "bucks", "dollars" and friends.

/// Token emitted for any currency symbol or currency word.
pub const CURRENCY: &str = "CUR";

/// Clause separator tokens preserved by [`normalize`].
pub const SEPARATORS: [&str; 2] = [",", ";"];

const CURRENCY_WORDS: [&str; 8] = [
    "$", "bucks", "buck", "dollars", "dollar", "usd", "cur", "CUR",
];

/// Function and filler words that never carry a preference on their own.
///
/// Used to trim residual spans and to pick content tokens for text matching.
/// Versioned together with the cue rules in [`crate::clu`].
pub const STOP_WORDS: &[&str] = &[
    "a",
    "about",
    "actually",
    "again",
    "all",
    "almost",
    "alright",
    "am",
    "an",
    "any",
    "anything",
    "are",
    "as",
    "at",
    "be",
    "buy",
    "can",
    "could",
    "do",
    "does",
    "even",
    "find",
    "for",
    "from",
    "get",
    "give",
    "got",
    "have",
    "has",
    "hello",
    "hey",
    "hi",
    "hm",
    "hmm",
    "hmmm",
    "hmmmm",
    "how",
    "i",
    "in",
    "is",
    "it",
    "item",
    "items",
    "kind",
    "let",
    "like",
    "look",
    "looking",
    "maybe",
    "make",
    "me",
    "mind",
    "my",
    "need",
    "now",
    "of",
    "oh",
    "ok",
    "okay",
    "on",
    "one",
    "ones",
    "pair",
    "pairs",
    "please",
    "prefer",
    "products",
    "really",
    "see",
    "should",
    "show",
    "so",
    "some",
    "something",
    "sure",
    "thank",
    "thanks",
    "that",
    "the",
    "them",
    "then",
    "there",
    "these",
    "they",
    "thing",
    "things",
    "this",
    "those",
    "to",
    "uh",
    "um",
    "us",
    "want",
    "was",
    "we",
    "well",
    "what",
    "which",
    "will",
    "with",
    "would",
    "you",
];

pub fn is_stop_word(token: &str) -> bool {
    STOP_WORDS.contains(&token)
}

pub fn is_separator(token: &str) -> bool {
    SEPARATORS.contains(&token)
}

/// True for digit tokens such as `9`, `100` or `49.99`.
pub fn is_number(token: &str) -> bool {
    parse_number(token).is_some()
}

pub fn parse_number(token: &str) -> Option<f64> {
    let first = token.chars().next()?;
    if !first.is_ascii_digit() {
        return None;
    }
    if !token.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return None;
    }
    token.parse::<f64>().ok()
}

/// Tokenizes and normalizes raw text.
///
/// Lowercases, splits punctuation, expands contractions, folds number words
/// below one million into digits and folds currency mentions into
/// [`CURRENCY`] placed after the amount (`"$50"` and `"fifty bucks"` both
/// become `["50", "CUR"]`).
pub fn normalize(text: &str) -> Vec<String> {
    let raw = split_raw(text);
    let mut expanded = Vec::with_capacity(raw.len());
    for token in raw {
        expand_contraction(&token, &mut expanded);
    }
    let folded = fold_numbers(expanded);
    fold_currency(folded)
}

fn split_raw(text: &str) -> Vec<String> {
    let lowered: String = text
        .chars()
        .map(|c| match c {
            '\u{2019}' | '\u{2018}' | '`' | '\u{00b4}' => '\'',
            '\u{2026}' => ' ',
            other => other,
        })
        .flat_map(char::to_lowercase)
        .collect();
    let chars: Vec<char> = lowered.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        let trimmed = current.trim_matches('\'');
        if !trimmed.is_empty() {
            tokens.push(trimmed.to_string());
        }
        current.clear();
    };
    for (i, &c) in chars.iter().enumerate() {
        let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
        let next_digit = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        match c {
            c if c.is_alphanumeric() => current.push(c),
            '\'' => current.push(c),
            '.' if prev_digit && next_digit => current.push(c),
            // thousands separator inside a number: 1,000
            ',' if prev_digit
                && chars.len() > i + 3
                && chars[i + 1..i + 4].iter().all(|d| d.is_ascii_digit())
                && !chars.get(i + 4).is_some_and(|d| d.is_ascii_digit()) => {}
            ',' | ';' => {
                flush(&mut current, &mut tokens);
                tokens.push(c.to_string());
            }
            '$' => {
                flush(&mut current, &mut tokens);
                tokens.push("$".to_string());
            }
            _ => flush(&mut current, &mut tokens),
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn expand_contraction(token: &str, out: &mut Vec<String>) {
    let fixed: Option<&[&str]> = match token {
        "won't" => Some(&["will", "not"]),
        "can't" | "cannot" => Some(&["can", "not"]),
        "shan't" => Some(&["shall", "not"]),
        "ain't" => Some(&["is", "not"]),
        "let's" => Some(&["let", "us"]),
        "it's" => Some(&["it", "is"]),
        "that's" => Some(&["that", "is"]),
        "what's" => Some(&["what", "is"]),
        "there's" => Some(&["there", "is"]),
        "here's" => Some(&["here", "is"]),
        "he's" => Some(&["he", "is"]),
        "she's" => Some(&["she", "is"]),
        "who's" => Some(&["who", "is"]),
        "i'm" => Some(&["i", "am"]),
        _ => None,
    };
    if let Some(parts) = fixed {
        out.extend(parts.iter().map(|p| p.to_string()));
        return;
    }
    if let Some(stem) = token.strip_suffix("n't") {
        out.push(stem.to_string());
        out.push("not".to_string());
        return;
    }
    for (suffix, word) in [
        ("'re", "are"),
        ("'ll", "will"),
        ("'ve", "have"),
        ("'d", "would"),
    ] {
        if let Some(stem) = token.strip_suffix(suffix) {
            if !stem.is_empty() {
                out.push(stem.to_string());
                out.push(word.to_string());
                return;
            }
        }
    }
    out.push(token.to_string());
}

fn unit_value(word: &str) -> Option<u64> {
    let v = match word {
        "zero" => 0,
        "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        "eleven" => 11,
        "twelve" => 12,
        "thirteen" => 13,
        "fourteen" => 14,
        "fifteen" => 15,
        "sixteen" => 16,
        "seventeen" => 17,
        "eighteen" => 18,
        "nineteen" => 19,
        _ => return None,
    };
    Some(v)
}

fn tens_value(word: &str) -> Option<u64> {
    let v = match word {
        "twenty" => 20,
        "thirty" => 30,
        "forty" => 40,
        "fifty" => 50,
        "sixty" => 60,
        "seventy" => 70,
        "eighty" => 80,
        "ninety" => 90,
        _ => return None,
    };
    Some(v)
}

/// Words after which a lone "one" is read as the number 1.
const NUMERIC_CONTEXT: [&str; 11] = [
    "than", "under", "over", "below", "above", "size", "least", "most", "between", "to", "and",
];

#[derive(Clone, Copy, PartialEq)]
enum NumState {
    Start,
    AfterUnit,
    AfterTens,
    AfterHundred,
    AfterThousand,
}

/// Parses a spelled-out number starting at `start`; returns (value, tokens consumed).
fn read_number_words(tokens: &[String], start: usize) -> Option<(u64, usize)> {
    let mut i = start;
    let mut total = 0u64;
    let mut current = 0u64;
    let mut state = NumState::Start;
    let mut consumed_any = false;
    let mut last_good: Option<(u64, usize)> = None;
    while i < tokens.len() {
        let w = tokens[i].as_str();
        let next_is_scale = tokens
            .get(i + 1)
            .is_some_and(|n| n == "hundred" || n == "thousand");
        if w == "a" && state == NumState::Start && next_is_scale && !consumed_any {
            current = 1;
            state = NumState::AfterUnit;
            i += 1;
            continue;
        }
        if w == "and" && matches!(state, NumState::AfterHundred | NumState::AfterThousand) {
            let next_ok = tokens
                .get(i + 1)
                .is_some_and(|n| unit_value(n).is_some() || tens_value(n).is_some());
            if next_ok {
                i += 1;
                continue;
            }
            break;
        }
        if let Some(v) = tens_value(w) {
            if !matches!(
                state,
                NumState::Start | NumState::AfterHundred | NumState::AfterThousand
            ) {
                break;
            }
            current += v;
            state = NumState::AfterTens;
        } else if let Some(v) = unit_value(w) {
            let ok = match state {
                NumState::Start | NumState::AfterHundred | NumState::AfterThousand => true,
                NumState::AfterTens => v < 10 && current.is_multiple_of(10),
                NumState::AfterUnit => false,
            };
            if !ok {
                break;
            }
            current += v;
            state = NumState::AfterUnit;
        } else if w == "hundred" {
            if !matches!(state, NumState::AfterUnit | NumState::AfterTens)
                || current == 0
                || current >= 100
            {
                break;
            }
            current *= 100;
            state = NumState::AfterHundred;
        } else if w == "thousand" {
            if state == NumState::Start || state == NumState::AfterThousand || total > 0 {
                break;
            }
            total = current.max(1) * 1000;
            current = 0;
            state = NumState::AfterThousand;
        } else {
            break;
        }
        consumed_any = true;
        i += 1;
        last_good = Some((total + current, i - start));
    }
    last_good.filter(|(v, _)| *v < 1_000_000)
}

fn fold_numbers(tokens: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if let Some((value, used)) = read_number_words(&tokens, i) {
            let lone_one = used == 1 && tokens[i] == "one";
            let keep_word = lone_one && {
                let prev_numeric = out
                    .last()
                    .is_some_and(|p| NUMERIC_CONTEXT.contains(&p.as_str()));
                let next_currency = tokens
                    .get(i + 1)
                    .is_some_and(|n| CURRENCY_WORDS.contains(&n.as_str()));
                !(prev_numeric || next_currency)
            };
            if !keep_word {
                out.push(value.to_string());
                i += used;
                continue;
            }
        }
        out.push(tokens[i].clone());
        i += 1;
    }
    out
}

fn fold_currency(tokens: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i].as_str();
        if t == "$" {
            // "$50" -> 50 CUR
            if let Some(next) = tokens.get(i + 1).filter(|n| is_number(n)) {
                out.push(next.clone());
                out.push(CURRENCY.to_string());
                i += 2;
                continue;
            }
            out.push(CURRENCY.to_string());
        } else if CURRENCY_WORDS.contains(&t) {
            out.push(CURRENCY.to_string());
        } else {
            out.push(tokens[i].clone());
        }
        i += 1;
    }
    out
}

/// Normalizes an attribute phrase for lexicon lookup: lowercase, hyphens as
/// spaces, and a trailing plural "s" dropped from tokens of four or more
/// characters.
pub fn normalize_phrase(phrase: &str) -> String {
    normalize(phrase)
        .iter()
        .filter(|t| !is_separator(t))
        .map(|t| strip_plural(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Same normalization as [`normalize_phrase`] applied to already-normalized tokens.
pub fn phrase_from_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(|t| strip_plural(t.as_ref()))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn strip_plural(token: &str) -> String {
    if token.chars().count() >= 4 && token.ends_with('s') && !token.ends_with("ss") {
        token[..token.len() - 1].to_string()
    } else {
        token.to_string()
    }
}

/// Content tokens used for free-text matching: normalized, singularized and
/// with stop words, separators and the currency marker removed.
pub fn content_tokens(text: &str) -> Vec<String> {
    normalize(text)
        .into_iter()
        .filter(|t| !is_separator(t) && !is_stop_word(t) && t != CURRENCY)
        .map(|t| strip_plural(&t))
        .collect()
}
