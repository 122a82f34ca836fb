//! Tokenization and word counting shared by the encoder, the lexical
//! rankers, and the reformulation word-budget rules.
//!
//! Space-separated scripts split on whitespace; CJK characters each count
//! as one token, so mixed-script text behaves sensibly without a segmenter.

/// True for characters that tokenize per-character (Han, kana, Hangul).
pub fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3400}'..='\u{4DBF}'   // CJK ext A
        | '\u{4E00}'..='\u{9FFF}' // CJK unified
        | '\u{F900}'..='\u{FAFF}' // CJK compat
        | '\u{3040}'..='\u{30FF}' // hiragana + katakana
        | '\u{AC00}'..='\u{D7AF}' // hangul
    )
}

/// Raw token split: each CJK char is its own token, everything else splits
/// on whitespace. No case folding, no punctuation stripping.
fn split_raw(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(&text[s..i]);
            }
        } else if is_cjk(c) {
            if let Some(s) = start.take() {
                tokens.push(&text[s..i]);
            }
            tokens.push(&text[i..i + c.len_utf8()]);
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(&text[s..]);
    }
    tokens
}

/// Index tokens: lowercased, with leading/trailing punctuation trimmed.
/// Used by both the hashed encoder and the lexical index so the neural and
/// lexical pipelines see the same token stream.
pub fn tokenize(text: &str) -> Vec<String> {
    split_raw(text)
        .into_iter()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Count words under the mixed-script rule: whitespace-delimited tokens for
/// space-separated text, one per character for CJK.
pub fn count_words(text: &str) -> usize {
    split_raw(text).len()
}

/// Truncate `text` to at most `limit` words, preserving the original
/// spelling and spacing of what is kept.
pub fn truncate_words(text: &str, limit: usize) -> String {
    if limit == 0 {
        return String::new();
    }
    let mut count = 0usize;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_token = false;
        } else if is_cjk(c) {
            in_token = false;
            count += 1;
            if count > limit {
                return text[..i].trim_end().to_string();
            }
        } else if !in_token {
            in_token = true;
            count += 1;
            if count > limit {
                return text[..i].trim_end().to_string();
            }
        }
    }
    text.to_string()
}

/// FNV-1a 64-bit hash. Pinned by hand because hashed feature buckets feed
/// persisted model checkpoints, which must stay stable across toolchains.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
