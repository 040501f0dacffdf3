//! String utilities shared by emote mining, consistency checking and answer
//! resolution: normalization, Levenshtein distance, the 0–100 fuzzy ratio and
//! punctuation splitting with source offsets.

/// Lowercases, drops punctuation and collapses whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else if ch.is_alphanumeric() {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(ch.to_lowercase());
        }
    }
    out
}

/// Character-level edit distance (insert, delete, substitute all cost 1).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized Levenshtein ratio on a 0..=100 scale.
///
/// Both inputs go through [`normalize`] first. Two empty strings score 100.
pub fn fuzzy_score(a: &str, b: &str) -> u8 {
    let a = normalize(a);
    let b = normalize(b);
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 100;
    }
    let dist = levenshtein(&a, &b);
    let ratio = 1.0 - dist as f64 / longest as f64;
    let score = (100.0 * ratio).round() as u8;
    // long strings one edit apart would otherwise round up to a perfect score
    if dist > 0 {
        score.min(99)
    } else {
        score
    }
}

/// Sentence delimiters used by [`split_on_punctuation`].
pub const SEGMENT_DELIMITERS: [char; 4] = ['.', '!', '?', ';'];

/// A slice of the source text with its byte range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Splits after every run of `. ! ? ;`, keeping delimiters on the segment they
/// close. Leading whitespace belongs to the following segment; a trailing
/// whitespace-only remainder is folded into the last segment, so the segments
/// always concatenate back to `text`.
pub fn split_on_punctuation(text: &str) -> Vec<Segment<'_>> {
    let mut bounds = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((idx, ch)) = iter.next() {
        if SEGMENT_DELIMITERS.contains(&ch) {
            let mut end = idx + ch.len_utf8();
            while let Some(&(nidx, nch)) = iter.peek() {
                if SEGMENT_DELIMITERS.contains(&nch) {
                    end = nidx + nch.len_utf8();
                    iter.next();
                } else {
                    break;
                }
            }
            bounds.push((start, end));
            start = end;
        }
    }
    if start < text.len() {
        if text[start..].trim().is_empty() && !bounds.is_empty() {
            bounds.last_mut().unwrap().1 = text.len();
        } else {
            bounds.push((start, text.len()));
        }
    }
    bounds
        .into_iter()
        .map(|(start, end)| Segment {
            text: &text[start..end],
            start,
            end,
        })
        .collect()
}

/// Trims and forces exactly one terminal `?`.
pub fn normalize_question(text: &str) -> String {
    let trimmed = text.trim();
    let body = trimmed.trim_end_matches(|c: char| c == '?' || c == '.' || c.is_whitespace());
    format!("{body}?")
}
