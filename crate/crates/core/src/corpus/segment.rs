//! Rule-based sentence segmentation of raw turns.

const ABBREVIATIONS: [&str; 5] = ["mr.", "mrs.", "dr.", "e.g.", "i.e."];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Splits a turn at sentence-final punctuation followed by whitespace.
///
/// Whitespace inside each sentence is collapsed to single spaces, so joining
/// the output with `" "` reproduces the whitespace-normalized input.
pub fn segment_turn(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if !is_terminal(chars[i]) {
            i += 1;
            continue;
        }
        let mut end = i + 1;
        while end < chars.len() && (is_terminal(chars[end]) || is_closer(chars[end])) {
            end += 1;
        }
        let at_boundary = end == chars.len() || chars[end].is_whitespace();
        if at_boundary && !ends_with_abbreviation(&chars[start..end]) {
            push_normalized(&mut sentences, &chars[start..end]);
            start = end;
        }
        i = end;
    }
    push_normalized(&mut sentences, &chars[start..]);
    sentences
}

fn ends_with_abbreviation(span: &[char]) -> bool {
    let word: String = span
        .iter()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect::<String>()
        .to_lowercase();
    ABBREVIATIONS.iter().any(|a| word == *a || word.ends_with(&format!("({a}")))
}

fn push_normalized(out: &mut Vec<String>, span: &[char]) {
    let s: String = span.iter().collect();
    let normalized = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if !normalized.is_empty() {
        out.push(normalized);
    }
}
