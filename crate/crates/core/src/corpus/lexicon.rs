//! Slot lexicons and (de)lexicalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot name → concrete surface string for one party's private information.
///
/// Values are non-empty, pairwise distinct, never substrings of one another
/// and free of angle brackets, which makes delexicalization invertible.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct SlotLexicon {
    entries: BTreeMap<String, String>,
}

impl TryFrom<BTreeMap<String, String>> for SlotLexicon {
    type Error = Error;

    fn try_from(entries: BTreeMap<String, String>) -> Result<Self> {
        SlotLexicon::new(entries)
    }
}

impl From<SlotLexicon> for BTreeMap<String, String> {
    fn from(lexicon: SlotLexicon) -> Self {
        lexicon.entries
    }
}

impl SlotLexicon {
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self> {
        for (slot, value) in &entries {
            if value.is_empty() {
                return Err(Error::InvalidLexicon(format!("slot `{slot}` has an empty value")));
            }
            if value.contains('<') || value.contains('>') {
                return Err(Error::InvalidLexicon(format!(
                    "value for `{slot}` contains an angle bracket"
                )));
            }
        }
        let values: Vec<(&String, &String)> = entries.iter().collect();
        for (i, (a_slot, a)) in values.iter().enumerate() {
            for (b_slot, b) in values.iter().skip(i + 1) {
                if a.contains(b.as_str()) || b.contains(a.as_str()) {
                    return Err(Error::InvalidLexicon(format!(
                        "values of `{a_slot}` and `{b_slot}` overlap"
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }

    /// The user persona handed to crowd workers in the anti-scam collection.
    pub fn antiscam_persona() -> Self {
        Self::from_pairs([
            ("name", "Jim Lee"),
            ("card_num", "5110-xxxx-xxxx-8166"),
            ("card_cvs", "380"),
            ("card_date", "05/25"),
            ("phone_num", "350-xxx-2988"),
            ("address", "xxx El Ave, Apt 311, City, State, Zipcode"),
        ])
        .expect("default persona is a valid lexicon")
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.entries.get(slot).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

pub fn slot_token(slot: &str) -> String {
    format!("<{slot}>")
}

/// Replaces every occurrence of a lexicon value by its slot token, scanning
/// left to right and preferring the longest value at each position.
pub fn delexicalize(sentence: &str, lexicon: &SlotLexicon) -> String {
    if lexicon.is_empty() {
        return sentence.to_string();
    }
    let mut by_length: Vec<(&str, &str)> = lexicon.iter().collect();
    by_length.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));

    let mut out = String::with_capacity(sentence.len());
    let mut rest = sentence;
    'scan: while !rest.is_empty() {
        for (slot, value) in &by_length {
            if rest.starts_with(value) {
                out.push('<');
                out.push_str(slot);
                out.push('>');
                rest = &rest[value.len()..];
                continue 'scan;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Relexicalized {
    pub text: String,
    /// Slot tokens with no lexicon entry; they are left verbatim in `text`.
    pub unresolved: Vec<String>,
}

pub fn relexicalize(sentence: &str, lexicon: &SlotLexicon) -> Relexicalized {
    let mut out = String::with_capacity(sentence.len());
    let mut unresolved = Vec::new();
    let mut rest = sentence;
    while let Some(open) = rest.find('<') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match slot_token_len(tail) {
            Some(len) => {
                let name = &tail[1..len - 1];
                match lexicon.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        out.push_str(&tail[..len]);
                        unresolved.push(name.to_string());
                    }
                }
                rest = &tail[len..];
            }
            None => {
                out.push('<');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    Relexicalized {
        text: out,
        unresolved,
    }
}

/// Length in bytes of a `<name>` token at the start of `s`, where name is
/// lowercase ASCII, digits or underscores.
pub(crate) fn slot_token_len(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    if bytes.first() != Some(&b'<') {
        return None;
    }
    let mut i = 1;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'>' {
            return (i > 1).then_some(i + 1);
        }
        if !(b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
            return None;
        }
        i += 1;
    }
    None
}
