//! Word-level tokenizer and vocabulary with reserved control tokens.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::dialog::{AnnotatedDialog, Corpus};
use super::lexicon::{delexicalize, slot_token, slot_token_len};
use super::taxonomy::Taxonomy;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const HUMAN: &str = "<human>";
pub const SYSTEM: &str = "<system>";

const INTENT_PREFIX: &str = "<intent:";

pub fn intent_token(intent: &str) -> String {
    format!("{INTENT_PREFIX}{intent}>")
}

/// Intent name carried by an intent token, if `token` is one.
pub fn intent_of_token(token: &str) -> Option<&str> {
    token.strip_prefix(INTENT_PREFIX)?.strip_suffix('>')
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

/// Lowercased word and punctuation tokens. `<name>` tokens stay atomic.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut rest = lower.as_str();
    while let Some(c) = rest.chars().next() {
        if c.is_whitespace() {
            rest = &rest[c.len_utf8()..];
        } else if let Some(len) = slot_token_len(rest).or_else(|| intent_token_len(rest)) {
            tokens.push(rest[..len].to_string());
            rest = &rest[len..];
        } else if is_word_char(c) {
            let len = rest
                .char_indices()
                .find(|(_, ch)| !is_word_char(*ch))
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            tokens.push(rest[..len].to_string());
            rest = &rest[len..];
        } else {
            tokens.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
    }
    tokens
}

fn intent_token_len(s: &str) -> Option<usize> {
    let tail = s.strip_prefix(INTENT_PREFIX)?;
    let close = tail.find('>')?;
    tail[..close]
        .chars()
        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        .then_some(INTENT_PREFIX.len() + close + 1)
}

/// Joins tokens back into text: no space before closing punctuation, none
/// around joiners such as `-` and `/`.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for token in tokens {
        let t = token.as_ref();
        let closes = matches!(t, "." | "," | "?" | "!" | ";" | ":" | ")" | "%");
        let joins = matches!(t, "-" | "/");
        if !(glue_next || closes || joins) {
            out.push(' ');
        }
        out.push_str(t);
        glue_next = joins || t == "(";
    }
    out
}

/// Text the model sees for one sentence of a dialog.
pub fn model_text(text: &str, dialog: &AnnotatedDialog, delex: bool) -> String {
    if delex {
        delexicalize(text, &dialog.private_info)
    } else {
        text.to_string()
    }
}

/// Tokens rendering a dialog's private information: each slot token,
/// followed by the value words when the text is not delexicalized.
pub fn private_info_tokens(dialog_lexicon: &super::lexicon::SlotLexicon, delex: bool) -> Vec<String> {
    let mut out = Vec::new();
    for (slot, value) in dialog_lexicon.iter() {
        out.push(slot_token(slot));
        if !delex {
            out.extend(tokenize(value));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token `{t}`")));
            }
        }
        for reserved in [PAD, UNK, BOS, EOS, SEP, HUMAN, SYSTEM] {
            if !index.contains_key(reserved) {
                return Err(Error::Vocabulary(format!("missing reserved token `{reserved}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Control, speaker, intent and slot tokens in a fixed order, then
    /// `words` in the given order.
    pub fn with_words(taxonomy: &Taxonomy, words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = [PAD, UNK, BOS, EOS, SEP, HUMAN, SYSTEM]
            .iter()
            .map(|s| s.to_string())
            .collect();
        tokens.extend(taxonomy.intents.iter().map(|i| intent_token(&i.name)));
        tokens.extend(taxonomy.slots.iter().map(|s| slot_token(s)));
        for w in words {
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.unk())
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad(&self) -> u32 {
        self.index[PAD]
    }
    pub fn unk(&self) -> u32 {
        self.index[UNK]
    }
    pub fn bos(&self) -> u32 {
        self.index[BOS]
    }
    pub fn eos(&self) -> u32 {
        self.index[EOS]
    }
    pub fn sep(&self) -> u32 {
        self.index[SEP]
    }

    pub fn speaker(&self, speaker: super::dialog::Speaker) -> u32 {
        match speaker {
            super::dialog::Speaker::Human => self.index[HUMAN],
            super::dialog::Speaker::System => self.index[SYSTEM],
        }
    }

    pub fn intent_id(&self, intent: &str) -> Option<u32> {
        self.get(&intent_token(intent))
    }

    /// Intent name for `id` when it is an intent token.
    pub fn intent_of(&self, id: u32) -> Option<&str> {
        intent_of_token(self.token(id))
    }

    pub fn intent_ids(&self) -> Vec<u32> {
        (0..self.len() as u32)
            .filter(|&id| self.intent_of(id).is_some())
            .collect()
    }

    /// Reserved tokens that never occur inside a sentence's words.
    pub fn is_control(&self, id: u32) -> bool {
        let t = self.token(id);
        matches!(t, PAD | UNK | BOS | EOS | SEP | HUMAN | SYSTEM) || intent_of_token(t).is_some()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let tokens: Vec<&str> = ids.iter().map(|&i| self.token(i)).collect();
        detokenize(&tokens)
    }

    /// `token<TAB>id` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(raw: &str) -> Result<Self> {
        let mut pairs: Vec<(u32, String)> = Vec::new();
        for (line_no, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (token, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Vocabulary(format!("line {}: missing tab", line_no + 1)))?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Vocabulary(format!("line {}: bad id `{id}`", line_no + 1)))?;
            pairs.push((id, token.to_string()));
        }
        pairs.sort_by_key(|(id, _)| *id);
        for (expected, (id, _)) in pairs.iter().enumerate() {
            if *id as usize != expected {
                return Err(Error::Vocabulary(format!("ids are not dense at {expected}")));
            }
        }
        Self::from_tokens(pairs.into_iter().map(|(_, t)| t).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&raw)
    }
}

/// Counts tokens of the model-facing text of `train` and keeps those seen at
/// least `min_freq` times, most frequent first (ties alphabetical).
pub fn build_vocabulary(train: &Corpus, min_freq: usize, delex: bool) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for dialog in &train.dialogs {
        let info = private_info_tokens(&dialog.private_info, delex);
        let sentences = dialog
            .turns
            .iter()
            .flat_map(|t| &t.sentences)
            .flat_map(|s| tokenize(&model_text(&s.text, dialog, delex)));
        for token in info.into_iter().chain(sentences) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut words: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq)
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::with_words(&train.taxonomy, words.into_iter().map(|(w, _)| w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, SlotLexicon, Speaker, Turn};

    fn corpus() -> Corpus {
        let dialog = AnnotatedDialog {
            id: "d".into(),
            private_info: SlotLexicon::from_pairs([("card_num", "5110-xxxx-xxxx-8166")]).unwrap(),
            turns: vec![
                Turn::new(
                    Speaker::Human,
                    vec![Sentence::new("Can I have your card number?", "elicitation", "card_num")],
                ),
                Turn::new(
                    Speaker::System,
                    vec![
                        Sentence::new("Why?", "open_question", "others"),
                        Sentence::new("It is 5110-xxxx-xxxx-8166.", "providing_information", "card_num"),
                    ],
                ),
            ],
            outcome: Default::default(),
        };
        Corpus::new(Taxonomy::antiscam(), vec![dialog])
    }

    #[test]
    fn tokenizer_keeps_special_tokens_atomic() {
        assert_eq!(
            tokenize("Alright, it is <card_num>. <intent:refusal>Why?"),
            vec!["alright", ",", "it", "is", "<card_num>", ".", "<intent:refusal>", "why", "?"]
        );
        assert_eq!(tokenize("I'm  fine"), vec!["i'm", "fine"]);
    }

    #[test]
    fn detokenize_reads_naturally() {
        let toks = tokenize("Alright, it is 5110-xxxx-xxxx-8166. Ok?");
        assert_eq!(detokenize(&toks), "alright, it is 5110-xxxx-xxxx-8166. ok?");
    }

    #[test]
    fn rare_tokens_map_to_unknown() {
        let v = build_vocabulary(&corpus(), 2, true).unwrap();
        assert!(v.get("why").is_none());
        assert_eq!(v.id("why"), v.unk());
        // "?" appears twice, "it"/"is" once
        assert!(v.get("?").is_some());
    }

    #[test]
    fn every_intent_and_slot_token_is_reserved() {
        let c = corpus();
        let v = build_vocabulary(&c, 100, true).unwrap();
        for intent in &c.taxonomy.intents {
            assert!(v.intent_id(&intent.name).is_some(), "{}", intent.name);
        }
        for slot in &c.taxonomy.slots {
            assert!(v.get(&slot_token(slot)).is_some());
        }
        assert_eq!(v.intent_ids().len(), 15);
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocabulary(&corpus(), 1, false).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(v, back);
        for t in v.tokens() {
            assert_eq!(v.id(t), back.id(t));
        }
    }

    #[test]
    fn delex_controls_vocabulary_content() {
        let delex = build_vocabulary(&corpus(), 1, true).unwrap();
        let raw = build_vocabulary(&corpus(), 1, false).unwrap();
        assert!(delex.get("8166").is_none());
        assert!(raw.get("8166").is_some());
    }

    #[test]
    fn empty_train_is_an_error() {
        let c = corpus().with_dialogs(vec![]);
        assert!(build_vocabulary(&c, 1, true).is_err());
    }
}
