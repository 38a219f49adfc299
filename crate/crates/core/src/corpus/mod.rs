//! Annotated dialog corpora: taxonomies, data model, ingestion, segmentation,
//! (de)lexicalization, splitting and tokenization.

mod dialog;
mod io;
mod lexicon;
pub mod persuasion;
mod segment;
mod split;
mod taxonomy;
mod vocab;

pub use dialog::{AnnotatedDialog, Corpus, CorpusStats, Sentence, Speaker, Turn};
pub use io::{corpus_to_json, load_corpus, parse_corpus, save_corpus, LoadMode};
pub use lexicon::{delexicalize, relexicalize, slot_token, Relexicalized, SlotLexicon};
pub use segment::segment_turn;
pub use split::{split_corpus, Splits, MIN_SPLIT_DIALOGS};
pub use taxonomy::{
    IntentCategory, IntentLabel, Taxonomy, ANTISCAM_ON_TASK, ANTISCAM_SLOTS, OFF_TASK_GENERAL,
    OFF_TASK_SOCIAL, OTHERS_SLOT, PERSUASION_ON_TASK,
};
pub use vocab::{
    build_vocabulary, detokenize, intent_of_token, intent_token, model_text, private_info_tokens,
    tokenize, Vocabulary, BOS, EOS, HUMAN, PAD, SEP, SYSTEM, UNK,
};
