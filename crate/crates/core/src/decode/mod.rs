mod generate;
mod nucleus;

pub use generate::{
    classify_candidate, classify_turn, generate_candidates, generate_turn, CandidateResponse, CandidateSentence,
    is_well_formed, DecodeConfig, DecodeVariant, DialogContext, SentenceLabels,
};
pub use nucleus::{nucleus_filter, Nucleus};
