mod checkpoint;
mod config;
mod encode;
mod loss;
mod network;
mod train;

pub use checkpoint::{Checkpoint, TrainingMeta, PARAMS_FILE, SIDECAR_FILE, VOCAB_FILE};
pub use config::{EncodeOptions, LossWeights, ModelConfig, TrainingMode};
pub use encode::{
    build_groups, prepare_dialog, speaker_state, CandidateSpan, ClassTarget, EncodedExample, Encoder, ExampleGroup,
    SentenceEnd, Tail, Targets, TokenSequence, STATE_COUNT, STATE_HUMAN, STATE_PRIVATE, STATE_SYSTEM,
};
pub use loss::{composite_loss, loss_and_gradients, LossBreakdown, COMPONENTS};
pub use network::{Head, IncrementalDecoder, MissaModel, ModelDims};
pub use train::{
    encoder, example_groups, language_model_nll, perplexity, prepare_corpus, pretrain_language_model, train,
    EpochRecord, TrainConfig, TrainOutcome, TrainStatus, METRICS_FILE,
};
