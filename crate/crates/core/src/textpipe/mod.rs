//! Text handling: tokenization, vocabularies, pretrained embeddings,
//! JSON-lines datasets and the synthetic planted-trigger corpus.

mod dataset;
mod embeddings;
mod synth;
mod tokenize;
mod vocab;

pub use dataset::{read_dataset, write_dataset, Comment};
pub use embeddings::{load_embeddings, random_embeddings, EmbeddingTable};
pub use synth::{gen_synthetic, trigger_lexicon, BENIGN_LEXICON_SIZE, TRIGGER_LEXICON_SIZE};
pub use tokenize::{tokenize, MAX_TOKENS};
pub use vocab::Vocabulary;
