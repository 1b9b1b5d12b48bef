//! Measuring determiner/noun productivity in child-directed speech and in
//! text generated by models trained on it.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`] reads CHAT-style transcripts, keeps child-directed turns and
//!   builds a capped vocabulary with fixed-length integer encodings.
//! * [`zipf`] holds rank/frequency statistics and the least-squares fit of
//!   the Zipf shape parameter.
//! * [`overlap`] counts determiner+noun pairs and computes the empirical and
//!   expected overlap scores, plus a Monte Carlo estimator of the latter.
//! * [`ngram`] is an interpolated modified Kneser-Ney bigram/trigram model
//!   with inverse-CDF sampling.
//! * [`neural`] is a small reverse-mode autodiff tape with a GRU cell,
//!   softmax cross-entropy, dropout and Adam.
//! * [`autoencoder`] is the embedding → GRU → latent → GRU → softmax
//!   sequence autoencoder built on top of [`neural`].

pub mod autoencoder;
pub mod corpus;
pub mod neural;
pub mod ngram;
pub mod overlap;
pub mod seed;
pub mod zipf;

pub use autoencoder::{AeConfig, AutoencoderModel, DropoutPlacement, TrainLog, TrainOptions};
pub use corpus::{
    build_vocabulary, corpus_stats, encode_utterance, filter_child_directed, parse_chat,
    parse_transcript, CorpusStats, EncodedUtterance, Utterance, Vocabulary,
};
pub use ngram::KneserNeyModel;
pub use overlap::{
    empirical_overlap, expected_overlap, expected_overlap_at_rank, extract_det_noun_pairs,
    monte_carlo_overlap, overlap_report, DeterminerProfile, NounLexicon, OverlapParams,
    OverlapReport, PairCounts,
};
pub use zipf::{fit_zipf_shape, rank_frequencies, zipf_probability, RankedCounts, ZipfFit};
