//! Discourse-marker lexicon induction from sentence-aligned parallel corpora.
//!
//! The crate is organised as a chain of stages, each usable on its own:
//!
//! * [`ingest`] turns raw Europarl-style proceedings into tokenized, lowercased
//!   documents and pairs their paragraphs across languages.
//! * [`sentence_align`] aligns sentences inside paired paragraphs with a
//!   length-based dynamic program.
//! * [`word_align`] trains IBM Model 1 in both directions and symmetrizes the
//!   Viterbi alignments.
//! * [`phrase_table`] extracts alignment-consistent phrase pairs and scores them.
//! * [`prune`] drops phrase pairs whose co-occurrence is not significant under
//!   Fisher's exact test.
//! * [`lexicon`] queries the table for seed discourse markers, filters the
//!   candidates and assembles the multilingual lexicon.
//! * [`pipeline`] wires everything together with content-digest stage caching.

pub mod fmt;
pub mod ingest;
pub mod lexicon;
pub mod phrase_table;
pub mod pipeline;
pub mod prune;
pub mod sentence_align;
pub mod word_align;

/// A tokenized sentence.
pub type Sentence = Vec<String>;
