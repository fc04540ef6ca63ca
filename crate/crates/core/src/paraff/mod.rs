//! Paraff, a compact measure-level music language, used here to synthesize
//! ground-truth corpora.
//!
//! A sentence encodes one measure as `BOM voice (VB voice)* EOM`. The module
//! covers the vocabulary, the grammar, the token-group transition matrix, a
//! masked sampler and decoding into [`TopologySample`]s with synthetic layout.

pub mod decode;
pub mod grammar;
pub mod sampler;
pub mod token;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decode::{decode_topology, decode_topology_with, DecodeError, LayoutConfig, SampleEvent, TopologySample};
pub use grammar::{parse, transition_allowed, GrammarError, MeasureAst, Term};
pub use sampler::{sample_measure, LogitSource, PromptConfig, SampleError, UniformLogits};
pub use token::{render, tokenize, LexError, Token, TokenGroup};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParaffError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("no decodable sample after {0} attempts")]
    Exhausted(usize),
}

/// Tokenize and parse a sentence.
pub fn parse_text(text: &str) -> Result<MeasureAst, ParaffError> {
    Ok(parse(&tokenize(text)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct GenerateConfig {
    pub prompt: PromptConfig,
    pub layout: LayoutConfig,
    /// Sentences tried per sample before giving up.
    pub max_attempts: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { prompt: PromptConfig::default(), layout: LayoutConfig::default(), max_attempts: 8 }
    }
}

/// Sample `index` of the corpus `seed`. Each index draws from its own
/// stream, so samples can be generated in any order or in parallel.
pub fn generate_sample(seed: u64, index: u64, config: &GenerateConfig) -> Result<TopologySample, ParaffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut last = ParaffError::Exhausted(config.max_attempts);
    for _ in 0..config.max_attempts.max(1) {
        let attempt = sample_measure(&mut UniformLogits, &mut rng, &config.prompt).map_err(ParaffError::from).and_then(
            |tokens| {
                let ast = parse(&tokens)?;
                let mut sample = decode_topology_with(&ast, rng.next_u64(), &config.layout)?;
                sample.sentence = render(&tokens);
                Ok(sample)
            },
        );
        match attempt {
            Ok(mut sample) => {
                sample.measure_index = index as i64;
                return Ok(sample);
            }
            Err(err) => {
                log::debug!("sample {seed}/{index}: {err}");
                last = err;
            }
        }
    }
    Err(last)
}

/// The first `count` samples of corpus `seed`.
pub fn generate_corpus(seed: u64, count: usize, config: &GenerateConfig) -> Result<Vec<TopologySample>, ParaffError> {
    (0..count as u64).map(|i| generate_sample(seed, i, config)).collect()
}
