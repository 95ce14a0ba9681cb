//! Tooling for pharmaceutical 3D-printing formulation corpora: wide-CSV
//! ingestion, Alpaca instruction pairs, response parsing, and evaluation with
//! BLEU, ROUGE and the VELVET co-occurrence metric.

pub mod alpaca;
pub mod dataset;
pub mod eda;
pub mod error;
pub mod formulation;
pub mod generation;
pub mod harness;
pub mod jsonl;
pub mod metrics;
pub mod parser;
pub mod recommender;
pub mod stats;
pub mod velvet;

pub use error::{Error, ErrorKind, Result};
pub use formulation::{
    validate_formulation, DatasetSchema, FilamentAspect, Formulation, Ingredient, IngredientKind,
    Printability,
};
pub use parser::{normalize_text, parse_response, strip_template_phrases, ParsedResponse};
pub use velvet::{build_embedding, velvet_corpus, velvet_score, IngredientEmbedding};
