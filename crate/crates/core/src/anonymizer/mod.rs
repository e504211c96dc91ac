//! Anonymization transforms: Householder stacks, the simplified and whitened
//! model forms, and the selection-based baseline.

pub mod container;
pub mod model;
pub mod selection;
pub mod stack;

pub use container::{decode_model, encode_model, load_model, model_from_json, model_hash, model_to_json, save_model};
pub use model::{anonymize, AnonymizerModel, Form};
pub use selection::{select_anonymize, SelectionConfig, SelectionPool};
pub use stack::{apply_stack, init_stack, HouseholderStack, LohReduction, Variant};
