//! Desk-scale human-object interaction (HOI) detection.
//!
//! The stack detects `<human, action, object>` triplets with a three-tier
//! feature hierarchy: a patch backbone plus transformer encoder, an instance
//! decoder over paired human/object queries, and a relation tier that fuses
//! interaction decoding over encoder memory with prompt-guided decoding over
//! frozen foundation-model tokens. Training is Hungarian-matched set
//! prediction; open-category recognition ranks pairs by cosine similarity
//! against text embeddings of interaction phrases or retrieved descriptions.
//!
//! Modules map one-to-one onto the subsystems:
//!
//! - [`data`] — dataset schemas, synthetic scene generation, zero-shot splits
//! - [`detector`] — patch embedding, encoder, instance decoder, detection heads
//! - [`foundation`] — frozen feature providers and the prompt-guided decoder
//! - [`interaction`] — interaction decoding, fusion heads, open-category logits
//! - [`matching`] — Hungarian assignment and the four-component training loss
//! - [`knowledge`] — LLM knowledge retrieval, caching, text embeddings
//! - [`evaluation`] — mAP under Default/Known-Objects and role-AP scenarios
//! - [`runtime`] — configuration, training loop, checkpoints, CLI entry points
//! - [`tensor`] — the small reverse-mode autodiff core the model runs on

pub mod data;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod foundation;
pub mod geometry;
pub mod interaction;
pub mod knowledge;
pub mod matching;
pub mod runtime;
pub mod tensor;

pub use error::{Error, Result};
