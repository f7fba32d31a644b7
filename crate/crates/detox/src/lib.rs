//! detox — train clean image classifiers on backdoor-poisoned datasets.
//!
//! The library decouples learning on an untrusted dataset into three stages:
//!
//! 1. **Supervised learning (SL)** on the full tampered dataset. Because a
//!    backdoor trigger is an easy pattern, the model learns it faster than
//!    the main task, which is observable as a per-subset accuracy gap.
//! 2. **Active unlearning (AU)**: entropy-based filtering picks the samples
//!    the model predicts most confidently (likely poisoned) and the model
//!    unlearns them by gradient *ascent* on their loss.
//! 3. **Active semi-supervised fine-tuning (ASSFT)**: the highest-entropy,
//!    class-balanced samples are trusted as a small labeled set, labels are
//!    stripped from everything else, and a FixMatch-style objective recovers
//!    clean accuracy without re-implanting the trigger.
//!
//! The crate also ships the attack side (patch, blended, and sinusoidal
//! trigger injection) and an evaluation harness (clean accuracy, attack
//! success rate, filter precision) so defenses can be measured end to end.
//! See the `examples/` directory for runnable walkthroughs of each stage and
//! the `pipeline` module for whole-run orchestration.

pub mod audit;
pub mod cli;
pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod filter;
pub mod fsutil;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod ssl;
pub mod train;
pub mod unlearn;

pub use error::{Error, Result};
pub use model::{build_model, ArchId, ModelState, StageTag};
