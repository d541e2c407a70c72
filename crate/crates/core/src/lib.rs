//! Evolutionary discovery of executable farm-level land-use heuristics and of
//! the nudge messages that move simulated farm agents toward them.
//!
//! The pipeline runs in four stages over a synthetic agricultural landscape:
//!
//! 1. a ground-truth provider records baseline (profit-driven) interventions
//!    per farm,
//! 2. an LLM-driven evolutionary search learns Python heuristics reproducing
//!    that baseline from plot features,
//! 3. the same search learns heuristics that place interventions in quadrant
//!    directions improving habitat connectivity, and
//! 4. a message-evolution loop searches for nudge texts that persuade a
//!    persona-conditioned simulated farmer to move from its baseline
//!    heuristic toward the connectivity targets.
//!
//! All deterministic machinery (landscape synthesis, connectivity scoring,
//! fitness metrics, sandboxed execution, selection) is usable offline against
//! the deterministic providers in [`llm`].

pub mod connectivity;
pub mod error;
pub mod evolve;
pub mod fitness;
pub mod geom;
pub mod landscape;
pub mod llm;
pub mod nudge;
pub mod pipeline;
pub mod sandbox;

pub use error::{Error, Result};
