//! Closed-loop antimicrobial peptide design engine.
//!
//! The pipeline couples four cooperating subsystems:
//!
//! * [`predictors`] — property surrogates that score candidate peptides
//!   (activity, AMP-likeness, toxicity, structural reliability, template
//!   similarity) on top of the descriptors in [`physchem`];
//! * [`review`] — a committee-review stage that condenses multi-reviewer
//!   tag/score blocks into a divergence-weighted meta score;
//! * [`rewarddsl`] — a guarded arithmetic expression language in which
//!   reward functions over the `(sa, sb, sc)` signals are proposed,
//!   validated by interval arithmetic, and evaluated;
//! * [`policy`] — a compact causal self-attention generator with a value
//!   head, trained by clipped-surrogate policy optimization.
//!
//! The [`orchestrator`] drives the staged refinement loop (cold start,
//! sandboxed reward co-design, outer training) and records every epoch in a
//! replayable six-field audit log. [`agents`] supplies the scripted and
//! remote participants (reviewers, reward designer, critic), and [`seq`] /
//! [`align`] hold the sequence plumbing shared by everything above.

pub mod agents;
pub mod align;
pub mod orchestrator;
pub mod physchem;
pub mod policy;
pub mod predictors;
pub mod review;
pub mod rewarddsl;
pub mod seq;
