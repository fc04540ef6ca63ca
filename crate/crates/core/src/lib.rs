//! Measure-level structure decoding for polyphonic staff notation.
//!
//! Candidate events (chords and rests with geometry and soft rhythmic hints)
//! are threaded into voice chains by a probability-guided tree search, with
//! ticks and duration attributes assigned along the way. The crate also ships
//! the greedy baseline, the structural quality evaluator, golden-comparison
//! metrics and the Paraff measure DSL used to synthesize ground truth.

pub mod baselines;
pub mod cache;
pub mod evaluator;
pub mod metrics;
pub mod model;
pub mod paraff;
pub mod picker;
pub mod quality;
pub mod solver;
pub mod timebase;

pub use model::{
    Beam, ElemType, EventAssignment, EventCluster, EventElement, MeasureInput, MeasureInstance, RegulationSolution,
    Status, StemDirection, TimeSignature,
};
pub use picker::{Picker, Prediction, PrefixState};
pub use solver::{solve_measure, solve_multipass, SolverConfig};
pub use timebase::{TimeWarp, DIVISIONS, WHOLE};
