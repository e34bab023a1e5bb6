//! Distribution-free prediction sets and uncertainty scores for classifier
//! outputs.
//!
//! The crate works on precomputed class-probability rows:
//!
//! * [`scores`]: validated score matrices, labels, dropout stacks, evidence.
//! * [`conformal`]: split conformal calibration with APS / RAPS scoring.
//! * [`baselines`]: Monte Carlo dropout aggregation and evidential
//!   (Dirichlet) uncertainty, loss and gradient.
//! * [`synth`]: a seeded synthetic classifier used in place of a trained
//!   network, plus score-space distribution shift.
//! * [`eval`]: coverage, stratified uncertainty, sweeps and histograms.
//!
//! ```
//! use cpuq_core::conformal::{calibrate, ScoringConfig};
//! use cpuq_core::synth::{generate, OracleConfig};
//!
//! let oracle = OracleConfig { k_classes: 7, concentration: 1.0, signal: 1.0, seed: 42 };
//! let cal = generate(&oracle, 1000).unwrap();
//! let calibrator = calibrate(&cal, 0.1, ScoringConfig::Aps).unwrap();
//! let set = calibrator.predict(&[0.4, 0.3, 0.1, 0.1, 0.05, 0.03, 0.02]).unwrap();
//! assert!(set.k_star() <= 7);
//! ```

pub mod baselines;
pub mod conformal;
pub mod error;
pub mod eval;
pub mod scores;
pub mod special;
pub mod synth;

pub use conformal::{calibrate, Calibrator, CoverageBound, PredictionSet, ScoringConfig};
pub use error::{BaselineError, ConformalError, EvalError, ScoreError, SynthError};
pub use scores::{EvidenceVector, LabeledScores, SampleStack, ScoreMatrix};
