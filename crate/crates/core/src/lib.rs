//! Probing harness for tabular natural language inference models.

pub mod annotations;
pub mod counterfactual;
pub mod harness;
pub mod hypothesis;
pub mod io;
pub mod model;
pub mod perturb;
pub mod reporting;
pub mod seed;
pub mod stats;
pub mod transitions;

pub use model::{Dataset, ExamplePair, Hypothesis, Label, Row, Table};
pub use transitions::{GraphKey, TransitionGraph, Verdict};

/// Default scalar for reported statistics.
pub type Real = f64;
pub type KappaValue = stats::KappaValue<Real>;
pub type Prf = stats::Prf<Real>;
pub type AgreementReport = annotations::AgreementReport<Real>;
pub type KappaReport = annotations::KappaReport<Real>;
pub type DistributionStats = annotations::DistributionStats<Real>;
pub type KeyBiasReport = annotations::KeyBiasReport<Real>;
