//! Medical question entailment toolkit: corpus loading, abbreviation
//! expansion, UMLS-style augmentation, premise-group constraints, model
//! ensembling, answer re-ranking and evaluation.

pub mod augment;
pub mod constrain;
pub mod corpus;
pub mod ensemble;
pub mod eval;
pub mod preprocess;
pub mod rank;
pub mod scorer;
