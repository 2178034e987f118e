//! (k,k^m)-anonymization of distributed relational-transactional data and
//! federated training of linear classifiers on the anonymized sites.

pub mod anonymizer;
pub mod dataset;
pub mod error;
pub mod flsim;
pub mod mapping;
pub mod metrics;
pub mod verifier;

pub use anonymizer::{anonymize, AnonymizationParams, AnonymizedDataset, Cluster};
pub use dataset::{Hierarchy, NodeId, RTDataset, Record, Schema};
pub use error::{Error, Result};
pub use flsim::{DPConfig, EncodedDataset, FLConfig, ModelKind, ModelParams};
pub use mapping::{EncodingSchema, EquivalenceClass, MappingSet};
pub use metrics::WeightVector;
pub use verifier::{ViolationKind, ViolationReport};
