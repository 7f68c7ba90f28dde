//! Inter-task relationships: aggregation, variational posteriors and their KL terms.

pub mod aggregate;
pub mod kl;
pub mod matrix;
pub mod variational;

pub use aggregate::{
    aggregate_4d, aggregate_component, aggregate_decomposed, decomposed_parts, mix,
    to_aggregation_weights, ComponentWeights, WEIGHT_FLOOR,
};
pub use kl::{beta_kl, count_relationship_parameters, matrix_normal_kl, trigamma};
pub use matrix::Matrix;
pub use variational::{
    sample_relationships, total_kl, BetaPosterior, MatrixNormalPosterior, PosteriorInit,
    RelationshipLayout, RelationshipPriors, SampleMode, SampledRelationships, VariationalState,
    WeightGrads,
};
