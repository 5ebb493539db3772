//! Catalog model, role-based pruning, annotation interpretation, query
//! planning, storage and rendering for model-adaptive data applications.

pub mod annotation;
pub mod fixture;
pub mod interpret;
pub mod model;
pub mod query;
pub mod policy;
pub mod render;
pub mod storage;
pub mod tags;
