pub mod error;
pub mod expfam;
pub mod fitting;
pub mod graphselect;
pub mod impute;
pub mod inference;
pub mod io;
pub mod numeric;
pub mod odds;
pub mod par;
pub mod pattern;
pub mod rng;
pub mod sensitivity;
pub mod simharness;
pub mod treegraph;

pub use error::{Error, Result};
pub use expfam::{Component, Family, MixtureModel};
pub use pattern::{IncompleteDataset, MissingPattern};
pub use treegraph::{PatternGraph, TreeGraph};
