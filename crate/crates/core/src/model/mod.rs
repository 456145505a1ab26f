//! Generative models: plates, latent and observed nodes, and θ.

mod dataset;
mod expr;
mod family;
mod graph;
mod params;
pub(crate) mod table;

pub use dataset::{Dataset, NodeData};
pub use expr::{EvalCtx, Expr, Term};
pub use family::Family;
pub use graph::{Assignment, DataNode, ModelBuilder, ModelGraph, Node, Plate};
pub use params::{GradientStore, ParamBlock, ParamRef, ParamStore, Params, Role};
