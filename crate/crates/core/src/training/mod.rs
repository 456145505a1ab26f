//! Wake-phase updates, Adam, and the training loop.

mod adam;
mod rws;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use rws::{posterior_moment, posterior_moment_joint, rws_update, rws_update_global, RwsGradients};
pub use train::{evaluate, train, EvalRecord, TrainConfig, TrainRecord, TrainTrace};
