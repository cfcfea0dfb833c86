mod data;
mod gradcheck;
mod hierarchy;
mod model;

pub use data::{gen_synth, GenSynthArgs};
pub use gradcheck::{gradcheck, GradcheckArgs};
pub use hierarchy::{condense, inspect, paramcount, CondenseArgs, InspectArgs, ParamcountArgs};
pub use model::{eval, predict, train, EvalArgs, PredictArgs, TrainArgs};

use clap::ValueEnum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Head {
    /// Multilayer gated head.
    Md,
    /// Single dense layer with N + M outputs.
    Flat,
}
