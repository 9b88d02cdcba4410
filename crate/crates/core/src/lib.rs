//! Pruning-at-initialization lab: saliency metrics, an iterative multi-metric
//! pruner, a reinforcement-learned metric scheduler and sparse training.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod metrics;
pub mod model;
pub mod pruner;
pub mod rl_env;
pub mod seed;
pub mod td3;
pub mod trainer;
pub mod tensor;
