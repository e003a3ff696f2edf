//! DDPG with imitation pre-training: weight transfer, frozen convolutions,
//! replay pre-fill with an offline pre-training phase, and no exploration
//! noise. A from-scratch baseline mode keeps the textbook algorithm.

mod config;
mod ddpg;
mod replay;
mod train;

pub use config::{CriticLoss, RlConfig};
pub use ddpg::{
    act_no_noise, critic_targets, ddpg_update, pretrain_on_buffer, soft_update, window_change, Batch, BatchInputs,
    DdpgNets, UpdateLosses,
};
pub use replay::{Entry, ReplayBuffer};
pub use train::{history_csv, prefill_replay, train_rl, write_history_csv, HistoryRow, NoObserver, RlObserver, RlOutcome};
