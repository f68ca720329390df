//! Training-side patterns: multi-task coupling, heterogeneous data
//! balancing, and incentive accounting.

mod balance;
mod incentive;
mod multitask;

pub use balance::{balance_dataset, BalanceReport};
pub use incentive::{
    distribute_rewards, score_contribution, shapley_values, ClientRoundData, IncentiveScheme,
    LedgerEntry, RewardLedger, MAX_SHAPLEY_CLIENTS,
};
pub use multitask::{AnchorSource, MultiTaskPlan};
