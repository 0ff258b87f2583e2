mod eval;
mod gradcheck;
mod report;
mod sfs;
mod train;

pub use eval::cmd_eval;
pub use gradcheck::{cmd_gradcheck, table as gradcheck_table};
pub use report::{cmd_report, cmd_synth, first_below, read_losses};
pub use sfs::{cmd_sfs, SfsItem};
pub use train::{channels, cmd_train, initial_network, TrainSummary};
