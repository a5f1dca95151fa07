pub mod analytics;
pub mod matcher;
pub mod miner;
pub mod pyparse;
pub mod releases;
pub mod sigdiff;
