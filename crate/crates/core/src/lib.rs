pub mod backend;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod metrics;
pub mod pipeline;
pub mod prep;
pub mod prompt;
pub mod report;
