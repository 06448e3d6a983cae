pub mod config;
pub mod corpus;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod prompting;
pub mod pseudogen;
pub mod runs;
pub mod session;
pub mod transcript;
