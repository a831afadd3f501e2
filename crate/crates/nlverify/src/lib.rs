pub mod compdb;
pub mod frontend;
pub mod store;
pub mod provider;
pub mod config;
pub mod driver;
pub mod harness;
pub mod cli;
