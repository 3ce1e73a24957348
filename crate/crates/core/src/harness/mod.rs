pub mod benchmark;
pub mod cli;
pub mod experiment;
pub mod ingest;
pub mod report;
