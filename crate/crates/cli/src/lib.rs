pub mod experiment;
pub mod output;
pub mod report;
pub mod spec;
