//! Scenario runner behind the `ctlab` command line tool.

pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod svg;
