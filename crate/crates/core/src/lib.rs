pub mod config;
pub mod llm;
pub mod quantity;
pub mod recommend;
pub mod render;
pub mod table;
pub mod topic;

#[cfg(feature = "testkit")]
pub mod testkit;
