#![allow(dead_code)]

pub mod bpe_oracle;
pub mod dedup_oracle;
pub mod fixtures;
pub mod kn_oracle;
