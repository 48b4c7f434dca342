#![allow(dead_code)]

pub mod gradcases;
pub mod metric_oracles;
pub mod scan_oracles;
