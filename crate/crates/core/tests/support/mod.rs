#![allow(dead_code)]

pub mod grad_suite;
pub mod loss_oracle;
pub mod metric_oracle;
pub mod tiny;
