//! Independent reference implementations and random instance generators,
//! shared by the property tests and the acceptance run.
#![allow(dead_code)]

pub mod assign;
pub mod eval;
pub mod grad;
pub mod tiling;
