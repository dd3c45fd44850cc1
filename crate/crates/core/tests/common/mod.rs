//! Shared by several test targets; each target uses a different subset.
#![allow(dead_code)]

pub mod gradsuite;
pub mod oracle;
