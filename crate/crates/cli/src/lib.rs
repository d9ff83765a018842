//! Configuration layer of the `srn-ibc` batch driver.

pub mod config;
