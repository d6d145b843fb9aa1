//! Oracles and fixtures shared by the test suites. Nothing here depends on
//! `ets-core`; inputs and outputs are plain data or COCO JSON.

pub mod coco_ref;
pub mod fixtures;
pub mod quota;
