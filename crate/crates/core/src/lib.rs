//! Bounds, mechanisms and a numerical oracle for multi-user disclosure of
//! correlated data under a mutual-information leakage budget.
//!
//! All information quantities are in nats.

pub mod bounds;
pub mod io;
pub mod mechanisms;
pub mod model;
pub mod oracle;
pub mod probcore;
