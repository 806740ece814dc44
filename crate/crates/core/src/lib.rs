//! Temporal object warehouse engine.
//!
//! Builds a historized warehouse from snapshots of an object source through
//! a construction algebra, refreshes and archives it, and works out which
//! source methods can be carried over into the warehouse.

pub mod algebra;
pub mod analyzer;
pub mod archive;
pub mod catalog;
pub mod cli;
pub mod dsl;
pub mod io;
pub mod model;
pub mod predicate;
pub mod refresh;
pub mod report;
pub mod schema;
pub mod temporal;
pub mod value;
