//! A dialect-agnostic DBMS fuzzer. A rule-based generator produces common
//! SQL at high throughput; engine-specific features are learned by emitting
//! SQL sketches with typed holes, having a completion backend fill them,
//! validating the returned fragments by execution, and persisting the valid
//! ones. Testing runs metamorphic oracles (ternary predicate partitioning
//! and an optimization-resistant count comparison) to find logic bugs, and
//! watches process liveness for crashes and hangs.

pub mod campaign;
pub mod cli;
pub mod connector;
pub mod error;
pub mod generator;
pub mod model;
pub mod oracles;
pub mod report;
pub mod sketcher;
pub mod synthesizer;
pub mod validator;
