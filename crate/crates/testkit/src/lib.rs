//! Random instance generators and brute-force reference implementations
//! used by the test suites. Oracles work from first principles and never
//! call the functions they check.

pub mod gen;
pub mod oracle;

pub use rand;
