//! Holds the `acceptance` test target only; see `tests/acceptance.rs`.
//! Kept in its own package so it runs after every test of `revcoref`.
