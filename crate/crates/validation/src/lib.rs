//! Acceptance criteria for `orthres` and `orthres-cli`.
//!
//! The suite lives in `tests/acceptance.rs` and runs with
//! `cargo test -p orthres-validation --test acceptance`; it prints one
//! PASS/FAIL line per criterion.
