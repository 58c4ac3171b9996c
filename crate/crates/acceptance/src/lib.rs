//! Acceptance checks live in `tests/acceptance.rs`; run them with
//! `cargo test -p namerec-acceptance --test acceptance -- --nocapture`.
