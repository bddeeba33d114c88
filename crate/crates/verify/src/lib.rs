//! Holds the `acceptance` test target, which prints one PASS or FAIL line
//! per exit criterion and fails when any criterion does. Run it with
//! `cargo test -p lungseg-verify --test acceptance`.
