//! Holds the `acceptance` test target. Run it with
//! `cargo test -p rapidlabel-acceptance --test acceptance`.
