//! Holds the harness-less `acceptance` test target; no library code.
