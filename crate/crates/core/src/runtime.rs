//! Process-wide execution switches.

/// Setting this variable to anything but `0` or empty runs every kernel and
/// group member sequentially on the calling thread.
pub const DETERMINISTIC_ENV: &str = "GAZEADAPT_DETERMINISTIC";

pub fn deterministic() -> bool {
    std::env::var(DETERMINISTIC_ENV)
        .map(|v| !v.is_empty() && v != "0")
        .unwrap_or(false)
}

/// Whether independent work items (group members, pretraining runs) may be
/// spread across threads. Results are assembled in order either way, so the
/// numbers do not depend on this switch.
pub fn parallel() -> bool {
    !deterministic()
}
