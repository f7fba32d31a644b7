//! Ground-truth access audit.
//!
//! The poison mask and target class are attacker-side ground truth: the
//! defense must never consult them. Defense operations run their bodies
//! inside [`denied`], and every accessor that exposes ground truth records a
//! violation when called inside such a scope. Tests assert that the
//! violation counter never moves across the defense path.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

thread_local! {
    static DENY: Cell<bool> = const { Cell::new(false) };
}

static VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Run `f` with ground-truth access marked as forbidden.
pub fn denied<R>(f: impl FnOnce() -> R) -> R {
    let prev = DENY.with(|d| d.replace(true));
    let out = f();
    DENY.with(|d| d.set(prev));
    out
}

/// Called by audited accessors; records a violation inside a denied scope.
pub fn record_ground_truth_access() {
    if DENY.with(|d| d.get()) {
        VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
}

/// Total ground-truth accesses observed inside denied scopes.
pub fn violation_count() -> u64 {
    VIOLATIONS.load(Ordering::Relaxed)
}
