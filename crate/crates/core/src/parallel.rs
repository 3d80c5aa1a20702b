//! Process-wide switch between row-parallel kernels and strictly serial
//! execution.
//!
//! Row-parallel kernels never change results (each output row is computed by
//! exactly one task in a fixed order), but strict mode also rules out any
//! scheduling-dependent behaviour, which is what the reproducibility checks
//! rely on.

use std::sync::atomic::{AtomicBool, Ordering};

static STRICT: AtomicBool = AtomicBool::new(false);

pub fn set_strict_deterministic(on: bool) {
    STRICT.store(on, Ordering::SeqCst);
}

pub fn strict_deterministic() -> bool {
    STRICT.load(Ordering::SeqCst)
}

/// Work below this many multiply-adds is never split across threads.
pub(crate) const PAR_THRESHOLD: usize = 1 << 16;

pub(crate) fn use_parallel(work: usize) -> bool {
    work >= PAR_THRESHOLD && !strict_deterministic() && rayon::current_num_threads() > 1
}
