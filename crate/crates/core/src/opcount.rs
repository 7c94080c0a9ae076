//! Per-thread tally of multiply–add work on the inference path.
//!
//! With the `opcount` feature disabled, [`add`] compiles to nothing and
//! [`take`] always returns zero.

#[cfg(feature = "opcount")]
thread_local! {
    static OPS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

#[inline(always)]
pub fn add(n: usize) {
    #[cfg(feature = "opcount")]
    OPS.with(|c| c.set(c.get() + n as u64));
    #[cfg(not(feature = "opcount"))]
    let _ = n;
}

/// Returns the current tally and resets it.
pub fn take() -> u64 {
    #[cfg(feature = "opcount")]
    return OPS.with(|c| c.replace(0));
    #[cfg(not(feature = "opcount"))]
    0
}

pub fn enabled() -> bool {
    cfg!(feature = "opcount")
}
