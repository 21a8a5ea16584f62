//! Cheap timestamps for instrumenting short critical sections.
//!
//! On x86-64 this reads the time-stamp counter, which touches no memory, so
//! the reading does not depend on what the caller did to the cache just
//! before. Elsewhere it falls back to a monotonic clock.

#[cfg(target_arch = "x86_64")]
mod imp {
    use std::sync::OnceLock;
    use std::time::{Duration, Instant};

    #[inline]
    pub fn ticks() -> u64 {
        // SAFETY: lfence and rdtsc have no preconditions on x86-64. The
        // fence keeps the read from running ahead of earlier loads.
        unsafe {
            core::arch::x86_64::_mm_lfence();
            core::arch::x86_64::_rdtsc()
        }
    }

    fn ns_per_tick() -> f64 {
        static RATE: OnceLock<f64> = OnceLock::new();
        *RATE.get_or_init(|| {
            let (t0, c0) = (Instant::now(), ticks());
            while t0.elapsed() < Duration::from_millis(5) {
                std::hint::spin_loop();
            }
            let (dt, dc) = (t0.elapsed(), ticks().wrapping_sub(c0));
            if dc == 0 {
                1.0
            } else {
                dt.as_nanos() as f64 / dc as f64
            }
        })
    }

    pub fn to_ns(t: u64) -> u64 {
        (t as f64 * ns_per_tick()) as u64
    }
}

#[cfg(not(target_arch = "x86_64"))]
mod imp {
    use std::sync::OnceLock;
    use std::time::Instant;

    fn origin() -> Instant {
        static ORIGIN: OnceLock<Instant> = OnceLock::new();
        *ORIGIN.get_or_init(Instant::now)
    }

    #[inline]
    pub fn ticks() -> u64 {
        origin().elapsed().as_nanos() as u64
    }

    pub fn to_ns(t: u64) -> u64 {
        t
    }
}

pub use imp::{ticks, to_ns};
