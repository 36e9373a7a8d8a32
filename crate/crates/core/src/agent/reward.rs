use crate::error::{Error, Result};

/// Provenance reward `-E^d / E`; zero for an eventless cycle.
pub fn reward_provenance(events: u64, dropped: u64) -> Result<f64> {
    if dropped > events {
        return Err(Error::InvalidCounts { events, dropped });
    }
    if events == 0 {
        return Ok(0.0);
    }
    Ok(-(dropped as f64) / events as f64)
}

/// Utilization reward `C_t / (C_t + C_{t+1} + 1)` over idle-slice counts.
pub fn reward_utilization(idle_now: u64, idle_next: u64) -> f64 {
    idle_now as f64 / (idle_now as f64 + idle_next as f64 + 1.0)
}
