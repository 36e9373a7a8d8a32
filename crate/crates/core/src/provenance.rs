//! Provenance pipeline model: producers push events into one bounded
//! buffer, the consumer task drains it, overflow is dropped.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounded event buffer with drop-newest overflow.
///
/// `produced_total == consumed_total + dropped_total + occupancy` holds
/// after every operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventBuffer {
    capacity: u64,
    occupancy: u64,
    produced_total: u64,
    consumed_total: u64,
    dropped_total: u64,
    cycle_events: u64,
    cycle_dropped: u64,
}

impl EventBuffer {
    pub fn new(capacity: u64) -> Self {
        EventBuffer {
            capacity,
            occupancy: 0,
            produced_total: 0,
            consumed_total: 0,
            dropped_total: 0,
            cycle_events: 0,
            cycle_dropped: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn occupancy(&self) -> u64 {
        self.occupancy
    }

    pub fn produced_total(&self) -> u64 {
        self.produced_total
    }

    pub fn consumed_total(&self) -> u64 {
        self.consumed_total
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped_total
    }

    /// Events generated in the current cycle.
    pub fn cycle_events(&self) -> u64 {
        self.cycle_events
    }

    /// Events dropped in the current cycle.
    pub fn cycle_dropped(&self) -> u64 {
        self.cycle_dropped
    }

    /// Free fraction of the buffer, in `[0, 1]`.
    pub fn availability(&self) -> f64 {
        if self.capacity == 0 {
            return 0.0;
        }
        (self.capacity - self.occupancy) as f64 / self.capacity as f64
    }

    /// Offers `n` events; returns how many were stored. The rest are dropped.
    pub fn produce(&mut self, n: u64) -> u64 {
        let accepted = n.min(self.capacity - self.occupancy);
        let dropped = n - accepted;
        self.occupancy += accepted;
        self.produced_total += n;
        self.dropped_total += dropped;
        self.cycle_events += n;
        self.cycle_dropped += dropped;
        accepted
    }

    /// Drains up to `n` events; returns how many were removed.
    pub fn consume(&mut self, n: u64) -> u64 {
        let drained = n.min(self.occupancy);
        self.occupancy -= drained;
        self.consumed_total += drained;
        drained
    }

    /// Clears the per-cycle tallies.
    pub fn begin_cycle(&mut self) {
        self.cycle_events = 0;
        self.cycle_dropped = 0;
    }

    /// `E^d / E` for the current cycle, or 0 when nothing was generated.
    pub fn cycle_loss_ratio(&self) -> Ratio<u64> {
        loss_ratio(self.cycle_events, self.cycle_dropped)
    }

    pub fn is_conserved(&self) -> bool {
        self.occupancy <= self.capacity
            && self.produced_total == self.consumed_total + self.dropped_total + self.occupancy
    }
}

/// `dropped / events`, defined as 0 for an eventless interval.
pub fn loss_ratio(events: u64, dropped: u64) -> Ratio<u64> {
    if events == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(dropped.min(events), events)
    }
}

/// Event rate of a task while it is on a CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RateLaw {
    Constant {
        rate: u64,
    },
    /// `base` events per tick, `burst` during the first `burst_len` ticks of
    /// every `period`.
    Bursty {
        base: u64,
        burst: u64,
        period: u64,
        burst_len: u64,
    },
    /// Grows by `slope` events per tick of simulated time, capped at `max`.
    Ramp {
        start: u64,
        slope: u64,
        max: u64,
    },
    /// Doubles with every dispatch cycle of the task, capped at `max`.
    Doubling {
        start: u64,
        max: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerProfile {
    pub events_per_tick: RateLaw,
}

impl ProducerProfile {
    pub fn constant(rate: u64) -> Self {
        ProducerProfile {
            events_per_tick: RateLaw::Constant { rate },
        }
    }

    pub fn silent() -> Self {
        Self::constant(0)
    }

    /// Events produced during simulated tick `tick`, by a task in its
    /// `cycle`-th dispatch cycle.
    pub fn events_at(&self, tick: u64, cycle: u64) -> u64 {
        match self.events_per_tick {
            RateLaw::Constant { rate } => rate,
            RateLaw::Bursty {
                base,
                burst,
                period,
                burst_len,
            } => {
                if period > 0 && tick % period < burst_len {
                    burst
                } else {
                    base
                }
            }
            RateLaw::Ramp { start, slope, max } => {
                start.saturating_add(slope.saturating_mul(tick)).min(max)
            }
            RateLaw::Doubling { start, max } => {
                let shift = cycle.min(63) as u32;
                start.checked_shl(shift).filter(|v| v >> shift == start).map_or(max, |v| v.min(max))
            }
        }
    }

    /// Largest per-tick rate this profile can emit.
    pub fn peak_rate(&self) -> u64 {
        match self.events_per_tick {
            RateLaw::Constant { rate } => rate,
            RateLaw::Bursty { base, burst, .. } => base.max(burst),
            RateLaw::Ramp { start, max, .. } => start.max(max),
            RateLaw::Doubling { start, max } => start.max(max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerProfile {
    pub drain_per_tick: u64,
}

impl ConsumerProfile {
    pub fn new(drain_per_tick: u64) -> Result<Self> {
        if drain_per_tick == 0 {
            return Err(Error::InvalidSpec("consumer drain_per_tick must be > 0".into()));
        }
        Ok(ConsumerProfile { drain_per_tick })
    }
}
