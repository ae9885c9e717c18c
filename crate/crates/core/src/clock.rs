//! Timestamps for workspace records.
//!
//! Scripted runs use a logical clock so that two runs with the same inputs
//! write byte-identical trial tables.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, TimeZone, Utc};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.6f+00:00";

#[derive(Debug)]
pub enum Clock {
    System,
    /// Starts at `start` and advances one second per reading.
    Logical {
        start: DateTime<Utc>,
        ticks: AtomicI64,
    },
}

impl Clock {
    pub fn logical() -> Clock {
        Clock::Logical { start: Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap(), ticks: AtomicI64::new(0) }
    }

    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Logical { start, ticks } => *start + chrono::Duration::seconds(ticks.fetch_add(1, Ordering::SeqCst)),
        }
    }

    pub fn now_string(&self) -> String {
        self.now().format(TIMESTAMP_FORMAT).to_string()
    }
}
