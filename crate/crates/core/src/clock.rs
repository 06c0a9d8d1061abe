use std::sync::Mutex;

use chrono::{Duration, Utc};

use crate::time::{self, Instant};

pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Utc::now()
    }
}

/// Manually advanced clock. Never moves backwards.
#[derive(Debug)]
pub struct FakeClock(Mutex<Instant>);

impl FakeClock {
    pub fn new(start: Instant) -> Self {
        Self(Mutex::new(time::truncate(start)))
    }

    pub fn advance(&self, by: Duration) {
        assert!(by >= Duration::zero(), "clock cannot move backwards");
        let mut now = self.0.lock().unwrap_or_else(|e| e.into_inner());
        *now += by;
    }

    pub fn set(&self, to: Instant) {
        let mut now = self.0.lock().unwrap_or_else(|e| e.into_inner());
        assert!(to >= *now, "clock cannot move backwards");
        *now = to;
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Instant {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}
