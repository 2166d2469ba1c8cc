use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Service {
    Sites,
    Directions,
    Metadata,
    Imagery,
}

impl Service {
    pub const ALL: [Service; 4] = [Service::Sites, Service::Directions, Service::Metadata, Service::Imagery];

    pub fn name(self) -> &'static str {
        match self {
            Service::Sites => "sites",
            Service::Directions => "directions",
            Service::Metadata => "metadata",
            Service::Imagery => "imagery",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceLimits {
    /// Maximum sustained requests per second; `None` disables throttling.
    pub requests_per_second: Option<f64>,
    /// Maximum requests in one run.
    pub daily_cap: Option<u64>,
}

/// Spaces out request start times to at most `rate` per second.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / rate),
            next: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until the caller may start a request.
    ///
    /// The lock is held while sleeping so start times are handed out strictly
    /// in order, `interval` apart.
    pub fn acquire(&self) {
        let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
        let now = Instant::now();
        let slot = match *next {
            Some(t) if t > now => t,
            _ => now,
        };
        if slot > now {
            std::thread::sleep(slot - now);
        }
        *next = Some(slot + self.interval);
    }
}

/// Per-service request accounting shared by every client in a run.
#[derive(Debug)]
pub struct QuotaLedger {
    counters: [AtomicU64; 4],
    limits: [ServiceLimits; 4],
    limiters: [Option<RateLimiter>; 4],
}

impl Default for QuotaLedger {
    fn default() -> Self {
        QuotaLedger::new(BTreeMap::new())
    }
}

impl QuotaLedger {
    pub fn new(limits: BTreeMap<Service, ServiceLimits>) -> Self {
        let limits = Service::ALL.map(|s| limits.get(&s).copied().unwrap_or_default());
        let limiters = limits.map(|l| l.requests_per_second.filter(|r| *r > 0.0).map(RateLimiter::per_second));
        QuotaLedger {
            counters: Default::default(),
            limits,
            limiters,
        }
    }

    pub fn limits(&self, service: Service) -> ServiceLimits {
        self.limits[service.index()]
    }

    /// Records one request, failing without counting it when the cap is reached.
    pub fn charge(&self, service: Service) -> Result<()> {
        let counter = &self.counters[service.index()];
        let cap = self.limits[service.index()].daily_cap;
        counter
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| match cap {
                Some(cap) if used >= cap => None,
                _ => Some(used + 1),
            })
            .map(|_| ())
            .map_err(|used| Error::QuotaExhausted {
                service: service.name(),
                used,
                cap: cap.unwrap_or(u64::MAX),
            })
    }

    /// Waits for the service's rate limiter, if one is configured.
    pub fn throttle(&self, service: Service) {
        if let Some(l) = &self.limiters[service.index()] {
            l.acquire();
        }
    }

    pub fn used(&self, service: Service) -> u64 {
        self.counters[service.index()].load(Ordering::SeqCst)
    }

    pub fn usage(&self) -> BTreeMap<String, u64> {
        Service::ALL.iter().map(|s| (s.name().to_string(), self.used(*s))).collect()
    }
}
