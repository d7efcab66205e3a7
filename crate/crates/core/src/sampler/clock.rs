use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

/// Time source for the sampling loop. `now` is monotonic from an arbitrary
/// origin; `fork` hands a worker thread its own view of the clock.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;

    fn sleep_until(&self, deadline: Duration);

    fn sleep(&self, d: Duration) {
        self.sleep_until(self.now() + d);
    }

    /// Wall-clock milliseconds since the Unix epoch.
    fn wall_ms(&self) -> u64;

    fn fork(&self) -> Box<dyn Clock>;
}

#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }

    fn wall_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }

    fn fork(&self) -> Box<dyn Clock> {
        Box::new(self.clone())
    }
}

/// A sleep observed by a [`MockClock`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SleepRecord {
    pub clock_id: usize,
    pub from: Duration,
    pub until: Duration,
}

impl SleepRecord {
    pub fn duration(&self) -> Duration {
        self.until.saturating_sub(self.from)
    }
}

/// Virtual clock: sleeping jumps time forward instantly. Forks start at the
/// parent's current time, advance independently, and share one sleep log.
#[derive(Debug)]
pub struct MockClock {
    id: usize,
    now: Mutex<Duration>,
    epoch_ms: u64,
    log: Arc<Mutex<Vec<SleepRecord>>>,
    next_id: Arc<AtomicUsize>,
}

impl MockClock {
    pub fn new(epoch_ms: u64) -> Self {
        MockClock {
            id: 0,
            now: Mutex::new(Duration::ZERO),
            epoch_ms,
            log: Arc::new(Mutex::new(Vec::new())),
            next_id: Arc::new(AtomicUsize::new(1)),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn sleeps(&self) -> Vec<SleepRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Default for MockClock {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Clock for MockClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, deadline: Duration) {
        let mut now = self.now.lock().unwrap();
        let from = *now;
        if deadline > from {
            *now = deadline;
        }
        self.log.lock().unwrap().push(SleepRecord {
            clock_id: self.id,
            from,
            until: *now,
        });
    }

    fn wall_ms(&self) -> u64 {
        self.epoch_ms + self.now().as_millis() as u64
    }

    fn fork(&self) -> Box<dyn Clock> {
        Box::new(MockClock {
            id: self.next_id.fetch_add(1, Ordering::SeqCst),
            now: Mutex::new(self.now()),
            epoch_ms: self.epoch_ms,
            log: Arc::clone(&self.log),
            next_id: Arc::clone(&self.next_id),
        })
    }
}
