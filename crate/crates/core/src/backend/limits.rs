use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;

pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Test clock: `sleep` advances time instantly.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    /// Every duration passed to `sleep`, in call order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap().push(d);
        self.advance(d);
    }
}

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window limiter: at most `per_minute` grants in any 60 s window.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: usize,
    granted: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        assert!(per_minute >= 1, "rate limit must be at least 1/min");
        Self {
            per_minute: per_minute as usize,
            granted: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks (via `clock`) until a request may be issued, records it and
    /// returns the grant time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        loop {
            let wait = {
                let mut granted = self.granted.lock().unwrap();
                let now = clock.now();
                while granted.front().is_some_and(|&t| now >= t + WINDOW) {
                    granted.pop_front();
                }
                if granted.len() < self.per_minute {
                    granted.push_back(now);
                    return now;
                }
                granted[0] + WINDOW - now
            };
            clock.sleep(wait);
        }
    }
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2.0,
            cap: Duration::from_secs(60),
        }
    }
}

impl Backoff {
    /// Upper bound of the delay before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        let scaled = self.base.as_secs_f64() * self.factor.powi(retry.min(64) as i32);
        Duration::from_secs_f64(scaled.min(self.cap.as_secs_f64()))
    }

    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self.ceiling(retry).as_secs_f64();
        if ceiling <= 0.0 {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(rng.random_range(0.0..=ceiling))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn backoff_ceiling_doubles_then_caps() {
        let b = Backoff::default();
        assert_eq!(b.ceiling(0), Duration::from_secs(1));
        assert_eq!(b.ceiling(1), Duration::from_secs(2));
        assert_eq!(b.ceiling(5), Duration::from_secs(32));
        assert_eq!(b.ceiling(6), Duration::from_secs(60));
        assert_eq!(b.ceiling(40), Duration::from_secs(60));
    }

    #[test]
    fn jitter_within_ceiling() {
        let b = Backoff::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for retry in 0..10 {
            for _ in 0..50 {
                assert!(b.delay(retry, &mut rng) <= b.ceiling(retry));
            }
        }
    }

    fn max_in_any_window(grants: &[Duration]) -> usize {
        grants
            .iter()
            .map(|&start| {
                grants
                    .iter()
                    .filter(|&&t| t >= start && t < start + WINDOW)
                    .count()
            })
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn ceiling_holds_on_virtual_clock() {
        let clock = VirtualClock::new();
        let limiter = RateLimiter::new(7);
        let mut grants = Vec::new();
        for i in 0..40 {
            grants.push(limiter.acquire(&clock));
            clock.advance(Duration::from_millis(300 * (i % 5)));
        }
        assert!(max_in_any_window(&grants) <= 7);
        // 40 grants at 7/min need at least five full windows
        assert!(clock.now() >= Duration::from_secs(5 * 60));
    }

    #[test]
    fn ceiling_holds_with_concurrent_callers() {
        let clock = Arc::new(VirtualClock::new());
        let limiter = Arc::new(RateLimiter::new(5));
        let grants = Arc::new(Mutex::new(Vec::new()));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let (clock, limiter, grants) = (clock.clone(), limiter.clone(), grants.clone());
                s.spawn(move || {
                    for _ in 0..6 {
                        let at = limiter.acquire(clock.as_ref());
                        grants.lock().unwrap().push(at);
                    }
                });
            }
        });
        let mut grants = grants.lock().unwrap().clone();
        grants.sort();
        assert_eq!(grants.len(), 24);
        assert!(max_in_any_window(&grants) <= 5);
    }

    #[test]
    fn under_limit_never_sleeps() {
        let clock = VirtualClock::new();
        let limiter = RateLimiter::new(10);
        for _ in 0..10 {
            limiter.acquire(&clock);
        }
        assert!(clock.sleeps().is_empty());
        limiter.acquire(&clock);
        assert_eq!(clock.sleeps(), vec![WINDOW]);
    }
}
