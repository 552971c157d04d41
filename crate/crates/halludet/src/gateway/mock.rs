//! In-process backend and clock for tests and offline runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{BackendReply, ChatBackend, ChatRequest, Clock, TransportError};

/// One scripted outcome, optionally taking some time.
pub struct Scripted {
    pub result: Result<BackendReply, TransportError>,
    pub delay: Duration,
}

impl Scripted {
    pub fn ok(content: impl Into<String>) -> Self {
        Self { result: Ok(BackendReply::text(content)), delay: Duration::ZERO }
    }

    pub fn err(e: TransportError) -> Self {
        Self { result: Err(e), delay: Duration::ZERO }
    }

    pub fn after(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

type Script = dyn Fn(&ChatRequest, usize) -> Scripted + Send + Sync;

/// Backend driven by a closure of `(request, call_index)`. Records every
/// call and the peak number of concurrent calls.
pub struct ScriptedBackend {
    script: Box<Script>,
    calls: Mutex<Vec<ChatRequest>>,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    clock: Option<Arc<ManualClock>>,
}

impl ScriptedBackend {
    pub fn new(script: impl Fn(&ChatRequest, usize) -> Scripted + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(script),
            calls: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
            clock: None,
        }
    }

    pub fn always(content: impl Into<String>) -> Self {
        let content = content.into();
        Self::new(move |_, _| Scripted::ok(content.clone()))
    }

    /// Plays `outcomes` in call order; later calls repeat the last one.
    pub fn sequence(outcomes: Vec<Result<BackendReply, TransportError>>) -> Self {
        assert!(!outcomes.is_empty());
        Self::new(move |_, i| Scripted {
            result: outcomes[i.min(outcomes.len() - 1)].clone(),
            delay: Duration::ZERO,
        })
    }

    /// Scripted delays advance `clock` instead of sleeping.
    pub fn with_clock(mut self, clock: Arc<ManualClock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    pub fn high_water_mark(&self) -> usize {
        self.high_water.load(Ordering::SeqCst)
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, TransportError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.high_water.fetch_max(now, Ordering::SeqCst);
        let index = {
            let mut calls = self.calls.lock().unwrap();
            calls.push(request.clone());
            calls.len() - 1
        };
        let outcome = (self.script)(request, index);
        if !outcome.delay.is_zero() {
            match &self.clock {
                Some(clock) => clock.advance(outcome.delay),
                None => std::thread::sleep(outcome.delay),
            }
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        outcome.result
    }

    fn identity(&self) -> String {
        "scripted".into()
    }
}

/// Clock that only moves when told to. Sleeps advance it and are logged.
#[derive(Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
    sleeps: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.sleeps.lock().unwrap().push(d);
        self.advance(d);
    }
}
