//! Chat-completion transport: the client interface, retries and
//! order-preserving concurrent dispatch.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::seed::SeedSplitter;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    /// Caller-assigned identifier; results are matched to requests by it.
    pub id: u64,
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn single(id: u64, model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id,
            model: model.into(),
            messages: vec![ChatMessage::user(prompt)],
        }
    }

    /// Text of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
    /// Whether another attempt might succeed.
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

/// Exponential backoff: attempt `a` (0-based) waits
/// `base * 2^a * (1 + j)` before the next try, `j` in `[0, 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter_seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(60),
            jitter_seed: 0,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            jitter_seed: 0,
        }
    }

    pub fn delay(&self, request_id: u64, attempt: u32) -> Duration {
        let draw = SeedSplitter::new(self.jitter_seed).derive("jitter", &[request_id, attempt as u64]);
        let jitter = 1.0 + 0.5 * (draw >> 11) as f64 / (1u64 << 53) as f64;
        let exp = 2f64.powi(attempt.min(30) as i32);
        self.base_delay.mul_f64(exp * jitter).min(self.max_delay)
    }
}

/// Retries retryable failures up to `policy.max_attempts` total attempts.
pub fn complete_with_retry<C: ChatClient + ?Sized>(
    client: &C,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<String, TransportError> {
    let attempts = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        match client.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) if !e.retryable || attempt + 1 >= attempts => {
                return Err(TransportError {
                    message: format!("{} (after {} attempt(s))", e.message, attempt + 1),
                    retryable: e.retryable,
                })
            }
            Err(e) => {
                let wait = policy.delay(request.id, attempt);
                log::debug!("request {} attempt {} failed: {}; retrying in {:?}", request.id, attempt + 1, e, wait);
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
                attempt += 1;
            }
        }
    }
}

/// Sends every request with at most `max_concurrent` in flight. The result
/// at index `i` belongs to `requests[i]` regardless of completion order.
pub fn dispatch<C: ChatClient + ?Sized>(
    client: &C,
    requests: &[ChatRequest],
    max_concurrent: usize,
    policy: &RetryPolicy,
) -> Vec<Result<String, TransportError>> {
    let workers = max_concurrent.max(1).min(requests.len());
    if workers <= 1 {
        return requests
            .iter()
            .map(|r| complete_with_retry(client, r, policy))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<String, TransportError>>>> =
        Mutex::new(vec![None; requests.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let out = complete_with_retry(client, req, policy);
                slots.lock().expect("result slots poisoned")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every request is dispatched exactly once"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Fails the first `fail_first` attempts of each request, then echoes.
    struct Flaky {
        fail_first: u32,
        fatal: bool,
        calls: Mutex<HashMap<u64, u32>>,
    }

    impl ChatClient for Flaky {
        fn complete(&self, r: &ChatRequest) -> Result<String, TransportError> {
            let mut calls = self.calls.lock().unwrap();
            let n = calls.entry(r.id).or_default();
            *n += 1;
            if *n <= self.fail_first {
                return Err(if self.fatal {
                    TransportError::fatal("bad request")
                } else {
                    TransportError::retryable("busy")
                });
            }
            Ok(format!("echo {}", r.prompt()))
        }
    }

    fn flaky(fail_first: u32, fatal: bool) -> Flaky {
        Flaky {
            fail_first,
            fatal,
            calls: Mutex::new(HashMap::new()),
        }
    }

    #[test]
    fn retries_until_success() {
        let c = flaky(4, false);
        let r = ChatRequest::single(1, "m", "hi");
        assert_eq!(complete_with_retry(&c, &r, &RetryPolicy::immediate(5)).unwrap(), "echo hi");
        assert_eq!(c.calls.lock().unwrap()[&1], 5);
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let c = flaky(5, false);
        let r = ChatRequest::single(1, "m", "hi");
        let e = complete_with_retry(&c, &r, &RetryPolicy::immediate(5)).unwrap_err();
        assert!(e.message.contains("after 5 attempt"));
        assert_eq!(c.calls.lock().unwrap()[&1], 5);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let c = flaky(1, true);
        let r = ChatRequest::single(1, "m", "hi");
        assert!(complete_with_retry(&c, &r, &RetryPolicy::immediate(5)).is_err());
        assert_eq!(c.calls.lock().unwrap()[&1], 1);
    }

    #[test]
    fn backoff_grows_and_is_jittered_deterministically() {
        let p = RetryPolicy::default();
        let d: Vec<Duration> = (0..4).map(|a| p.delay(9, a)).collect();
        for (a, w) in d.iter().enumerate() {
            let base = Duration::from_secs(1 << a);
            assert!(*w >= base && *w < base.mul_f64(1.5), "{a} {w:?}");
        }
        assert_eq!(d[2], p.delay(9, 2));
        assert!(p.delay(9, 40) <= p.max_delay);
    }

    /// Sleeps longer for earlier requests so completions arrive in reverse.
    struct Reversing;

    impl ChatClient for Reversing {
        fn complete(&self, r: &ChatRequest) -> Result<String, TransportError> {
            std::thread::sleep(Duration::from_millis(20 - r.id.min(20)));
            Ok(r.id.to_string())
        }
    }

    #[test]
    fn dispatch_preserves_order() {
        let reqs: Vec<_> = (0..20).map(|i| ChatRequest::single(i, "m", "p")).collect();
        let out = dispatch(&Reversing, &reqs, 8, &RetryPolicy::immediate(1));
        let ids: Vec<String> = out.into_iter().map(Result::unwrap).collect();
        assert_eq!(ids, (0..20).map(|i| i.to_string()).collect::<Vec<_>>());
        assert!(dispatch(&Reversing, &[], 4, &RetryPolicy::immediate(1)).is_empty());
    }
}
