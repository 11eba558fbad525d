use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Allowed stop offsets `min..=max` relative to the start word. An excerpt
/// covers `stop - start + 1` tokens, so the default window selects 4 to 11
/// tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanWindow {
    pub min: usize,
    pub max: usize,
}

impl Default for SpanWindow {
    fn default() -> Self {
        Self { min: 3, max: 10 }
    }
}

impl SpanWindow {
    pub fn validate(&self) -> Result<()> {
        if self.min == 0 || self.max < self.min {
            return Err(Error::Config(alloc::format!(
                "span offsets must satisfy 1 <= min <= max, got {}..={}",
                self.min,
                self.max
            )));
        }
        Ok(())
    }
}

/// Inclusive token range `[start, stop]` selected for one concept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub stop: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.stop - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offset(&self) -> usize {
        self.stop - self.start
    }

    pub fn is_valid(&self, doc_len: usize, window: SpanWindow) -> bool {
        self.stop >= self.start && self.stop < doc_len && (window.min..=window.max).contains(&self.offset())
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.start..=self.stop).contains(&k)
    }
}

/// Start and stop supports for one document.
///
/// Pad positions are excluded from both supports, and a start is valid only
/// if at least one stop is reachable from it. A document with no valid pair
/// under that rule (fewer than four real tokens, padded up to four) falls back
/// to admitting pad positions as stops so that one excerpt always exists.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanMasks {
    start: Vec<bool>,
    stop_ok: Vec<bool>,
    window: SpanWindow,
}

impl SpanMasks {
    pub fn new(tokens: &[u32], pad_id: u32, window: SpanWindow) -> Result<Self> {
        let real: Vec<bool> = tokens.iter().map(|&t| t != pad_id).collect();
        let strict = Self::with_stops(&real, real.clone(), window);
        if strict.start.iter().any(|&s| s) {
            return Ok(strict);
        }
        let relaxed = Self::with_stops(&real, vec![true; tokens.len()], window);
        if relaxed.start.iter().any(|&s| s) {
            return Ok(relaxed);
        }
        Err(Error::NoValidPosition("document has no valid excerpt start"))
    }

    fn with_stops(real: &[bool], stop_ok: Vec<bool>, window: SpanWindow) -> Self {
        let m = real.len();
        let start = (0..m)
            .map(|k| {
                real[k] && (k + window.min..=(k + window.max).min(m.saturating_sub(1))).any(|s| s < m && stop_ok[s])
            })
            .collect();
        Self { start, stop_ok, window }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    pub fn window(&self) -> SpanWindow {
        self.window
    }

    pub fn start(&self) -> &[bool] {
        &self.start
    }

    /// Valid stop positions given a start.
    pub fn stop(&self, start: usize) -> Vec<bool> {
        let m = self.len();
        (0..m)
            .map(|s| s >= start + self.window.min && s <= start + self.window.max && self.stop_ok[s])
            .collect()
    }

    /// Every valid span, ordered by start then stop.
    pub fn spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        for (k, &ok) in self.start.iter().enumerate() {
            if !ok {
                continue;
            }
            for (s, &stop_ok) in self.stop(k).iter().enumerate() {
                if stop_ok {
                    out.push(Span { start: k, stop: s });
                }
            }
        }
        out
    }
}
