//! The sliding buffer of recovered channel estimates that feeds the analog
//! precoding networks.

use std::collections::VecDeque;

use crate::{Error, Result};

/// Fixed-capacity FIFO over recovered channel estimates (or anything
/// cloneable). Reads always produce exactly `capacity` items: until the
/// buffer fills, the missing older slots replicate the oldest entry present.
#[derive(Debug, Clone)]
pub struct SlidingWindow<T: Clone> {
    capacity: usize,
    buf: VecDeque<T>,
}

impl<T: Clone> SlidingWindow<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("sliding window capacity must be at least 1".into()));
        }
        Ok(Self { capacity, buf: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Appends the newest entry, evicting the oldest when full.
    pub fn push(&mut self, item: T) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(item);
    }

    /// All `capacity` entries ordered oldest → newest, replicating the oldest
    /// entry into unfilled slots. Errors when nothing has been pushed yet.
    pub fn stacked(&self) -> Result<Vec<&T>> {
        let oldest = self.buf.front().ok_or_else(|| {
            Error::Config("sliding window read before any entry was pushed".into())
        })?;
        let mut out = Vec::with_capacity(self.capacity);
        for _ in self.buf.len()..self.capacity {
            out.push(oldest);
        }
        out.extend(self.buf.iter());
        Ok(out)
    }

    pub fn latest(&self) -> Option<&T> {
        self.buf.back()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(matches!(SlidingWindow::<i32>::new(0), Err(Error::Config(_))));
    }

    #[test]
    fn unfilled_window_replicates_the_oldest() {
        let mut w = SlidingWindow::new(3).unwrap();
        assert!(w.stacked().is_err(), "empty window must refuse reads");
        w.push(10);
        assert_eq!(w.stacked().unwrap(), vec![&10, &10, &10]);
        w.push(20);
        assert_eq!(w.stacked().unwrap(), vec![&10, &10, &20]);
    }

    #[test]
    fn full_window_evicts_oldest_first() {
        let mut w = SlidingWindow::new(3).unwrap();
        for v in [1, 2, 3, 4, 5] {
            w.push(v);
            assert!(w.len() <= 3);
        }
        assert_eq!(w.stacked().unwrap(), vec![&3, &4, &5]);
        assert_eq!(w.latest(), Some(&5));
    }

    #[test]
    fn capacity_one_tracks_the_latest_entry() {
        let mut w = SlidingWindow::new(1).unwrap();
        w.push("a");
        w.push("b");
        assert_eq!(w.stacked().unwrap(), vec![&"b"]);
    }
}
