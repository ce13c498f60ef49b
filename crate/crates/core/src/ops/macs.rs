//! Multiply-accumulate instrumentation.
//!
//! Kernels report every multiplication they execute (including the ones that
//! land on zero padding) to a thread-local tally. Counting is off unless a
//! caller wraps work in [`count_macs`].

use std::cell::{Cell, RefCell};
use std::fmt;

use serde::Serialize;

/// Category a multiply-accumulate is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MacKind {
    Standard,
    Depthwise,
    Pointwise,
    FullyConnected,
    /// Depthwise and pointwise work performed inside an attention block.
    Attention,
}

impl MacKind {
    pub const ALL: [MacKind; 5] = [
        MacKind::Standard,
        MacKind::Depthwise,
        MacKind::Pointwise,
        MacKind::FullyConnected,
        MacKind::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MacKind::Standard => "standard",
            MacKind::Depthwise => "depthwise",
            MacKind::Pointwise => "pointwise",
            MacKind::FullyConnected => "fully_connected",
            MacKind::Attention => "attention",
        }
    }
}

impl fmt::Display for MacKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-kind MAC totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MacTally {
    pub standard: u64,
    pub depthwise: u64,
    pub pointwise: u64,
    pub fully_connected: u64,
    pub attention: u64,
}

impl MacTally {
    pub fn get(&self, kind: MacKind) -> u64 {
        match kind {
            MacKind::Standard => self.standard,
            MacKind::Depthwise => self.depthwise,
            MacKind::Pointwise => self.pointwise,
            MacKind::FullyConnected => self.fully_connected,
            MacKind::Attention => self.attention,
        }
    }

    pub fn add(&mut self, kind: MacKind, n: u64) {
        let slot = match kind {
            MacKind::Standard => &mut self.standard,
            MacKind::Depthwise => &mut self.depthwise,
            MacKind::Pointwise => &mut self.pointwise,
            MacKind::FullyConnected => &mut self.fully_connected,
            MacKind::Attention => &mut self.attention,
        };
        *slot += n;
    }

    pub fn merge(&mut self, other: &MacTally) {
        for kind in MacKind::ALL {
            self.add(kind, other.get(kind));
        }
    }

    pub fn total(&self) -> u64 {
        MacKind::ALL.iter().map(|&k| self.get(k)).sum()
    }
}

thread_local! {
    static TALLY: RefCell<Option<MacTally>> = const { RefCell::new(None) };
    static ATTRIBUTION: Cell<Option<MacKind>> = const { Cell::new(None) };
}

/// Run `f` and return its result together with every MAC executed on this
/// thread while it ran. Nested calls each see only their own work.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, MacTally) {
    let saved = TALLY.with(|t| t.borrow_mut().replace(MacTally::default()));
    let out = f();
    let tally = TALLY.with(|t| {
        let mut slot = t.borrow_mut();
        let mine = slot.take().unwrap_or_default();
        *slot = saved.map(|mut outer| {
            outer.merge(&mine);
            outer
        });
        mine
    });
    (out, tally)
}

/// Attribute every MAC recorded inside `f` to `kind`, regardless of which
/// kernel performs it.
pub fn attribute_to<R>(kind: MacKind, f: impl FnOnce() -> R) -> R {
    let saved = ATTRIBUTION.with(|a| a.replace(Some(kind)));
    let out = f();
    ATTRIBUTION.with(|a| a.set(saved));
    out
}

#[inline]
pub(crate) fn record(kind: MacKind, n: u64) {
    TALLY.with(|t| {
        if let Some(tally) = t.borrow_mut().as_mut() {
            let kind = ATTRIBUTION.with(|a| a.get()).unwrap_or(kind);
            tally.add(kind, n);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_is_scoped_and_nests() {
        record(MacKind::Standard, 5);
        let ((), outer) = count_macs(|| {
            record(MacKind::Standard, 2);
            let ((), inner) = count_macs(|| record(MacKind::Pointwise, 3));
            assert_eq!(inner.pointwise, 3);
            assert_eq!(inner.total(), 3);
        });
        assert_eq!(outer.standard, 2);
        assert_eq!(outer.pointwise, 3);
    }

    #[test]
    fn attribution_overrides_kind() {
        let ((), t) = count_macs(|| {
            attribute_to(MacKind::Attention, || record(MacKind::Depthwise, 4));
            record(MacKind::Depthwise, 1);
        });
        assert_eq!(t.attention, 4);
        assert_eq!(t.depthwise, 1);
    }
}
