//! Field-multiplication accounting.
//!
//! Every vector kernel in [`crate::field`] reports how many multiplications it
//! performs. Counting is thread-local and only active inside [`measure`], with
//! the tally split by the [`Phase`] that is current when the kernel runs.

use std::cell::{Cell, RefCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Anything not attributed to a named phase.
    Other,
    /// Aggregating challenged data blocks on the storage node.
    BlockAggregation,
    /// Aggregating challenged tags on the storage node.
    TagAggregation,
    /// Building a mask vector and its auxiliary tags.
    Mask,
    /// Auditor-side coefficient aggregation.
    CoefficientAggregation,
    /// SpaceMac verification dot products.
    MacVerify,
}

const PHASES: usize = 6;

fn slot(phase: Phase) -> usize {
    match phase {
        Phase::Other => 0,
        Phase::BlockAggregation => 1,
        Phase::TagAggregation => 2,
        Phase::Mask => 3,
        Phase::CoefficientAggregation => 4,
        Phase::MacVerify => 5,
    }
}

thread_local! {
    static ENABLED: Cell<bool> = const { Cell::new(false) };
    static CURRENT: Cell<Phase> = const { Cell::new(Phase::Other) };
    static COUNTS: RefCell<[u64; PHASES]> = const { RefCell::new([0; PHASES]) };
}

/// Multiplication counts per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MulTally {
    counts: [u64; PHASES],
}

impl MulTally {
    pub fn get(&self, phase: Phase) -> u64 {
        self.counts[slot(phase)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[inline]
pub(crate) fn record(n: u64) {
    if ENABLED.with(|e| e.get()) {
        let s = slot(CURRENT.with(|c| c.get()));
        COUNTS.with(|c| c.borrow_mut()[s] += n);
    }
}

/// Restores the previous phase on drop.
pub struct PhaseGuard {
    previous: Phase,
}

impl Drop for PhaseGuard {
    fn drop(&mut self) {
        CURRENT.with(|c| c.set(self.previous));
    }
}

/// Attributes multiplications to `phase` until the guard is dropped.
pub fn phase(phase: Phase) -> PhaseGuard {
    let previous = CURRENT.with(|c| c.replace(phase));
    PhaseGuard { previous }
}

/// Runs `f` with counting enabled and returns its result with the tally.
/// Nested calls are not supported; the inner call's counts are folded into
/// the outer one.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, MulTally) {
    let was_enabled = ENABLED.with(|e| e.replace(true));
    let before = COUNTS.with(|c| *c.borrow());
    let out = f();
    let after = COUNTS.with(|c| *c.borrow());
    ENABLED.with(|e| e.set(was_enabled));
    let mut tally = MulTally::default();
    for i in 0..PHASES {
        tally.counts[i] = after[i] - before[i];
    }
    (out, tally)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Gf256, SymbolVector};

    #[test]
    fn counts_only_inside_measure() {
        let a = SymbolVector::from_bytes(&[1, 2, 3, 4]);
        let mut b = SymbolVector::zeros(4);
        b.axpy(Gf256(3), &a).unwrap();
        let ((), tally) = measure(|| {
            let _g = phase(Phase::MacVerify);
            b.axpy(Gf256(3), &a).unwrap();
            crate::field::dot(&a, &b).unwrap();
        });
        assert_eq!(tally.get(Phase::MacVerify), 8);
        assert_eq!(tally.total(), 8);
    }
}
