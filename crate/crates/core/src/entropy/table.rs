use super::Support;
use crate::error::{CodecError, Result};

/// Fixed-point pmf over a contiguous symbol range, optionally followed by one
/// escape slot of frequency 1. Frequencies sum to exactly `2^precision_bits`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    precision_bits: u32,
    min_symbol: i32,
    freqs: Vec<u32>,
    cumulative: Vec<u32>,
    escape: bool,
}

/// Quantizes a pmf (entries ≥ 0, summing to 1 within 1e-3) into a table
/// without an escape slot.
pub fn build_frequency_table(
    pmf: &[f64],
    min_symbol: i32,
    precision_bits: u32,
) -> Result<FrequencyTable> {
    check_pmf(pmf)?;
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > 1e-3 {
        return Err(CodecError::Precondition(format!(
            "pmf sums to {sum}, expected 1 within 1e-3"
        )));
    }
    FrequencyTable::from_weights(pmf, min_symbol, precision_bits, false)
}

fn check_pmf(pmf: &[f64]) -> Result<()> {
    if pmf.is_empty() {
        return Err(CodecError::Precondition("empty pmf".into()));
    }
    if let Some(p) = pmf.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(CodecError::Precondition(format!("invalid pmf entry {p}")));
    }
    Ok(())
}

impl FrequencyTable {
    /// Builds a table from nonnegative weights that need not be normalized.
    /// With `escape`, one extra slot of frequency 1 follows the last symbol.
    pub fn from_weights(
        weights: &[f64],
        min_symbol: i32,
        precision_bits: u32,
        escape: bool,
    ) -> Result<Self> {
        if !(1..=24).contains(&precision_bits) {
            return Err(CodecError::Config(format!(
                "precision_bits must be in 1..=24, got {precision_bits}"
            )));
        }
        check_pmf(weights)?;
        let total = 1u32 << precision_bits;
        let slots = weights.len() + escape as usize;
        if slots > total as usize {
            return Err(CodecError::Config(format!(
                "{slots} symbols cannot each get a frequency at {precision_bits}-bit precision"
            )));
        }
        let mut freqs = apportion(weights, total - escape as u32)?;
        if escape {
            freqs.push(1);
        }
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &f in &freqs {
            acc += f;
            cumulative.push(acc);
        }
        debug_assert_eq!(acc, total);
        Ok(Self {
            precision_bits,
            min_symbol,
            freqs,
            cumulative,
            escape,
        })
    }

    /// Model pmf over `support` with an escape slot, as the codec uses it.
    pub fn for_support(pmf: &[f64], support: Support, precision_bits: u32) -> Result<Self> {
        if pmf.len() != support.len() {
            return Err(CodecError::Shape(format!(
                "pmf has {} entries for a support of {}",
                pmf.len(),
                support.len()
            )));
        }
        Self::from_weights(pmf, support.min, precision_bits, true)
    }

    #[inline]
    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    #[inline]
    pub fn total(&self) -> u32 {
        1 << self.precision_bits
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn has_escape(&self) -> bool {
        self.escape
    }

    /// Number of directly codable symbols (excluding the escape slot).
    pub fn symbol_count(&self) -> usize {
        self.freqs.len() - self.escape as usize
    }

    pub fn min_symbol(&self) -> i32 {
        self.min_symbol
    }

    pub fn max_symbol(&self) -> i32 {
        self.min_symbol + self.symbol_count() as i32 - 1
    }

    /// Slot index of `symbol`, if it lies inside the table's range.
    #[inline]
    pub fn slot_of(&self, symbol: i32) -> Option<usize> {
        let off = symbol as i64 - self.min_symbol as i64;
        (off >= 0 && (off as usize) < self.symbol_count()).then_some(off as usize)
    }

    /// Slot index of the escape entry.
    pub fn escape_slot(&self) -> Option<usize> {
        self.escape.then(|| self.freqs.len() - 1)
    }

    pub fn symbol_of_slot(&self, slot: usize) -> i32 {
        self.min_symbol + slot as i32
    }

    /// (cumulative start, frequency) of a slot.
    #[inline]
    pub fn range_of(&self, slot: usize) -> (u32, u32) {
        (self.cumulative[slot], self.freqs[slot])
    }

    /// The slot whose cumulative interval contains `target`.
    pub fn slot_for_target(&self, target: u32) -> Option<usize> {
        if target >= self.total() {
            return None;
        }
        // last index with cumulative[i] <= target
        let i = self.cumulative.partition_point(|&c| c <= target);
        Some(i - 1)
    }

    /// Table probability of a slot.
    pub fn probability(&self, slot: usize) -> f64 {
        self.freqs[slot] as f64 / self.total() as f64
    }

    /// Cost in bits of coding `symbol`, including the 32 raw bits an escape carries.
    pub fn cost_bits(&self, symbol: i32) -> Option<f64> {
        match self.slot_of(symbol) {
            Some(s) => Some(-self.probability(s).log2()),
            None => self
                .escape_slot()
                .map(|e| -self.probability(e).log2() + 32.0),
        }
    }
}

/// Splits `total` into integer frequencies proportional to `weights`, each at
/// least 1.
///
/// Every weight first gets `max(1, floor(share))`. A remaining deficit goes to
/// the symbols that were not raised to 1, largest fractional remainder first,
/// ties to the lower index. A surplus (caused by raising tiny shares to 1) is
/// taken one unit at a time from whichever symbol currently has the largest
/// frequency, ties to the lower index.
fn apportion(weights: &[f64], total: u32) -> Result<Vec<u32>> {
    let n = weights.len();
    let sum: f64 = weights.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(CodecError::Precondition(format!(
            "pmf has total mass {sum}"
        )));
    }
    if n > total as usize {
        return Err(CodecError::Config(format!(
            "{n} symbols exceed the {total} available frequency units"
        )));
    }
    let scale = total as f64 / sum;
    let mut freqs = Vec::with_capacity(n);
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    let mut assigned: u64 = 0;
    for (i, &w) in weights.iter().enumerate() {
        let share = w * scale;
        let base = share.floor();
        let f = if base < 1.0 {
            1
        } else {
            remainders.push((share - base, i));
            base as u32
        };
        assigned += f as u64;
        freqs.push(f);
    }

    let total = total as u64;
    if assigned < total {
        let deficit = (total - assigned) as usize;
        remainders.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if remainders.is_empty() {
            return Err(CodecError::Config(
                "no symbol can absorb the frequency deficit".into(),
            ));
        }
        for k in 0..deficit {
            freqs[remainders[k % remainders.len()].1] += 1;
        }
    } else if assigned > total {
        remove_surplus(&mut freqs, assigned - total)?;
    }
    Ok(freqs)
}

/// Takes `surplus` units, one at a time, from whichever symbol has the
/// largest frequency (ties to the lower index), never going below 1.
///
/// Computed in closed form: every frequency above the final level `L` is
/// cut to `L`, then the lowest-indexed symbols at `L` give one more unit each.
fn remove_surplus(freqs: &mut [u32], surplus: u64) -> Result<()> {
    let donors: Vec<usize> = (0..freqs.len()).filter(|&i| freqs[i] > 1).collect();
    let excess = |level: u32| -> u64 {
        donors
            .iter()
            .map(|&i| freqs[i].saturating_sub(level) as u64)
            .sum()
    };
    if excess(1) < surplus {
        return Err(CodecError::Config("cannot remove frequency surplus".into()));
    }
    // smallest level whose excess fits in the surplus
    let (mut lo, mut hi) = (1u32, donors.iter().map(|&i| freqs[i]).max().unwrap_or(1));
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if excess(mid) <= surplus {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let level = lo;
    let mut rest = surplus - excess(level);
    for &i in &donors {
        let f = &mut freqs[i];
        if *f >= level {
            *f = level;
            if rest > 0 {
                *f -= 1;
                rest -= 1;
            }
        }
    }
    debug_assert_eq!(rest, 0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::{BinModel, GaussianBin};
    use proptest::prelude::*;

    #[test]
    fn uniform_four() {
        let t = build_frequency_table(&[0.25; 4], 0, 16).unwrap();
        assert_eq!(t.freqs(), &[16384; 4]);
        assert_eq!(t.cumulative(), &[0, 16384, 32768, 49152, 65536]);
    }

    #[test]
    fn skewed_pair() {
        // shares 65470.464 and 65.536: the single leftover unit goes to the
        // larger remainder
        let t = build_frequency_table(&[0.999, 0.001], 0, 16).unwrap();
        assert_eq!(t.freqs(), &[65470, 66]);
    }

    #[test]
    fn surplus_taken_from_largest() {
        // three near-zero symbols are raised to 1; the two units of surplus
        // come out of the dominant symbol
        let t = build_frequency_table(&[1.0 - 3e-9, 1e-9, 1e-9, 1e-9], 0, 4).unwrap();
        assert_eq!(t.freqs(), &[13, 1, 1, 1]);
    }

    #[test]
    fn rebuild_is_identical() {
        let mut pmf = Vec::new();
        GaussianBin::new(1.37, 2.2).fill_pmf(Support::STYLE, &mut pmf);
        let a = FrequencyTable::for_support(&pmf, Support::STYLE, 18).unwrap();
        let b = FrequencyTable::for_support(&pmf.clone(), Support::STYLE, 18).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.freqs().len(), 512);
        assert_eq!(*a.freqs().last().unwrap(), 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            build_frequency_table(&[0.5, 0.2], 0, 16),
            Err(CodecError::Precondition(_))
        ));
        assert!(matches!(
            build_frequency_table(&[1.0 / 8.0; 8], 0, 2),
            Err(CodecError::Config(_))
        ));
        assert!(build_frequency_table(&[1.0, -0.0, f64::NAN], 0, 16).is_err());
    }

    #[test]
    fn slot_lookup() {
        let t = FrequencyTable::from_weights(&[0.5, 0.25, 0.25], -1, 8, true).unwrap();
        assert_eq!(t.slot_of(-1), Some(0));
        assert_eq!(t.slot_of(1), Some(2));
        assert_eq!(t.slot_of(2), None);
        assert_eq!(t.escape_slot(), Some(3));
        for target in 0..t.total() {
            let s = t.slot_for_target(target).unwrap();
            let (c, f) = t.range_of(s);
            assert!(c <= target && target < c + f);
        }
        assert_eq!(t.slot_for_target(256), None);
    }

    /// Literal one-unit-at-a-time surplus removal.
    fn remove_surplus_stepwise(freqs: &mut [u32], mut surplus: u64) {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;
        let mut heap: BinaryHeap<(u32, Reverse<usize>)> = freqs
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 1)
            .map(|(i, &f)| (f, Reverse(i)))
            .collect();
        while surplus > 0 {
            let (f, Reverse(i)) = heap.pop().unwrap();
            freqs[i] = f - 1;
            surplus -= 1;
            if f > 2 {
                heap.push((f - 1, Reverse(i)));
            }
        }
    }

    proptest! {
        #[test]
        fn surplus_matches_stepwise(
            freqs in proptest::collection::vec(1u32..40, 1..30),
            frac in 0.0f64..1.0,
        ) {
            let room: u64 = freqs.iter().map(|&f| f as u64 - 1).sum();
            let surplus = (room as f64 * frac) as u64;
            let mut a = freqs.clone();
            let mut b = freqs.clone();
            remove_surplus(&mut a, surplus).unwrap();
            remove_surplus_stepwise(&mut b, surplus);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn tables_are_complete(
            weights in proptest::collection::vec(0.0f64..1.0, 1..300),
            bits in 9u32..=20,
            escape in any::<bool>(),
        ) {
            prop_assume!(weights.iter().sum::<f64>() > 0.0);
            let t = FrequencyTable::from_weights(&weights, 0, bits, escape).unwrap();
            prop_assert_eq!(t.freqs().iter().map(|&f| f as u64).sum::<u64>(), 1u64 << bits);
            prop_assert!(t.freqs().iter().all(|&f| f >= 1));
            prop_assert!(t.cumulative().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
