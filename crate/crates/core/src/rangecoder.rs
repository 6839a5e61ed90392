//! Range coder over [`FrequencyTable`]s.
//!
//! Byte-oriented with a 32-bit range and carry propagation through a cached
//! byte, in the style of the LZMA coder, but with multiply-shift subdivision:
//! a slot `[c, c+f)` of a table with total `2^P` maps to
//! `[⌊R·c/2^P⌋, ⌊R·(c+f)/2^P⌋)` of the current range `R`. The top slot ends
//! exactly at `R`, so the only coding loss is one unit of rounding per symbol.
//!
//! Stream format:
//! - encoder state is `low` (33 significant bits) and `range` in
//!   `[2^24, 2^32)`; whenever `range < 2^24` both shift left by 8 and the top
//!   byte of `low` is emitted, with pending `0xFF` bytes resolved once a
//!   carry is known;
//! - the first byte the LZMA scheme would emit is always zero and is omitted;
//! - `finish` moves `low` up to the first multiple of `2^24` inside the
//!   final interval and emits bytes up to and including its top byte. The
//!   three zero bytes below it are not stored; the decoder reads them as
//!   implicit padding, so a well-formed stream is consumed to exactly its
//!   length plus three;
//! - escapes code the table's escape slot followed by the value as two
//!   uniform 16-bit digits (high half first) of its two's-complement bits.

use crate::entropy::FrequencyTable;
use crate::error::{CodecError, Result};

const TOP: u32 = 1 << 24;

/// Implicit zero bytes after the end of every stream.
pub const FLUSH_PADDING: usize = 3;

/// What a table slot decoded to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodedSymbol {
    Symbol(i32),
    Escape,
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    leading: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            leading: true,
            out: Vec::new(),
        }
    }

    /// Bytes emitted so far (excluding cached and pending bytes).
    pub fn emitted(&self) -> &[u8] {
        &self.out
    }

    pub fn range(&self) -> u32 {
        self.range
    }

    /// Codes an in-support symbol. Out-of-range symbols are an error; use
    /// [`encode_value`](Self::encode_value) to fall back to the escape path.
    pub fn encode_symbol(&mut self, table: &FrequencyTable, symbol: i32) -> Result<()> {
        let slot = table.slot_of(symbol).ok_or(CodecError::OutOfSupport {
            symbol,
            min: table.min_symbol(),
            max: table.max_symbol(),
        })?;
        let (c, f) = table.range_of(slot);
        self.encode_interval(c, f, table.precision_bits());
        Ok(())
    }

    /// Codes the escape slot followed by 32 raw bits of `value`.
    pub fn encode_escape_value(&mut self, table: &FrequencyTable, value: i32) -> Result<()> {
        let slot = table
            .escape_slot()
            .ok_or_else(|| CodecError::Precondition("table has no escape slot".into()))?;
        let (c, f) = table.range_of(slot);
        self.encode_interval(c, f, table.precision_bits());
        self.encode_raw32(value as u32);
        Ok(())
    }

    /// Codes `value` directly when in support, otherwise through the escape.
    /// Returns whether the escape path was taken.
    pub fn encode_value(&mut self, table: &FrequencyTable, value: i32) -> Result<bool> {
        if table.slot_of(value).is_some() {
            self.encode_symbol(table, value)?;
            Ok(false)
        } else {
            self.encode_escape_value(table, value)?;
            Ok(true)
        }
    }

    pub fn encode_raw32(&mut self, bits: u32) {
        self.encode_interval(bits >> 16, 1, 16);
        self.encode_interval(bits & 0xFFFF, 1, 16);
    }

    fn encode_interval(&mut self, cum: u32, freq: u32, precision: u32) {
        let r = self.range as u64;
        let lo = (r * cum as u64) >> precision;
        let hi = (r * (cum + freq) as u64) >> precision;
        self.low += lo;
        self.range = (hi - lo) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                let b = byte.wrapping_add(carry);
                if self.leading {
                    debug_assert_eq!(b, 0);
                    self.leading = false;
                } else {
                    self.out.push(b);
                }
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Flushes the coder. Adds at most 8 bits beyond the coded information.
    pub fn finish(mut self) -> Vec<u8> {
        let mask = TOP as u64 - 1;
        self.low = (self.low + mask) & !mask;
        self.shift_low();
        self.shift_low();
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    cursor: usize,
    code: u32,
    range: u32,
    started: bool,
}

impl<'a> RangeDecoder<'a> {
    /// The first four bytes are read lazily, so an empty payload is fine as
    /// long as nothing is decoded from it.
    pub fn new(data: &'a [u8]) -> Self {
        Self {
            data,
            cursor: 0,
            code: 0,
            range: u32::MAX,
            started: false,
        }
    }

    /// Bytes consumed so far, counting implicit padding.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = match self.data.get(self.cursor) {
            Some(&b) => b,
            None if self.cursor < self.data.len() + FLUSH_PADDING => 0,
            None => {
                return Err(CodecError::Truncated(format!(
                    "range decoder needs byte {} of a {}-byte payload",
                    self.cursor,
                    self.data.len()
                )))
            }
        };
        self.cursor += 1;
        Ok(b)
    }

    /// Checks that the payload was consumed exactly, with nothing left over.
    pub fn finish(mut self) -> Result<()> {
        self.start()?;
        let expected = self.data.len() + FLUSH_PADDING;
        if self.cursor != expected {
            return Err(CodecError::Corrupt(format!(
                "{} payload bytes left undecoded",
                expected - self.cursor
            )));
        }
        Ok(())
    }

    fn start(&mut self) -> Result<()> {
        if !self.started {
            for _ in 0..4 {
                self.code = (self.code << 8) | self.next_byte()? as u32;
            }
            self.started = true;
        }
        Ok(())
    }

    /// Locates the slot containing the current code value, then narrows to it.
    fn decode_interval(
        &mut self,
        precision: u32,
        locate: impl FnOnce(u32) -> Option<(u32, u32)>,
    ) -> Result<u32> {
        self.start()?;
        if self.code >= self.range {
            return Err(CodecError::Corrupt(
                "code value outside the coding range".into(),
            ));
        }
        let r = self.range as u64;
        // largest cumulative value c with floor(r*c / 2^P) <= code
        let target = ((((self.code as u64) + 1) << precision) - 1) / r;
        let (cum, freq) = locate(target as u32)
            .ok_or_else(|| CodecError::Corrupt(format!("no slot for target {target}")))?;
        let lo = (r * cum as u64) >> precision;
        let hi = (r * (cum + freq) as u64) >> precision;
        self.code -= lo as u32;
        self.range = (hi - lo) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(cum)
    }

    pub fn decode_symbol(&mut self, table: &FrequencyTable) -> Result<CodedSymbol> {
        let mut found = None;
        self.decode_interval(table.precision_bits(), |target| {
            let slot = table.slot_for_target(target)?;
            found = Some(slot);
            Some(table.range_of(slot))
        })?;
        let slot = found.expect("located slot");
        if Some(slot) == table.escape_slot() {
            Ok(CodedSymbol::Escape)
        } else {
            Ok(CodedSymbol::Symbol(table.symbol_of_slot(slot)))
        }
    }

    pub fn decode_raw32(&mut self) -> Result<u32> {
        let hi = self.decode_interval(16, |t| Some((t, 1)))?;
        let lo = self.decode_interval(16, |t| Some((t, 1)))?;
        Ok((hi << 16) | lo)
    }

    /// Decodes one value, following the escape path when taken.
    pub fn decode_value(&mut self, table: &FrequencyTable) -> Result<i32> {
        match self.decode_symbol(table)? {
            CodedSymbol::Symbol(s) => Ok(s),
            CodedSymbol::Escape => Ok(self.decode_raw32()? as i32),
        }
    }
}
