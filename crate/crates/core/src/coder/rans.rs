//! 64-bit-state rANS with 32-bit renormalization.
//!
//! Symbols are buffered in coding order and pushed through the coder in
//! reverse on [`Encoder::finish`], so the decoder reads them forwards. A
//! finished stream is the final 8-byte state followed by the emitted words,
//! all little-endian.

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_SCALE: u32 = 1 << PROB_BITS;
const STATE_LOW: u64 = 1 << 31;

/// A coding interval `[start, start + freq)` out of `PROB_SCALE`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interval {
    pub start: u32,
    pub freq: u32,
}

#[derive(Default)]
pub struct Encoder {
    pending: Vec<Interval>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, iv: Interval) {
        debug_assert!(iv.freq > 0 && iv.start + iv.freq <= PROB_SCALE);
        self.pending.push(iv);
    }

    /// A 16-bit value at uniform probability.
    pub fn push_raw16(&mut self, v: u32) {
        self.push(Interval {
            start: v & 0xffff,
            freq: 1,
        });
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        let mut x = STATE_LOW;
        let mut words: Vec<u32> = Vec::new();
        for iv in self.pending.iter().rev() {
            let freq = iv.freq as u64;
            let x_max = ((STATE_LOW >> PROB_BITS) << 32) * freq;
            if x >= x_max {
                words.push(x as u32);
                x >>= 32;
            }
            x = ((x / freq) << PROB_BITS) + (x % freq) + iv.start as u64;
        }
        let mut out = Vec::with_capacity(8 + 4 * words.len());
        out.extend_from_slice(&x.to_le_bytes());
        for w in words.iter().rev() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }
}

pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    state: u64,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let head: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Corrupt {
                offset: bytes.len(),
                reason: "segment shorter than the 8-byte coder state".into(),
            })?;
        let state = u64::from_le_bytes(head);
        if state < STATE_LOW {
            return Err(Error::Corrupt {
                offset: 0,
                reason: format!("initial coder state {state:#x} below the renormalization bound"),
            });
        }
        Ok(Self {
            bytes,
            pos: 8,
            state,
        })
    }

    /// Current slot in `[0, PROB_SCALE)`; pass the matching interval to
    /// [`Decoder::advance`].
    pub fn peek(&self) -> u32 {
        (self.state & (PROB_SCALE as u64 - 1)) as u32
    }

    pub fn advance(&mut self, iv: Interval) -> Result<()> {
        let slot = self.peek() as u64;
        self.state = iv.freq as u64 * (self.state >> PROB_BITS) + slot - iv.start as u64;
        if self.state < STATE_LOW {
            let word: [u8; 4] = self
                .bytes
                .get(self.pos..self.pos + 4)
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| Error::Corrupt {
                    offset: self.pos,
                    reason: "stream ended while the decoder needed more input".into(),
                })?;
            self.state = (self.state << 32) | u32::from_le_bytes(word) as u64;
            self.pos += 4;
        }
        Ok(())
    }

    pub fn raw16(&mut self) -> Result<u32> {
        let v = self.peek();
        self.advance(Interval { start: v, freq: 1 })?;
        Ok(v)
    }

    /// Checks that the stream was consumed exactly.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corrupt {
                offset: self.pos,
                reason: format!(
                    "{} unread bytes after the last symbol",
                    self.bytes.len() - self.pos
                ),
            });
        }
        if self.state != STATE_LOW {
            return Err(Error::Corrupt {
                offset: self.pos,
                reason: format!(
                    "final coder state {:#x} does not match the initial state",
                    self.state
                ),
            });
        }
        Ok(())
    }
}
