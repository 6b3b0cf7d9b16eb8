//! Fixed-point coding tables.
//!
//! Every table covers the values `−SUPPORT..=SUPPORT` plus one escape
//! symbol that is followed by the raw 32-bit value. Gaussian tables are
//! derived from `(σ, μ)` alone with `libm`, so encoder and decoder build
//! identical tables without transmitting them.

use std::sync::OnceLock;

use fgs_autograd::gaussian_bin_mass;

use super::rans::{Decoder, Encoder, Interval, PROB_SCALE};
use crate::entropy::SIGMA_MIN;
use crate::error::{Error, Result};

pub const SUPPORT: i32 = 64;
/// Number of in-range symbols.
const VALUES: usize = 2 * SUPPORT as usize + 1;
const ESCAPE: usize = VALUES;

pub const SIGMA_BINS: usize = 64;
pub const SIGMA_MAX: f64 = 64.0;
/// Sub-integer mean offsets are quantized to this many steps per unit.
pub const MU_STEPS: i32 = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    /// `VALUES + 2` cumulative counts from 0 to `PROB_SCALE`.
    cum: Vec<u32>,
}

impl CdfTable {
    /// Quantizes a probability vector over `VALUES + 1` symbols (escape
    /// last) to counts summing to `PROB_SCALE`, every count at least 1.
    ///
    /// The most probable symbol keeps its rounded target; rounding surplus
    /// or deficit is settled on the other symbols, largest residual first.
    pub fn from_pmf(pmf: &[f64]) -> Self {
        assert_eq!(pmf.len(), VALUES + 1);
        let total: f64 = pmf.iter().sum();
        let targets: Vec<f64> = pmf.iter().map(|p| p / total * PROB_SCALE as f64).collect();
        let mut counts: Vec<i64> = targets.iter().map(|t| (t.round() as i64).max(1)).collect();
        let mode = (0..targets.len())
            .max_by(|&a, &b| targets[a].total_cmp(&targets[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        let mut excess: i64 = counts.iter().sum::<i64>() - PROB_SCALE as i64;
        while excess != 0 {
            let pick = |allow_mode: bool| {
                (0..counts.len())
                    .filter(|&i| allow_mode || i != mode)
                    .filter(|&i| excess < 0 || counts[i] > 1)
                    .max_by(|&a, &b| {
                        let (ra, rb) = if excess > 0 {
                            (counts[a] as f64 - targets[a], counts[b] as f64 - targets[b])
                        } else {
                            (targets[a] - counts[a] as f64, targets[b] - counts[b] as f64)
                        };
                        ra.total_cmp(&rb).then(b.cmp(&a))
                    })
            };
            let i = pick(false)
                .or_else(|| pick(true))
                .expect("a table always has an adjustable symbol");
            counts[i] -= excess.signum();
            excess -= excess.signum();
        }
        let mut cum = Vec::with_capacity(counts.len() + 1);
        cum.push(0u32);
        for c in counts {
            cum.push(cum.last().unwrap() + c as u32);
        }
        Self { cum }
    }

    pub fn count(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    fn interval(&self, symbol: usize) -> Interval {
        Interval {
            start: self.cum[symbol],
            freq: self.count(symbol),
        }
    }

    fn lookup(&self, slot: u32) -> usize {
        self.cum.partition_point(|&c| c <= slot) - 1
    }

    /// Codes `value`, escaping it if it falls outside the support.
    pub fn encode(&self, enc: &mut Encoder, value: i32) {
        if (-SUPPORT..=SUPPORT).contains(&value) {
            enc.push(self.interval((value + SUPPORT) as usize));
        } else {
            enc.push(self.interval(ESCAPE));
            let raw = value as u32;
            enc.push_raw16(raw >> 16);
            enc.push_raw16(raw & 0xffff);
        }
    }

    pub fn decode(&self, dec: &mut Decoder) -> Result<i32> {
        let symbol = self.lookup(dec.peek());
        dec.advance(self.interval(symbol))?;
        if symbol == ESCAPE {
            let hi = dec.raw16()?;
            let lo = dec.raw16()?;
            Ok(((hi << 16) | lo) as i32)
        } else {
            Ok(symbol as i32 - SUPPORT)
        }
    }

    /// Ideal code length of `value` under this table, in bits.
    pub fn cost_bits(&self, value: i32) -> f64 {
        let scale = PROB_SCALE as f64;
        if (-SUPPORT..=SUPPORT).contains(&value) {
            (scale / self.count((value + SUPPORT) as usize) as f64).log2()
        } else {
            (scale / self.count(ESCAPE) as f64).log2() + 32.0
        }
    }
}

/// Builds a table from a CDF `F` over the real line: bin `v` gets
/// `F(v + ½) − F(v − ½)` and the escape gets both tails.
pub fn table_from_cdf(cdf: impl Fn(f64) -> f64) -> CdfTable {
    let lo = -(SUPPORT as f64) - 0.5;
    let mut pmf: Vec<f64> = (-SUPPORT..=SUPPORT)
        .map(|v| (cdf(v as f64 + 0.5) - cdf(v as f64 - 0.5)).max(0.0))
        .collect();
    pmf.push((cdf(lo) + 1.0 - cdf(-lo)).max(0.0));
    CdfTable::from_pmf(&pmf)
}

/// Representative scale of bin `k`: log-spaced from `SIGMA_MIN` to `SIGMA_MAX`.
pub fn sigma_rep(k: usize) -> f64 {
    if k == 0 {
        return SIGMA_MIN;
    }
    if k == SIGMA_BINS - 1 {
        return SIGMA_MAX;
    }
    let t = k as f64 / (SIGMA_BINS - 1) as f64;
    (SIGMA_MIN.ln() + t * (SIGMA_MAX / SIGMA_MIN).ln()).exp()
}

/// Smallest bin whose representative is at least `sigma`.
pub fn sigma_bin(sigma: f64) -> usize {
    (0..SIGMA_BINS)
        .find(|&k| sigma_rep(k) >= sigma)
        .unwrap_or(SIGMA_BINS - 1)
}

/// Table for a Gaussian of mean `offset` and scale `sigma`, convolved with
/// a unit uniform.
pub fn gaussian_table(offset: f64, sigma: f64) -> CdfTable {
    let mut pmf: Vec<f64> = (-SUPPORT..=SUPPORT)
        .map(|v| gaussian_bin_mass(v as f64, offset, sigma))
        .collect();
    let tail = 1.0 - pmf.iter().sum::<f64>();
    pmf.push(tail.max(0.0));
    CdfTable::from_pmf(&pmf)
}

struct GaussianBank {
    tables: Vec<CdfTable>,
}

fn bank() -> &'static GaussianBank {
    static BANK: OnceLock<GaussianBank> = OnceLock::new();
    BANK.get_or_init(|| {
        let mut tables = Vec::with_capacity(SIGMA_BINS * (2 * MU_STEPS as usize + 1));
        for k in 0..SIGMA_BINS {
            for step in -MU_STEPS / 2..=MU_STEPS / 2 {
                tables.push(gaussian_table(step as f64 / MU_STEPS as f64, sigma_rep(k)));
            }
        }
        GaussianBank { tables }
    })
}

/// Table and integer shift for one Gaussian element. The encoder codes
/// `ŷ − shift`; the decoder adds `shift` back.
pub fn build_cdf(mu: f64, sigma: f64) -> (&'static CdfTable, i32) {
    let mu = if mu.is_finite() {
        mu.clamp(-1e9, 1e9)
    } else {
        0.0
    };
    let shift = mu.round_ties_even();
    let step = ((mu - shift) * MU_STEPS as f64).round() as i32;
    let step = step.clamp(-MU_STEPS / 2, MU_STEPS / 2);
    let k = sigma_bin(sigma);
    let idx = k * (MU_STEPS as usize + 1) + (step + MU_STEPS / 2) as usize;
    (&bank().tables[idx], shift as i32)
}

/// Codes a Gaussian-modeled integer.
pub fn encode_gaussian(enc: &mut Encoder, value: i32, mu: f64, sigma: f64) {
    let (table, shift) = build_cdf(mu, sigma);
    table.encode(enc, value.wrapping_sub(shift));
}

pub fn decode_gaussian(dec: &mut Decoder, mu: f64, sigma: f64) -> Result<i32> {
    let (table, shift) = build_cdf(mu, sigma);
    Ok(table.decode(dec)?.wrapping_add(shift))
}

pub(crate) fn check_integral(v: f64) -> Result<i32> {
    if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
        return Err(Error::format(
            "latent",
            format!("{v} is not a codable integer"),
        ));
    }
    Ok(v as i32)
}
