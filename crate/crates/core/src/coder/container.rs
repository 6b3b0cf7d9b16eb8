//! The truncatable `.fgs` container.
//!
//! ```text
//! "FGS1" | version u8 | model hash [8] | H W C1 C2 n_present (u16 each) | flags u8
//! segment lengths (u32 each): z_b, y_b [, z_s, y_s_1 … y_s_n]
//! payload: the segments in the same order
//! ```
//!
//! All integers little-endian. Flag bit 0 marks the presence of `z_s`,
//! which is set exactly when `n_present > 0`.

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FGS1";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 4 + 1 + 8 + 5 * 2 + 1;
pub const FLAG_Z_S: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    pub version: u8,
    pub model_hash: [u8; 8],
    pub height: u16,
    pub width: u16,
    pub c1: u16,
    pub c2: u16,
    pub z_b: Vec<u8>,
    pub y_b: Vec<u8>,
    /// `Some` iff at least one scalable channel is kept.
    pub z_s: Option<Vec<u8>>,
    /// One segment per retained scalable channel, in channel order.
    pub y_s: Vec<Vec<u8>>,
}

/// Where to cut a container.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TruncateTarget {
    /// Keep exactly this many scalable channels.
    Channels(usize),
    /// Keep as many channels as fit in this many file bytes.
    MaxBytes(usize),
    /// Keep as many channels as fit under this payload bits-per-pixel.
    Bpp(f64),
}

impl Container {
    pub fn n_present(&self) -> usize {
        self.y_s.len()
    }

    pub fn flags(&self) -> u8 {
        if self.z_s.is_some() {
            FLAG_Z_S
        } else {
            0
        }
    }

    pub fn segments(&self) -> Vec<&[u8]> {
        let mut out: Vec<&[u8]> = vec![&self.z_b, &self.y_b];
        if let Some(z) = &self.z_s {
            out.push(z);
        }
        out.extend(self.y_s.iter().map(|s| s.as_slice()));
        out
    }

    pub fn payload_bytes(&self) -> usize {
        self.segments().iter().map(|s| s.len()).sum()
    }

    pub fn overhead_bytes(&self) -> usize {
        HEADER_BYTES + 4 * self.segments().len()
    }

    pub fn total_bytes(&self) -> usize {
        self.overhead_bytes() + self.payload_bytes()
    }

    pub fn pixels(&self) -> usize {
        self.height as usize * self.width as usize
    }

    /// Payload bits per source pixel; header and table excluded.
    pub fn bpp(&self) -> f64 {
        8.0 * self.payload_bytes() as f64 / self.pixels().max(1) as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_bytes());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.model_hash);
        for v in [
            self.height,
            self.width,
            self.c1,
            self.c2,
            self.n_present() as u16,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.flags());
        let segments = self.segments();
        for s in &segments {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        }
        for s in &segments {
            out.extend_from_slice(s);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::format("container", reason);
        if bytes.len() < HEADER_BYTES {
            return Err(bad(format!(
                "{} bytes is shorter than the {HEADER_BYTES}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("missing FGS1 magic".into()));
        }
        let version = bytes[4];
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let model_hash: [u8; 8] = bytes[5..13].try_into().expect("fixed slice");
        let u16_at = |i: usize| u16::from_le_bytes([bytes[13 + 2 * i], bytes[14 + 2 * i]]);
        let (height, width, c1, c2, n_present) = (
            u16_at(0),
            u16_at(1),
            u16_at(2),
            u16_at(3),
            u16_at(4) as usize,
        );
        let flags = bytes[23];
        if flags & !FLAG_Z_S != 0 {
            return Err(bad(format!("unknown flag bits {flags:#04x}")));
        }
        if (n_present > 0) != (flags & FLAG_Z_S != 0) {
            return Err(bad(format!(
                "n_present {n_present} disagrees with flags {flags:#04x}"
            )));
        }
        if n_present > c2 as usize {
            return Err(bad(format!("n_present {n_present} exceeds c2 {c2}")));
        }
        let n_segments = if n_present > 0 { 3 + n_present } else { 2 };
        let table_end = HEADER_BYTES + 4 * n_segments;
        if bytes.len() < table_end {
            return Err(bad("segment table is cut short".into()));
        }
        let lengths: Vec<usize> = (0..n_segments)
            .map(|i| {
                let at = HEADER_BYTES + 4 * i;
                u32::from_le_bytes(bytes[at..at + 4].try_into().expect("fixed slice")) as usize
            })
            .collect();
        let payload = &bytes[table_end..];
        let declared: usize = lengths.iter().sum();
        if declared != payload.len() {
            return Err(bad(format!(
                "segment table declares {declared} payload bytes, file has {}",
                payload.len()
            )));
        }
        let mut cursor = 0;
        let mut segments = lengths.iter().map(|&len| {
            let s = payload[cursor..cursor + len].to_vec();
            cursor += len;
            s
        });
        let z_b = segments.next().expect("two segments at least");
        let y_b = segments.next().expect("two segments at least");
        let z_s = (n_present > 0).then(|| segments.next().expect("counted"));
        let y_s = segments.collect();
        Ok(Self {
            version,
            model_hash,
            height,
            width,
            c1,
            c2,
            z_b,
            y_b,
            z_s,
            y_s,
        })
    }

    fn keep(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.y_s.truncate(n);
        if n == 0 {
            out.z_s = None;
        }
        out
    }

    /// Drops trailing scalable channels. Retained segments are untouched.
    pub fn truncate(&self, target: TruncateTarget) -> Result<Self> {
        let n = self.n_present();
        let fits = |k: usize, ok: &dyn Fn(&Container) -> bool| ok(&self.keep(k));
        let largest = |ok: &dyn Fn(&Container) -> bool| (0..=n).rev().find(|&k| fits(k, ok));
        match target {
            TruncateTarget::Channels(k) => {
                if k > n {
                    return Err(Error::ChannelRange { j: k, max: n });
                }
                Ok(self.keep(k))
            }
            TruncateTarget::MaxBytes(budget) => largest(&|c| c.total_bytes() <= budget)
                .map(|k| self.keep(k))
                .ok_or(Error::Budget {
                    budget,
                    min_bytes: self.keep(0).total_bytes(),
                }),
            TruncateTarget::Bpp(rate) => {
                let budget = (rate * self.pixels() as f64 / 8.0).floor().max(0.0) as usize;
                largest(&|c| c.payload_bytes() <= budget)
                    .map(|k| self.keep(k))
                    .ok_or(Error::Budget {
                        budget,
                        min_bytes: self.keep(0).payload_bytes(),
                    })
            }
        }
    }

    pub fn summary(&self) -> ContainerSummary {
        let mut segments = vec![
            SegmentInfo::new("z_b", self.z_b.len()),
            SegmentInfo::new("y_b", self.y_b.len()),
        ];
        if let Some(z) = &self.z_s {
            segments.push(SegmentInfo::new("z_s", z.len()));
        }
        for (i, s) in self.y_s.iter().enumerate() {
            segments.push(SegmentInfo::new(&format!("y_s[{}]", i + 1), s.len()));
        }
        ContainerSummary {
            version: self.version,
            model_hash: hex(&self.model_hash),
            height: self.height,
            width: self.width,
            c1: self.c1,
            c2: self.c2,
            n_present: self.n_present(),
            flags: self.flags(),
            header_bytes: self.overhead_bytes(),
            payload_bytes: self.payload_bytes(),
            bpp: self.bpp(),
            segments,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentInfo {
    pub name: String,
    pub bytes: usize,
}

impl SegmentInfo {
    fn new(name: &str, bytes: usize) -> Self {
        Self {
            name: name.to_string(),
            bytes,
        }
    }
}

/// Header and segment table in reportable form.
#[derive(Clone, Debug, Serialize)]
pub struct ContainerSummary {
    pub version: u8,
    pub model_hash: String,
    pub height: u16,
    pub width: u16,
    pub c1: u16,
    pub c2: u16,
    pub n_present: usize,
    pub flags: u8,
    /// Header plus segment table.
    pub header_bytes: usize,
    pub payload_bytes: usize,
    pub bpp: f64,
    pub segments: Vec<SegmentInfo>,
}

impl std::fmt::Display for ContainerSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "version     {}", self.version)?;
        writeln!(f, "model hash  {}", self.model_hash)?;
        writeln!(f, "image       {}x{}", self.width, self.height)?;
        writeln!(
            f,
            "channels    c1={} c2={} present={}",
            self.c1, self.c2, self.n_present
        )?;
        writeln!(f, "flags       {:#04x}", self.flags)?;
        writeln!(f, "header      {} bytes", self.header_bytes)?;
        writeln!(
            f,
            "payload     {} bytes ({:.4} bpp)",
            self.payload_bytes, self.bpp
        )?;
        writeln!(f, "segments")?;
        for s in &self.segments {
            writeln!(f, "  {:<10} {:>8}", s.name, s.bytes)?;
        }
        Ok(())
    }
}
