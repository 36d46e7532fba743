//! Word-addressable physical memory.
//!
//! Memory is declared as a set of named, disjoint regions. Storage is sparse:
//! 4 KiB frames are materialised on first write and every other word reads as
//! the configured background fill. Nothing in this module ever clears memory
//! on its own; content changes only through [`PhysMemory::write`] and
//! [`PhysMemory::fill`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::hex::parse_u64;

/// A 32-bit memory word.
pub type Word = u32;

/// Width of the physical address bus.
pub const PHYS_ADDR_BITS: u32 = 44;
/// One past the largest physical address.
pub const PHYS_ADDR_LIMIT: u64 = 1 << PHYS_ADDR_BITS;
pub const WORD_BYTES: u64 = 4;
pub const PAGE_SIZE: u64 = 4096;
const WORDS_PER_PAGE: usize = (PAGE_SIZE / WORD_BYTES) as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("address {0:#x} exceeds the 44-bit physical address space")]
    OutOfRange(u64),
    #[error("address {0} is not word aligned")]
    Misaligned(PhysAddr),
    #[error("address {0} is not inside any declared region")]
    UnmappedAddress(PhysAddr),
    #[error("range {start}..={end} crosses a region boundary")]
    RangeCrossesRegions { start: PhysAddr, end: PhysAddr },
    #[error("range start {start} is above end {end}")]
    InvertedRange { start: PhysAddr, end: PhysAddr },
    #[error("region {name}: {reason}")]
    BadRegion { name: String, reason: String },
    #[error("malformed hexdump line {line}: {reason}")]
    BadHexdump { line: usize, reason: String },
}

/// A 44-bit physical byte address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PhysAddr(u64);

impl PhysAddr {
    pub fn new(value: u64) -> Result<Self, MemError> {
        if value >= PHYS_ADDR_LIMIT {
            return Err(MemError::OutOfRange(value));
        }
        Ok(PhysAddr(value))
    }

    /// Builds an address by dropping every bit above bit 43.
    pub const fn truncate(value: u64) -> Self {
        PhysAddr(value & (PHYS_ADDR_LIMIT - 1))
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub const fn is_word_aligned(self) -> bool {
        self.0.is_multiple_of(WORD_BYTES)
    }

    pub const fn page_offset(self) -> u64 {
        self.0 & (PAGE_SIZE - 1)
    }

    pub fn checked_add(self, bytes: u64) -> Option<Self> {
        self.0.checked_add(bytes).and_then(|v| PhysAddr::new(v).ok())
    }
}

impl fmt::Display for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

impl fmt::LowerHex for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RegionKind {
    Ddr,
    Ocm,
    Atcm,
    Peripheral,
}

impl FromStr for RegionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DDR" => Ok(RegionKind::Ddr),
            "OCM" => Ok(RegionKind::Ocm),
            "ATCM" => Ok(RegionKind::Atcm),
            "PERIPHERAL" => Ok(RegionKind::Peripheral),
            other => Err(format!("unknown region kind `{other}`")),
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegionKind::Ddr => "DDR",
            RegionKind::Ocm => "OCM",
            RegionKind::Atcm => "ATCM",
            RegionKind::Peripheral => "PERIPHERAL",
        };
        f.write_str(s)
    }
}

/// A named window of physical memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemRegionDecl {
    pub name: String,
    pub base: PhysAddr,
    pub size: u64,
    pub kind: RegionKind,
}

impl MemRegionDecl {
    pub fn new(name: impl Into<String>, base: u64, size: u64, kind: RegionKind) -> Result<Self, MemError> {
        let name = name.into();
        let bad = |reason: &str| MemError::BadRegion {
            name: name.clone(),
            reason: reason.to_string(),
        };
        let base = PhysAddr::new(base).map_err(|_| bad("base outside the 44-bit space"))?;
        if !base.is_word_aligned() {
            return Err(bad("base is not word aligned"));
        }
        if size == 0 || !size.is_multiple_of(WORD_BYTES) {
            return Err(bad("size must be a non-zero multiple of 4"));
        }
        match base.value().checked_add(size) {
            Some(end) if end <= PHYS_ADDR_LIMIT => {}
            _ => return Err(bad("base + size exceeds the 44-bit space")),
        }
        Ok(MemRegionDecl { name, base, size, kind })
    }

    /// Address of the last word in the region.
    pub fn last_word(&self) -> PhysAddr {
        PhysAddr(self.base.0 + self.size - WORD_BYTES)
    }

    pub fn contains(&self, addr: PhysAddr) -> bool {
        addr.0 >= self.base.0 && addr.0 < self.base.0 + self.size
    }

    pub fn word_count(&self) -> u64 {
        self.size / WORD_BYTES
    }
}

#[derive(Debug, Deserialize)]
struct MapFile {
    #[serde(rename = "region", default)]
    regions: Vec<MapEntry>,
}

#[derive(Debug, Deserialize)]
struct MapEntry {
    name: String,
    base: String,
    size: String,
    kind: RegionKind,
}

/// Parses a memory-map file: a TOML list of `[[region]]` tables with `name`,
/// hex `base`, hex `size` and `kind`.
pub fn parse_memory_map(text: &str) -> Result<Vec<MemRegionDecl>, MemError> {
    let file: MapFile = toml::from_str(text).map_err(|e| MemError::BadRegion {
        name: "<memory map>".into(),
        reason: e.to_string(),
    })?;
    file.regions
        .into_iter()
        .map(|e| {
            let num = |field: &str, v: &str| {
                parse_u64(v).map_err(|reason| MemError::BadRegion {
                    name: e.name.clone(),
                    reason: format!("{field}: {reason}"),
                })
            };
            let base = num("base", &e.base)?;
            let size = num("size", &e.size)?;
            MemRegionDecl::new(e.name.clone(), base, size, e.kind)
        })
        .collect()
}

/// Canonical view of memory content, used for whole-image equality checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorySnapshot {
    background: Word,
    frames: BTreeMap<u64, Box<[Word]>>,
}

impl MemorySnapshot {
    pub fn materialised_frames(&self) -> usize {
        self.frames.len()
    }
}

#[derive(Debug, Clone)]
pub struct PhysMemory {
    regions: Vec<MemRegionDecl>,
    background: Word,
    frames: BTreeMap<u64, Box<[Word]>>,
    words_written: u64,
}

impl PhysMemory {
    pub fn new(mut regions: Vec<MemRegionDecl>, background: Word) -> Result<Self, MemError> {
        regions.sort_by_key(|r| r.base);
        for pair in regions.windows(2) {
            if pair[0].base.0 + pair[0].size > pair[1].base.0 {
                return Err(MemError::BadRegion {
                    name: pair[1].name.clone(),
                    reason: format!("overlaps {}", pair[0].name),
                });
            }
        }
        let mut names: Vec<&str> = regions.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if let Some(dup) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(MemError::BadRegion {
                name: dup[0].to_string(),
                reason: "declared twice".into(),
            });
        }
        Ok(PhysMemory {
            regions,
            background,
            frames: BTreeMap::new(),
            words_written: 0,
        })
    }

    pub fn regions(&self) -> &[MemRegionDecl] {
        &self.regions
    }

    pub fn background(&self) -> Word {
        self.background
    }

    pub fn region(&self, name: &str) -> Option<&MemRegionDecl> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn region_of(&self, addr: PhysAddr) -> Option<&MemRegionDecl> {
        let idx = self.regions.partition_point(|r| r.base <= addr);
        idx.checked_sub(1)
            .map(|i| &self.regions[i])
            .filter(|r| r.contains(addr))
    }

    /// Total number of words stored by `write` and `fill` since creation.
    pub fn words_written(&self) -> u64 {
        self.words_written
    }

    fn check(&self, addr: PhysAddr) -> Result<&MemRegionDecl, MemError> {
        if !addr.is_word_aligned() {
            return Err(MemError::Misaligned(addr));
        }
        self.region_of(addr).ok_or(MemError::UnmappedAddress(addr))
    }

    fn split(addr: PhysAddr) -> (u64, usize) {
        (addr.0 / PAGE_SIZE, ((addr.0 % PAGE_SIZE) / WORD_BYTES) as usize)
    }

    fn peek(&self, addr: PhysAddr) -> Word {
        let (frame, idx) = Self::split(addr);
        self.frames.get(&frame).map_or(self.background, |words| words[idx])
    }

    fn poke(&mut self, addr: PhysAddr, value: Word) {
        let (frame, idx) = Self::split(addr);
        let background = self.background;
        let words = self
            .frames
            .entry(frame)
            .or_insert_with(|| vec![background; WORDS_PER_PAGE].into_boxed_slice());
        words[idx] = value;
        self.words_written += 1;
    }

    pub fn read(&self, addr: PhysAddr) -> Result<Word, MemError> {
        self.check(addr)?;
        Ok(self.peek(addr))
    }

    pub fn write(&mut self, addr: PhysAddr, value: Word) -> Result<(), MemError> {
        self.check(addr)?;
        self.poke(addr, value);
        Ok(())
    }

    fn check_range(&self, start: PhysAddr, end: PhysAddr) -> Result<(), MemError> {
        if start > end {
            return Err(MemError::InvertedRange { start, end });
        }
        let first = self.check(start)?;
        if !end.is_word_aligned() {
            return Err(MemError::Misaligned(end));
        }
        if !first.contains(end) {
            return Err(match self.region_of(end) {
                Some(_) => MemError::RangeCrossesRegions { start, end },
                None => MemError::UnmappedAddress(end),
            });
        }
        Ok(())
    }

    /// Writes `value` to every word of the inclusive range `[start, end]`
    /// and returns the number of words written.
    pub fn fill(&mut self, start: PhysAddr, end: PhysAddr, value: Word) -> Result<u64, MemError> {
        self.check_range(start, end)?;
        let mut addr = start.0;
        while addr <= end.0 {
            self.poke(PhysAddr(addr), value);
            addr += WORD_BYTES;
        }
        Ok((end.0 - start.0) / WORD_BYTES + 1)
    }

    /// Reads `count` consecutive words starting at `start`. The whole span
    /// must sit inside one region.
    pub fn read_span(&self, start: PhysAddr, count: usize) -> Result<Vec<Word>, MemError> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let end = PhysAddr::new(start.0 + (count as u64 - 1) * WORD_BYTES)?;
        self.check_range(start, end)?;
        let mut out = Vec::with_capacity(count);
        let mut addr = start.0;
        while out.len() < count {
            let (frame, idx) = Self::split(PhysAddr(addr));
            let take = (WORDS_PER_PAGE - idx).min(count - out.len());
            match self.frames.get(&frame) {
                Some(words) => out.extend_from_slice(&words[idx..idx + take]),
                None => out.extend(std::iter::repeat_n(self.background, take)),
            }
            addr += take as u64 * WORD_BYTES;
        }
        Ok(out)
    }

    /// `xxd`-style dump of the inclusive word range `[start, end]`: sixteen
    /// bytes per line, bytes in little-endian order within each word.
    pub fn hexdump(&self, start: PhysAddr, end: PhysAddr) -> Result<String, MemError> {
        self.check_range(start, end)?;
        let count = ((end.0 - start.0) / WORD_BYTES + 1) as usize;
        let words = self.read_span(start, count)?;
        Ok(format_hexdump(start.0, &words))
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        let background = self.background;
        let frames = self
            .frames
            .iter()
            .filter(|(_, words)| words.iter().any(|&w| w != background))
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        MemorySnapshot { background, frames }
    }
}

/// Renders words as hexdump lines starting at byte address `base`.
pub fn format_hexdump(base: u64, words: &[Word]) -> String {
    let mut out = String::new();
    for (i, chunk) in words.chunks(4).enumerate() {
        let bytes: Vec<u8> = chunk.iter().flat_map(|w| w.to_le_bytes()).collect();
        let mut hex = String::with_capacity(40);
        for (j, pair) in bytes.chunks(2).enumerate() {
            if j > 0 {
                hex.push(' ');
            }
            for b in pair {
                hex.push_str(&format!("{b:02x}"));
            }
        }
        let gutter: String = bytes
            .iter()
            .map(|&b| if (0x20..0x7f).contains(&b) { b as char } else { '.' })
            .collect();
        let addr = base + (i as u64) * 16;
        out.push_str(&format!("{addr:08x}: {hex:<39}  {gutter}\n"));
    }
    out
}

/// Parses hexdump text back into `(address, word)` pairs.
pub fn parse_hexdump(text: &str) -> Result<Vec<(u64, Word)>, MemError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| MemError::BadHexdump {
            line: n + 1,
            reason: reason.to_string(),
        };
        let (addr, rest) = line.split_once(": ").ok_or_else(|| bad("missing `: `"))?;
        let addr = u64::from_str_radix(addr.trim(), 16).map_err(|_| bad("bad address"))?;
        let hex_part = rest.get(..39).unwrap_or(rest);
        let digits: String = hex_part.chars().filter(|c| !c.is_whitespace()).collect();
        if !digits.len().is_multiple_of(8) || digits.is_empty() {
            return Err(bad("hex column is not a whole number of words"));
        }
        let mut bytes = Vec::with_capacity(digits.len() / 2);
        for i in (0..digits.len()).step_by(2) {
            let b = u8::from_str_radix(&digits[i..i + 2], 16).map_err(|_| bad("bad hex digit"))?;
            bytes.push(b);
        }
        for (k, w) in bytes.chunks(4).enumerate() {
            let word = Word::from_le_bytes([w[0], w[1], w[2], w[3]]);
            out.push((addr + k as u64 * WORD_BYTES, word));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn memory() -> PhysMemory {
        PhysMemory::new(
            vec![
                MemRegionDecl::new("RPU_DDR_LOW_S_BASE", 0x70bd_0000, 0x10_0000, RegionKind::Ddr).unwrap(),
                MemRegionDecl::new("RPU_OCM_S_BASE", 0xfffc_0000, 0x1_0000, RegionKind::Ocm).unwrap(),
                MemRegionDecl::new("RPU_ATCM_S_BASE", 0xffe0_0000, 0x1_0000, RegionKind::Atcm).unwrap(),
            ],
            0,
        )
        .unwrap()
    }

    fn pa(v: u64) -> PhysAddr {
        PhysAddr::new(v).unwrap()
    }

    #[test]
    fn read_after_write() {
        let mut m = memory();
        m.write(pa(0x70c6_df20), 0xffff_ffff).unwrap();
        assert_eq!(m.read(pa(0x70c6_df20)).unwrap(), 0xffff_ffff);
        assert_eq!(m.read(pa(0x70c6_df24)).unwrap(), 0);
    }

    #[test]
    fn last_write_wins() {
        let mut m = memory();
        let a = pa(0x70bd_0000);
        m.write(a, 0xaabb_ccdd).unwrap();
        m.write(a, 0x1122_3344).unwrap();
        assert_eq!(m.read(a).unwrap(), 0x1122_3344);
    }

    #[test]
    fn background_fill_is_configurable() {
        let m = PhysMemory::new(memory().regions().to_vec(), 0x5a5a_5a5a).unwrap();
        assert_eq!(m.read(pa(0xfffc_0010)).unwrap(), 0x5a5a_5a5a);
    }

    #[test]
    fn alignment_and_mapping_errors() {
        let mut m = memory();
        assert_eq!(m.write(pa(0x70c6_df21), 1), Err(MemError::Misaligned(pa(0x70c6_df21))));
        assert_eq!(m.read(pa(0x1000)), Err(MemError::UnmappedAddress(pa(0x1000))));
        assert!(matches!(PhysAddr::new(1 << 44), Err(MemError::OutOfRange(_))));
    }

    #[test]
    fn fill_counts_words() {
        let mut m = memory();
        // (0x70c6e11c - 0x70c6df20) / 4 + 1
        let n = m.fill(pa(0x70c6_df20), pa(0x70c6_e11c), 0xffff_ffff).unwrap();
        assert_eq!(n, 128);
        let mut brute = 0;
        let mut a = 0x70c6_df20;
        while a <= 0x70c6_e11c {
            assert_eq!(m.read(pa(a)).unwrap(), 0xffff_ffff);
            brute += 1;
            a += 4;
        }
        assert_eq!(brute, n);
        assert_eq!(m.read(pa(0x70c6_e120)).unwrap(), 0);
        assert_eq!(m.fill(pa(0xfffc_0000), pa(0xfffc_0000), 7).unwrap(), 1);
    }

    #[test]
    fn fill_rejects_cross_region_ranges() {
        let mut m = memory();
        assert!(matches!(
            m.fill(pa(0xffe0_fffc), pa(0xfffc_0000), 0),
            Err(MemError::RangeCrossesRegions { .. })
        ));
        assert!(matches!(
            m.fill(pa(0x70cc_fffc), pa(0x70cd_0000), 0),
            Err(MemError::UnmappedAddress(_))
        ));
    }

    #[test]
    fn regions_must_be_disjoint() {
        let err = PhysMemory::new(
            vec![
                MemRegionDecl::new("A", 0x1000, 0x1000, RegionKind::Ddr).unwrap(),
                MemRegionDecl::new("B", 0x1ffc, 0x10, RegionKind::Ddr).unwrap(),
            ],
            0,
        );
        assert!(matches!(err, Err(MemError::BadRegion { .. })));
    }

    #[test]
    fn hexdump_line_shapes() {
        let mut m = memory();
        m.fill(pa(0x70c6_df20), pa(0x70c6_df2c), 0xffff_ffff).unwrap();
        let dump = m.hexdump(pa(0x70c6_df20), pa(0x70c6_df2c)).unwrap();
        assert_eq!(
            dump,
            "70c6df20: ffff ffff ffff ffff ffff ffff ffff ffff  ................\n"
        );
        let zeros = m.hexdump(pa(0xfffc_0000), pa(0xfffc_000c)).unwrap();
        assert_eq!(
            zeros,
            "fffc0000: 0000 0000 0000 0000 0000 0000 0000 0000  ................\n"
        );
        m.fill(pa(0xffe0_0000), pa(0xffe0_000c), 0x5555_5555).unwrap();
        let u = m.hexdump(pa(0xffe0_0000), pa(0xffe0_000c)).unwrap();
        assert!(u.ends_with("5555 5555 5555 5555 5555 5555 5555 5555  UUUUUUUUUUUUUUUU\n"));
    }

    #[test]
    fn hexdump_is_little_endian_within_words() {
        let line = format_hexdump(0x70c6_e130, &[0xfeff_fffd]);
        assert_eq!(line, format!("70c6e130: {:<39}  ....\n", "fdff fffe"));
    }

    #[test]
    fn memory_map_file_parses() {
        let text = r#"
            [[region]]
            name = "RPU_OCM_S_BASE"
            base = "0xfffc0000"
            size = "0x10000"
            kind = "OCM"
        "#;
        let regions = parse_memory_map(text).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].kind, RegionKind::Ocm);
        assert_eq!(regions[0].base.value(), 0xfffc_0000);
    }

    proptest! {
        #[test]
        fn hexdump_round_trips(words in prop::collection::vec(any::<u32>(), 1..40)) {
            let mut m = memory();
            let start = 0x70bd_0100u64;
            for (i, w) in words.iter().enumerate() {
                m.write(pa(start + 4 * i as u64), *w).unwrap();
            }
            let end = start + 4 * (words.len() as u64 - 1);
            let dump = m.hexdump(pa(start), pa(end)).unwrap();
            let parsed = parse_hexdump(&dump).unwrap();
            let expect: Vec<(u64, u32)> = words
                .iter()
                .enumerate()
                .map(|(i, w)| (start + 4 * i as u64, *w))
                .collect();
            prop_assert_eq!(parsed, expect);
        }

        #[test]
        fn writes_persist_across_reads_and_fills_elsewhere(
            offset in 0u64..0x4000, value: u32, other in 0x8000u64..0xc000
        ) {
            let mut m = memory();
            let a = pa(0x70bd_0000 + offset * 4);
            m.write(a, value).unwrap();
            let _ = m.read(pa(0x70bd_0000 + other * 4)).unwrap();
            m.fill(pa(0x70bd_0000 + other * 4), pa(0x70bd_0000 + other * 4 + 0x40), 0).unwrap();
            prop_assert_eq!(m.read(a).unwrap(), value);
        }
    }
}
