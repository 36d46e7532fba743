//! The residue attack, step by step: watch the process list until the
//! victim exits, take over its isolation grant, walk the adversary's own heap
//! down to physical addresses, scrape those addresses and match the result
//! against application profiles.
//!
//! Every step runs through the same OS and bus paths as any other user
//! process. Nothing here reads XMPU registers or memory directly, apart from
//! the sandbox used for profiling, which is a separate simulator instance.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hex::parse_u64;
use crate::mem::{format_hexdump, MemError, PhysAddr, RegionKind, Word, PAGE_SIZE, WORD_BYTES};
use crate::os::{Os, OsError, Pid, SanitizePolicy, VirtAddr};
use crate::par::Exec;
use crate::soc::{IssueResult, MasterKind, SocError, Transaction};
use crate::xmpu::POISON;

/// Shortest run, in motif repetitions, that profiling keeps as a pattern.
pub const DEFAULT_MIN_RUN: usize = 16;

/// Heap bytes read per bulk request while locating runs.
const LOCATE_CHUNK: u64 = 256 * PAGE_SIZE;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("target `{0}` is not in the process list")]
    TargetNeverSeen(String),
    #[error("target `{target}` still running after {ticks} ticks")]
    PollTimeout { target: String, ticks: u64 },
    #[error("pid {0} has no heap mapping")]
    NoHeap(Pid),
    #[error("read of {0:#x} denied")]
    Denied(PhysAddr),
    #[error("layout of `{0}` produces no pattern")]
    EmptyLayout(String),
    #[error("layout write at offset {offset:#x} falls outside the granted region")]
    LayoutOutOfGrant { offset: u64 },
    #[error("malformed maps line `{0}`")]
    BadMaps(String),
    #[error("image line {line}: {reason}")]
    BadImage { line: usize, reason: String },
    #[error("image address {0:#x} is out of order or misaligned")]
    UnorderedImage(PhysAddr),
    #[error("bad profile: {0}")]
    BadProfile(String),
    #[error(transparent)]
    Os(#[from] OsError),
    #[error(transparent)]
    Soc(#[from] SocError),
    #[error(transparent)]
    Mem(#[from] MemError),
}

// ---------------------------------------------------------------------------
// step 1: polling

/// What the adversary saw while waiting for the target to exit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollTrace {
    pub target: String,
    pub pid: Pid,
    /// Tick of the last listing that still showed the target.
    pub last_seen: u64,
    /// Tick of the first listing without it.
    pub vanished: u64,
    pub before: String,
    pub after: String,
}

/// `(pid, command)` pairs of a `ps` listing.
pub fn listing_entries(listing: &str) -> Vec<(Pid, String)> {
    listing
        .lines()
        .filter_map(|line| {
            let mut rest = line.trim_start();
            let mut fields = [""; 3];
            for f in &mut fields {
                let end = rest.find(char::is_whitespace)?;
                *f = &rest[..end];
                rest = rest[end..].trim_start();
            }
            let pid = fields[0].parse().ok()?;
            Some((Pid(pid), rest.trim_end().to_string()))
        })
        .collect()
}

/// Samples the process list once per tick until `target` disappears.
pub fn poll_until_terminated(os: &mut Os, target: &str, max_ticks: u64) -> Result<PollTrace, AttackError> {
    let mut before = os.ps_listing();
    let pid = listing_entries(&before)
        .into_iter()
        .find(|(_, cmd)| cmd == target)
        .map(|(pid, _)| pid)
        .ok_or_else(|| AttackError::TargetNeverSeen(target.to_string()))?;
    for _ in 0..max_ticks {
        let tick = os.clock();
        os.advance()?;
        let after = os.ps_listing();
        if !listing_entries(&after).iter().any(|(p, _)| *p == pid) {
            return Ok(PollTrace {
                target: target.to_string(),
                pid,
                last_seen: tick,
                vanished: os.clock(),
                before,
                after,
            });
        }
        before = after;
    }
    Err(AttackError::PollTimeout {
        target: target.to_string(),
        ticks: max_ticks,
    })
}

// ---------------------------------------------------------------------------
// step 3: heap ranges

/// Heap ranges of a maps listing, in address order.
pub fn parse_heap_ranges(maps: &str) -> Result<Vec<Range<u64>>, AttackError> {
    let mut out = Vec::new();
    for line in maps.lines().filter(|l| l.trim_end().ends_with("[heap]")) {
        let bad = || AttackError::BadMaps(line.to_string());
        let span = line.split_whitespace().next().ok_or_else(bad)?;
        let (lo, hi) = span.split_once('-').ok_or_else(bad)?;
        let lo = u64::from_str_radix(lo, 16).map_err(|_| bad())?;
        let hi = u64::from_str_radix(hi, 16).map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        out.push(lo..hi);
    }
    out.sort_by_key(|r| r.start);
    Ok(out)
}

pub fn scrape_virtual(os: &Os, pid: Pid) -> Result<Vec<Range<u64>>, AttackError> {
    let ranges = parse_heap_ranges(&os.proc_maps(pid)?)?;
    if ranges.is_empty() {
        return Err(AttackError::NoHeap(pid));
    }
    Ok(ranges)
}

// ---------------------------------------------------------------------------
// step 4: translation and locating

/// A stretch of virtual memory backed by physically contiguous pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaRun {
    pub va: u64,
    pub pa: PhysAddr,
    pub bytes: u64,
}

impl PaRun {
    pub fn words(&self) -> u64 {
        self.bytes / WORD_BYTES
    }

    pub fn last_word(&self) -> PhysAddr {
        PhysAddr::truncate(self.pa.value() + self.bytes - WORD_BYTES)
    }
}

impl fmt::Display for PaRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:#x}-{:#x} -> {:#x}-{:#x}",
            self.va,
            self.va + self.bytes - WORD_BYTES,
            self.pa.value(),
            self.last_word().value()
        )
    }
}

/// Translates the half-open virtual range page by page, merging pages that
/// are adjacent both virtually and physically.
pub fn translate_range(os: &Os, pid: Pid, va: Range<u64>) -> Result<Vec<PaRun>, AttackError> {
    let mut runs: Vec<PaRun> = Vec::new();
    let mut cursor = va.start;
    while cursor < va.end {
        let chunk_end = ((cursor / PAGE_SIZE + 1) * PAGE_SIZE).min(va.end);
        let pa = os.pagemap_translate(pid, VirtAddr(cursor))?;
        let bytes = chunk_end - cursor;
        match runs.last_mut() {
            Some(last) if last.va + last.bytes == cursor && last.pa.value() + last.bytes == pa.value() => {
                last.bytes += bytes;
            }
            _ => runs.push(PaRun { va: cursor, pa, bytes }),
        }
        cursor = chunk_end;
    }
    Ok(runs)
}

/// A run of one repeated word in the adversary's virtual memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VaRun {
    pub start: u64,
    pub words: u64,
}

impl VaRun {
    pub fn last_word(&self) -> u64 {
        self.start + (self.words - 1) * WORD_BYTES
    }
}

/// Reads the process's own heap and returns every run of at least `min_run`
/// consecutive `word`s. Denied words break runs.
pub fn locate(
    os: &mut Os,
    pid: Pid,
    heap: &[Range<u64>],
    word: Word,
    min_run: u64,
    exec: Exec,
) -> Result<Vec<VaRun>, AttackError> {
    let mut out = Vec::new();
    for seg in heap {
        let mut open: Option<VaRun> = None;
        let mut chunk = seg.start;
        while chunk < seg.end {
            let end = (chunk + LOCATE_CHUNK).min(seg.end);
            for (va, w) in os.read_virtual(pid, chunk..end, exec)? {
                if w.denied.is_none() && w.value == word {
                    match &mut open {
                        Some(run) => run.words += 1,
                        None => open = Some(VaRun { start: va.0, words: 1 }),
                    }
                } else if let Some(run) = open.take() {
                    if run.words >= min_run {
                        out.push(run);
                    }
                }
            }
            chunk = end;
        }
        if let Some(run) = open.filter(|r| r.words >= min_run) {
            out.push(run);
        }
    }
    Ok(out)
}

/// Hexdump of the process's own memory over the inclusive word range.
/// Denied words show as the poison value.
pub fn virtual_hexdump(os: &mut Os, pid: Pid, first: u64, last: u64, exec: Exec) -> Result<String, AttackError> {
    let words: Vec<Word> = os
        .read_virtual(pid, first..last + WORD_BYTES, exec)?
        .into_iter()
        .map(|(_, w)| w.value)
        .collect();
    Ok(format_hexdump(first, &words))
}

// ---------------------------------------------------------------------------
// step 5: scraping

pub fn devmem(os: &mut Os, master: MasterKind, pa: PhysAddr) -> Result<Word, AttackError> {
    match os.soc_mut().issue(&Transaction::read(master, pa))? {
        IssueResult::Value(v) => Ok(v),
        IssueResult::Denied(_) => Err(AttackError::Denied(pa)),
        IssueResult::WriteOk => unreachable!("read transaction"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub scenario: String,
    pub grant: Option<u64>,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageWord {
    pub pa: PhysAddr,
    pub value: Word,
    pub denied: bool,
}

/// Scraped physical memory. Denied words carry the poison value and a flag,
/// so a genuine poison-valued datum stays distinguishable.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryImage {
    entries: Vec<ImageWord>,
    pub provenance: Provenance,
}

impl MemoryImage {
    pub fn new(entries: Vec<ImageWord>, provenance: Provenance) -> Result<Self, AttackError> {
        for (i, e) in entries.iter().enumerate() {
            let ordered = i == 0 || entries[i - 1].pa < e.pa;
            if !e.pa.is_word_aligned() || !ordered {
                return Err(AttackError::UnorderedImage(e.pa));
            }
        }
        Ok(MemoryImage { entries, provenance })
    }

    pub fn entries(&self) -> &[ImageWord] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pa: PhysAddr) -> Option<ImageWord> {
        self.entries
            .binary_search_by_key(&pa, |e| e.pa)
            .ok()
            .map(|i| self.entries[i])
    }

    pub fn denied_count(&self) -> usize {
        self.entries.iter().filter(|e| e.denied).count()
    }

    /// Line format `<pa-hex>: <word-hex> <ALLOW|DENIED>` after three
    /// `#` provenance lines.
    pub fn to_text(&self) -> String {
        let p = &self.provenance;
        let grant = p.grant.map_or_else(|| "none".to_string(), |g| g.to_string());
        let mut out = format!("# scenario {}\n# grant {grant}\n# tick {}\n", p.scenario, p.tick);
        for e in &self.entries {
            let tag = if e.denied { "DENIED" } else { "ALLOW" };
            out.push_str(&format!("{:08x}: {:08x} {tag}\n", e.pa.value(), e.value));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, AttackError> {
        let mut provenance = Provenance::default();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let bad = |reason: &str| AttackError::BadImage {
                line: n + 1,
                reason: reason.to_string(),
            };
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, value) = meta.split_once(' ').unwrap_or((meta, ""));
                match key {
                    "scenario" => provenance.scenario = value.to_string(),
                    "grant" if value == "none" => provenance.grant = None,
                    "grant" => provenance.grant = Some(value.parse().map_err(|_| bad("bad grant"))?),
                    "tick" => provenance.tick = value.parse().map_err(|_| bad("bad tick"))?,
                    _ => return Err(bad("unknown provenance key")),
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (pa, rest) = line.split_once(": ").ok_or_else(|| bad("missing `: `"))?;
            let (value, tag) = rest.split_once(' ').ok_or_else(|| bad("missing tag"))?;
            let pa = u64::from_str_radix(pa, 16).map_err(|_| bad("bad address"))?;
            let pa = PhysAddr::new(pa).map_err(|_| bad("address out of range"))?;
            let value = Word::from_str_radix(value, 16).map_err(|_| bad("bad word"))?;
            let denied = match tag {
                "ALLOW" => false,
                "DENIED" => true,
                _ => return Err(bad("tag must be ALLOW or DENIED")),
            };
            entries.push(ImageWord { pa, value, denied });
        }
        MemoryImage::new(entries, provenance)
    }
}

/// Reads every word of `runs` as `master`. Overlapping runs are read once;
/// the image comes back in address order.
pub fn scrape_image(
    os: &mut Os,
    master: MasterKind,
    runs: &[PaRun],
    provenance: Provenance,
    exec: Exec,
) -> Result<MemoryImage, AttackError> {
    let mut ranges: Vec<(u64, u64)> = runs
        .iter()
        .filter(|r| r.bytes > 0)
        .map(|r| {
            if !r.pa.is_word_aligned() || r.bytes % WORD_BYTES != 0 {
                Err(MemError::Misaligned(r.pa))
            } else {
                Ok((r.pa.value(), r.pa.value() + r.bytes))
            }
        })
        .collect::<Result<_, _>>()?;
    ranges.sort_unstable();
    let mut merged: Vec<(u64, u64)> = Vec::new();
    for (lo, hi) in ranges {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    let mut spans = Vec::new();
    for (lo, hi) in merged {
        let mut cursor = lo;
        while cursor < hi {
            let end = ((cursor / PAGE_SIZE + 1) * PAGE_SIZE).min(hi);
            spans.push((PhysAddr::new(cursor)?, ((end - cursor) / WORD_BYTES) as usize));
            cursor = end;
        }
    }
    let blocks = os.soc_mut().read_blocks(master, &spans, exec)?;
    let mut entries = Vec::with_capacity(spans.iter().map(|s| s.1).sum());
    for block in blocks {
        for (i, w) in block.words.iter().enumerate() {
            entries.push(ImageWord {
                pa: PhysAddr::truncate(block.start.value() + i as u64 * WORD_BYTES),
                value: w.value,
                denied: w.denied.is_some(),
            });
        }
    }
    MemoryImage::new(entries, provenance)
}

// ---------------------------------------------------------------------------
// step 6: profiling and reconstruction

/// Where a pattern has to start, relative to the first word of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternOffset {
    At(u64),
    Any,
}

impl fmt::Display for PatternOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternOffset::At(o) => write!(f, "{o:#x}"),
            PatternOffset::Any => f.write_str("*"),
        }
    }
}

/// `min_run` repetitions of `words`, back to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternSpec {
    pub offset: PatternOffset,
    pub words: Vec<Word>,
    pub min_run: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureProfile {
    name: String,
    patterns: Vec<PatternSpec>,
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    name: String,
    patterns: Vec<PatternFile>,
}

#[derive(Serialize, Deserialize)]
struct PatternFile {
    offset: String,
    words: Vec<String>,
    min_run: usize,
}

impl SignatureProfile {
    pub fn new(name: impl Into<String>, patterns: Vec<PatternSpec>) -> Result<Self, AttackError> {
        if patterns.is_empty() {
            return Err(AttackError::BadProfile("no patterns".into()));
        }
        if let Some(p) = patterns.iter().find(|p| p.min_run == 0 || p.words.is_empty()) {
            return Err(AttackError::BadProfile(format!(
                "pattern at {} needs words and min_run >= 1",
                p.offset
            )));
        }
        Ok(SignatureProfile {
            name: name.into(),
            patterns,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn patterns(&self) -> &[PatternSpec] {
        &self.patterns
    }

    pub fn to_toml(&self) -> String {
        let file = ProfileFile {
            name: self.name.clone(),
            patterns: self
                .patterns
                .iter()
                .map(|p| PatternFile {
                    offset: p.offset.to_string(),
                    words: p.words.iter().map(|w| format!("{w:#010x}")).collect(),
                    min_run: p.min_run,
                })
                .collect(),
        };
        toml::to_string(&file).expect("profile serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, AttackError> {
        let file: ProfileFile = toml::from_str(text).map_err(|e| AttackError::BadProfile(e.to_string()))?;
        let patterns = file
            .patterns
            .into_iter()
            .map(|p| {
                let offset = match p.offset.trim() {
                    "*" => PatternOffset::Any,
                    o => PatternOffset::At(parse_u64(o).map_err(AttackError::BadProfile)?),
                };
                let words = p
                    .words
                    .iter()
                    .map(|w| {
                        u32::try_from(parse_u64(w).map_err(AttackError::BadProfile)?)
                            .map_err(|_| AttackError::BadProfile(format!("`{w}` is wider than a word")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(PatternSpec {
                    offset,
                    words,
                    min_run: p.min_run,
                })
            })
            .collect::<Result<Vec<_>, AttackError>>()?;
        SignatureProfile::new(file.name, patterns)
    }
}

/// `count` copies of `value` at byte `offset` into the granted DDR region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutWrite {
    pub offset: u64,
    pub count: u64,
    pub value: Word,
}

/// What an application is known to write, used to profile it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppLayout {
    pub name: String,
    pub owner: MasterKind,
    pub writes: Vec<LayoutWrite>,
}

/// Maximal runs of one repeated word. `usable` words only; a gap in the
/// addresses ends a run.
fn word_runs(entries: &[ImageWord], skip: impl Fn(&ImageWord) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < entries.len() {
        if skip(&entries[i]) {
            i += 1;
            continue;
        }
        let mut n = 1;
        while i + n < entries.len()
            && !skip(&entries[i + n])
            && entries[i + n].value == entries[i].value
            && entries[i + n].pa.value() == entries[i + n - 1].pa.value() + WORD_BYTES
        {
            n += 1;
        }
        out.push((i, n));
        i += n;
    }
    out
}

/// Runs the application alone in `sandbox`, scrapes its own grant and keeps
/// every run of at least [`DEFAULT_MIN_RUN`] identical non-background words.
/// A run of `n` words becomes a pattern demanding `max(16, n / 2)`.
pub fn profile(mut sandbox: Os, layout: &AppLayout, exec: Exec) -> Result<SignatureProfile, AttackError> {
    if layout.writes.iter().all(|w| w.count == 0) {
        return Err(AttackError::EmptyLayout(layout.name.clone()));
    }
    sandbox.set_policy(SanitizePolicy::default());
    let pid = sandbox.spawn(layout.name.clone(), layout.owner);
    let grant = sandbox.request_isolation(pid)?;
    let mem = sandbox.soc().mem();
    let target = grant
        .regions
        .iter()
        .find(|r| mem.region_of(r.start).is_some_and(|d| d.kind == RegionKind::Ddr))
        .or(grant.regions.first())
        .copied()
        .expect("grants are never empty");
    let background = mem.background();
    for w in &layout.writes {
        for i in 0..w.count {
            let addr = target.start.value() + w.offset + i * WORD_BYTES;
            if addr > target.end.value() {
                return Err(AttackError::LayoutOutOfGrant { offset: w.offset });
            }
            let txn = Transaction::write(layout.owner, PhysAddr::new(addr)?, w.value);
            sandbox.soc_mut().issue(&txn)?;
        }
    }
    let runs: Vec<PaRun> = grant
        .regions
        .iter()
        .map(|r| PaRun {
            va: 0,
            pa: r.start,
            bytes: r.words() * WORD_BYTES,
        })
        .collect();
    let provenance = Provenance {
        scenario: format!("profile {}", layout.name),
        grant: Some(grant.id),
        tick: sandbox.clock(),
    };
    let image = scrape_image(&mut sandbox, layout.owner, &runs, provenance, exec)?;
    let entries = image.entries();
    let patterns: Vec<PatternSpec> = word_runs(entries, |e| e.denied || e.value == background)
        .into_iter()
        .filter(|&(_, n)| n >= DEFAULT_MIN_RUN)
        .map(|(i, n)| PatternSpec {
            offset: PatternOffset::Any,
            words: vec![entries[i].value],
            min_run: DEFAULT_MIN_RUN.max(n / 2),
        })
        .collect();
    if patterns.is_empty() {
        return Err(AttackError::EmptyLayout(layout.name.clone()));
    }
    SignatureProfile::new(layout.name.clone(), patterns)
}

/// A run of a pattern in the image: start address and repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub pa: PhysAddr,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMatch {
    pub name: String,
    pub matched: bool,
    pub hits: Vec<Hit>,
    /// Profiled words found, over profiled words demanded.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchReport {
    pub profiles: Vec<ProfileMatch>,
}

impl MatchReport {
    pub fn matched_count(&self) -> usize {
        self.profiles.iter().filter(|p| p.matched).count()
    }
}

impl fmt::Display for MatchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.profiles {
            write!(f, "{} matched={} coverage={:.3}", p.name, p.matched, p.coverage)?;
            for h in &p.hits {
                write!(f, " {:#x}x{}", h.pa.value(), h.reps)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Repetitions of `motif` starting at entry `i`.
fn reps_at(entries: &[ImageWord], i: usize, motif: &[Word]) -> usize {
    let mut n = 0;
    while let Some(e) = entries.get(i + n) {
        let contiguous = n == 0 || e.pa.value() == entries[i + n - 1].pa.value() + WORD_BYTES;
        if e.denied || !contiguous || e.value != motif[n % motif.len()] {
            break;
        }
        n += 1;
    }
    n / motif.len()
}

/// Greedy left-to-right runs of `motif`: `(entry index, repetitions)`.
fn motif_runs(entries: &[ImageWord], motif: &[Word]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < entries.len() {
        match reps_at(entries, i, motif) {
            0 => i += 1,
            reps => {
                out.push((i, reps));
                i += reps * motif.len();
            }
        }
    }
    out
}

fn match_profile(image: &MemoryImage, profile: &SignatureProfile) -> ProfileMatch {
    let entries = image.entries();
    let mut hits = Vec::new();
    let mut found = 0usize;
    let mut demanded = 0usize;
    let mut matched = true;
    for p in profile.patterns() {
        let runs = match p.offset {
            PatternOffset::Any => motif_runs(entries, &p.words),
            PatternOffset::At(off) => entries
                .first()
                .and_then(|e0| e0.pa.checked_add(off))
                .and_then(|pa| entries.binary_search_by_key(&pa, |e| e.pa).ok())
                .map(|i| vec![(i, reps_at(entries, i, &p.words))])
                .unwrap_or_default(),
        };
        let best = runs.iter().map(|r| r.1).max().unwrap_or(0);
        found += best.min(p.min_run) * p.words.len();
        demanded += p.min_run * p.words.len();
        matched &= best >= p.min_run;
        hits.extend(runs.into_iter().filter(|r| r.1 >= p.min_run).map(|(i, reps)| Hit {
            pa: entries[i].pa,
            reps,
        }));
    }
    hits.sort_by_key(|h| h.pa);
    ProfileMatch {
        name: profile.name().to_string(),
        matched,
        hits,
        coverage: found as f64 / demanded as f64,
    }
}

pub fn reconstruct(image: &MemoryImage, profiles: &[SignatureProfile], exec: Exec) -> MatchReport {
    MatchReport {
        profiles: exec.map(profiles, |p| match_profile(image, p)),
    }
}

/// Allowed words of `image` that differ from both `background` and `fill`,
/// keyed by address.
pub fn disclosed_words(image: &MemoryImage, background: Word, fill: Word) -> BTreeMap<u64, Word> {
    image
        .entries()
        .iter()
        .filter(|e| !e.denied && e.value != background && e.value != fill)
        .map(|e| (e.pa.value(), e.value))
        .collect()
}

/// Poison words in `image` that are flagged as denied.
pub fn poisoned(image: &MemoryImage) -> impl Iterator<Item = &ImageWord> {
    image.entries().iter().filter(|e| e.denied && e.value == POISON)
}
