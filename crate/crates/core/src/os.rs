//! Embedded OS model: processes, heaps and page tables, `ps`/`maps`/`pagemap`
//! introspection, isolation brokering and the sanitization policy.
//!
//! The OS owns the [`Soc`]. Isolation requests are brokered through a secure
//! master, which rewrites only the SMID and valid bits of a fixed pool of
//! XMPU slots; the slot bounds programmed at boot are reused verbatim by
//! every grant. Releasing a grant clears the slots' valid bits and leaves
//! memory alone unless the sanitize policy says otherwise.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

use crate::mem::{MemError, PhysAddr, RegionKind, Word, PAGE_SIZE, WORD_BYTES};
use crate::par::Exec;
use crate::soc::{IssueResult, MasterKind, RegionUpdate, Soc, SocError, Transaction, WordRead};
use crate::xmpu::{RegFault, RegOutcome, Smid};

pub const DEFAULT_PID_SEED: u32 = 1000;
const DEFAULT_HEAP_BASE: u64 = 0xaaaa_0000_0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OsError {
    #[error("no such pid {0}")]
    NoSuchPid(Pid),
    #[error("pid {0} already terminated")]
    AlreadyTerminated(Pid),
    #[error("isolation region set is held by running pid {0}")]
    RegionBusy(Pid),
    #[error("broker master could not program the XMPU: {0}")]
    BrokerDenied(RegFault),
    #[error("no isolation slots are configured")]
    NoIsolationPool,
    #[error("out of physical pages")]
    OutOfPhysicalPages,
    #[error("virtual address {0} is not mapped")]
    UnmappedVa(VirtAddr),
    #[error("heap size {0:#x} is not a multiple of the page size")]
    BadHeapSize(u64),
    #[error("heap at {0} overlaps an existing mapping")]
    VaOverlap(VirtAddr),
    #[error("pid counter cannot move back from {current} to {requested}")]
    PidSeedBackwards { current: u32, requested: u32 },
    #[error("heap pool region `{0}` is not declared")]
    UnknownPool(String),
    #[error(transparent)]
    Soc(#[from] SocError),
    #[error(transparent)]
    Mem(#[from] MemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pid(pub u32);

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtAddr(pub u64);

impl VirtAddr {
    pub const fn page(self) -> u64 {
        self.0 / PAGE_SIZE
    }

    pub const fn page_offset(self) -> u64 {
        self.0 % PAGE_SIZE
    }
}

impl fmt::Display for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcState {
    Running,
    Terminated,
}

/// Virtual page number to physical frame base.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageTable {
    pages: BTreeMap<u64, PhysAddr>,
}

impl PageTable {
    pub fn map(&mut self, vpn: u64, frame: PhysAddr) {
        debug_assert_eq!(frame.page_offset(), 0);
        self.pages.insert(vpn, frame);
    }

    pub fn translate(&self, va: VirtAddr) -> Option<PhysAddr> {
        self.pages
            .get(&va.page())
            .map(|frame| PhysAddr::truncate(frame.value() + va.page_offset()))
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VirtAddr, PhysAddr)> + '_ {
        self.pages
            .iter()
            .map(|(vpn, frame)| (VirtAddr(vpn * PAGE_SIZE), *frame))
    }
}

#[derive(Debug, Clone)]
pub struct Process {
    pub pid: Pid,
    pub ppid: Pid,
    pub name: String,
    pub owner: MasterKind,
    pub state: ProcState,
    pub started_at: u64,
    /// Heap segments, half-open byte ranges.
    pub heap: Vec<Range<u64>>,
    pub page_table: PageTable,
    grant_cursor: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SanitizeMode {
    #[default]
    None,
    OnTerminate,
    OnReassign,
}

impl FromStr for SanitizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(SanitizeMode::None),
            "terminate" | "on_terminate" => Ok(SanitizeMode::OnTerminate),
            "reassign" | "on_reassign" => Ok(SanitizeMode::OnReassign),
            other => Err(format!("unknown sanitize mode `{other}`")),
        }
    }
}

impl fmt::Display for SanitizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SanitizeMode::None => "none",
            SanitizeMode::OnTerminate => "terminate",
            SanitizeMode::OnReassign => "reassign",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SanitizePolicy {
    pub mode: SanitizeMode,
    pub fill: Word,
    pub cost_per_word: u64,
}

impl Default for SanitizePolicy {
    fn default() -> Self {
        SanitizePolicy {
            mode: SanitizeMode::None,
            fill: 0,
            cost_per_word: 1,
        }
    }
}

/// One protected region of a grant, with the bounds read back from the
/// slot registers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrantRegion {
    pub unit: usize,
    pub slot: usize,
    pub start: PhysAddr,
    pub end: PhysAddr,
}

impl GrantRegion {
    pub fn words(&self) -> u64 {
        (self.end.value() - self.start.value()) / WORD_BYTES + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsolationGrant {
    pub id: u64,
    pub pid: Pid,
    pub smid: Smid,
    pub regions: Vec<GrantRegion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SanitizeTrigger {
    Terminate,
    Reassign,
}

impl fmt::Display for SanitizeTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SanitizeTrigger::Terminate => "terminate",
            SanitizeTrigger::Reassign => "reassign",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SanitizeEvent {
    pub trigger: SanitizeTrigger,
    pub pid: Pid,
    pub start: PhysAddr,
    pub end: PhysAddr,
    pub words: u64,
    pub cycles: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverheadReport {
    pub sanitized_words: u64,
    pub total_cycles: u64,
    pub events: Vec<SanitizeEvent>,
}

#[derive(Debug, Clone)]
pub struct OsConfig {
    pub pid_seed: u32,
    /// Secure master that programs the XMPU on the OS's behalf.
    pub broker: MasterKind,
    /// `(unit index, slot)` pairs handed out together as one grant.
    pub isolation_pool: Vec<(usize, usize)>,
    /// Region that backs heap pages outside any grant.
    pub heap_pool: Option<String>,
}

impl Default for OsConfig {
    fn default() -> Self {
        OsConfig {
            pid_seed: DEFAULT_PID_SEED,
            broker: MasterKind::Pmu,
            isolation_pool: Vec::new(),
            heap_pool: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Os {
    soc: Soc,
    config: OsConfig,
    processes: BTreeMap<Pid, Process>,
    next_pid: u32,
    clock: u64,
    scheduled: BTreeMap<u64, Vec<Pid>>,
    grant: Option<IsolationGrant>,
    grants_issued: u64,
    policy: SanitizePolicy,
    overhead: OverheadReport,
    pool_next: u64,
    pool_end: u64,
}

impl Os {
    pub fn new(soc: Soc, config: OsConfig) -> Result<Self, OsError> {
        let pool = match &config.heap_pool {
            Some(name) => Some(
                soc.mem()
                    .region(name)
                    .cloned()
                    .ok_or_else(|| OsError::UnknownPool(name.clone()))?,
            ),
            None => {
                let pool_units: Vec<(usize, usize)> = config.isolation_pool.clone();
                soc.mem()
                    .regions()
                    .iter()
                    .filter(|r| r.kind == RegionKind::Ddr)
                    .filter(|r| {
                        !pool_units.iter().any(|&(u, s)| {
                            let slot = soc.unit(u).region(s).copied().unwrap_or_default();
                            slot.start <= r.last_word() && r.base <= slot.end
                        })
                    })
                    .max_by_key(|r| r.size)
                    .cloned()
            }
        };
        let (pool_next, pool_end) = match pool {
            Some(r) => (
                r.base.value().div_ceil(PAGE_SIZE),
                (r.base.value() + r.size) / PAGE_SIZE,
            ),
            None => (0, 0),
        };
        Ok(Os {
            soc,
            next_pid: config.pid_seed,
            config,
            processes: BTreeMap::new(),
            clock: 0,
            scheduled: BTreeMap::new(),
            grant: None,
            grants_issued: 0,
            policy: SanitizePolicy::default(),
            overhead: OverheadReport::default(),
            pool_next,
            pool_end,
        })
    }

    pub fn soc(&self) -> &Soc {
        &self.soc
    }

    pub fn soc_mut(&mut self) -> &mut Soc {
        &mut self.soc
    }

    pub fn config(&self) -> &OsConfig {
        &self.config
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn process(&self, pid: Pid) -> Result<&Process, OsError> {
        self.processes.get(&pid).ok_or(OsError::NoSuchPid(pid))
    }

    fn running(&self, pid: Pid) -> Result<&Process, OsError> {
        let p = self.process(pid)?;
        match p.state {
            ProcState::Running => Ok(p),
            ProcState::Terminated => Err(OsError::NoSuchPid(pid)),
        }
    }

    pub fn processes(&self) -> impl Iterator<Item = &Process> {
        self.processes.values()
    }

    pub fn live_grant(&self) -> Option<&IsolationGrant> {
        self.grant.as_ref()
    }

    /// Moves the PID counter forward so the next spawn receives `next`.
    pub fn seed_pids(&mut self, next: u32) -> Result<(), OsError> {
        if next < self.next_pid {
            return Err(OsError::PidSeedBackwards {
                current: self.next_pid,
                requested: next,
            });
        }
        self.next_pid = next;
        Ok(())
    }

    pub fn spawn(&mut self, name: impl Into<String>, owner: MasterKind) -> Pid {
        let pid = Pid(self.next_pid);
        self.next_pid += 1;
        self.processes.insert(
            pid,
            Process {
                pid,
                ppid: Pid(1),
                name: name.into(),
                owner,
                state: ProcState::Running,
                started_at: self.clock,
                heap: Vec::new(),
                page_table: PageTable::default(),
                grant_cursor: 0,
            },
        );
        pid
    }

    pub fn set_policy(&mut self, policy: SanitizePolicy) {
        self.policy = policy;
    }

    pub fn policy(&self) -> SanitizePolicy {
        self.policy
    }

    pub fn overhead_report(&self) -> &OverheadReport {
        &self.overhead
    }

    fn sanitize(&mut self, trigger: SanitizeTrigger, pid: Pid, regions: &[GrantRegion]) -> Result<(), OsError> {
        for r in regions {
            let words = self.soc.mem_mut().fill(r.start, r.end, self.policy.fill)?;
            let cycles = words * self.policy.cost_per_word;
            self.overhead.sanitized_words += words;
            self.overhead.total_cycles += cycles;
            self.overhead.events.push(SanitizeEvent {
                trigger,
                pid,
                start: r.start,
                end: r.end,
                words,
                cycles,
            });
        }
        Ok(())
    }

    fn by_unit(regions: &[GrantRegion]) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for r in regions {
            out.entry(r.unit).or_default().push(r.slot);
        }
        out
    }

    /// Terminates `pid`, releasing its grant. Under `OnTerminate` the grant
    /// regions are overwritten with the policy fill first.
    pub fn terminate(&mut self, pid: Pid) -> Result<(), OsError> {
        let p = self.processes.get_mut(&pid).ok_or(OsError::NoSuchPid(pid))?;
        if p.state == ProcState::Terminated {
            return Err(OsError::AlreadyTerminated(pid));
        }
        p.state = ProcState::Terminated;
        let grant = match self.grant.take_if(|g| g.pid == pid) {
            Some(g) => g,
            None => return Ok(()),
        };
        if self.policy.mode == SanitizeMode::OnTerminate {
            self.sanitize(SanitizeTrigger::Terminate, pid, &grant.regions)?;
        }
        let broker = self.config.broker;
        for (unit, slots) in Self::by_unit(&grant.regions) {
            let updates: Vec<RegionUpdate> = slots
                .into_iter()
                .map(|slot| RegionUpdate {
                    slot,
                    valid: Some(false),
                    ..Default::default()
                })
                .collect();
            // a refused release leaves the slots as they were
            let _ = self.soc.program_isolation(broker, unit, &updates, true)?;
        }
        Ok(())
    }

    /// Schedules `pid` to terminate when the clock passes `tick`.
    pub fn schedule_terminate(&mut self, pid: Pid, tick: u64) -> Result<(), OsError> {
        self.running(pid)?;
        self.scheduled.entry(tick).or_default().push(pid);
        Ok(())
    }

    /// Runs the events due at the current tick, then moves the clock on.
    pub fn advance(&mut self) -> Result<(), OsError> {
        if let Some(due) = self.scheduled.remove(&self.clock) {
            for pid in due {
                if self.process(pid)?.state == ProcState::Running {
                    self.terminate(pid)?;
                }
            }
        }
        self.clock += 1;
        Ok(())
    }

    /// `ps`-style listing of running processes, ordered by pid.
    pub fn ps_listing(&self) -> String {
        let mut out = String::new();
        for p in self.processes.values().filter(|p| p.state == ProcState::Running) {
            let minutes = 12 * 60 + p.started_at;
            let start = format!("{:02}:{:02}", (minutes / 60) % 24, minutes % 60);
            out.push_str(&format!("{:<5} {:>6} {} {}\n", p.pid, p.ppid, start, p.name));
        }
        out
    }

    /// Brokers an isolation grant for `pid` over the configured slot pool.
    pub fn request_isolation(&mut self, pid: Pid) -> Result<IsolationGrant, OsError> {
        let owner = self.running(pid)?.owner;
        if let Some(g) = &self.grant {
            return Err(OsError::RegionBusy(g.pid));
        }
        if self.config.isolation_pool.is_empty() {
            return Err(OsError::NoIsolationPool);
        }
        let smid = self.soc.master(owner)?.smid;
        let regions: Vec<GrantRegion> = self
            .config
            .isolation_pool
            .iter()
            .map(|&(unit, slot)| {
                let r = self.soc.unit(unit).region(slot).copied().unwrap_or_default();
                GrantRegion {
                    unit,
                    slot,
                    start: r.start,
                    end: r.end,
                }
            })
            .collect();
        if self.policy.mode == SanitizeMode::OnReassign {
            self.sanitize(SanitizeTrigger::Reassign, pid, &regions)?;
        }
        let broker = self.config.broker;
        for (unit, slots) in Self::by_unit(&regions) {
            let updates: Vec<RegionUpdate> = slots
                .into_iter()
                .map(|slot| RegionUpdate {
                    slot,
                    smid: Some(smid),
                    valid: Some(true),
                    ..Default::default()
                })
                .collect();
            if let RegOutcome::Failed(fault) = self.soc.program_isolation(broker, unit, &updates, true)? {
                return Err(OsError::BrokerDenied(fault));
            }
        }
        self.grants_issued += 1;
        let grant = IsolationGrant {
            id: self.grants_issued,
            pid,
            smid,
            regions,
        };
        self.grant = Some(grant.clone());
        Ok(grant)
    }

    fn grant_frames(&self, pid: Pid) -> Vec<u64> {
        let Some(grant) = self.grant.as_ref().filter(|g| g.pid == pid) else {
            return Vec::new();
        };
        let mem = self.soc.mem();
        grant
            .regions
            .iter()
            .filter(|r| mem.region_of(r.start).is_some_and(|d| d.kind == RegionKind::Ddr))
            .flat_map(|r| {
                let first = r.start.value().div_ceil(PAGE_SIZE);
                let last = (r.end.value() + WORD_BYTES) / PAGE_SIZE;
                first..last
            })
            .collect()
    }

    /// Maps a new heap segment of `size` bytes. Pages land in the caller's
    /// granted DDR first, then in the general heap pool.
    pub fn alloc_heap(&mut self, pid: Pid, size: u64, base: Option<u64>) -> Result<Range<u64>, OsError> {
        if !size.is_multiple_of(PAGE_SIZE) {
            return Err(OsError::BadHeapSize(size));
        }
        let proc = self.running(pid)?;
        let base = match base {
            Some(b) if b % PAGE_SIZE != 0 => return Err(OsError::BadHeapSize(b)),
            Some(b) => b,
            None => match proc.heap.iter().map(|r| r.end).max() {
                Some(end) => end,
                None => DEFAULT_HEAP_BASE + ((pid.0 as u64).wrapping_mul(0x9e37_79b1) & 0xf_ffff) * PAGE_SIZE,
            },
        };
        let range = base..base + size;
        if proc.heap.iter().any(|r| r.start < range.end && range.start < r.end) {
            return Err(OsError::VaOverlap(VirtAddr(base)));
        }
        let frames = self.grant_frames(pid);
        let pages = size / PAGE_SIZE;
        let mut cursor = proc.grant_cursor;
        let mut mapping = Vec::with_capacity(pages as usize);
        let mut pool_next = self.pool_next;
        for i in 0..pages {
            let frame = if (cursor as usize) < frames.len() {
                cursor += 1;
                frames[cursor as usize - 1]
            } else {
                if pool_next >= self.pool_end {
                    return Err(OsError::OutOfPhysicalPages);
                }
                pool_next += 1;
                pool_next - 1
            };
            mapping.push((base / PAGE_SIZE + i, PhysAddr::truncate(frame * PAGE_SIZE)));
        }
        self.pool_next = pool_next;
        let proc = self.processes.get_mut(&pid).expect("checked above");
        proc.grant_cursor = cursor;
        for (vpn, frame) in mapping {
            proc.page_table.map(vpn, frame);
        }
        if size > 0 {
            proc.heap.push(range.clone());
            proc.heap.sort_by_key(|r| r.start);
        }
        Ok(range)
    }

    /// `/proc/<pid>/maps`-style text.
    pub fn proc_maps(&self, pid: Pid) -> Result<String, OsError> {
        let proc = self.running(pid)?;
        let mut out = String::new();
        for seg in &proc.heap {
            let prefix = format!("{:x}-{:x} rw-p 00000000 00:00 0", seg.start, seg.end);
            out.push_str(&format!("{prefix:<58} [heap]\n"));
        }
        Ok(out)
    }

    pub fn pagemap_translate(&self, pid: Pid, va: VirtAddr) -> Result<PhysAddr, OsError> {
        self.running(pid)?
            .page_table
            .translate(va)
            .ok_or(OsError::UnmappedVa(va))
    }

    /// Stores a word at `va` through the bus as the owning master.
    pub fn write_virtual(&mut self, pid: Pid, va: VirtAddr, value: Word) -> Result<IssueResult, OsError> {
        let owner = self.running(pid)?.owner;
        let pa = self.pagemap_translate(pid, va)?;
        Ok(self.soc.issue(&Transaction::write(owner, pa, value))?)
    }

    /// Reads the word-aligned virtual range through the bus as the owning
    /// master, one span per page.
    pub fn read_virtual(
        &mut self,
        pid: Pid,
        range: Range<u64>,
        exec: Exec,
    ) -> Result<Vec<(VirtAddr, WordRead)>, OsError> {
        let owner = self.running(pid)?.owner;
        let mut spans = Vec::new();
        let mut va = range.start;
        while va < range.end {
            let page_end = (va / PAGE_SIZE + 1) * PAGE_SIZE;
            let chunk_end = page_end.min(range.end);
            let pa = self.pagemap_translate(pid, VirtAddr(va))?;
            spans.push((va, pa, ((chunk_end - va) / WORD_BYTES) as usize));
            va = chunk_end;
        }
        let reads: Vec<(PhysAddr, usize)> = spans.iter().map(|&(_, pa, n)| (pa, n)).collect();
        let blocks = self.soc.read_blocks(owner, &reads, exec)?;
        let mut out = Vec::with_capacity(reads.iter().map(|r| r.1).sum());
        for ((va, _, _), block) in spans.iter().zip(blocks) {
            for (i, w) in block.words.into_iter().enumerate() {
                out.push((VirtAddr(va + i as u64 * WORD_BYTES), w));
            }
        }
        Ok(out)
    }
}
