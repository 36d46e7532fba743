//! Step execution. Each run owns a fresh simulator; nothing is shared
//! between runs, so batches can execute in parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use super::golden::{compare_transcript, Comparison};
use super::report::Report;
use super::script::{AddrExpr, AttackStep, Located, ParseError, Perm, ProbeVerb, Script, SlotSpec, Step};
use crate::attack::{
    self, AppLayout, AttackError, LayoutWrite, MatchReport, MemoryImage, PaRun, Provenance, SignatureProfile,
};
use crate::mem::{parse_memory_map, MemError, MemRegionDecl, MemorySnapshot, PhysAddr, PhysMemory, Word, WORD_BYTES};
use crate::os::{Os, OsConfig, OsError, Pid, SanitizeMode, SanitizePolicy, VirtAddr, DEFAULT_PID_SEED};
use crate::par::Exec;
use crate::soc::{IssueResult, Master, MasterKind, RegionUpdate, Soc, SocError, Transaction};
use crate::xmpu::{RegId, RegOutcome, RegionField, Smid, XmpuError, XmpuInstance, POISON};

/// Command-line overrides applied to every run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Initial PID counter, replacing any `pid_seed` step.
    pub seed: Option<u32>,
    /// Sanitize mode; when set, `policy` steps in the script are ignored.
    pub policy: Option<SanitizeMode>,
    pub fill: Option<Word>,
    pub exec: Exec,
}

#[derive(Debug, Error)]
enum StepError {
    #[error("{0}")]
    Assertion(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Os(#[from] OsError),
    #[error(transparent)]
    Soc(#[from] SocError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Xmpu(#[from] XmpuError),
}

impl StepError {
    fn usage(msg: impl Into<String>) -> Self {
        StepError::Usage(msg.into())
    }

    fn assertion(msg: impl Into<String>) -> Self {
        StepError::Assertion(msg.into())
    }
}

type StepResult = Result<(), StepError>;

/// The first step that did not complete.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepFailure {
    pub file: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub lines: Vec<String>,
}

impl Transcript {
    pub fn text(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    fn push(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    fn push_block(&mut self, block: &str) {
        self.lines.extend(block.lines().map(str::to_string));
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: String,
    pub transcript: Transcript,
    pub report: Report,
    pub failure: Option<StepFailure>,
    pub match_report: Option<MatchReport>,
    pub image: Option<MemoryImage>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

struct Platform {
    regions: Vec<MemRegionDecl>,
    background: Word,
    units: Vec<(String, u64, u64)>,
    masters: Vec<Master>,
    broker: MasterKind,
    pool: Vec<(String, usize)>,
    heap_pool: Option<String>,
    pid_seed: u32,
    adversary: MasterKind,
}

impl Default for Platform {
    fn default() -> Self {
        Platform {
            regions: Vec::new(),
            background: 0,
            units: Vec::new(),
            masters: Vec::new(),
            broker: MasterKind::Pmu,
            pool: Vec::new(),
            heap_pool: None,
            pid_seed: DEFAULT_PID_SEED,
            adversary: MasterKind::Apu,
        }
    }
}

impl Platform {
    fn boot(&self) -> Result<Os, StepError> {
        let mem = PhysMemory::new(self.regions.clone(), self.background)?;
        let units = self
            .units
            .iter()
            .map(|(name, first, last)| {
                Ok(XmpuInstance::new(
                    name.clone(),
                    PhysAddr::new(*first)?,
                    PhysAddr::new(*last)?,
                ))
            })
            .collect::<Result<Vec<_>, MemError>>()?;
        let soc = Soc::new(mem, units, self.masters.clone())?;
        let isolation_pool = self
            .pool
            .iter()
            .map(|(unit, slot)| Ok((soc.unit_index(unit)?, *slot)))
            .collect::<Result<Vec<_>, SocError>>()?;
        let config = OsConfig {
            pid_seed: self.pid_seed,
            broker: self.broker,
            isolation_pool,
            heap_pool: self.heap_pool.clone(),
        };
        Ok(Os::new(soc, config)?)
    }
}

struct Runner<'a> {
    scenario: String,
    options: &'a RunOptions,
    platform: Platform,
    os: Option<Os>,
    /// Platform as it stood before the first process was spawned; profiles
    /// run on copies of it.
    pristine: Option<Os>,
    policy: SanitizePolicy,
    transcript: Transcript,
    handles: BTreeMap<String, Pid>,
    vars: BTreeMap<String, Word>,
    snapshots: BTreeMap<String, MemorySnapshot>,
    heap: Vec<Range<u64>>,
    runs: Vec<PaRun>,
    image: Option<MemoryImage>,
    profiles: Vec<SignatureProfile>,
    last_match: Option<MatchReport>,
    disclosed: BTreeSet<u64>,
}

fn hex(v: Word) -> String {
    format!("{v:#010x}")
}

fn verdict_line(verb: ProbeVerb, label: &str, verdict: &str) -> String {
    format!("{:17}{verb} {label:<31}...  {verdict}", "")
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS!"
    } else {
        "FAILED!"
    }
}

impl<'a> Runner<'a> {
    fn new(scenario: String, options: &'a RunOptions) -> Self {
        let policy = SanitizePolicy {
            mode: options.policy.unwrap_or_default(),
            fill: options.fill.unwrap_or(0),
            ..Default::default()
        };
        Runner {
            scenario,
            options,
            platform: Platform::default(),
            os: None,
            pristine: None,
            policy,
            transcript: Transcript::default(),
            handles: BTreeMap::new(),
            vars: BTreeMap::new(),
            snapshots: BTreeMap::new(),
            heap: Vec::new(),
            runs: Vec::new(),
            image: None,
            profiles: Vec::new(),
            last_match: None,
            disclosed: BTreeSet::new(),
        }
    }

    fn os(&mut self) -> Result<&mut Os, StepError> {
        if self.os.is_none() {
            if let Some(seed) = self.options.seed {
                self.platform.pid_seed = seed;
            }
            let mut os = self.platform.boot()?;
            os.set_policy(self.policy);
            self.os = Some(os);
        }
        Ok(self.os.as_mut().expect("booted above"))
    }

    fn pid(&self, handle: &str) -> Result<Pid, StepError> {
        self.handles
            .get(handle)
            .copied()
            .ok_or_else(|| StepError::usage(format!("no process handle `{handle}`")))
    }

    fn var(&self, name: &str) -> Result<Word, StepError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| StepError::usage(format!("variable `{name}` is not set")))
    }

    fn unit(&mut self, name: &str) -> Result<usize, StepError> {
        Ok(self.os()?.soc().unit_index(name)?)
    }

    fn addr(&mut self, expr: &AddrExpr) -> Result<PhysAddr, StepError> {
        let base = match &expr.region {
            None => 0,
            Some(name) => {
                let os = self.os()?;
                os.soc()
                    .mem()
                    .region(name)
                    .map(|r| r.base.value())
                    .ok_or_else(|| StepError::usage(format!("no region `{name}`")))?
            }
        };
        Ok(PhysAddr::new(base + expr.offset)?)
    }

    fn region_bounds(&mut self, name: &str) -> Result<(PhysAddr, PhysAddr), StepError> {
        let os = self.os()?;
        let r = os
            .soc()
            .mem()
            .region(name)
            .ok_or_else(|| StepError::usage(format!("no region `{name}`")))?;
        Ok((r.base, r.last_word()))
    }

    /// Current bounds of every isolation-pool slot, inclusive.
    fn pool_ranges(&self) -> Vec<(u64, u64)> {
        let Some(os) = &self.os else { return Vec::new() };
        os.config()
            .isolation_pool
            .iter()
            .filter_map(|&(u, s)| os.soc().unit(u).region(s))
            .map(|r| (r.start.value(), r.end.value()))
            .collect()
    }

    /// Residue accounting: a word counts once it reaches the adversary
    /// from inside the isolation pool and is neither background nor fill.
    fn note_reads(&mut self, master: MasterKind, reads: impl IntoIterator<Item = (PhysAddr, Word)>) {
        if master != self.platform.adversary {
            return;
        }
        let Some(os) = &self.os else { return };
        let background = os.soc().mem().background();
        let fill = os.policy().fill;
        let pool = self.pool_ranges();
        for (pa, value) in reads {
            let a = pa.value();
            if value != background && value != fill && pool.iter().any(|&(lo, hi)| lo <= a && a <= hi) {
                self.disclosed.insert(a);
            }
        }
    }

    fn issue(&mut self, txn: Transaction) -> Result<IssueResult, StepError> {
        let result = self.os()?.soc_mut().issue(&txn)?;
        if let IssueResult::Value(v) = result {
            self.note_reads(txn.master, [(txn.addr, v)]);
        }
        Ok(result)
    }

    fn set_var(&mut self, var: &Option<String>, value: Word) {
        if let Some(name) = var {
            self.vars.insert(name.clone(), value);
        }
    }

    fn substitute(&self, text: &str) -> Result<String, StepError> {
        let mut out = String::new();
        let mut rest = text;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let end = rest[start..]
                .find('}')
                .ok_or_else(|| StepError::usage("unterminated `${`"))?;
            out.push_str(&hex(self.var(&rest[start + 2..start + end])?));
            rest = &rest[start + end + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    fn program(&mut self, master: MasterKind, unit: &str, enable: bool, slot: &Option<SlotSpec>) -> StepResult {
        let u = self.unit(unit)?;
        let mut updates = Vec::new();
        if let Some(spec) = slot {
            let (start, end) = match &spec.region {
                Some(name) => {
                    let (s, e) = self.region_bounds(name)?;
                    (Some(s), Some(e))
                }
                None => (
                    spec.start.map(PhysAddr::new).transpose()?,
                    spec.end.map(PhysAddr::new).transpose()?,
                ),
            };
            let (read_en, write_en) = match spec.perm {
                None => (None, None),
                Some(Perm::None) => (Some(false), Some(false)),
                Some(Perm::Read) => (Some(true), Some(false)),
                Some(Perm::Write) => (Some(false), Some(true)),
                Some(Perm::ReadWrite) => (Some(true), Some(true)),
            };
            updates.push(RegionUpdate {
                slot: spec.slot,
                start,
                end,
                smid: spec.smid.map(Smid::new).transpose()?,
                smid_mask: spec.mask,
                read_en,
                write_en,
                valid: spec.valid,
            });
        }
        match self.os()?.soc_mut().program_isolation(master, u, &updates, enable)? {
            RegOutcome::Pass => Ok(()),
            RegOutcome::Failed(fault) => Err(StepError::assertion(format!(
                "{master} could not program {unit}: {fault}"
            ))),
        }
    }

    fn bounds(os: &Os) -> Vec<u32> {
        let fields = [
            RegionField::StartLo,
            RegionField::StartHi,
            RegionField::EndLo,
            RegionField::EndHi,
        ];
        os.config()
            .isolation_pool
            .iter()
            .flat_map(|&(u, slot)| fields.map(|field| os.soc().unit(u).peek(RegId::Region { slot, field })))
            .collect()
    }

    fn attack(&mut self, step: &AttackStep) -> StepResult {
        let exec = self.options.exec;
        match step {
            AttackStep::Poll { target, max_ticks } => {
                let trace = attack::poll_until_terminated(self.os()?, target, *max_ticks)?;
                self.transcript.push(format!("ps at tick {}:", trace.last_seen));
                self.transcript.push_block(&trace.before);
                self.transcript.push(format!("ps at tick {}:", trace.vanished));
                self.transcript.push_block(&trace.after);
                self.transcript.push(format!(
                    "poll: {} (pid {}) last seen at tick {}, gone at tick {}",
                    trace.target, trace.pid, trace.last_seen, trace.vanished
                ));
            }
            AttackStep::Isolate { handle } => {
                let pid = self.pid(handle)?;
                let before = Self::bounds(self.os()?);
                let grant = self.os()?.request_isolation(pid)?;
                let after = Self::bounds(self.os()?);
                let kept = if before == after { "unchanged" } else { "changed" };
                self.transcript.push(format!(
                    "isolate: grant {} to pid {} smid {:#05x}, {} regions, bounds {kept}",
                    grant.id,
                    pid,
                    grant.smid.value(),
                    grant.regions.len()
                ));
            }
            AttackStep::Maps { handle } => {
                let pid = self.pid(handle)?;
                let os = self.os()?;
                let maps = os.proc_maps(pid)?;
                let heap = attack::scrape_virtual(os, pid)?;
                self.transcript.push_block(&maps);
                for r in &heap {
                    self.transcript.push(format!("heap: {:#x}-{:#x}", r.start, r.end));
                }
                self.heap = heap;
            }
            AttackStep::Locate { handle, word, min_run } => {
                let pid = self.pid(handle)?;
                if self.heap.is_empty() {
                    self.heap = attack::scrape_virtual(self.os()?, pid)?;
                }
                let heap = self.heap.clone();
                let found = attack::locate(self.os()?, pid, &heap, *word, *min_run, exec)?;
                if found.is_empty() {
                    self.transcript.push(format!("locate {}: no run", hex(*word)));
                }
                for r in found {
                    self.transcript.push(format!(
                        "locate {}: {:#x}-{:#x} ({} words)",
                        hex(*word),
                        r.start,
                        r.last_word(),
                        r.words
                    ));
                }
            }
            AttackStep::Vdump { handle, first, last } => {
                let pid = self.pid(handle)?;
                let dump = attack::virtual_hexdump(self.os()?, pid, *first, *last, exec)?;
                self.transcript.push_block(&dump);
            }
            AttackStep::Translate { handle, first, last } => {
                let pid = self.pid(handle)?;
                for va in [*first, *last] {
                    let pa = self.os()?.pagemap_translate(pid, VirtAddr(va))?;
                    self.transcript.push(format!("pagemap: {va:#x} -> {:#x}", pa.value()));
                }
                let runs = attack::translate_range(self.os()?, pid, *first..*last + WORD_BYTES)?;
                for r in &runs {
                    self.transcript.push(format!("run: {r}"));
                }
                self.runs = runs;
            }
            AttackStep::Devmem { master, addr, var } => {
                let pa = self.addr(addr)?;
                self.transcript.push(format!("devmem {:#x}", pa.value()));
                let value = match attack::devmem(self.os()?, *master, pa) {
                    Ok(v) => {
                        self.note_reads(*master, [(pa, v)]);
                        self.transcript.push(format!("0x{v:08X}"));
                        v
                    }
                    Err(AttackError::Denied(_)) => {
                        self.transcript.push("DENIED");
                        POISON
                    }
                    Err(e) => return Err(e.into()),
                };
                self.set_var(var, value);
            }
            AttackStep::Scrape { handle } => {
                let pid = self.pid(handle)?;
                let master = self.os()?.process(pid)?.owner;
                if self.runs.is_empty() {
                    if self.heap.is_empty() {
                        self.heap = attack::scrape_virtual(self.os()?, pid)?;
                    }
                    let mut runs = Vec::new();
                    for seg in self.heap.clone() {
                        runs.extend(attack::translate_range(self.os()?, pid, seg)?);
                    }
                    self.runs = runs;
                }
                let scenario = self.scenario.clone();
                let os = self.os()?;
                let provenance = Provenance {
                    scenario,
                    grant: os.live_grant().map(|g| g.id),
                    tick: os.clock(),
                };
                let runs = self.runs.clone();
                let image = attack::scrape_image(self.os()?, master, &runs, provenance, exec)?;
                self.note_reads(
                    master,
                    image
                        .entries()
                        .iter()
                        .filter(|e| !e.denied)
                        .map(|e| (e.pa, e.value))
                        .collect::<Vec<_>>(),
                );
                self.transcript.push(format!(
                    "scrape: {} words, {} denied",
                    image.len(),
                    image.denied_count()
                ));
                self.image = Some(image);
            }
            AttackStep::Reconstruct => {
                let image = self
                    .image
                    .as_ref()
                    .ok_or_else(|| StepError::usage("reconstruct needs a scraped image"))?;
                let report = attack::reconstruct(image, &self.profiles, exec);
                self.transcript.push_block(&report.to_string());
                self.last_match = Some(report);
            }
        }
        Ok(())
    }

    fn exec(&mut self, step: &Step) -> StepResult {
        if step.is_platform() && self.os.is_some() {
            return Err(StepError::usage("platform steps must come before the platform boots"));
        }
        match step {
            Step::MemoryMap(path) => {
                let text =
                    fs::read_to_string(path).map_err(|e| StepError::usage(format!("{}: {e}", path.display())))?;
                self.platform.regions.extend(parse_memory_map(&text)?);
            }
            Step::Region { name, base, size, kind } => {
                self.platform
                    .regions
                    .push(MemRegionDecl::new(name.clone(), *base, *size, *kind)?);
            }
            Step::Background(w) => self.platform.background = *w,
            Step::Unit { name, first, last } => self.platform.units.push((name.clone(), *first, *last)),
            Step::Master { kind, smid, secure } => self.platform.masters.push(Master {
                kind: *kind,
                smid: Smid::new(*smid)?,
                secure_master: *secure,
            }),
            Step::Broker(m) => self.platform.broker = *m,
            Step::IsolationSlot { unit, slot } => self.platform.pool.push((unit.clone(), *slot)),
            Step::HeapPool(name) => self.platform.heap_pool = Some(name.clone()),
            Step::PidSeed(n) => self.platform.pid_seed = *n,
            Step::Adversary(m) => self.platform.adversary = *m,
            Step::Policy { mode, fill, cost } => {
                if self.options.policy.is_none() {
                    self.policy = SanitizePolicy {
                        mode: *mode,
                        fill: self.options.fill.unwrap_or(*fill),
                        cost_per_word: *cost,
                    };
                    if let Some(os) = &mut self.os {
                        os.set_policy(self.policy);
                    }
                }
            }
            Step::Echo(text) => {
                let line = self.substitute(text)?;
                self.transcript.push(line);
            }
            Step::Program {
                master,
                unit,
                enable,
                slot,
            } => self.program(*master, unit, *enable, slot)?,
            Step::Secure { master, on } => self.os()?.soc_mut().set_secure_master(*master, *on)?,
            Step::Por => self.os()?.soc_mut().por_reset(),
            Step::Spawn {
                handle,
                master,
                command,
            } => {
                if self.handles.contains_key(handle) {
                    return Err(StepError::usage(format!("handle `{handle}` already in use")));
                }
                if self.pristine.is_none() {
                    self.pristine = Some(self.os()?.clone());
                }
                let pid = self.os()?.spawn(command.clone(), *master);
                self.handles.insert(handle.clone(), pid);
            }
            Step::Terminate(handle) => {
                let pid = self.pid(handle)?;
                self.os()?.terminate(pid)?;
            }
            Step::ScheduleTerminate { handle, tick } => {
                let pid = self.pid(handle)?;
                self.os()?.schedule_terminate(pid, *tick)?;
            }
            Step::Tick(n) => {
                for _ in 0..*n {
                    self.os()?.advance()?;
                }
            }
            Step::SeedPids(n) => self.os()?.seed_pids(*n)?,
            Step::RequestIsolation(handle) => {
                let pid = self.pid(handle)?;
                self.os()?.request_isolation(pid)?;
            }
            Step::AllocHeap { handle, size, base } => {
                let pid = self.pid(handle)?;
                self.os()?.alloc_heap(pid, *size, *base)?;
            }
            Step::WriteAs { master, addr, value } => {
                let pa = self.addr(addr)?;
                self.issue(Transaction::write(*master, pa, *value))?;
            }
            Step::ReadAs { master, addr, var } => {
                let pa = self.addr(addr)?;
                let observed = self.issue(Transaction::read(*master, pa))?.observed();
                self.set_var(var, observed.unwrap_or(POISON));
            }
            Step::FillAs {
                master,
                first,
                last,
                value,
            } => {
                let (first, last) = (self.addr(first)?, self.addr(last)?);
                let mut a = first.value();
                while a <= last.value() {
                    self.issue(Transaction::write(*master, PhysAddr::new(a)?, *value))?;
                    a += WORD_BYTES;
                }
            }
            Step::Probe {
                verb,
                master,
                addr,
                value,
                var,
            } => {
                let pa = self.addr(addr)?;
                let txn = match verb {
                    ProbeVerb::Reading => Transaction::read(*master, pa),
                    ProbeVerb::Writing => Transaction::write(*master, pa, *value),
                };
                let result = self.issue(txn)?;
                if let Some(v) = result.observed() {
                    self.set_var(var, v);
                }
                self.transcript
                    .push(verdict_line(*verb, &addr.text, verdict(!result.denied())));
            }
            Step::RegWriteAs {
                master,
                unit,
                reg,
                value,
            } => {
                let u = self.unit(unit)?;
                let outcome = self.os()?.soc_mut().reg_write(*master, u, *reg, *value)?;
                let label = format!("{unit}_{reg}");
                self.transcript
                    .push(verdict_line(ProbeVerb::Writing, &label, verdict(outcome.passed())));
            }
            Step::Skip { verb, label } => {
                self.transcript
                    .push(verdict_line(*verb, label, "Skipped to avoid memory collision!"));
            }
            Step::Ps => {
                let listing = self.os()?.ps_listing();
                self.transcript.push_block(&listing);
            }
            Step::Maps(handle) => {
                let pid = self.pid(handle)?;
                let maps = self.os()?.proc_maps(pid)?;
                self.transcript.push_block(&maps);
            }
            Step::Pagemap { handle, va } => {
                let pid = self.pid(handle)?;
                let pa = self.os()?.pagemap_translate(pid, VirtAddr(*va))?;
                self.transcript.push(format!("pagemap: {va:#x} -> {:#x}", pa.value()));
            }
            Step::Hexdump { first, last } => {
                let (first, last) = (self.addr(first)?, self.addr(last)?);
                let dump = self.os()?.soc().mem().hexdump(first, last)?;
                self.transcript.push_block(&dump);
            }
            Step::Attack(a) => self.attack(a)?,
            Step::Profile { name, owner, layout } => {
                let sandbox = match &self.pristine {
                    Some(os) => os.clone(),
                    None => self.os()?.clone(),
                };
                let layout = AppLayout {
                    name: name.clone(),
                    owner: *owner,
                    writes: layout
                        .iter()
                        .map(|l| LayoutWrite {
                            offset: l.offset,
                            count: l.count,
                            value: l.value,
                        })
                        .collect(),
                };
                let profile = attack::profile(sandbox, &layout, self.options.exec)?;
                for p in profile.patterns() {
                    let words: Vec<String> = p.words.iter().map(|w| hex(*w)).collect();
                    self.transcript.push(format!(
                        "profile {name}: at {} [{}] x{}",
                        p.offset,
                        words.join(" "),
                        p.min_run
                    ));
                }
                self.profiles.push(profile);
            }
            Step::ProfileLoad(path) => {
                let text =
                    fs::read_to_string(path).map_err(|e| StepError::usage(format!("{}: {e}", path.display())))?;
                self.profiles.push(SignatureProfile::from_toml(&text)?);
            }
            Step::AssertRead { master, addr, value } => {
                let pa = self.addr(addr)?;
                let got = self.issue(Transaction::read(*master, pa))?;
                if got != IssueResult::Value(*value) {
                    return Err(StepError::assertion(format!(
                        "{master} read of {} gave {got:?}, expected {}",
                        addr.text,
                        hex(*value)
                    )));
                }
            }
            Step::AssertMem { addr, value } => {
                let pa = self.addr(addr)?;
                let got = self.os()?.soc().mem().read(pa)?;
                if got != *value {
                    return Err(StepError::assertion(format!(
                        "{} holds {}, expected {}",
                        addr.text,
                        hex(got),
                        hex(*value)
                    )));
                }
            }
            Step::AssertVar { var, value } => {
                let got = self.var(var)?;
                if got != *value {
                    return Err(StepError::assertion(format!(
                        "{var} = {}, expected {}",
                        hex(got),
                        hex(*value)
                    )));
                }
            }
            Step::ExpectResidue { var, value } => {
                let got = self.var(var)?;
                let policy = self.policy;
                let want = if policy.mode == SanitizeMode::None {
                    *value
                } else {
                    policy.fill
                };
                if got != want {
                    return Err(StepError::assertion(format!(
                        "{var} = {}, expected {} under policy {}",
                        hex(got),
                        hex(want),
                        policy.mode
                    )));
                }
            }
            Step::ExpectRecovered(name) => {
                let report = self
                    .last_match
                    .as_ref()
                    .ok_or_else(|| StepError::usage("no reconstruction has run"))?;
                let m = report
                    .profiles
                    .iter()
                    .find(|p| &p.name == name)
                    .ok_or_else(|| StepError::usage(format!("no profile `{name}`")))?;
                let want = self.policy.mode == SanitizeMode::None;
                if m.matched != want {
                    return Err(StepError::assertion(format!(
                        "profile {name} matched={}, expected {want} under policy {}",
                        m.matched, self.policy.mode
                    )));
                }
            }
            Step::AssertInterrupts(n) => {
                let got = self.os()?.soc().pending_interrupts().len() as u64;
                if got != *n {
                    return Err(StepError::assertion(format!("{got} interrupts pending, expected {n}")));
                }
            }
            Step::ClearInterrupts => self.os()?.soc_mut().clear_interrupts(),
            Step::AssertReg { unit, reg, value } => {
                let u = self.unit(unit)?;
                let got = self.os()?.soc().unit(u).peek(*reg);
                if got != *value {
                    return Err(StepError::assertion(format!(
                        "{unit}_{reg} = {got:#010x}, expected {value:#010x}"
                    )));
                }
            }
            Step::Snapshot(name) => {
                let snap = self.os()?.soc().snapshot();
                self.snapshots.insert(name.clone(), snap);
            }
            Step::AssertSnapshotEq(name) => {
                let now = self.os()?.soc().snapshot();
                let then = self
                    .snapshots
                    .get(name)
                    .ok_or_else(|| StepError::usage(format!("no snapshot `{name}`")))?;
                if *then != now {
                    return Err(StepError::assertion(format!("memory differs from snapshot `{name}`")));
                }
            }
            Step::AssertTranscript(path) => match compare_transcript(&self.transcript.text(), path) {
                Ok(Comparison::Same) => {}
                Ok(Comparison::Differs { diff, .. }) => {
                    return Err(StepError::assertion(format!(
                        "transcript differs from {}:\n{diff}",
                        path.display()
                    )))
                }
                Err(e) => return Err(StepError::usage(e.to_string())),
            },
            Step::ExpectError(inner) => match self.exec(inner) {
                Ok(()) => return Err(StepError::assertion("step was expected to fail")),
                Err(StepError::Assertion(m)) => return Err(StepError::Assertion(m)),
                Err(e) => self.transcript.push(format!("error: {e}")),
            },
        }
        Ok(())
    }

    fn report(&self, failure: &Option<StepFailure>) -> Report {
        let (denials, cycles, words) = match &self.os {
            Some(os) => (
                os.soc().total_denials(),
                os.overhead_report().total_cycles,
                os.overhead_report().sanitized_words,
            ),
            None => (0, 0, 0),
        };
        Report {
            scenario: self.scenario.clone(),
            exit_code: if failure.is_some() { 1 } else { 0 },
            policy: self.policy.mode,
            denials,
            residue_words_disclosed: self.disclosed.len() as u64,
            sanitize_cycles: cycles,
            sanitized_words: words,
            profiles_matched: self.last_match.as_ref().map_or(0, |m| m.matched_count() as u64),
        }
    }
}

/// Runs already-parsed steps on a fresh simulator.
pub fn run_script(script: &Script, scenario: &str, options: &RunOptions) -> RunOutcome {
    run_script_with_os(script, scenario, options).0
}

/// As [`run_script`], also handing back the simulator in its final state
/// (`None` if the script never booted it).
pub fn run_script_with_os(script: &Script, scenario: &str, options: &RunOptions) -> (RunOutcome, Option<Os>) {
    let mut runner = Runner::new(scenario.to_string(), options);
    let mut failure = None;
    for Located { file, line, step } in &script.steps {
        if let Err(e) = runner.exec(step) {
            failure = Some(StepFailure {
                file: file.to_string(),
                line: *line,
                message: e.to_string(),
            });
            break;
        }
    }
    let report = runner.report(&failure);
    let outcome = RunOutcome {
        scenario: scenario.to_string(),
        transcript: runner.transcript,
        report,
        failure,
        match_report: runner.last_match,
        image: runner.image,
    };
    (outcome, runner.os)
}

fn scenario_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn run_scenario(path: &Path, options: &RunOptions) -> Result<RunOutcome, ParseError> {
    let script = Script::load(path)?;
    Ok(run_script(&script, &scenario_name(path), options))
}

/// Runs every scenario independently, in parallel when `options.exec` says
/// so. Results keep the input order.
pub fn run_many(paths: &[&Path], options: &RunOptions) -> Vec<Result<RunOutcome, ParseError>> {
    options.exec.map(paths, |p| run_scenario(p, options))
}
