//! Bus fabric: masters, XMPU units and physical memory on one transaction
//! path.
//!
//! Every declared memory region sits inside the window of exactly one unit.
//! A transaction is routed to that unit, decided, and either performed on
//! memory or dropped with an entry in the interrupt log. Denied reads return
//! [`POISON`]; denied writes never reach memory.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::mem::{MemError, MemorySnapshot, PhysAddr, PhysMemory, Word, WORD_BYTES};
use crate::par::Exec;
use crate::xmpu::{
    AccessDecision, AccessKind, BusAccess, Cause, RegFault, RegId, RegOutcome, RegionField, Smid, XmpuInstance,
    CTRL_ISOLATION, CTRL_RESET, POISON,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SocError {
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error("no XMPU guards address {0}")]
    Unrouted(PhysAddr),
    #[error("region {region} is guarded by {count} units")]
    Routing { region: String, count: usize },
    #[error("units {0} and {1} have overlapping windows")]
    OverlappingUnits(String, String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("master {0} is not declared")]
    UnknownMaster(MasterKind),
    #[error("masters {0} and {1} share SMID {2}")]
    DuplicateSmid(MasterKind, MasterKind, Smid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MasterKind {
    Apu,
    Rpu,
    Pmu,
}

impl fmt::Display for MasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MasterKind::Apu => "APU",
            MasterKind::Rpu => "RPU",
            MasterKind::Pmu => "PMU",
        })
    }
}

impl FromStr for MasterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "APU" => Ok(MasterKind::Apu),
            "RPU" => Ok(MasterKind::Rpu),
            "PMU" => Ok(MasterKind::Pmu),
            other => Err(format!("unknown master `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Master {
    pub kind: MasterKind,
    pub smid: Smid,
    /// May program XMPU registers.
    pub secure_master: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write(Word),
}

impl Access {
    pub fn kind(self) -> AccessKind {
        match self {
            Access::Read => AccessKind::Read,
            Access::Write(_) => AccessKind::Write,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transaction {
    pub master: MasterKind,
    pub access: Access,
    pub addr: PhysAddr,
}

impl Transaction {
    pub fn read(master: MasterKind, addr: PhysAddr) -> Self {
        Transaction {
            master,
            access: Access::Read,
            addr,
        }
    }

    pub fn write(master: MasterKind, addr: PhysAddr, value: Word) -> Self {
        Transaction {
            master,
            access: Access::Write(value),
            addr,
        }
    }
}

impl fmt::Display for Transaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.access {
            Access::Read => write!(f, "{} READ {:#010x}", self.master, self.addr.value()),
            Access::Write(v) => write!(f, "{} WRITE {:#010x} <- {v:#010x}", self.master, self.addr.value()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueResult {
    Value(Word),
    WriteOk,
    Denied(Cause),
}

impl IssueResult {
    pub fn denied(&self) -> bool {
        matches!(self, IssueResult::Denied(_))
    }

    /// What the master observes on the data bus.
    pub fn observed(&self) -> Option<Word> {
        match self {
            IssueResult::Value(v) => Some(*v),
            IssueResult::Denied(_) => Some(POISON),
            IssueResult::WriteOk => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterruptCause {
    Access(Cause),
    Register(RegFault),
}

impl fmt::Display for InterruptCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterruptCause::Access(c) => c.fmt(f),
            InterruptCause::Register(r) => r.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterruptEntry {
    pub unit: String,
    pub summary: String,
    pub cause: InterruptCause,
}

impl fmt::Display for InterruptEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} [{}]", self.unit, self.summary, self.cause)
    }
}

/// Partial update of one region slot; `None` fields keep their current
/// register value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegionUpdate {
    pub slot: usize,
    pub start: Option<PhysAddr>,
    pub end: Option<PhysAddr>,
    pub smid: Option<Smid>,
    pub smid_mask: Option<u16>,
    pub read_en: Option<bool>,
    pub write_en: Option<bool>,
    pub valid: Option<bool>,
}

/// One word of a bulk read: the value seen by the master and, for denied
/// words, why.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordRead {
    pub value: Word,
    pub denied: Option<Cause>,
}

/// Result of [`Soc::probe_block`]; nothing is logged until it is passed to
/// [`Soc::record_block`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRead {
    pub master: MasterKind,
    pub start: PhysAddr,
    pub unit: usize,
    pub words: Vec<WordRead>,
}

#[derive(Debug, Clone)]
pub struct Soc {
    mem: PhysMemory,
    units: Vec<XmpuInstance>,
    masters: Vec<Master>,
    log: Vec<InterruptEntry>,
    total_denials: u64,
}

impl Soc {
    pub fn new(mem: PhysMemory, mut units: Vec<XmpuInstance>, masters: Vec<Master>) -> Result<Self, SocError> {
        units.sort_by_key(|u| u.window().0);
        for pair in units.windows(2) {
            if pair[1].window().0 <= pair[0].window().1 {
                return Err(SocError::OverlappingUnits(
                    pair[0].name().to_string(),
                    pair[1].name().to_string(),
                ));
            }
        }
        for region in mem.regions() {
            let count = units
                .iter()
                .filter(|u| u.guards(region.base) || u.guards(region.last_word()))
                .count();
            let whole = units
                .iter()
                .any(|u| u.guards(region.base) && u.guards(region.last_word()));
            if count != 1 || !whole {
                return Err(SocError::Routing {
                    region: region.name.clone(),
                    count,
                });
            }
        }
        for (i, a) in masters.iter().enumerate() {
            for b in &masters[i + 1..] {
                if a.smid == b.smid || a.kind == b.kind {
                    return Err(SocError::DuplicateSmid(a.kind, b.kind, a.smid));
                }
            }
        }
        for m in &masters {
            for u in &mut units {
                u.set_secure_master(m.smid, m.secure_master);
            }
        }
        Ok(Soc {
            mem,
            units,
            masters,
            log: Vec::new(),
            total_denials: 0,
        })
    }

    pub fn mem(&self) -> &PhysMemory {
        &self.mem
    }

    /// Direct memory port, bypassing the XMPUs. Used by the OS sanitizer.
    pub fn mem_mut(&mut self) -> &mut PhysMemory {
        &mut self.mem
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        self.mem.snapshot()
    }

    pub fn units(&self) -> &[XmpuInstance] {
        &self.units
    }

    pub fn unit(&self, idx: usize) -> &XmpuInstance {
        &self.units[idx]
    }

    pub fn unit_mut(&mut self, idx: usize) -> &mut XmpuInstance {
        &mut self.units[idx]
    }

    pub fn unit_index(&self, name: &str) -> Result<usize, SocError> {
        self.units
            .iter()
            .position(|u| u.name() == name)
            .ok_or_else(|| SocError::UnknownUnit(name.to_string()))
    }

    pub fn masters(&self) -> &[Master] {
        &self.masters
    }

    pub fn master(&self, kind: MasterKind) -> Result<Master, SocError> {
        self.masters
            .iter()
            .copied()
            .find(|m| m.kind == kind)
            .ok_or(SocError::UnknownMaster(kind))
    }

    /// Grants or revokes a master's right to program XMPU registers.
    pub fn set_secure_master(&mut self, kind: MasterKind, secure: bool) -> Result<(), SocError> {
        let m = self
            .masters
            .iter_mut()
            .find(|m| m.kind == kind)
            .ok_or(SocError::UnknownMaster(kind))?;
        m.secure_master = secure;
        let smid = m.smid;
        for u in &mut self.units {
            u.set_secure_master(smid, secure);
        }
        Ok(())
    }

    pub fn route(&self, addr: PhysAddr) -> Result<usize, SocError> {
        self.units
            .iter()
            .position(|u| u.guards(addr))
            .ok_or(SocError::Unrouted(addr))
    }

    fn log(&mut self, unit: usize, summary: String, cause: InterruptCause) {
        self.units[unit].raise_interrupt();
        self.total_denials += 1;
        self.log.push(InterruptEntry {
            unit: self.units[unit].name().to_string(),
            summary,
            cause,
        });
    }

    /// Decision for `txn` without side effects.
    pub fn probe(&self, txn: &Transaction) -> Result<(usize, AccessDecision), SocError> {
        if !txn.addr.is_word_aligned() {
            return Err(MemError::Misaligned(txn.addr).into());
        }
        if self.mem.region_of(txn.addr).is_none() {
            return Err(MemError::UnmappedAddress(txn.addr).into());
        }
        let unit = self.route(txn.addr)?;
        let smid = self.master(txn.master)?.smid;
        let decision = self.units[unit].evaluate(&BusAccess {
            smid,
            kind: txn.access.kind(),
            addr: txn.addr,
        });
        Ok((unit, decision))
    }

    pub fn issue(&mut self, txn: &Transaction) -> Result<IssueResult, SocError> {
        let (unit, decision) = self.probe(txn)?;
        if !decision.allowed() {
            self.log(unit, txn.to_string(), InterruptCause::Access(decision.cause));
            return Ok(IssueResult::Denied(decision.cause));
        }
        Ok(match txn.access {
            Access::Read => IssueResult::Value(self.mem.read(txn.addr)?),
            Access::Write(v) => {
                self.mem.write(txn.addr, v)?;
                IssueResult::WriteOk
            }
        })
    }

    /// Reads `count` words from `start` as `master` without logging. The span
    /// must lie inside one declared region.
    pub fn probe_block(&self, master: MasterKind, start: PhysAddr, count: usize) -> Result<BlockRead, SocError> {
        let smid = self.master(master)?.smid;
        let values = self.mem.read_span(start, count)?;
        let unit = self.route(start)?;
        let xmpu = &self.units[unit];
        let words = if count == 0 {
            Vec::new()
        } else {
            let last = PhysAddr::truncate(start.value() + (count as u64 - 1) * WORD_BYTES);
            match xmpu.evaluate_span(smid, AccessKind::Read, start, last) {
                Some(d) if d.allowed() => values
                    .into_iter()
                    .map(|value| WordRead { value, denied: None })
                    .collect(),
                Some(d) => vec![
                    WordRead {
                        value: POISON,
                        denied: Some(d.cause),
                    };
                    count
                ],
                None => values
                    .into_iter()
                    .enumerate()
                    .map(|(i, value)| {
                        let addr = PhysAddr::truncate(start.value() + i as u64 * WORD_BYTES);
                        let d = xmpu.evaluate(&BusAccess {
                            smid,
                            kind: AccessKind::Read,
                            addr,
                        });
                        if d.allowed() {
                            WordRead { value, denied: None }
                        } else {
                            WordRead {
                                value: POISON,
                                denied: Some(d.cause),
                            }
                        }
                    })
                    .collect(),
            }
        };
        Ok(BlockRead {
            master,
            start,
            unit,
            words,
        })
    }

    /// Logs the denials of a probed block, in address order.
    pub fn record_block(&mut self, block: &BlockRead) {
        for (i, w) in block.words.iter().enumerate() {
            if let Some(cause) = w.denied {
                let addr = PhysAddr::truncate(block.start.value() + i as u64 * WORD_BYTES);
                let txn = Transaction::read(block.master, addr);
                self.log(block.unit, txn.to_string(), InterruptCause::Access(cause));
            }
        }
    }

    /// Reads several spans, probing them with `exec` and logging denials in
    /// span order.
    pub fn read_blocks(
        &mut self,
        master: MasterKind,
        spans: &[(PhysAddr, usize)],
        exec: Exec,
    ) -> Result<Vec<BlockRead>, SocError> {
        let this = &*self;
        let blocks = exec
            .map(spans, |&(start, count)| this.probe_block(master, start, count))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        for b in &blocks {
            self.record_block(b);
        }
        Ok(blocks)
    }

    pub fn reg_write(
        &mut self,
        master: MasterKind,
        unit: usize,
        reg: RegId,
        value: u32,
    ) -> Result<RegOutcome, SocError> {
        let smid = self.master(master)?.smid;
        let before = self.units[unit].interrupt_count();
        let outcome = self.units[unit].reg_write(smid, reg, value);
        if let RegOutcome::Failed(fault) = outcome {
            // the unit already counted its own interrupt line
            debug_assert_eq!(self.units[unit].interrupt_count(), before + 1);
            let summary = format!("{master} WRITE {}_{reg} <- {value:#010x}", self.units[unit].name());
            self.total_denials += 1;
            self.log.push(InterruptEntry {
                unit: self.units[unit].name().to_string(),
                summary,
                cause: InterruptCause::Register(fault),
            });
        }
        Ok(outcome)
    }

    pub fn reg_read(&mut self, master: MasterKind, unit: usize, reg: RegId) -> Result<Result<u32, RegFault>, SocError> {
        let smid = self.master(master)?.smid;
        let result = self.units[unit].reg_read(smid, reg);
        if let Err(fault) = result {
            let summary = format!("{master} READ {}_{reg}", self.units[unit].name());
            self.total_denials += 1;
            self.log.push(InterruptEntry {
                unit: self.units[unit].name().to_string(),
                summary,
                cause: InterruptCause::Register(fault),
            });
        }
        Ok(result)
    }

    /// Writes the supplied slot fields, then sets `CTRL` to the isolation
    /// value (`enable`) or the reset value. Fields left `None` keep their
    /// current contents, so re-supplying only an SMID leaves a slot's bounds
    /// in place.
    pub fn program_isolation(
        &mut self,
        requester: MasterKind,
        unit: usize,
        updates: &[RegionUpdate],
        enable: bool,
    ) -> Result<RegOutcome, SocError> {
        let smid = self.master(requester)?.smid;
        {
            let u = &self.units[unit];
            let fault = if !u.is_secure_master(smid) {
                Some(RegFault::Unauthorized)
            } else if u.lock().locked {
                Some(RegFault::Locked)
            } else {
                None
            };
            if let Some(fault) = fault {
                self.units[unit].raise_interrupt();
                let summary = format!("{requester} PROGRAM {} isolation={enable}", self.units[unit].name());
                self.total_denials += 1;
                self.log.push(InterruptEntry {
                    unit: self.units[unit].name().to_string(),
                    summary,
                    cause: InterruptCause::Register(fault),
                });
                return Ok(RegOutcome::Failed(fault));
            }
        }
        for up in updates {
            let current = *self.units[unit]
                .region(up.slot)
                .ok_or_else(|| SocError::UnknownUnit(format!("slot {}", up.slot)))?;
            let mut writes: Vec<(RegionField, u32)> = Vec::new();
            if let Some(start) = up.start {
                writes.push((RegionField::StartLo, start.value() as u32));
                writes.push((RegionField::StartHi, (start.value() >> 32) as u32));
            }
            if let Some(end) = up.end {
                writes.push((RegionField::EndLo, end.value() as u32));
                writes.push((RegionField::EndHi, (end.value() >> 32) as u32));
            }
            if up.smid.is_some() || up.smid_mask.is_some() {
                let id = up.smid.unwrap_or(current.smid).value() as u32;
                let mask = up.smid_mask.unwrap_or(current.smid_mask) as u32;
                writes.push((RegionField::Smid, id | mask << 16));
            }
            if up.read_en.is_some() || up.write_en.is_some() {
                let r = up.read_en.unwrap_or(current.read_en) as u32;
                let w = up.write_en.unwrap_or(current.write_en) as u32;
                writes.push((RegionField::Perm, r | w << 1));
            }
            if let Some(v) = up.valid {
                writes.push((RegionField::Valid, v as u32));
            }
            for (field, value) in writes {
                let reg = RegId::Region { slot: up.slot, field };
                let outcome = self.reg_write(requester, unit, reg, value)?;
                debug_assert!(outcome.passed());
            }
        }
        let ctrl = if enable { CTRL_ISOLATION } else { CTRL_RESET };
        self.reg_write(requester, unit, RegId::Ctrl, ctrl)
    }

    pub fn pending_interrupts(&self) -> Vec<InterruptEntry> {
        self.log.clone()
    }

    pub fn clear_interrupts(&mut self) {
        self.log.clear();
    }

    /// Denials logged since power-up, unaffected by `clear_interrupts`.
    pub fn total_denials(&self) -> u64 {
        self.total_denials
    }

    pub fn por_reset(&mut self) {
        for u in &mut self.units {
            u.por_reset();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mem::{MemRegionDecl, RegionKind};
    use crate::xmpu::RegionConfig;

    fn pa(v: u64) -> PhysAddr {
        PhysAddr::new(v).unwrap()
    }

    fn soc() -> Soc {
        let mem = PhysMemory::new(
            vec![
                MemRegionDecl::new("RPU_DDR_LOW_S_BASE", 0x70bd_0000, 0x10_0000, RegionKind::Ddr).unwrap(),
                MemRegionDecl::new("APU_OCM_NS_SHARED_BASE", 0xfffe_0000, 0x1_0000, RegionKind::Ocm).unwrap(),
            ],
            0,
        )
        .unwrap();
        let units = vec![
            XmpuInstance::new("DDR_XMPU0", pa(0), pa(0x7fff_fffc)),
            XmpuInstance::new("DDR_XMPU1", pa(0xfff0_0000), pa(0xffff_fffc)),
        ];
        let masters = vec![
            Master {
                kind: MasterKind::Apu,
                smid: Smid::truncate(0x060),
                secure_master: false,
            },
            Master {
                kind: MasterKind::Rpu,
                smid: Smid::truncate(0x000),
                secure_master: false,
            },
            Master {
                kind: MasterKind::Pmu,
                smid: Smid::truncate(0x0c0),
                secure_master: true,
            },
        ];
        Soc::new(mem, units, masters).unwrap()
    }

    fn isolate_rpu(soc: &mut Soc) {
        let up = RegionUpdate {
            slot: 0,
            start: Some(pa(0x70bd_0000)),
            end: Some(pa(0x70cc_fffc)),
            smid: Some(Smid::truncate(0)),
            smid_mask: Some(0),
            read_en: Some(true),
            write_en: Some(true),
            valid: Some(true),
        };
        assert!(soc.program_isolation(MasterKind::Pmu, 0, &[up], true).unwrap().passed());
        let ns = RegionUpdate {
            slot: 0,
            start: Some(pa(0xfffe_0000)),
            end: Some(pa(0xfffe_fffc)),
            smid_mask: Some(0x3ff),
            read_en: Some(true),
            write_en: Some(true),
            valid: Some(true),
            ..Default::default()
        };
        assert!(soc.program_isolation(MasterKind::Pmu, 1, &[ns], true).unwrap().passed());
    }

    #[test]
    fn denied_read_logs_one_interrupt() {
        let mut s = soc();
        s.issue(&Transaction::write(MasterKind::Apu, pa(0x70bd_0000), 0x1122_3344))
            .unwrap();
        isolate_rpu(&mut s);
        let r = s.issue(&Transaction::read(MasterKind::Apu, pa(0x70bd_0000))).unwrap();
        assert_eq!(r, IssueResult::Denied(Cause::SmidMismatch));
        assert_eq!(r.observed(), Some(POISON));
        assert_eq!(s.pending_interrupts().len(), 1);
        assert_eq!(s.unit(0).interrupt_count(), 1);
        s.clear_interrupts();
        assert!(s.pending_interrupts().is_empty());
        assert_eq!(s.total_denials(), 1);
    }

    #[test]
    fn default_mode_reads_back_residue() {
        let mut s = soc();
        s.issue(&Transaction::write(MasterKind::Apu, pa(0x70bd_0000), 0x1122_3344))
            .unwrap();
        isolate_rpu(&mut s);
        assert!(s
            .reg_write(MasterKind::Pmu, 0, "R00_VALID".parse().unwrap(), 0)
            .unwrap()
            .passed());
        assert!(s
            .reg_write(MasterKind::Pmu, 0, RegId::Ctrl, CTRL_RESET)
            .unwrap()
            .passed());
        let r = s.issue(&Transaction::read(MasterKind::Apu, pa(0x70bd_0000))).unwrap();
        assert_eq!(r, IssueResult::Value(0x1122_3344));
    }

    #[test]
    fn shared_region_stays_open_under_isolation() {
        let mut s = soc();
        isolate_rpu(&mut s);
        let r = s.issue(&Transaction::read(MasterKind::Apu, pa(0xfffe_0000))).unwrap();
        assert_eq!(r, IssueResult::Value(0));
        assert!(s.pending_interrupts().is_empty());
    }

    #[test]
    fn smid_only_update_keeps_bounds() {
        let mut s = soc();
        isolate_rpu(&mut s);
        let before: Vec<u32> = [
            RegionField::StartLo,
            RegionField::StartHi,
            RegionField::EndLo,
            RegionField::EndHi,
        ]
        .iter()
        .map(|&f| s.unit(0).peek(RegId::Region { slot: 0, field: f }))
        .collect();
        let swap = RegionUpdate {
            slot: 0,
            smid: Some(Smid::truncate(0x060)),
            ..Default::default()
        };
        assert!(s.program_isolation(MasterKind::Pmu, 0, &[swap], true).unwrap().passed());
        let after: Vec<u32> = [
            RegionField::StartLo,
            RegionField::StartHi,
            RegionField::EndLo,
            RegionField::EndHi,
        ]
        .iter()
        .map(|&f| s.unit(0).peek(RegId::Region { slot: 0, field: f }))
        .collect();
        assert_eq!(before, after);
        assert_eq!(s.unit(0).region(0).unwrap().smid, Smid::truncate(0x060));
        assert!(
            s.issue(&Transaction::read(MasterKind::Apu, pa(0x70c6_df20)))
                .unwrap()
                .observed()
                == Some(0)
        );
    }

    #[test]
    fn non_secure_master_cannot_program() {
        let mut s = soc();
        let out = s.program_isolation(MasterKind::Apu, 0, &[], true).unwrap();
        assert_eq!(out, RegOutcome::Failed(RegFault::Unauthorized));
        assert_eq!(s.unit(0).ctrl().raw(), CTRL_RESET);
        assert_eq!(s.pending_interrupts().len(), 1);
    }

    #[test]
    fn denied_write_leaves_memory_unchanged() {
        let mut s = soc();
        s.issue(&Transaction::write(MasterKind::Rpu, pa(0x70bd_0010), 0xaabb_ccdd))
            .unwrap();
        isolate_rpu(&mut s);
        let before = s.snapshot();
        let r = s
            .issue(&Transaction::write(MasterKind::Apu, pa(0x70bd_0010), 0))
            .unwrap();
        assert!(r.denied());
        assert_eq!(s.snapshot(), before);
    }

    #[test]
    fn unmapped_and_misrouted_addresses() {
        let mut s = soc();
        assert!(matches!(
            s.issue(&Transaction::read(MasterKind::Apu, pa(0x1000))),
            Err(SocError::Mem(MemError::UnmappedAddress(_)))
        ));
        let mem = PhysMemory::new(
            vec![MemRegionDecl::new("X", 0x8000_0000, 0x1000, RegionKind::Ddr).unwrap()],
            0,
        )
        .unwrap();
        let err = Soc::new(mem, vec![XmpuInstance::new("U", pa(0), pa(0x1000))], vec![]);
        assert!(matches!(err, Err(SocError::Routing { .. })));
    }

    #[test]
    fn block_reads_match_single_issues() {
        let mut s = soc();
        s.mem_mut().fill(pa(0x70c6_d000), pa(0x70c6_dffc), 0xffff_ffff).unwrap();
        isolate_rpu(&mut s);
        // carve a hole for the APU inside the protected page
        let hole = RegionConfig {
            start: pa(0x70c6_d100),
            end: pa(0x70c6_d1fc),
            smid: Smid::truncate(0x060),
            smid_mask: 0,
            read_en: true,
            write_en: false,
            valid: true,
        };
        let up = RegionUpdate {
            slot: 0,
            start: Some(hole.start),
            end: Some(hole.end),
            smid: Some(hole.smid),
            smid_mask: Some(0),
            read_en: Some(true),
            write_en: Some(false),
            valid: Some(true),
        };
        let mut reference = s.clone();
        // the hole must sit in a lower slot than the RPU region
        for soc in [&mut s, &mut reference] {
            let rpu = RegionUpdate {
                slot: 1,
                start: Some(pa(0x70bd_0000)),
                end: Some(pa(0x70cc_fffc)),
                smid: Some(Smid::truncate(0)),
                smid_mask: Some(0),
                read_en: Some(true),
                write_en: Some(true),
                valid: Some(true),
            };
            soc.program_isolation(MasterKind::Pmu, 0, &[up, rpu], true).unwrap();
        }
        let block = s
            .read_blocks(MasterKind::Apu, &[(pa(0x70c6_d000), 1024)], Exec::Parallel)
            .unwrap();
        for (i, w) in block[0].words.iter().enumerate() {
            let r = reference
                .issue(&Transaction::read(MasterKind::Apu, pa(0x70c6_d000 + 4 * i as u64)))
                .unwrap();
            assert_eq!(Some(w.value), r.observed());
            assert_eq!(w.denied.is_some(), r.denied());
        }
        assert_eq!(s.pending_interrupts(), reference.pending_interrupts());
        assert_eq!(s.pending_interrupts().len(), 1024 - 64);
    }
}
