//! Register model of one XMPU (memory protection unit).
//!
//! Each unit arbitrates a window of physical addresses. It holds a control
//! register, a lock register and a table of sixteen region slots. A bus
//! access is decided by the first valid slot whose inclusive `[start, end]`
//! bounds contain the address; when no slot matches, the control register's
//! default read/write bits decide.
//!
//! | Register            | Bits                                         |
//! |---------------------|----------------------------------------------|
//! | `CTRL`              | 0: default read allowed, 1: default write allowed, 4: retained |
//! | `LOCK`              | 0: locked until power-on reset               |
//! | `Rnn_START_LO/HI`   | start = `HI[11:0] << 32 \| LO[31:2] << 2`   |
//! | `Rnn_END_LO/HI`     | end = `HI[11:0] << 32 \| LO[31:2] << 2`     |
//! | `Rnn_SMID`          | 9:0 master id, 25:16 ignore-mask             |
//! | `Rnn_PERM`          | 0: read enabled, 1: write enabled            |
//! | `Rnn_VALID`         | 0: slot valid                                |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::mem::{PhysAddr, Word};
use crate::par::Exec;

pub const REGION_SLOTS: usize = 16;
/// Reset value of `CTRL`: default read and write allowed.
pub const CTRL_RESET: u32 = 0x0000_0013;
/// `CTRL` with both default bits cleared.
pub const CTRL_ISOLATION: u32 = 0x0000_0010;
const CTRL_DEFINED_BITS: u32 = 0x13;
/// Value returned to a master whose read was denied.
pub const POISON: Word = 0xDEAD_BEEF;
pub const SMID_BITS: u32 = 10;
pub const SMID_MASK: u16 = (1 << SMID_BITS) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmpuError {
    #[error("unknown register `{0}`")]
    UnknownRegister(String),
    #[error("SMID {0:#x} does not fit in 10 bits")]
    SmidOutOfRange(u32),
}

/// 10-bit bus master identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Smid(u16);

impl Smid {
    pub fn new(value: u32) -> Result<Self, XmpuError> {
        if value > SMID_MASK as u32 {
            return Err(XmpuError::SmidOutOfRange(value));
        }
        Ok(Smid(value as u16))
    }

    pub const fn truncate(value: u32) -> Self {
        Smid((value & SMID_MASK as u32) as u16)
    }

    pub const fn value(self) -> u16 {
        self.0
    }
}

impl fmt::Display for Smid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#05x}", self.0)
    }
}

/// Joins a `*_HI`/`*_LO` register pair into a 44-bit address.
pub fn assemble_addr(hi: u32, lo: u32) -> PhysAddr {
    PhysAddr::truncate(((hi as u64 & 0xfff) << 32) | lo as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtrlReg(u32);

impl CtrlReg {
    pub const fn from_raw(raw: u32) -> Self {
        CtrlReg(raw & CTRL_DEFINED_BITS)
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    pub const fn default_read_allowed(self) -> bool {
        self.0 & 0b01 != 0
    }

    pub const fn default_write_allowed(self) -> bool {
        self.0 & 0b10 != 0
    }

    fn default_allows(self, kind: AccessKind) -> bool {
        match kind {
            AccessKind::Read => self.default_read_allowed(),
            AccessKind::Write => self.default_write_allowed(),
        }
    }
}

impl Default for CtrlReg {
    fn default() -> Self {
        CtrlReg(CTRL_RESET)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LockReg {
    pub locked: bool,
}

impl LockReg {
    pub const fn raw(self) -> u32 {
        self.locked as u32
    }
}

/// One region slot, decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegionConfig {
    pub start: PhysAddr,
    pub end: PhysAddr,
    pub smid: Smid,
    /// Set bits are ignored when comparing SMIDs.
    pub smid_mask: u16,
    pub read_en: bool,
    pub write_en: bool,
    pub valid: bool,
}

impl RegionConfig {
    pub fn covers(&self, addr: PhysAddr) -> bool {
        self.valid && self.start <= addr && addr <= self.end
    }

    pub fn smid_matches(&self, smid: Smid) -> bool {
        (smid.0 ^ self.smid.0) & !self.smid_mask & SMID_MASK == 0
    }

    pub fn permits(&self, kind: AccessKind) -> bool {
        match kind {
            AccessKind::Read => self.read_en,
            AccessKind::Write => self.write_en,
        }
    }

    pub fn raw(&self, field: RegionField) -> u32 {
        match field {
            RegionField::StartLo => self.start.value() as u32,
            RegionField::StartHi => (self.start.value() >> 32) as u32,
            RegionField::EndLo => self.end.value() as u32,
            RegionField::EndHi => (self.end.value() >> 32) as u32,
            RegionField::Smid => self.smid.0 as u32 | ((self.smid_mask as u32) << 16),
            RegionField::Perm => self.read_en as u32 | (self.write_en as u32) << 1,
            RegionField::Valid => self.valid as u32,
        }
    }

    fn store(&mut self, field: RegionField, value: u32) {
        let start = self.start.value();
        let end = self.end.value();
        match field {
            RegionField::StartLo => {
                self.start = assemble_addr((start >> 32) as u32, value & !3);
            }
            RegionField::StartHi => self.start = assemble_addr(value, start as u32),
            RegionField::EndLo => self.end = assemble_addr((end >> 32) as u32, value & !3),
            RegionField::EndHi => self.end = assemble_addr(value, end as u32),
            RegionField::Smid => {
                self.smid = Smid::truncate(value);
                self.smid_mask = ((value >> 16) as u16) & SMID_MASK;
            }
            RegionField::Perm => {
                self.read_en = value & 1 != 0;
                self.write_en = value & 2 != 0;
            }
            RegionField::Valid => self.valid = value & 1 != 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionField {
    StartLo,
    StartHi,
    EndLo,
    EndHi,
    Smid,
    Perm,
    Valid,
}

impl RegionField {
    pub const ALL: [RegionField; 7] = [
        RegionField::StartLo,
        RegionField::StartHi,
        RegionField::EndLo,
        RegionField::EndHi,
        RegionField::Smid,
        RegionField::Perm,
        RegionField::Valid,
    ];

    fn name(self) -> &'static str {
        match self {
            RegionField::StartLo => "START_LO",
            RegionField::StartHi => "START_HI",
            RegionField::EndLo => "END_LO",
            RegionField::EndHi => "END_HI",
            RegionField::Smid => "SMID",
            RegionField::Perm => "PERM",
            RegionField::Valid => "VALID",
        }
    }
}

/// Register selector within one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegId {
    Ctrl,
    Lock,
    Region { slot: usize, field: RegionField },
}

impl RegId {
    pub fn region(slot: usize, field: RegionField) -> Result<Self, XmpuError> {
        if slot >= REGION_SLOTS {
            return Err(XmpuError::UnknownRegister(format!("R{slot:02}_{}", field.name())));
        }
        Ok(RegId::Region { slot, field })
    }
}

impl fmt::Display for RegId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegId::Ctrl => f.write_str("CTRL"),
            RegId::Lock => f.write_str("LOCK"),
            RegId::Region { slot, field } => write!(f, "R{slot:02}_{}", field.name()),
        }
    }
}

impl FromStr for RegId {
    type Err = XmpuError;

    /// Accepts `CTRL`, `LOCK` and `Rnn_<FIELD>` (e.g. `R03_START_LO`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || XmpuError::UnknownRegister(s.to_string());
        match s {
            "CTRL" => return Ok(RegId::Ctrl),
            "LOCK" => return Ok(RegId::Lock),
            _ => {}
        }
        let rest = s.strip_prefix('R').ok_or_else(unknown)?;
        let (slot, field) = rest.split_once('_').ok_or_else(unknown)?;
        let slot: usize = slot.parse().map_err(|_| unknown())?;
        let field = RegionField::ALL
            .into_iter()
            .find(|f| f.name() == field)
            .ok_or_else(unknown)?;
        RegId::region(slot, field).map_err(|_| unknown())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

impl fmt::Display for AccessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessKind::Read => "READ",
            AccessKind::Write => "WRITE",
        })
    }
}

/// What a unit sees of a bus transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusAccess {
    pub smid: Smid,
    pub kind: AccessKind,
    pub addr: PhysAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cause {
    RegionMatch,
    DefaultAllow,
    SmidMismatch,
    PermDenied,
    DefaultDeny,
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cause::RegionMatch => "REGION_MATCH",
            Cause::DefaultAllow => "DEFAULT_ALLOW",
            Cause::SmidMismatch => "SMID_MISMATCH",
            Cause::PermDenied => "PERM_DENIED",
            Cause::DefaultDeny => "DEFAULT_DENY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessDecision {
    pub verdict: Verdict,
    pub cause: Cause,
    /// Slot that decided, if any.
    pub slot: Option<usize>,
    pub interrupt_raised: bool,
}

impl AccessDecision {
    fn new(cause: Cause, slot: Option<usize>) -> Self {
        let verdict = match cause {
            Cause::RegionMatch | Cause::DefaultAllow => Verdict::Allow,
            _ => Verdict::Deny,
        };
        AccessDecision {
            verdict,
            cause,
            slot,
            interrupt_raised: verdict == Verdict::Deny,
        }
    }

    pub fn allowed(&self) -> bool {
        self.verdict == Verdict::Allow
    }
}

/// Why a register access was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegFault {
    Unauthorized,
    Locked,
}

impl fmt::Display for RegFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegFault::Unauthorized => "UNAUTHORIZED_MASTER",
            RegFault::Locked => "UNIT_LOCKED",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegOutcome {
    Pass,
    Failed(RegFault),
}

impl RegOutcome {
    pub fn passed(self) -> bool {
        self == RegOutcome::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmpuInstance {
    name: String,
    window: (PhysAddr, PhysAddr),
    ctrl: CtrlReg,
    lock: LockReg,
    regions: [RegionConfig; REGION_SLOTS],
    secure_masters: BTreeSet<Smid>,
    interrupts: u64,
}

impl XmpuInstance {
    /// A unit in its power-on state guarding the inclusive window
    /// `[first, last]`.
    pub fn new(name: impl Into<String>, first: PhysAddr, last: PhysAddr) -> Self {
        XmpuInstance {
            name: name.into(),
            window: (first, last),
            ctrl: CtrlReg::default(),
            lock: LockReg::default(),
            regions: [RegionConfig::default(); REGION_SLOTS],
            secure_masters: BTreeSet::new(),
            interrupts: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn window(&self) -> (PhysAddr, PhysAddr) {
        self.window
    }

    pub fn guards(&self, addr: PhysAddr) -> bool {
        self.window.0 <= addr && addr <= self.window.1
    }

    pub fn ctrl(&self) -> CtrlReg {
        self.ctrl
    }

    pub fn lock(&self) -> LockReg {
        self.lock
    }

    pub fn regions(&self) -> &[RegionConfig; REGION_SLOTS] {
        &self.regions
    }

    pub fn region(&self, slot: usize) -> Option<&RegionConfig> {
        self.regions.get(slot)
    }

    pub fn set_secure_master(&mut self, smid: Smid, secure: bool) {
        if secure {
            self.secure_masters.insert(smid);
        } else {
            self.secure_masters.remove(&smid);
        }
    }

    pub fn is_secure_master(&self, smid: Smid) -> bool {
        self.secure_masters.contains(&smid)
    }

    pub fn interrupt_count(&self) -> u64 {
        self.interrupts
    }

    pub fn raise_interrupt(&mut self) {
        self.interrupts += 1;
    }

    /// Raw register value without any privilege check.
    pub fn peek(&self, reg: RegId) -> u32 {
        match reg {
            RegId::Ctrl => self.ctrl.raw(),
            RegId::Lock => self.lock.raw(),
            RegId::Region { slot, field } => self.regions[slot].raw(field),
        }
    }

    pub fn reg_write(&mut self, writer: Smid, reg: RegId, value: u32) -> RegOutcome {
        if !self.is_secure_master(writer) {
            self.raise_interrupt();
            return RegOutcome::Failed(RegFault::Unauthorized);
        }
        if self.lock.locked {
            self.raise_interrupt();
            return RegOutcome::Failed(RegFault::Locked);
        }
        match reg {
            RegId::Ctrl => self.ctrl = CtrlReg::from_raw(value),
            RegId::Lock => self.lock.locked = value & 1 != 0,
            RegId::Region { slot, field } => self.regions[slot].store(field, value),
        }
        RegOutcome::Pass
    }

    pub fn reg_read(&mut self, reader: Smid, reg: RegId) -> Result<u32, RegFault> {
        if !self.is_secure_master(reader) {
            self.raise_interrupt();
            return Err(RegFault::Unauthorized);
        }
        Ok(self.peek(reg))
    }

    /// Decides one access. Pure: the caller records any interrupt.
    pub fn evaluate(&self, access: &BusAccess) -> AccessDecision {
        for (slot, region) in self.regions.iter().enumerate() {
            if !region.covers(access.addr) {
                continue;
            }
            let cause = if !region.smid_matches(access.smid) {
                Cause::SmidMismatch
            } else if !region.permits(access.kind) {
                Cause::PermDenied
            } else {
                Cause::RegionMatch
            };
            return AccessDecision::new(cause, Some(slot));
        }
        let cause = if self.ctrl.default_allows(access.kind) {
            Cause::DefaultAllow
        } else {
            Cause::DefaultDeny
        };
        AccessDecision::new(cause, None)
    }

    /// The common decision for every word in `[first, last]`, or `None` when
    /// some slot boundary falls inside the span.
    pub fn evaluate_span(
        &self,
        smid: Smid,
        kind: AccessKind,
        first: PhysAddr,
        last: PhysAddr,
    ) -> Option<AccessDecision> {
        let uniform = self.regions.iter().filter(|r| r.valid).all(|r| {
            let covers_all = r.start <= first && last <= r.end;
            let misses_all = last < r.start || r.end < first;
            covers_all || misses_all
        });
        uniform.then(|| {
            self.evaluate(&BusAccess {
                smid,
                kind,
                addr: first,
            })
        })
    }

    pub fn evaluate_batch(&self, accesses: &[BusAccess], exec: Exec) -> Vec<AccessDecision> {
        exec.map(accesses, |a| self.evaluate(a))
    }

    /// Power-on reset. Registers return to their reset values; memory behind
    /// the unit is not touched.
    pub fn por_reset(&mut self) {
        self.ctrl = CtrlReg::default();
        self.lock = LockReg::default();
        self.regions = [RegionConfig::default(); REGION_SLOTS];
    }
}
