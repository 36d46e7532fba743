//! Scenario file grammar.
//!
//! One step per line: a verb followed by whitespace-separated arguments.
//! Arguments may be double-quoted to carry spaces. `#` at the start of a
//! token begins a comment. `echo` is the exception: everything after
//! `echo ` is kept verbatim, leading spaces included. `include <path>` is
//! expanded in place while parsing, relative to the including file.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::hex::{parse_u32, parse_u64};
use crate::mem::{RegionKind, Word};
use crate::os::SanitizeMode;
use crate::soc::MasterKind;
use crate::xmpu::RegId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{file}:{line}:{column}: {message}")]
pub struct ParseError {
    pub file: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// An address operand: a literal or a region name plus a byte offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddrExpr {
    pub region: Option<String>,
    pub offset: u64,
    /// Operand as written, used as the transcript label.
    pub text: String,
}

impl AddrExpr {
    fn parse(text: &str) -> Result<Self, String> {
        if let Ok(v) = parse_u64(text) {
            return Ok(AddrExpr {
                region: None,
                offset: v,
                text: text.to_string(),
            });
        }
        let (name, offset) = match text.split_once('+') {
            Some((name, off)) => (name, parse_u64(off)?),
            None => (text, 0),
        };
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("`{text}` is neither a number nor REGION[+offset]"));
        }
        Ok(AddrExpr {
            region: Some(name.to_string()),
            offset,
            text: text.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perm {
    None,
    Read,
    Write,
    ReadWrite,
}

/// Slot fields of a `program` step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotSpec {
    pub slot: usize,
    pub region: Option<String>,
    pub start: Option<u64>,
    pub end: Option<u64>,
    pub smid: Option<u32>,
    pub mask: Option<u16>,
    pub perm: Option<Perm>,
    pub valid: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeVerb {
    Reading,
    Writing,
}

impl fmt::Display for ProbeVerb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeVerb::Reading => "Reading",
            ProbeVerb::Writing => "Writing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutItem {
    pub offset: u64,
    pub count: u64,
    pub value: Word,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackStep {
    Poll {
        target: String,
        max_ticks: u64,
    },
    Isolate {
        handle: String,
    },
    Maps {
        handle: String,
    },
    Locate {
        handle: String,
        word: Word,
        min_run: u64,
    },
    Vdump {
        handle: String,
        first: u64,
        last: u64,
    },
    Translate {
        handle: String,
        first: u64,
        last: u64,
    },
    Devmem {
        master: MasterKind,
        addr: AddrExpr,
        var: Option<String>,
    },
    Scrape {
        handle: String,
    },
    Reconstruct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    // platform description; only valid before the first runtime step
    MemoryMap(PathBuf),
    Region {
        name: String,
        base: u64,
        size: u64,
        kind: RegionKind,
    },
    Background(Word),
    Unit {
        name: String,
        first: u64,
        last: u64,
    },
    Master {
        kind: MasterKind,
        smid: u32,
        secure: bool,
    },
    Broker(MasterKind),
    IsolationSlot {
        unit: String,
        slot: usize,
    },
    HeapPool(String),
    PidSeed(u32),
    Adversary(MasterKind),
    // allowed anywhere
    Policy {
        mode: SanitizeMode,
        fill: Word,
        cost: u64,
    },
    Echo(String),
    // runtime
    Program {
        master: MasterKind,
        unit: String,
        enable: bool,
        slot: Option<SlotSpec>,
    },
    Secure {
        master: MasterKind,
        on: bool,
    },
    Por,
    Spawn {
        handle: String,
        master: MasterKind,
        command: String,
    },
    Terminate(String),
    ScheduleTerminate {
        handle: String,
        tick: u64,
    },
    Tick(u64),
    SeedPids(u32),
    RequestIsolation(String),
    AllocHeap {
        handle: String,
        size: u64,
        base: Option<u64>,
    },
    WriteAs {
        master: MasterKind,
        addr: AddrExpr,
        value: Word,
    },
    ReadAs {
        master: MasterKind,
        addr: AddrExpr,
        var: Option<String>,
    },
    FillAs {
        master: MasterKind,
        first: AddrExpr,
        last: AddrExpr,
        value: Word,
    },
    Probe {
        verb: ProbeVerb,
        master: MasterKind,
        addr: AddrExpr,
        value: Word,
        var: Option<String>,
    },
    RegWriteAs {
        master: MasterKind,
        unit: String,
        reg: RegId,
        value: u32,
    },
    Skip {
        verb: ProbeVerb,
        label: String,
    },
    Ps,
    Maps(String),
    Pagemap {
        handle: String,
        va: u64,
    },
    Hexdump {
        first: AddrExpr,
        last: AddrExpr,
    },
    Attack(AttackStep),
    Profile {
        name: String,
        owner: MasterKind,
        layout: Vec<LayoutItem>,
    },
    ProfileLoad(PathBuf),
    AssertRead {
        master: MasterKind,
        addr: AddrExpr,
        value: Word,
    },
    AssertMem {
        addr: AddrExpr,
        value: Word,
    },
    AssertVar {
        var: String,
        value: Word,
    },
    ExpectResidue {
        var: String,
        value: Word,
    },
    ExpectRecovered(String),
    AssertInterrupts(u64),
    ClearInterrupts,
    AssertReg {
        unit: String,
        reg: RegId,
        value: u32,
    },
    Snapshot(String),
    AssertSnapshotEq(String),
    AssertTranscript(PathBuf),
    ExpectError(Box<Step>),
}

impl Step {
    /// Platform steps that must precede every runtime step.
    pub fn is_platform(&self) -> bool {
        matches!(
            self,
            Step::MemoryMap(_)
                | Step::Region { .. }
                | Step::Background(_)
                | Step::Unit { .. }
                | Step::Master { .. }
                | Step::Broker(_)
                | Step::IsolationSlot { .. }
                | Step::HeapPool(_)
                | Step::PidSeed(_)
                | Step::Adversary(_)
        )
    }

    /// Steps that need a booted platform.
    pub fn is_runtime(&self) -> bool {
        !self.is_platform() && !matches!(self, Step::Policy { .. } | Step::Echo(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Located {
    pub file: Arc<str>,
    pub line: usize,
    pub step: Step,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Script {
    pub steps: Vec<Located>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Token {
    text: String,
    column: usize,
}

fn tokenize(line: &str) -> Result<Vec<Token>, (usize, String)> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let column = line[..pos].chars().count() + 1;
        let mut text = String::new();
        if c == '"' {
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err((column, "unterminated quote".into())),
                    Some((_, '"')) => {
                        i += 1;
                        break;
                    }
                    Some((_, '\\')) if matches!(chars.get(i + 1), Some((_, '"' | '\\'))) => {
                        text.push(chars[i + 1].1);
                        i += 2;
                    }
                    Some((_, ch)) => {
                        text.push(*ch);
                        i += 1;
                    }
                }
            }
        } else {
            while i < chars.len() && !chars[i].1.is_whitespace() {
                text.push(chars[i].1);
                i += 1;
            }
        }
        out.push(Token { text, column });
    }
    Ok(out)
}

struct Args<'a> {
    verb: &'a Token,
    toks: &'a [Token],
    next: usize,
}

type ArgResult<T> = Result<T, (usize, String)>;

impl<'a> Args<'a> {
    fn err<T>(&self, tok: Option<&Token>, msg: impl Into<String>) -> ArgResult<T> {
        let column = tok.map_or(self.verb.column, |t| t.column);
        Err((column, msg.into()))
    }

    fn take(&mut self, what: &str) -> ArgResult<&'a Token> {
        match self.toks.get(self.next) {
            Some(t) => {
                self.next += 1;
                Ok(t)
            }
            None => self.err(None, format!("`{}` needs {what}", self.verb.text)),
        }
    }

    fn opt(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.next);
        if t.is_some() {
            self.next += 1;
        }
        t
    }

    fn rest(&mut self) -> &'a [Token] {
        let r = &self.toks[self.next.min(self.toks.len())..];
        self.next = self.toks.len();
        r
    }

    fn done(&self) -> ArgResult<()> {
        match self.toks.get(self.next) {
            Some(t) => self.err(Some(t), format!("unexpected argument `{}`", t.text)),
            None => Ok(()),
        }
    }

    fn string(&mut self, what: &str) -> ArgResult<String> {
        Ok(self.take(what)?.text.clone())
    }

    fn convert<T>(&mut self, what: &str, f: impl Fn(&str) -> Result<T, String>) -> ArgResult<T> {
        let t = self.take(what)?;
        f(&t.text).or_else(|e| self.err(Some(t), format!("{what}: {e}")))
    }

    fn u64(&mut self, what: &str) -> ArgResult<u64> {
        self.convert(what, parse_u64)
    }

    fn word(&mut self, what: &str) -> ArgResult<Word> {
        self.convert(what, parse_u32)
    }

    fn master(&mut self) -> ArgResult<MasterKind> {
        self.convert("a master", |s| s.parse())
    }

    fn addr(&mut self, what: &str) -> ArgResult<AddrExpr> {
        self.convert(what, AddrExpr::parse)
    }

    fn var(&mut self) -> ArgResult<Option<String>> {
        match self.opt() {
            None => Ok(None),
            Some(t) if is_ident(&t.text) => Ok(Some(t.text.clone())),
            Some(t) => self.err(Some(t), format!("`{}` is not a variable name", t.text)),
        }
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with(|c: char| c.is_ascii_digit())
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_perm(s: &str) -> Result<Perm, String> {
    match s {
        "-" | "none" => Ok(Perm::None),
        "r" => Ok(Perm::Read),
        "w" => Ok(Perm::Write),
        "rw" => Ok(Perm::ReadWrite),
        _ => Err(format!("`{s}` is not one of -, r, w, rw")),
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "1" | "on" | "true" => Ok(true),
        "0" | "off" | "false" => Ok(false),
        _ => Err(format!("`{s}` is not a boolean")),
    }
}

fn parse_layout(tok: &Token) -> ArgResult<LayoutItem> {
    let bad = || {
        (
            tok.column,
            format!("layout item `{}` is not OFFSET:COUNTxWORD", tok.text),
        )
    };
    let (offset, rest) = tok.text.split_once(':').ok_or_else(bad)?;
    let (count, value) = rest.split_once('x').ok_or_else(bad)?;
    Ok(LayoutItem {
        offset: parse_u64(offset).map_err(|_| bad())?,
        count: parse_u64(count).map_err(|_| bad())?,
        value: parse_u32(value).map_err(|_| bad())?,
    })
}

fn parse_program(a: &mut Args) -> ArgResult<Step> {
    let master = a.master()?;
    let unit = a.string("a unit")?;
    let mut enable = None;
    let mut slot: Option<SlotSpec> = None;
    let mut fields = Vec::new();
    for t in a.rest() {
        let Some((key, value)) = t.text.split_once('=') else {
            return Err((t.column, format!("expected key=value, found `{}`", t.text)));
        };
        let fail = |e: String| (t.column, format!("{key}: {e}"));
        match key {
            "ctrl" => {
                enable = Some(match value {
                    "enable" => true,
                    "disable" => false,
                    _ => return Err(fail("expected enable or disable".into())),
                })
            }
            "slot" => {
                let n = parse_u64(value).map_err(fail)? as usize;
                slot = Some(SlotSpec {
                    slot: n,
                    ..Default::default()
                });
            }
            _ => fields.push((t, key, value)),
        }
    }
    let Some(enable) = enable else {
        return a.err(None, "`program` needs ctrl=enable or ctrl=disable");
    };
    if let Some((t, ..)) = fields.first().filter(|_| slot.is_none()) {
        return Err((t.column, "slot fields need slot=N".into()));
    }
    if let Some(spec) = &mut slot {
        for (t, key, value) in fields {
            let fail = |e: String| (t.column, format!("{key}: {e}"));
            match key {
                "region" => spec.region = Some(value.to_string()),
                "start" => spec.start = Some(parse_u64(value).map_err(fail)?),
                "end" => spec.end = Some(parse_u64(value).map_err(fail)?),
                "smid" => spec.smid = Some(parse_u32(value).map_err(fail)?),
                "mask" => {
                    let m = parse_u32(value).map_err(fail)?;
                    spec.mask = Some(
                        u16::try_from(m)
                            .ok()
                            .filter(|m| *m <= 0x3ff)
                            .ok_or_else(|| fail("mask is 10 bits".into()))?,
                    );
                }
                "perm" => spec.perm = Some(parse_perm(value).map_err(fail)?),
                "valid" => spec.valid = Some(parse_bool(value).map_err(fail)?),
                _ => return Err((t.column, format!("unknown field `{key}`"))),
            }
        }
        if spec.region.is_some() && (spec.start.is_some() || spec.end.is_some()) {
            return a.err(None, "region= excludes start= and end=");
        }
    }
    Ok(Step::Program {
        master,
        unit,
        enable,
        slot,
    })
}

fn parse_attack(a: &mut Args) -> ArgResult<AttackStep> {
    let sub = a.take("a sub-command")?;
    Ok(match sub.text.as_str() {
        "poll" => AttackStep::Poll {
            target: a.string("a command name")?,
            max_ticks: match a.opt() {
                Some(t) => parse_u64(&t.text).map_err(|e| (t.column, e))?,
                None => 1000,
            },
        },
        "isolate" => AttackStep::Isolate {
            handle: a.string("a process")?,
        },
        "maps" => AttackStep::Maps {
            handle: a.string("a process")?,
        },
        "locate" => AttackStep::Locate {
            handle: a.string("a process")?,
            word: a.word("a word")?,
            min_run: match a.opt() {
                Some(t) => parse_u64(&t.text).map_err(|e| (t.column, e))?,
                None => crate::attack::DEFAULT_MIN_RUN as u64,
            },
        },
        "vdump" => AttackStep::Vdump {
            handle: a.string("a process")?,
            first: a.u64("a first address")?,
            last: a.u64("a last address")?,
        },
        "translate" => AttackStep::Translate {
            handle: a.string("a process")?,
            first: a.u64("a first address")?,
            last: a.u64("a last address")?,
        },
        "devmem" => AttackStep::Devmem {
            master: a.master()?,
            addr: a.addr("an address")?,
            var: a.var()?,
        },
        "scrape" => AttackStep::Scrape {
            handle: a.string("a process")?,
        },
        "reconstruct" => AttackStep::Reconstruct,
        other => return a.err(Some(sub), format!("unknown attack step `{other}`")),
    })
}

fn parse_step(verb: &Token, toks: &[Token], dir: &Path) -> ArgResult<Step> {
    let mut a = Args { verb, toks, next: 0 };
    let path = |s: String| dir.join(s);
    let step = match verb.text.as_str() {
        "memory_map" => Step::MemoryMap(path(a.string("a path")?)),
        "region" => Step::Region {
            name: a.string("a name")?,
            base: a.u64("a base")?,
            size: a.u64("a size")?,
            kind: a.convert("a kind", |s| s.parse())?,
        },
        "background" => Step::Background(a.word("a word")?),
        "unit" => Step::Unit {
            name: a.string("a name")?,
            first: a.u64("a first address")?,
            last: a.u64("a last address")?,
        },
        "master" => {
            let kind = a.master()?;
            let smid = a.word("an SMID")?;
            let secure = match a.opt() {
                None => false,
                Some(t) if t.text == "secure" => true,
                Some(t) => return a.err(Some(t), "expected `secure`"),
            };
            Step::Master { kind, smid, secure }
        }
        "broker" => Step::Broker(a.master()?),
        "isolation_slot" => Step::IsolationSlot {
            unit: a.string("a unit")?,
            slot: a.u64("a slot")? as usize,
        },
        "heap_pool" => Step::HeapPool(a.string("a region")?),
        "pid_seed" => Step::PidSeed(a.word("a pid")?),
        "adversary" => Step::Adversary(a.master()?),
        "policy" => {
            let mode = a.convert("a mode", |s| s.parse())?;
            let fill = match a.opt() {
                Some(t) => parse_u32(&t.text).map_err(|e| (t.column, e))?,
                None => 0,
            };
            let cost = match a.opt() {
                Some(t) => parse_u64(&t.text).map_err(|e| (t.column, e))?,
                None => 1,
            };
            Step::Policy { mode, fill, cost }
        }
        "program" => parse_program(&mut a)?,
        "secure" => Step::Secure {
            master: a.master()?,
            on: a.convert("on or off", parse_bool)?,
        },
        "por" => Step::Por,
        "spawn" => Step::Spawn {
            handle: a.string("a handle")?,
            master: a.master()?,
            command: a.string("a command")?,
        },
        "terminate" => Step::Terminate(a.string("a process")?),
        "schedule_terminate" => Step::ScheduleTerminate {
            handle: a.string("a process")?,
            tick: a.u64("a tick")?,
        },
        "tick" => Step::Tick(match a.opt() {
            Some(t) => parse_u64(&t.text).map_err(|e| (t.column, e))?,
            None => 1,
        }),
        "seed_pids" => Step::SeedPids(a.word("a pid")?),
        "request_isolation" => Step::RequestIsolation(a.string("a process")?),
        "alloc_heap" => Step::AllocHeap {
            handle: a.string("a process")?,
            size: a.u64("a size")?,
            base: match a.opt() {
                Some(t) => Some(parse_u64(&t.text).map_err(|e| (t.column, e))?),
                None => None,
            },
        },
        "write_as" => Step::WriteAs {
            master: a.master()?,
            addr: a.addr("an address")?,
            value: a.word("a word")?,
        },
        "read_as" => Step::ReadAs {
            master: a.master()?,
            addr: a.addr("an address")?,
            var: a.var()?,
        },
        "fill_as" => Step::FillAs {
            master: a.master()?,
            first: a.addr("a first address")?,
            last: a.addr("a last address")?,
            value: a.word("a word")?,
        },
        "probe_read" => Step::Probe {
            verb: ProbeVerb::Reading,
            master: a.master()?,
            addr: a.addr("an address")?,
            value: 0,
            var: a.var()?,
        },
        "probe_write" => Step::Probe {
            verb: ProbeVerb::Writing,
            master: a.master()?,
            addr: a.addr("an address")?,
            value: a.word("a word")?,
            var: None,
        },
        "reg_write_as" => Step::RegWriteAs {
            master: a.master()?,
            unit: a.string("a unit")?,
            reg: a.convert("a register", |s| s.parse::<RegId>().map_err(|e| e.to_string()))?,
            value: a.word("a value")?,
        },
        "skip" => Step::Skip {
            verb: a.convert("Reading or Writing", |s| match s {
                "Reading" => Ok(ProbeVerb::Reading),
                "Writing" => Ok(ProbeVerb::Writing),
                _ => Err("expected Reading or Writing".to_string()),
            })?,
            label: a.string("a label")?,
        },
        "ps" => Step::Ps,
        "maps" => Step::Maps(a.string("a process")?),
        "pagemap" => Step::Pagemap {
            handle: a.string("a process")?,
            va: a.u64("a virtual address")?,
        },
        "hexdump" => Step::Hexdump {
            first: a.addr("a first address")?,
            last: a.addr("a last address")?,
        },
        "attack" => Step::Attack(parse_attack(&mut a)?),
        "profile" => {
            let first = a.string("a name or `load`")?;
            if first == "load" {
                Step::ProfileLoad(path(a.string("a path")?))
            } else {
                let owner = a.master()?;
                let layout = a.rest().iter().map(parse_layout).collect::<Result<Vec<_>, _>>()?;
                Step::Profile {
                    name: first,
                    owner,
                    layout,
                }
            }
        }
        "assert_read" => Step::AssertRead {
            master: a.master()?,
            addr: a.addr("an address")?,
            value: a.word("a word")?,
        },
        "assert_mem" => Step::AssertMem {
            addr: a.addr("an address")?,
            value: a.word("a word")?,
        },
        "assert_var" => Step::AssertVar {
            var: a.string("a variable")?,
            value: a.word("a word")?,
        },
        "expect_residue" => Step::ExpectResidue {
            var: a.string("a variable")?,
            value: a.word("a word")?,
        },
        "expect_recovered" => Step::ExpectRecovered(a.string("a profile name")?),
        "assert_interrupts" => Step::AssertInterrupts(a.u64("a count")?),
        "clear_interrupts" => Step::ClearInterrupts,
        "assert_reg" => Step::AssertReg {
            unit: a.string("a unit")?,
            reg: a.convert("a register", |s| s.parse::<RegId>().map_err(|e| e.to_string()))?,
            value: a.word("a value")?,
        },
        "snapshot" => Step::Snapshot(a.string("a name")?),
        "assert_snapshot_eq" => Step::AssertSnapshotEq(a.string("a name")?),
        "assert_transcript" => Step::AssertTranscript(path(a.string("a path")?)),
        "expect_error" => {
            let inner = a.take("a step")?;
            let rest = a.rest();
            Step::ExpectError(Box::new(parse_step(inner, rest, dir)?))
        }
        other => return a.err(Some(verb), format!("unknown step `{other}`")),
    };
    a.done()?;
    Ok(step)
}

impl Script {
    pub fn parse(text: &str, origin: &str, dir: &Path) -> Result<Script, ParseError> {
        let mut script = Script::default();
        let mut stack = BTreeSet::new();
        parse_into(&mut script, text, origin, dir, &mut stack)?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Script, ParseError> {
        let text = fs::read_to_string(path).map_err(|e| ParseError {
            file: path.display().to_string(),
            line: 0,
            column: 0,
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut script = Script::default();
        let mut stack = BTreeSet::new();
        if let Ok(canon) = path.canonicalize() {
            stack.insert(canon);
        }
        parse_into(&mut script, &text, &path.display().to_string(), dir, &mut stack)?;
        Ok(script)
    }
}

fn parse_into(
    script: &mut Script,
    text: &str,
    origin: &str,
    dir: &Path,
    stack: &mut BTreeSet<PathBuf>,
) -> Result<(), ParseError> {
    let file: Arc<str> = Arc::from(origin);
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let err = |column: usize, message: String| ParseError {
            file: origin.to_string(),
            line,
            column,
            message,
        };
        let trimmed = raw.trim_start();
        if trimmed == "echo" || trimmed.starts_with("echo ") {
            let body = trimmed.strip_prefix("echo").unwrap_or("");
            let body = body.strip_prefix(' ').unwrap_or(body);
            script.steps.push(Located {
                file: file.clone(),
                line,
                step: Step::Echo(body.to_string()),
            });
            continue;
        }
        let toks = tokenize(raw).map_err(|(c, m)| err(c, m))?;
        let Some((verb, args)) = toks.split_first() else {
            continue;
        };
        if verb.text == "include" {
            let [target] = args else {
                return Err(err(verb.column, "`include` takes one path".into()));
            };
            let path = dir.join(&target.text);
            let canon = path
                .canonicalize()
                .map_err(|e| err(target.column, format!("{}: {e}", path.display())))?;
            if !stack.insert(canon.clone()) {
                return Err(err(target.column, format!("include cycle through {}", path.display())));
            }
            let body = fs::read_to_string(&path).map_err(|e| err(target.column, format!("{}: {e}", path.display())))?;
            let sub_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
            parse_into(script, &body, &path.display().to_string(), &sub_dir, stack)?;
            stack.remove(&canon);
            continue;
        }
        let step = parse_step(verb, args, dir).map_err(|(c, m)| err(c, m))?;
        script.steps.push(Located {
            file: file.clone(),
            line,
            step,
        });
    }
    Ok(())
}
