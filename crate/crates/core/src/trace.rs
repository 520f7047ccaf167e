//! Memory access trace format.
//!
//! The grammar is a superset of Valgrind lackey's `--trace-mem=yes` output,
//! one record per line:
//!
//! ```text
//! I  04010173,3            instruction fetch
//!  L 1ffefffd78,8          data load
//!  S 1ffefffd70,8 t1       data store, thread 1
//!  M 0421c7f0,4            data modify
//! C 4: pageramp.c:37|pageramp.c:77
//! U 1 4                    thread 1 now runs under stack 4
//! # comment
//! ```
//!
//! Only instruction fetches advance the time base.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Access class of a trace event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    InsnFetch,
    DataLoad,
    DataStore,
    DataModify,
}

impl AccessKind {
    fn tag(self) -> char {
        match self {
            AccessKind::InsnFetch => 'I',
            AccessKind::DataLoad => 'L',
            AccessKind::DataStore => 'S',
            AccessKind::DataModify => 'M',
        }
    }

    pub fn is_insn(self) -> bool {
        self == AccessKind::InsnFetch
    }
}

/// One memory access.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: AccessKind,
    pub address: u64,
    /// Access width in bytes, at least 1.
    pub size: u32,
    pub thread: u32,
    /// Call-stack context active for `thread` when the event was observed.
    pub stack_ref: Option<u32>,
}

impl TraceEvent {
    pub fn new(kind: AccessKind, address: u64, size: u32) -> Self {
        Self {
            kind,
            address,
            size,
            thread: 0,
            stack_ref: None,
        }
    }

    pub fn on_thread(mut self, thread: u32) -> Self {
        self.thread = thread;
        self
    }
}

/// A named call stack, innermost frame first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStackDecl {
    pub id: u32,
    pub frames: Vec<String>,
}

/// A decoded trace record, as yielded by [`TraceReader`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Record {
    Event(TraceEvent),
    Stack(CallStackDecl),
}

/// Result of decoding a single line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Line {
    Event(TraceEvent),
    Stack(CallStackDecl),
    /// `U <tid> <id>`
    Activate { thread: u32, stack: u32 },
    /// Comment, blank line or Valgrind banner.
    Nothing,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unknown record tag {0:?}")]
    UnknownTag(String),
    #[error("malformed address {0:?}")]
    BadAddress(String),
    #[error("malformed size {0:?}")]
    BadSize(String),
    #[error("access size must be at least 1")]
    ZeroSize,
    #[error("malformed thread id {0:?}")]
    BadThread(String),
    #[error("malformed stack id {0:?}")]
    BadStackId(String),
    #[error("call stack has no frames")]
    EmptyStack,
    #[error("call stack {0} declared twice")]
    DuplicateStack(u32),
    #[error("unexpected trailing input {0:?}")]
    Trailing(String),
    #[error("missing field")]
    Missing,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("event for thread {thread} drops its stack context, which the format cannot express")]
    StackCleared { thread: u32 },
}

fn parse_hex(s: &str) -> Result<u64, ParseErrorKind> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    if digits.is_empty() {
        return Err(ParseErrorKind::BadAddress(s.to_string()));
    }
    u64::from_str_radix(digits, 16).map_err(|_| ParseErrorKind::BadAddress(s.to_string()))
}

fn parse_thread(s: &str) -> Result<u32, ParseErrorKind> {
    s.parse().map_err(|_| ParseErrorKind::BadThread(s.to_string()))
}

fn parse_stack_id(s: &str) -> Result<u32, ParseErrorKind> {
    s.parse().map_err(|_| ParseErrorKind::BadStackId(s.to_string()))
}

fn parse_access(kind: AccessKind, rest: &str) -> Result<TraceEvent, ParseErrorKind> {
    let mut fields = rest.split_whitespace();
    let body = fields.next().ok_or(ParseErrorKind::Missing)?;
    let (addr, size) = body
        .split_once(',')
        .ok_or_else(|| ParseErrorKind::BadAddress(body.to_string()))?;
    let address = parse_hex(addr)?;
    let size: u32 = size
        .parse()
        .map_err(|_| ParseErrorKind::BadSize(size.to_string()))?;
    if size == 0 {
        return Err(ParseErrorKind::ZeroSize);
    }
    let thread = match fields.next() {
        None => 0,
        Some(t) => match t.strip_prefix('t') {
            Some(n) => parse_thread(n)?,
            None => return Err(ParseErrorKind::Trailing(t.to_string())),
        },
    };
    if let Some(extra) = fields.next() {
        return Err(ParseErrorKind::Trailing(extra.to_string()));
    }
    Ok(TraceEvent {
        kind,
        address,
        size,
        thread,
        stack_ref: None,
    })
}

fn parse_stack(rest: &str) -> Result<CallStackDecl, ParseErrorKind> {
    let (id, frames) = rest.split_once(':').ok_or(ParseErrorKind::Missing)?;
    let id = parse_stack_id(id.trim())?;
    let frames: Vec<String> = frames
        .trim()
        .split('|')
        .filter(|f| !f.is_empty())
        .map(str::to_string)
        .collect();
    if frames.is_empty() {
        return Err(ParseErrorKind::EmptyStack);
    }
    Ok(CallStackDecl { id, frames })
}

fn parse_activate(rest: &str) -> Result<Line, ParseErrorKind> {
    let mut fields = rest.split_whitespace();
    let thread = parse_thread(fields.next().ok_or(ParseErrorKind::Missing)?)?;
    let stack = parse_stack_id(fields.next().ok_or(ParseErrorKind::Missing)?)?;
    if let Some(extra) = fields.next() {
        return Err(ParseErrorKind::Trailing(extra.to_string()));
    }
    Ok(Line::Activate { thread, stack })
}

/// Decodes one line of a trace. `line_no` is 1-based and only used for errors.
pub fn parse_line(line: &str, line_no: usize) -> Result<Line, ParseError> {
    let err = |kind| ParseError {
        line: line_no,
        kind,
    };
    let trimmed = line.trim_start();
    // lackey writes its banner as "==pid== ..." lines
    if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("==") {
        return Ok(Line::Nothing);
    }
    let mut chars = trimmed.chars();
    let tag = chars.next().unwrap();
    let rest = chars.as_str();
    // the tag must be followed by whitespace, "Ix" is not an "I" record
    if !rest.starts_with(char::is_whitespace) {
        let word = trimmed.split_whitespace().next().unwrap_or(trimmed);
        return Err(err(ParseErrorKind::UnknownTag(word.to_string())));
    }
    let kind = match tag {
        'I' => AccessKind::InsnFetch,
        'L' => AccessKind::DataLoad,
        'S' => AccessKind::DataStore,
        'M' => AccessKind::DataModify,
        'C' => return parse_stack(rest).map(Line::Stack).map_err(err),
        'U' => return parse_activate(rest).map_err(err),
        other => return Err(err(ParseErrorKind::UnknownTag(other.to_string()))),
    };
    parse_access(kind, rest).map(Line::Event).map_err(err)
}

/// How [`TraceReader`] reacts to malformed lines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParseMode {
    /// The first error ends the stream.
    #[default]
    Strict,
    /// Malformed lines are skipped and collected as warnings.
    Lenient,
}

/// Streaming trace reader.
///
/// Memory use is bounded by the number of declared stacks and threads, not
/// by trace length.
pub struct TraceReader<R> {
    input: R,
    mode: ParseMode,
    buf: String,
    line_no: usize,
    current_stack: HashMap<u32, u32>,
    declared: HashSet<u32>,
    warnings: Vec<ParseError>,
    done: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(input: R, mode: ParseMode) -> Self {
        Self {
            input,
            mode,
            buf: String::new(),
            line_no: 0,
            current_stack: HashMap::new(),
            declared: HashSet::new(),
            warnings: Vec::new(),
            done: false,
        }
    }

    /// Errors skipped so far in lenient mode.
    pub fn warnings(&self) -> &[ParseError] {
        &self.warnings
    }

    fn decode(&mut self) -> Result<Option<Record>, ParseError> {
        match parse_line(&self.buf, self.line_no)? {
            Line::Nothing => Ok(None),
            Line::Activate { thread, stack } => {
                self.current_stack.insert(thread, stack);
                Ok(None)
            }
            Line::Stack(decl) => {
                if !self.declared.insert(decl.id) {
                    return Err(ParseError {
                        line: self.line_no,
                        kind: ParseErrorKind::DuplicateStack(decl.id),
                    });
                }
                Ok(Some(Record::Stack(decl)))
            }
            Line::Event(mut ev) => {
                ev.stack_ref = self.current_stack.get(&ev.thread).copied();
                Ok(Some(Record::Event(ev)))
            }
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<Record, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.line_no += 1;
                    match self.decode() {
                        Ok(Some(rec)) => return Some(Ok(rec)),
                        Ok(None) => {}
                        Err(e) if self.mode == ParseMode::Lenient => {
                            log::warn!("skipping malformed trace record: {e}");
                            self.warnings.push(e);
                        }
                        Err(e) => {
                            self.done = true;
                            return Some(Err(e.into()));
                        }
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
            }
        }
        None
    }
}

/// Reads a whole trace into memory. Prefer [`TraceReader`] for large inputs.
pub fn read_trace<R: BufRead>(input: R, mode: ParseMode) -> Result<Vec<Record>, TraceError> {
    TraceReader::new(input, mode).collect()
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AccessKind::InsnFetch => write!(f, "I  {:08x},{}", self.address, self.size)?,
            k => write!(f, " {} {:08x},{}", k.tag(), self.address, self.size)?,
        }
        if self.thread != 0 {
            write!(f, " t{}", self.thread)?;
        }
        Ok(())
    }
}

impl fmt::Display for CallStackDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C {}: {}", self.id, self.frames.join("|"))
    }
}

/// Serializes records, inserting `U` lines wherever an event's stack context
/// differs from the one last activated for its thread.
pub struct TraceWriter<W> {
    out: W,
    current_stack: HashMap<u32, u32>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            current_stack: HashMap::new(),
        }
    }

    pub fn write(&mut self, record: &Record) -> Result<(), TraceError> {
        match record {
            Record::Stack(decl) => writeln!(self.out, "{decl}")?,
            Record::Event(ev) => {
                let current = self.current_stack.get(&ev.thread).copied();
                match (current, ev.stack_ref) {
                    (Some(_), None) => return Err(TraceError::StackCleared { thread: ev.thread }),
                    (cur, Some(id)) if cur != Some(id) => {
                        writeln!(self.out, "U {} {}", ev.thread, id)?;
                        self.current_stack.insert(ev.thread, id);
                    }
                    _ => {}
                }
                writeln!(self.out, "{ev}")?;
            }
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn write_trace<'a, W, I>(records: I, out: W) -> Result<(), TraceError>
where
    W: Write,
    I: IntoIterator<Item = &'a Record>,
{
    let mut writer = TraceWriter::new(out);
    for r in records {
        writer.write(r)?;
    }
    writer.into_inner().flush()?;
    Ok(())
}
