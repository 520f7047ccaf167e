//! Working set computation on an instruction-count time base.
//!
//! Every instruction fetch advances the clock by one; the first instruction
//! has timestamp 1 and data accesses carry the timestamp of the instruction
//! that issued them. At every `t = k * every` the analyzer counts the pages
//! whose last access lies in `(t - tau, t]`, once for instruction pages and
//! once for data pages. The sample for `t` is taken after all accesses of
//! instruction `t`, i.e. right before the next fetch or at end of trace.
//!
//! Pages are never dropped from a table. A page that is unmapped and later
//! remapped at the same address counts as the same page.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::peak::{PeakDetector, PeakParamError, PeakParams};
use crate::report::{self, HotPageEntry, LabelMap, Summary};
use crate::trace::{Record, TraceError, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    Insn,
    Data,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ConfigError {
    #[error("tau must be at least 1")]
    Tau,
    #[error("sampling interval must be at least 1")]
    Every,
    #[error("page size must be a power of two, got {0}")]
    PageSize(u64),
    #[error(transparent)]
    Peak(#[from] PeakParamError),
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Clone, Debug)]
pub struct AnalysisConfig {
    /// Working set window in instructions.
    pub tau: u64,
    /// Sampling interval in instructions.
    pub every: u64,
    pub page_size: u64,
    /// Keep separate tables per thread in addition to the combined ones.
    pub per_thread: bool,
    /// `Some` enables peak detection.
    pub peak: Option<PeakParams>,
    pub top_n: usize,
    /// Page labels for hot-page listings.
    pub labels: LabelMap,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            tau: 100_000,
            every: 100_000,
            page_size: 4096,
            per_thread: false,
            peak: None,
            top_n: 10,
            labels: LabelMap::default(),
        }
    }
}

impl AnalysisConfig {
    /// Window and interval both set to `tau`.
    pub fn with_tau(tau: u64) -> Self {
        Self {
            tau,
            every: tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tau == 0 {
            return Err(ConfigError::Tau);
        }
        if self.every == 0 {
            return Err(ConfigError::Every);
        }
        if !self.page_size.is_power_of_two() {
            return Err(ConfigError::PageSize(self.page_size));
        }
        if let Some(p) = &self.peak {
            p.validate()?;
        }
        Ok(())
    }

    fn page_shift(&self) -> u32 {
        self.page_size.trailing_zeros()
    }
}

/// Where a page was first touched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstInfo {
    pub address: u64,
    pub stack_ref: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page: u64,
    pub last_access: u64,
    pub access_count: u64,
    pub first_info: Option<FirstInfo>,
}

/// Pages seen by one stream, keyed by page number.
#[derive(Clone, Debug, Default)]
pub struct PageTable {
    pages: HashMap<u64, PageRecord>,
    accesses: u64,
}

impl PageTable {
    pub fn touch(&mut self, page: u64, now: u64, info: FirstInfo) {
        self.accesses += 1;
        let rec = self.pages.entry(page).or_insert(PageRecord {
            page,
            last_access: now,
            access_count: 0,
            first_info: Some(info),
        });
        rec.access_count += 1;
        rec.last_access = rec.last_access.max(now);
    }

    /// Pages with `last_access` in `(t - tau, t]`.
    pub fn working_set_size(&self, t: u64, tau: u64) -> u64 {
        self.pages
            .values()
            .filter(|r| r.last_access <= t && r.last_access + tau > t)
            .count() as u64
    }

    pub fn get(&self, page: u64) -> Option<&PageRecord> {
        self.pages.get(&page)
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// Total page touches recorded, including repeats.
    pub fn total_accesses(&self) -> u64 {
        self.accesses
    }

    pub fn records(&self) -> impl Iterator<Item = &PageRecord> {
        self.pages.values()
    }
}

/// Marks every page overlapped by `[address, address + size)`.
pub fn record_access(
    table: &mut PageTable,
    page_shift: u32,
    address: u64,
    size: u32,
    now: u64,
    stack_ref: Option<u32>,
) {
    let first = address >> page_shift;
    let last = address.saturating_add(u64::from(size.max(1)) - 1) >> page_shift;
    let info = FirstInfo { address, stack_ref };
    for page in first..=last {
        table.touch(page, now, info);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WssSample {
    pub t: u64,
    pub wss_insn: u64,
    pub wss_data: u64,
    pub peak_insn: bool,
    pub peak_data: bool,
    /// Index into [`AnalysisResult::annotations`].
    pub annotation: Option<usize>,
}

/// Which streams peaked at an annotated sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PeakStream {
    Insn,
    Data,
    Both,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakAnnotation {
    pub index: usize,
    pub t: u64,
    pub stream: PeakStream,
    /// `None` for the combined series, else the thread whose series peaked.
    pub thread: Option<u32>,
    pub refs: usize,
    pub frames: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub summary: Summary,
    pub total_accesses: u64,
    pub hot_pages: Vec<HotPageEntry>,
}

/// Samples and per-stream reports for the combined view or one thread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScopeResult {
    pub samples: Vec<WssSample>,
    pub insn: StreamReport,
    pub data: StreamReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub tau: u64,
    pub every: u64,
    pub page_size: u64,
    /// Final instruction count.
    pub instructions: u64,
    pub combined: ScopeResult,
    pub threads: BTreeMap<u32, ScopeResult>,
    pub annotations: Vec<PeakAnnotation>,
}

struct Scope {
    insn: PageTable,
    data: PageTable,
    samples: Vec<WssSample>,
    detectors: Option<(PeakDetector, PeakDetector)>,
}

impl Scope {
    fn new(peak: Option<PeakParams>) -> Self {
        // params were validated with the config
        let detectors = peak.map(|p| {
            (
                PeakDetector::new(p).expect("validated"),
                PeakDetector::new(p).expect("validated"),
            )
        });
        Self {
            insn: PageTable::default(),
            data: PageTable::default(),
            samples: Vec::new(),
            detectors,
        }
    }

    /// Appends a sample at `t`; returns the peaking streams, if any.
    fn sample(&mut self, t: u64, tau: u64) -> Option<PeakStream> {
        let wss_insn = self.insn.working_set_size(t, tau);
        let wss_data = self.data.working_set_size(t, tau);
        let (peak_insn, peak_data) = match &mut self.detectors {
            Some((di, dd)) => (
                di.update(wss_insn as f64).is_peak,
                dd.update(wss_data as f64).is_peak,
            ),
            None => (false, false),
        };
        self.samples.push(WssSample {
            t,
            wss_insn,
            wss_data,
            peak_insn,
            peak_data,
            annotation: None,
        });
        match (peak_insn, peak_data) {
            (true, true) => Some(PeakStream::Both),
            (true, false) => Some(PeakStream::Insn),
            (false, true) => Some(PeakStream::Data),
            (false, false) => None,
        }
    }

    fn finish(self, config: &AnalysisConfig, stacks: &HashMap<u32, Vec<String>>) -> ScopeResult {
        let report = |table: &PageTable, stream| StreamReport {
            summary: report::summarize(&self.samples, table, stream, config.page_size),
            total_accesses: table.total_accesses(),
            hot_pages: report::hot_pages(table, config.top_n, &config.labels, stacks),
        };
        let insn = report(&self.insn, Stream::Insn);
        let data = report(&self.data, Stream::Data);
        ScopeResult {
            samples: self.samples,
            insn,
            data,
        }
    }
}

/// Incremental analyzer. Feed records in trace order, then call
/// [`Analyzer::finish`].
pub struct Analyzer {
    config: AnalysisConfig,
    page_shift: u32,
    now: u64,
    combined: Scope,
    threads: BTreeMap<u32, Scope>,
    stacks: HashMap<u32, Vec<String>>,
    current_stack: HashMap<u32, Option<u32>>,
    last_thread: u32,
    annotations: Vec<PeakAnnotation>,
}

impl Analyzer {
    pub fn new(config: AnalysisConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            page_shift: config.page_shift(),
            combined: Scope::new(config.peak),
            config,
            now: 0,
            threads: BTreeMap::new(),
            stacks: HashMap::new(),
            current_stack: HashMap::new(),
            last_thread: 0,
            annotations: Vec::new(),
        })
    }

    /// Current instruction count.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn table(&self, stream: Stream) -> &PageTable {
        match stream {
            Stream::Insn => &self.combined.insn,
            Stream::Data => &self.combined.data,
        }
    }

    pub fn thread_table(&self, thread: u32, stream: Stream) -> Option<&PageTable> {
        self.threads.get(&thread).map(|s| match stream {
            Stream::Insn => &s.insn,
            Stream::Data => &s.data,
        })
    }

    pub fn feed(&mut self, record: &Record) {
        match record {
            Record::Stack(decl) => {
                self.stacks.insert(decl.id, decl.frames.clone());
            }
            Record::Event(ev) => self.feed_event(ev),
        }
    }

    fn feed_event(&mut self, ev: &TraceEvent) {
        if ev.kind.is_insn() {
            self.sample_if_due();
            self.now += 1;
            self.last_thread = ev.thread;
        }
        self.current_stack.insert(ev.thread, ev.stack_ref);

        let shift = self.page_shift;
        let now = self.now;
        fn pick(scope: &mut Scope, insn: bool) -> &mut PageTable {
            if insn {
                &mut scope.insn
            } else {
                &mut scope.data
            }
        }
        let is_insn = ev.kind.is_insn();
        record_access(pick(&mut self.combined, is_insn), shift, ev.address, ev.size, now, ev.stack_ref);
        if self.config.per_thread {
            let peak = self.config.peak;
            let scope = self
                .threads
                .entry(ev.thread)
                .or_insert_with(|| Scope::new(peak));
            record_access(pick(scope, is_insn), shift, ev.address, ev.size, now, ev.stack_ref);
        }
    }

    fn sample_if_due(&mut self) {
        let t = self.now;
        if t == 0 || !t.is_multiple_of(self.config.every) {
            return;
        }
        if self.combined.samples.last().is_some_and(|s| s.t == t) {
            return;
        }
        let tau = self.config.tau;
        if let Some(stream) = self.combined.sample(t, tau) {
            let thread = self.last_thread;
            let idx = self.annotate(t, stream, None, thread);
            self.combined.samples.last_mut().unwrap().annotation = Some(idx);
        }
        let thread_ids: Vec<u32> = self.threads.keys().copied().collect();
        for id in thread_ids {
            let peaked = self.threads.get_mut(&id).unwrap().sample(t, tau);
            if let Some(stream) = peaked {
                let idx = self.annotate(t, stream, Some(id), id);
                self.threads.get_mut(&id).unwrap().samples.last_mut().unwrap().annotation = Some(idx);
            }
        }
    }

    fn annotate(&mut self, t: u64, stream: PeakStream, scope: Option<u32>, thread: u32) -> usize {
        let frames = self
            .current_stack
            .get(&thread)
            .copied()
            .flatten()
            .and_then(|id| self.stacks.get(&id))
            .cloned()
            .unwrap_or_default();
        let index = self.annotations.len();
        self.annotations.push(PeakAnnotation {
            index,
            t,
            stream,
            thread: scope,
            refs: frames.len(),
            frames,
        });
        index
    }

    pub fn finish(mut self) -> AnalysisResult {
        self.sample_if_due();
        let config = &self.config;
        let stacks = &self.stacks;
        AnalysisResult {
            tau: config.tau,
            every: config.every,
            page_size: config.page_size,
            instructions: self.now,
            combined: self.combined.finish(config, stacks),
            threads: self
                .threads
                .into_iter()
                .map(|(id, s)| (id, s.finish(config, stacks)))
                .collect(),
            annotations: self.annotations,
        }
    }
}

pub fn run_analysis<I>(records: I, config: AnalysisConfig) -> Result<AnalysisResult, ConfigError>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<Record>,
{
    let mut analyzer = Analyzer::new(config)?;
    for r in records {
        analyzer.feed(std::borrow::Borrow::borrow(&r));
    }
    Ok(analyzer.finish())
}

/// Like [`run_analysis`] over a fallible record stream such as a
/// [`crate::trace::TraceReader`]. The first error aborts the analysis.
pub fn analyze_stream<I>(records: I, config: AnalysisConfig) -> Result<AnalysisResult, AnalysisError>
where
    I: IntoIterator<Item = Result<Record, TraceError>>,
{
    let mut analyzer = Analyzer::new(config)?;
    for r in records {
        analyzer.feed(&r?);
    }
    Ok(analyzer.finish())
}
