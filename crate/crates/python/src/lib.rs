//! Python bindings for `wsprof_core`.

use std::fs::File;
use std::io::{BufRead, BufReader};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use wsprof_core::engine::{analyze_stream, AnalysisConfig, AnalysisResult, ScopeResult, StreamReport};
use wsprof_core::peak::{self, PeakParams};
use wsprof_core::report::{self, Format};
use wsprof_core::trace::{ParseMode, Record, TraceReader, TraceWriter};
use wsprof_core::workloads::{self, PagerampConfig, StepConfig};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn peak_params(alpha: f64, g: f64, phi: f64) -> PeakParams {
    PeakParams {
        alpha,
        g,
        phi,
        ..PeakParams::default()
    }
}

#[pyclass(name = "PeakVerdict", frozen, get_all)]
struct PyPeakVerdict {
    is_peak: bool,
    e: f64,
    threshold_e: f64,
    fano: f64,
}

#[pymethods]
impl PyPeakVerdict {
    fn __repr__(&self) -> String {
        format!(
            "PeakVerdict(is_peak={}, e={}, threshold_e={}, fano={})",
            if self.is_peak { "True" } else { "False" },
            self.e,
            self.threshold_e,
            self.fano
        )
    }
}

/// Streaming peak detector over a working-set series.
#[pyclass(name = "PeakDetector")]
struct PyPeakDetector {
    inner: peak::PeakDetector,
}

#[pymethods]
impl PyPeakDetector {
    #[new]
    #[pyo3(signature = (alpha=0.3, g=1.0, phi=0.2))]
    fn new(alpha: f64, g: f64, phi: f64) -> PyResult<Self> {
        let inner = peak::PeakDetector::new(peak_params(alpha, g, phi)).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn update(&mut self, x: f64) -> PyPeakVerdict {
        let v = self.inner.update(x);
        PyPeakVerdict {
            is_peak: v.is_peak,
            e: v.e,
            threshold_e: v.threshold_e,
            fano: v.fano,
        }
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.inner.variance()
    }
}

/// Peak flags for a whole series.
#[pyfunction]
#[pyo3(signature = (series, alpha=0.3, g=1.0, phi=0.2))]
fn detect_series(series: Vec<f64>, alpha: f64, g: f64, phi: f64) -> PyResult<Vec<bool>> {
    let v = peak::detect_series(&series, peak_params(alpha, g, phi)).map_err(value_err)?;
    Ok(v.into_iter().map(|v| v.is_peak).collect())
}

fn render(records: impl Iterator<Item = Record>) -> PyResult<String> {
    let mut w = TraceWriter::new(Vec::new());
    for r in records {
        w.write(&r).map_err(value_err)?;
    }
    String::from_utf8(w.into_inner()).map_err(value_err)
}

/// Sawtooth trace as text in the trace grammar.
#[pyfunction]
#[pyo3(signature = (max_pages=1024, stride=2, cycles=10, insns_per_touch=1, step_insns=16, base_address=0x1000_0000, page_size=4096))]
fn gen_pageramp(
    max_pages: u64,
    stride: u64,
    cycles: u64,
    insns_per_touch: u64,
    step_insns: u64,
    base_address: u64,
    page_size: u64,
) -> PyResult<String> {
    let cfg = PagerampConfig {
        max_pages,
        stride,
        cycles,
        insns_per_touch,
        step_insns,
        base_address,
        page_size,
    };
    render(workloads::gen_pageramp(cfg).map_err(value_err)?)
}

/// Step-fixture trace as text in the trace grammar.
#[pyfunction]
#[pyo3(signature = (flat=10, step=50, flat_samples=20, every=1000, repeats=1, base_address=0x1000_0000, page_size=4096))]
fn gen_step(
    flat: u64,
    step: u64,
    flat_samples: u64,
    every: u64,
    repeats: u64,
    base_address: u64,
    page_size: u64,
) -> PyResult<String> {
    let cfg = StepConfig {
        every,
        repeats,
        base_address,
        page_size,
    };
    render(workloads::gen_step(flat, step, flat_samples, cfg).map_err(value_err)?)
}

type SampleTuple = (u64, u64, u64, bool, bool, Option<usize>);

/// Result of an analysis run.
#[pyclass(name = "Analysis", frozen)]
struct PyAnalysis {
    inner: AnalysisResult,
}

impl PyAnalysis {
    fn scope(&self, thread: Option<u32>) -> PyResult<&ScopeResult> {
        match thread {
            None => Ok(&self.inner.combined),
            Some(t) => self
                .inner
                .threads
                .get(&t)
                .ok_or_else(|| PyValueError::new_err(format!("no per-thread result for thread {t}"))),
        }
    }

    fn stream<'a>(scope: &'a ScopeResult, stream: &str) -> PyResult<&'a StreamReport> {
        match stream {
            "insn" => Ok(&scope.insn),
            "data" => Ok(&scope.data),
            other => Err(PyValueError::new_err(format!("stream must be 'insn' or 'data', got {other:?}"))),
        }
    }

    fn emit(&self, format: Format) -> PyResult<String> {
        let mut buf = Vec::new();
        report::emit(&self.inner, format, &mut buf).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }
}

#[pymethods]
impl PyAnalysis {
    #[getter]
    fn tau(&self) -> u64 {
        self.inner.tau
    }

    #[getter]
    fn every(&self) -> u64 {
        self.inner.every
    }

    #[getter]
    fn page_size(&self) -> u64 {
        self.inner.page_size
    }

    #[getter]
    fn instructions(&self) -> u64 {
        self.inner.instructions
    }

    #[getter]
    fn threads(&self) -> Vec<u32> {
        self.inner.threads.keys().copied().collect()
    }

    /// `(t, wss_insn, wss_data, peak_insn, peak_data, annotation)` per sample.
    #[pyo3(signature = (thread=None))]
    fn samples(&self, thread: Option<u32>) -> PyResult<Vec<SampleTuple>> {
        Ok(self
            .scope(thread)?
            .samples
            .iter()
            .map(|s| (s.t, s.wss_insn, s.wss_data, s.peak_insn, s.peak_data, s.annotation))
            .collect())
    }

    /// `(avg_pages, peak_pages, total_pages)` for "insn" or "data".
    #[pyo3(signature = (stream, thread=None))]
    fn summary(&self, stream: &str, thread: Option<u32>) -> PyResult<(f64, u64, u64)> {
        let s = &Self::stream(self.scope(thread)?, stream)?.summary;
        Ok((s.avg_pages, s.peak_pages, s.total_pages))
    }

    #[pyo3(signature = (stream, thread=None))]
    fn summary_line(&self, stream: &str, thread: Option<u32>) -> PyResult<String> {
        Ok(Self::stream(self.scope(thread)?, stream)?.summary.line())
    }

    /// `(count, page, info)` entries, most accessed first.
    #[pyo3(signature = (stream, thread=None))]
    fn hot_pages(&self, stream: &str, thread: Option<u32>) -> PyResult<Vec<(u64, u64, Option<String>)>> {
        Ok(Self::stream(self.scope(thread)?, stream)?
            .hot_pages
            .iter()
            .map(|e| (e.count, e.page, e.info.clone()))
            .collect())
    }

    /// Annotation lines, e.g. `[0] refs=2, loc=a.c:1|main.c:9 ...`.
    fn annotations(&self) -> Vec<String> {
        self.inner.annotations.iter().map(report::annotation_line).collect()
    }

    fn to_text(&self) -> PyResult<String> {
        self.emit(Format::Text)
    }

    fn to_csv(&self) -> PyResult<String> {
        self.emit(Format::Csv)
    }

    fn to_json(&self) -> PyResult<String> {
        self.emit(Format::Json)
    }

    fn to_svg(&self) -> PyResult<String> {
        self.emit(Format::Svg)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = report::read_json(text.as_bytes()).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Analysis(tau={}, every={}, instructions={}, samples={})",
            self.inner.tau,
            self.inner.every,
            self.inner.instructions,
            self.inner.combined.samples.len()
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    input: impl BufRead,
    tau: u64,
    every: Option<u64>,
    page_size: u64,
    peak_detect: bool,
    g: f64,
    alpha: f64,
    phi: f64,
    per_thread: bool,
    top_n: usize,
    lenient: bool,
) -> PyResult<PyAnalysis> {
    let config = AnalysisConfig {
        tau,
        every: every.unwrap_or(tau),
        page_size,
        per_thread,
        peak: peak_detect.then(|| peak_params(alpha, g, phi)),
        top_n,
        ..AnalysisConfig::default()
    };
    let mode = if lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let inner = analyze_stream(TraceReader::new(input, mode), config).map_err(value_err)?;
    Ok(PyAnalysis { inner })
}

/// Analyze trace text.
#[pyfunction]
#[pyo3(signature = (trace, tau=100_000, every=None, page_size=4096, peak_detect=false, g=1.0, alpha=0.3, phi=0.2, per_thread=false, top_n=10, lenient=false))]
#[allow(clippy::too_many_arguments)]
fn analyze(
    py: Python<'_>,
    trace: &str,
    tau: u64,
    every: Option<u64>,
    page_size: u64,
    peak_detect: bool,
    g: f64,
    alpha: f64,
    phi: f64,
    per_thread: bool,
    top_n: usize,
    lenient: bool,
) -> PyResult<PyAnalysis> {
    let trace = trace.to_owned();
    py.detach(move || {
        run(
            trace.as_bytes(),
            tau,
            every,
            page_size,
            peak_detect,
            g,
            alpha,
            phi,
            per_thread,
            top_n,
            lenient,
        )
    })
}

/// Analyze a trace file, streaming it from disk.
#[pyfunction]
#[pyo3(signature = (path, tau=100_000, every=None, page_size=4096, peak_detect=false, g=1.0, alpha=0.3, phi=0.2, per_thread=false, top_n=10, lenient=false))]
#[allow(clippy::too_many_arguments)]
fn analyze_file(
    py: Python<'_>,
    path: std::path::PathBuf,
    tau: u64,
    every: Option<u64>,
    page_size: u64,
    peak_detect: bool,
    g: f64,
    alpha: f64,
    phi: f64,
    per_thread: bool,
    top_n: usize,
    lenient: bool,
) -> PyResult<PyAnalysis> {
    let file = File::open(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
    py.detach(move || {
        run(
            BufReader::new(file),
            tau,
            every,
            page_size,
            peak_detect,
            g,
            alpha,
            phi,
            per_thread,
            top_n,
            lenient,
        )
    })
}

#[pymodule]
fn wsprof(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPeakDetector>()?;
    m.add_class::<PyPeakVerdict>()?;
    m.add_class::<PyAnalysis>()?;
    m.add_function(wrap_pyfunction!(detect_series, m)?)?;
    m.add_function(wrap_pyfunction!(gen_pageramp, m)?)?;
    m.add_function(wrap_pyfunction!(gen_step, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_file, m)?)?;
    Ok(())
}
