//! Summaries, hot-page rankings and output formats.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AnalysisResult, PageTable, PeakStream, ScopeResult, Stream, WssSample};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("label map line {line}: {msg}")]
    Labels { line: usize, msg: String },
    #[error("unknown format {0:?} (expected text, csv, json or svg)")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub stream: Stream,
    pub avg_pages: f64,
    pub peak_pages: u64,
    pub total_pages: u64,
    pub page_size: u64,
}

impl Summary {
    /// One summary line, e.g.
    /// `Insn avg/peak/total: 2.1/40/57 pages (8/160/228 kB)`.
    pub fn line(&self) -> String {
        let label = match self.stream {
            Stream::Insn => "Insn",
            Stream::Data => "Data",
        };
        let avg_kb = self.avg_pages * self.page_size as f64 / 1024.0;
        format!(
            "{label} avg/peak/total: {:.1}/{}/{} pages ({:.0}/{}/{} kB)",
            self.avg_pages,
            self.peak_pages,
            self.total_pages,
            avg_kb,
            kib(self.peak_pages, self.page_size),
            kib(self.total_pages, self.page_size),
        )
    }
}

/// `pages * page_size / 1024`, exact for power-of-two page sizes.
fn kib(pages: u64, page_size: u64) -> String {
    let bytes = u128::from(pages) * u128::from(page_size);
    if bytes % 1024 == 0 {
        (bytes / 1024).to_string()
    } else {
        // page sizes below 1 kB leave at most 10 binary fraction digits
        let v = bytes as f64 / 1024.0;
        let s = format!("{v:.10}");
        s.trim_end_matches('0').to_string()
    }
}

pub fn summarize(samples: &[WssSample], table: &PageTable, stream: Stream, page_size: u64) -> Summary {
    let values = samples.iter().map(|s| match stream {
        Stream::Insn => s.wss_insn,
        Stream::Data => s.wss_data,
    });
    let (sum, peak) = values.fold((0u128, 0u64), |(sum, peak), v| (sum + u128::from(v), peak.max(v)));
    let avg_pages = if samples.is_empty() {
        0.0
    } else {
        sum as f64 / samples.len() as f64
    };
    Summary {
        stream,
        avg_pages,
        peak_pages: peak,
        total_pages: table.len() as u64,
        page_size,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotPageEntry {
    pub count: u64,
    pub page: u64,
    pub info: Option<String>,
}

/// Page-number to label map, read from lines `<hexpage> <label>`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap(HashMap<u64, String>);

impl LabelMap {
    pub fn parse<R: BufRead>(input: R) -> Result<Self, ReportError> {
        let mut map = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (page, label) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let digits = page.strip_prefix("0x").or_else(|| page.strip_prefix("0X")).unwrap_or(page);
            let page = u64::from_str_radix(digits, 16).map_err(|_| ReportError::Labels {
                line: i + 1,
                msg: format!("bad page number {page:?}"),
            })?;
            map.insert(page, label.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn insert(&mut self, page: u64, label: impl Into<String>) {
        self.0.insert(page, label.into());
    }

    pub fn get(&self, page: u64) -> Option<&str> {
        self.0.get(&page).map(String::as_str)
    }
}

/// Top `n` pages by access count, ties broken by ascending page number.
///
/// Info comes from `labels`, else from the innermost frame of the stack
/// active at the page's first access. It is approximate: it describes the
/// first access that fell into the page, not all of them.
pub fn hot_pages(
    table: &PageTable,
    n: usize,
    labels: &LabelMap,
    stacks: &HashMap<u32, Vec<String>>,
) -> Vec<HotPageEntry> {
    let mut recs: Vec<_> = table.records().collect();
    recs.sort_unstable_by(|a, b| b.access_count.cmp(&a.access_count).then(a.page.cmp(&b.page)));
    recs.into_iter()
        .take(n)
        .map(|r| {
            let info = labels.get(r.page).map(str::to_string).or_else(|| {
                r.first_info
                    .and_then(|fi| fi.stack_ref)
                    .and_then(|id| stacks.get(&id))
                    .and_then(|frames| frames.first().cloned())
            });
            HotPageEntry {
                count: r.access_count,
                page: r.page,
                info,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
    Json,
    Svg,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(ReportError::Format(other.to_string())),
        }
    }
}

pub fn emit<W: Write>(result: &AnalysisResult, format: Format, sink: W) -> Result<(), ReportError> {
    match format {
        Format::Text => write_text(result, sink),
        Format::Csv => write_csv(&result.combined.samples, sink),
        Format::Json => write_json(result, sink),
        Format::Svg => write_svg(result, sink),
    }
}

pub const CSV_HEADER: [&str; 6] = ["t", "WSS_insn", "WSS_data", "peak_insn", "peak_data", "annotation"];

pub fn write_csv<W: Write>(samples: &[WssSample], sink: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for s in samples {
        w.write_record([
            s.t.to_string(),
            s.wss_insn.to_string(),
            s.wss_data.to_string(),
            u8::from(s.peak_insn).to_string(),
            u8::from(s.peak_data).to_string(),
            s.annotation.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct CsvRow {
    t: u64,
    #[serde(rename = "WSS_insn")]
    wss_insn: u64,
    #[serde(rename = "WSS_data")]
    wss_data: u64,
    peak_insn: u8,
    peak_data: u8,
    annotation: Option<usize>,
}

/// Reads a sample series written by [`write_csv`].
pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<WssSample>, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(WssSample {
                t: row.t,
                wss_insn: row.wss_insn,
                wss_data: row.wss_data,
                peak_insn: row.peak_insn != 0,
                peak_data: row.peak_data != 0,
                annotation: row.annotation,
            })
        })
        .collect()
}

pub fn write_json<W: Write>(result: &AnalysisResult, mut sink: W) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(&mut sink, result)?;
    writeln!(sink)?;
    Ok(())
}

pub fn read_json<R: io::Read>(input: R) -> Result<AnalysisResult, ReportError> {
    Ok(serde_json::from_reader(input)?)
}

fn text_scope(out: &mut String, scope: &ScopeResult) {
    writeln!(out, "{}", scope.insn.summary.line()).unwrap();
    writeln!(out, "{}", scope.data.summary.line()).unwrap();
    for (title, report) in [("Code", &scope.insn), ("Data", &scope.data)] {
        writeln!(out).unwrap();
        writeln!(out, "{title} pages ({} entries):", report.summary.total_pages).unwrap();
        writeln!(out, "{:<9} {:<7} information", "count", "page").unwrap();
        for e in &report.hot_pages {
            let page = format!("0x{:04X}", e.page);
            let info = e.info.as_deref().unwrap_or("");
            writeln!(out, "{:>8}  {:<6}  {}", e.count, page, info).unwrap();
        }
    }
}

/// Peak annotation line, e.g. `[0] refs=2, loc=pageramp.c:37|pageramp.c:77`.
pub fn annotation_line(a: &crate::engine::PeakAnnotation) -> String {
    let stream = match a.stream {
        PeakStream::Insn => "insn",
        PeakStream::Data => "data",
        PeakStream::Both => "insn+data",
    };
    let scope = a.thread.map(|t| format!(" thread={t}")).unwrap_or_default();
    format!(
        "[{}] refs={}, loc={}  (t={}, {stream}{scope})",
        a.index,
        a.refs,
        a.frames.join("|"),
        a.t
    )
}

pub fn render_text(result: &AnalysisResult) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "tau={} every={} page_size={} instructions={} samples={}",
        result.tau,
        result.every,
        result.page_size,
        result.instructions,
        result.combined.samples.len()
    )
    .unwrap();
    text_scope(&mut out, &result.combined);
    for (id, scope) in &result.threads {
        writeln!(out).unwrap();
        writeln!(out, "Thread {id}:").unwrap();
        text_scope(&mut out, scope);
    }
    if !result.annotations.is_empty() {
        writeln!(out).unwrap();
        writeln!(out, "Peaks ({}):", result.annotations.len()).unwrap();
        for a in &result.annotations {
            writeln!(out, "{}", annotation_line(a)).unwrap();
        }
    }
    out
}

pub fn write_text<W: Write>(result: &AnalysisResult, mut sink: W) -> Result<(), ReportError> {
    sink.write_all(render_text(result).as_bytes())?;
    Ok(())
}

const SVG_W: f64 = 960.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Step plot of both combined series with labeled peak markers.
pub fn render_svg(result: &AnalysisResult) -> String {
    let samples = &result.combined.samples;
    let t_max = samples.last().map_or(1, |s| s.t).max(1) as f64;
    let y_max = samples
        .iter()
        .map(|s| s.wss_insn.max(s.wss_data))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let pw = SVG_W - 2.0 * MARGIN;
    let ph = SVG_H - 2.0 * MARGIN;
    let x = |t: u64| MARGIN + t as f64 / t_max * pw;
    let y = |v: u64| SVG_H - MARGIN - v as f64 / y_max * ph;

    let mut out = String::new();
    writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">
<rect width="100%" height="100%" fill="white"/>
<line x1="{MARGIN}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b:.2}" stroke="black"/>
<text x="{r:.2}" y="{lx:.2}" font-size="12" text-anchor="end">instructions ({t_max})</text>
<text x="4" y="{ty:.2}" font-size="12">pages ({y_max})</text>"#,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN,
        lx = SVG_H - MARGIN / 3.0,
        ty = MARGIN - 8.0,
    )
    .unwrap();

    for (name, color, pick) in [
        ("insn", "#1f77b4", (|s: &WssSample| s.wss_insn) as fn(&WssSample) -> u64),
        ("data", "#d62728", |s: &WssSample| s.wss_data),
    ] {
        if samples.is_empty() {
            break;
        }
        let mut d = format!("M{:.2},{:.2}", x(0), y(0));
        for s in samples {
            // hold previous value until t, then step
            let _ = write!(d, " H{:.2} V{:.2}", x(s.t), y(pick(s)));
        }
        writeln!(
            out,
            r#"<path id="wss-{name}" d="{d}" fill="none" stroke="{color}" stroke-width="1.2"/>"#
        )
        .unwrap();
    }

    for s in samples {
        let Some(idx) = s.annotation else { continue };
        let v = if s.peak_data { s.wss_data } else { s.wss_insn };
        let (cx, cy) = (x(s.t), y(v));
        writeln!(
            out,
            r#"<g class="peak"><rect x="{:.2}" y="{:.2}" width="16" height="14" fill="white" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{idx}</text></g>"#,
            cx - 8.0,
            cy - 22.0,
            cx,
            cy - 11.0
        )
        .unwrap();
    }

    writeln!(
        out,
        r##"<text x="{:.2}" y="{:.2}" font-size="12" fill="#1f77b4">insn</text>
<text x="{:.2}" y="{:.2}" font-size="12" fill="#d62728">data</text>
</svg>"##,
        SVG_W - MARGIN - 80.0,
        MARGIN - 8.0,
        SVG_W - MARGIN - 40.0,
        MARGIN - 8.0
    )
    .unwrap();
    out
}

pub fn write_svg<W: Write>(result: &AnalysisResult, mut sink: W) -> Result<(), ReportError> {
    sink.write_all(render_svg(result).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::record_access;

    fn sample(t: u64, wss_data: u64) -> WssSample {
        WssSample {
            t,
            wss_insn: wss_data,
            wss_data,
            peak_insn: false,
            peak_data: false,
            annotation: None,
        }
    }

    #[test]
    fn summary_arithmetic() {
        let table = PageTable::default();
        let s = summarize(&[sample(1, 0), sample(2, 0), sample(3, 0)], &table, Stream::Data, 4096);
        assert_eq!((s.avg_pages, s.peak_pages, s.total_pages), (0.0, 0, 0));

        let mut table = PageTable::default();
        for p in 0..5 {
            record_access(&mut table, 12, p << 12, 1, 1, None);
        }
        let s = summarize(&[sample(1, 2), sample(2, 4)], &table, Stream::Insn, 4096);
        assert_eq!(s.line(), "Insn avg/peak/total: 3.0/4/5 pages (12/16/20 kB)");
    }

    #[test]
    fn kib_convention() {
        assert_eq!(kib(57, 4096), "228");
        assert_eq!(kib(1, 256), "0.25");
        assert_eq!(kib(3, 512), "1.5");
    }

    #[test]
    fn summary_matches_reported_block() {
        let s = Summary {
            stream: Stream::Insn,
            avg_pages: 2.1,
            peak_pages: 40,
            total_pages: 57,
            page_size: 4096,
        };
        assert_eq!(s.line(), "Insn avg/peak/total: 2.1/40/57 pages (8/160/228 kB)");
        let s = Summary {
            stream: Stream::Data,
            avg_pages: 348.5,
            peak_pages: 534,
            total_pages: 1098,
            page_size: 4096,
        };
        assert_eq!(s.line(), "Data avg/peak/total: 348.5/534/1098 pages (1394/2136/4392 kB)");
    }

    #[test]
    fn hot_page_order() {
        let mut table = PageTable::default();
        assert!(hot_pages(&table, 3, &LabelMap::default(), &HashMap::new()).is_empty());
        let (a, b, c) = (0x10u64, 0x20u64, 0x30u64);
        for (page, n) in [(c, 5), (a, 5), (b, 9)] {
            for _ in 0..n {
                record_access(&mut table, 12, page << 12, 1, 1, Some(1));
            }
        }
        let mut labels = LabelMap::default();
        labels.insert(b, "touch_pages (pageramp.c:38)");
        let stacks = HashMap::from([(1, vec!["main.c:3".to_string()])]);
        let hot = hot_pages(&table, 3, &labels, &stacks);
        let order: Vec<_> = hot.iter().map(|e| (e.page, e.count)).collect();
        assert_eq!(order, vec![(b, 9), (a, 5), (c, 5)]);
        assert_eq!(hot[0].info.as_deref(), Some("touch_pages (pageramp.c:38)"));
        assert_eq!(hot[1].info.as_deref(), Some("main.c:3"));
        assert_eq!(hot_pages(&table, 1, &labels, &stacks).len(), 1);
    }

    #[test]
    fn label_map_parse() {
        let m = LabelMap::parse("# labels\n0400 touch_pages (pageramp.c:38)\n0x4D08 __vsyslog_chk\n".as_bytes()).unwrap();
        assert_eq!(m.get(0x400), Some("touch_pages (pageramp.c:38)"));
        assert_eq!(m.get(0x4d08), Some("__vsyslog_chk"));
        assert!(LabelMap::parse("zz nope\n".as_bytes()).is_err());
    }

    #[test]
    fn csv_header_only_for_no_samples() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,WSS_insn,WSS_data,peak_insn,peak_data,annotation\n");
    }

    #[test]
    fn csv_round_trip() {
        let mut s = vec![sample(10, 3), sample(20, 7)];
        s[1].peak_data = true;
        s[1].annotation = Some(0);
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().nth(2), Some("20,7,7,0,1,0"));
        assert_eq!(read_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<Format>().unwrap(), Format::Csv);
        assert!("png".parse::<Format>().is_err());
    }
}
