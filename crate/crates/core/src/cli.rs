//! `wsprof` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::engine::{analyze_stream, AnalysisConfig, AnalysisError};
use crate::peak::PeakParams;
use crate::report::{self, Format, LabelMap};
use crate::trace::{ParseMode, Record, TraceError, TraceReader, TraceWriter};
use crate::workloads::{gen_pageramp, gen_step, PagerampConfig, StepConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "wsprof", version, about = "Working set size analysis of memory access traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic trace
    Gen {
        #[command(subcommand)]
        workload: Workload,
    },
    /// Compute the working set over time of a trace
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Subcommand)]
pub enum Workload {
    /// Sawtooth: claim pages up to a bound, release them, repeat
    Pageramp(PagerampArgs),
    /// Flat working set with single-interval bumps
    Step(StepArgs),
}

#[derive(Debug, Args)]
pub struct PagerampArgs {
    #[arg(long, default_value_t = 1024)]
    pub max_pages: u64,
    #[arg(long, default_value_t = 2)]
    pub stride: u64,
    #[arg(long, default_value_t = 10)]
    pub cycles: u64,
    #[arg(long, default_value_t = 1)]
    pub insns_per_touch: u64,
    #[arg(long, default_value_t = 16)]
    pub step_insns: u64,
    #[arg(long, default_value = "10000000", value_parser = parse_hex_u64)]
    pub base_address: u64,
    #[arg(long, default_value_t = 4096)]
    pub page_size: u64,
    /// Output file (default stdout)
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StepArgs {
    #[arg(long, default_value_t = 10)]
    pub flat: u64,
    #[arg(long, default_value_t = 50)]
    pub step: u64,
    #[arg(long, default_value_t = 20)]
    pub flat_samples: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    /// Instructions per interval
    #[arg(long, default_value_t = 1000)]
    pub every: u64,
    #[arg(long, default_value = "10000000", value_parser = parse_hex_u64)]
    pub base_address: u64,
    #[arg(long, default_value_t = 4096)]
    pub page_size: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace file; stdin when absent or "-"
    pub input: Option<PathBuf>,
    /// Working set window in instructions
    #[arg(long, default_value_t = 100_000)]
    pub tau: u64,
    /// Sampling interval in instructions (default: tau)
    #[arg(long)]
    pub every: Option<u64>,
    #[arg(long, default_value_t = 4096)]
    pub page_size: u64,
    #[arg(long)]
    pub peak_detect: bool,
    #[arg(long, default_value_t = PeakParams::default().g)]
    pub peak_sensitivity: f64,
    #[arg(long, default_value_t = PeakParams::default().alpha)]
    pub peak_alpha: f64,
    #[arg(long, default_value_t = PeakParams::default().phi)]
    pub peak_phi: f64,
    #[arg(long)]
    pub per_thread: bool,
    #[arg(long, default_value_t = 10)]
    pub top_n: usize,
    /// text, csv, json or svg
    #[arg(long, default_value = "text")]
    pub format: Format,
    /// Output file (default stdout)
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Additionally write the sample series as CSV here
    #[arg(long)]
    pub csv_out: Option<PathBuf>,
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    #[arg(long)]
    pub svg_out: Option<PathBuf>,
    /// Page label map, lines of "<hexpage> <label>"
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Abort on the first malformed line (default)
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Skip malformed lines with a warning
    #[arg(long)]
    pub lenient: bool,
}

fn parse_hex_u64(s: &str) -> Result<u64, String> {
    let digits = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(digits, 16).map_err(|e| e.to_string())
}

fn open_output<'a>(path: Option<&PathBuf>, stdout: &'a mut dyn Write) -> io::Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) if p.as_os_str() != "-" => Box::new(BufWriter::new(File::create(p)?)),
        _ => Box::new(BufWriter::new(stdout)),
    })
}

fn write_records<I: Iterator<Item = Record>>(records: I, out: &mut dyn Write) -> Result<(), TraceError> {
    let mut w = TraceWriter::new(out);
    for r in records {
        w.write(&r)?;
    }
    w.into_inner().flush()?;
    Ok(())
}

fn run_gen(workload: Workload, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let (records, output): (Box<dyn Iterator<Item = Record>>, _) = match workload {
        Workload::Pageramp(a) => {
            let cfg = PagerampConfig {
                max_pages: a.max_pages,
                stride: a.stride,
                cycles: a.cycles,
                insns_per_touch: a.insns_per_touch,
                step_insns: a.step_insns,
                base_address: a.base_address,
                page_size: a.page_size,
            };
            match gen_pageramp(cfg) {
                Ok(it) => (Box::new(it), a.output),
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    return EXIT_USAGE;
                }
            }
        }
        Workload::Step(a) => {
            let cfg = StepConfig {
                every: a.every,
                repeats: a.repeats,
                base_address: a.base_address,
                page_size: a.page_size,
            };
            match gen_step(a.flat, a.step, a.flat_samples, cfg) {
                Ok(it) => (Box::new(it), a.output),
                Err(e) => {
                    let _ = writeln!(stderr, "error: {e}");
                    return EXIT_USAGE;
                }
            }
        }
    };
    let res = open_output(output.as_ref(), stdout)
        .map_err(TraceError::from)
        .and_then(|mut out| write_records(records, &mut out));
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_INPUT
        }
    }
}

fn run_analyze(args: AnalyzeArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let labels = match &args.labels {
        None => LabelMap::default(),
        Some(p) => match File::open(p).map_err(report::ReportError::from).and_then(|f| LabelMap::parse(BufReader::new(f))) {
            Ok(m) => m,
            Err(e) => {
                let _ = writeln!(stderr, "error: {}: {e}", p.display());
                return EXIT_INPUT;
            }
        },
    };
    let config = AnalysisConfig {
        tau: args.tau,
        every: args.every.unwrap_or(args.tau),
        page_size: args.page_size,
        per_thread: args.per_thread,
        peak: args.peak_detect.then_some(PeakParams {
            alpha: args.peak_alpha,
            g: args.peak_sensitivity,
            phi: args.peak_phi,
            ..PeakParams::default()
        }),
        top_n: args.top_n,
        labels,
    };
    if let Err(e) = config.validate() {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_USAGE;
    }
    let mode = if args.lenient { ParseMode::Lenient } else { ParseMode::Strict };

    let mut file;
    let input: &mut dyn BufRead = match &args.input {
        Some(p) if p.as_os_str() != "-" => match File::open(p) {
            Ok(f) => {
                file = BufReader::with_capacity(1 << 16, f);
                &mut file
            }
            Err(e) => {
                let _ = writeln!(stderr, "error: {}: {e}", p.display());
                return EXIT_INPUT;
            }
        },
        _ => stdin,
    };
    let mut reader = TraceReader::new(input, mode);
    let result = analyze_stream(reader.by_ref(), config);
    for w in reader.warnings() {
        let _ = writeln!(stderr, "warning: skipped {w}");
    }
    let result = match result {
        Ok(r) => r,
        Err(AnalysisError::Config(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
        Err(AnalysisError::Trace(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_INPUT;
        }
    };

    let mut sinks = vec![(args.output.clone(), args.format)];
    for (path, fmt) in [(&args.csv_out, Format::Csv), (&args.json_out, Format::Json), (&args.svg_out, Format::Svg)] {
        if let Some(p) = path {
            sinks.push((Some(p.clone()), fmt));
        }
    }
    for (path, fmt) in sinks {
        let res = open_output(path.as_ref(), stdout)
            .map_err(report::ReportError::from)
            .and_then(|mut out| {
                report::emit(&result, fmt, &mut out)?;
                out.flush()?;
                Ok(())
            });
        if let Err(e) = res {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_INPUT;
        }
    }
    EXIT_OK
}

/// Runs the command line with explicit streams; returns the exit code.
pub fn run<I, T>(argv: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = stderr.write_all(rendered.as_bytes());
            } else {
                let _ = stdout.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    match cli.command {
        Command::Gen { workload } => run_gen(workload, stdout, stderr),
        Command::Analyze(args) => run_analyze(args, stdin, stdout, stderr),
    }
}
