#![allow(dead_code)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsprof_core::trace::{AccessKind, CallStackDecl, Record, TraceEvent};

/// One page touch as seen by the brute-force recount.
#[derive(Clone, Copy, Debug)]
pub struct Touch {
    pub time: u64,
    pub insn: bool,
    pub thread: u32,
    pub page: u64,
}

/// Expands records into page touches stamped with the instruction count.
/// Written independently of the engine: no page table, no last-access.
pub fn touches(records: &[Record], page_size: u64) -> (Vec<Touch>, u64) {
    let mut now = 0u64;
    let mut out = Vec::new();
    for r in records {
        let Record::Event(ev) = r else { continue };
        let insn = ev.kind == AccessKind::InsnFetch;
        if insn {
            now += 1;
        }
        let lo = ev.address / page_size;
        let end = (ev.address as u128 + ev.size as u128 - 1).min(u64::MAX as u128) as u64;
        let hi = end / page_size;
        for page in lo..=hi {
            out.push(Touch {
                time: now,
                insn,
                thread: ev.thread,
                page,
            });
        }
    }
    (out, now)
}

/// Brute-force samples `(t, wss_insn, wss_data)` at every multiple of `every`.
/// Rescans the touches with time in `(t - tau, t]` for each sample.
pub fn brute_force(
    touches: &[Touch],
    final_count: u64,
    tau: u64,
    every: u64,
    thread: Option<u32>,
) -> Vec<(u64, u64, u64)> {
    let mut out = Vec::new();
    let mut t = every;
    while t <= final_count {
        let lo_time = t.saturating_sub(tau); // exclusive
        let start = if t > tau { touches.partition_point(|x| x.time <= lo_time) } else { 0 };
        let end = touches.partition_point(|x| x.time <= t);
        let mut insn = HashSet::new();
        let mut data = HashSet::new();
        for x in &touches[start..end] {
            if thread.is_some_and(|th| th != x.thread) {
                continue;
            }
            if x.insn {
                insn.insert(x.page);
            } else {
                data.insert(x.page);
            }
        }
        out.push((t, insn.len() as u64, data.len() as u64));
        t += every;
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random trace mixing instruction fetches, page-straddling data accesses,
/// several threads and call-stack contexts.
pub fn random_trace(rng: &mut ChaCha8Rng, n_events: usize, page_size: u64) -> Vec<Record> {
    let n_threads = rng.random_range(1..=4u32);
    let data_pages = rng.random_range(1..=3000u64);
    let code_pages = rng.random_range(1..=50u64);
    let insn_ratio = rng.random_range(0.2..0.9);
    let n_stacks = rng.random_range(0..5u32);

    let mut recs = Vec::with_capacity(n_events + n_stacks as usize);
    for id in 0..n_stacks {
        let depth = rng.random_range(1..4);
        recs.push(Record::Stack(CallStackDecl {
            id,
            frames: (0..depth).map(|d| format!("f{id}.c:{d}")).collect(),
        }));
    }
    let mut stack_of: Vec<Option<u32>> = vec![None; n_threads as usize];
    for _ in 0..n_events {
        let thread = rng.random_range(0..n_threads);
        if n_stacks > 0 && rng.random_bool(0.01) {
            stack_of[thread as usize] = Some(rng.random_range(0..n_stacks));
        }
        let insn = rng.random_bool(insn_ratio);
        let (kind, address, size) = if insn {
            let page = rng.random_range(0..code_pages);
            (
                AccessKind::InsnFetch,
                0x40_0000 + page * page_size + rng.random_range(0..page_size),
                rng.random_range(1..=15u32),
            )
        } else {
            let kind = match rng.random_range(0..3) {
                0 => AccessKind::DataLoad,
                1 => AccessKind::DataStore,
                _ => AccessKind::DataModify,
            };
            let page = rng.random_range(0..data_pages);
            let size = if rng.random_bool(0.05) {
                rng.random_range(1..=3 * page_size as u32)
            } else {
                *[1u32, 2, 4, 8, 16, 32].get(rng.random_range(0..6)).unwrap()
            };
            (kind, 0x1000_0000 + page * page_size + rng.random_range(0..page_size), size)
        };
        recs.push(Record::Event(TraceEvent {
            kind,
            address,
            size,
            thread,
            stack_ref: stack_of[thread as usize],
        }));
    }
    recs
}

/// Scalar reference of the peak detector recurrences, kept apart from the
/// library implementation. Returns `(is_peak, mu, var)` after each sample.
pub fn reference_peaks(series: &[f64], alpha: f64, g: f64, phi: f64, eps: f64) -> Vec<(bool, f64, f64)> {
    let mut out = Vec::with_capacity(series.len());
    let mut state: Option<(f64, f64)> = None;
    for &x in series {
        let Some((mu, var)) = state else {
            state = Some((x, 0.0));
            out.push((false, x, 0.0));
            continue;
        };
        let e = (x - mu).abs();
        let f = if mu > eps { var / mu } else { 0.0 };
        let c = 1.0 - (-f / 2.0).exp();
        let big_e = c * g * var + (1.0 - c) * g * mu;
        let peak = e > big_e;
        let xf = if peak { phi * x + (1.0 - phi) * mu } else { x };
        let new_mu = alpha * xf + (1.0 - alpha) * mu;
        let new_var = alpha * (xf - mu) * (xf - mu) + (1.0 - alpha) * var;
        state = Some((new_mu, new_var));
        out.push((peak, new_mu, new_var));
    }
    out
}
