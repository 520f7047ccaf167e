//! Deterministic synthetic traces.

use thiserror::Error;

use crate::trace::{AccessKind, CallStackDecl, Record, TraceEvent};

/// Touch-loop instructions live on this page, claim/release code on the next.
pub const CODE_BASE: u64 = 0x0040_0000;
const CODE_SLOTS: u64 = 16;
const INSN_SIZE: u32 = 4;

pub const TOUCH_STACK: u32 = 1;
pub const CLAIM_STACK: u32 = 2;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("page size must be a power of two >= 256, got {0}")]
    PageSize(u64),
    #[error("workload does not fit in the address space")]
    Overflow,
}

fn nonzero(v: u64, name: &'static str) -> Result<(), WorkloadError> {
    if v == 0 {
        Err(WorkloadError::Zero(name))
    } else {
        Ok(())
    }
}

fn check_page_size(page_size: u64) -> Result<(), WorkloadError> {
    if page_size.is_power_of_two() && page_size >= 256 {
        Ok(())
    } else {
        Err(WorkloadError::PageSize(page_size))
    }
}

/// Sawtooth workload: claim pages one by one up to `max_pages`, release them
/// again, and after every claim/release step store one byte to every
/// `stride`-th claimed page.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PagerampConfig {
    pub max_pages: u64,
    pub stride: u64,
    pub cycles: u64,
    /// Instructions executed per page touch.
    pub insns_per_touch: u64,
    /// Instructions executed by each claim or release step itself.
    pub step_insns: u64,
    pub base_address: u64,
    pub page_size: u64,
}

impl Default for PagerampConfig {
    fn default() -> Self {
        Self {
            max_pages: 1024,
            stride: 2,
            cycles: 10,
            insns_per_touch: 1,
            step_insns: 16,
            base_address: 0x1000_0000,
            page_size: 4096,
        }
    }
}

impl PagerampConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        nonzero(self.max_pages, "max_pages")?;
        nonzero(self.stride, "stride")?;
        nonzero(self.cycles, "cycles")?;
        nonzero(self.insns_per_touch, "insns_per_touch")?;
        check_page_size(self.page_size)?;
        self.max_pages
            .checked_mul(self.page_size)
            .and_then(|len| self.base_address.checked_add(len))
            .ok_or(WorkloadError::Overflow)?;
        Ok(())
    }

    /// Instructions in the touch pass at the top of the ramp.
    pub fn full_pass_insns(&self) -> u64 {
        self.max_pages.div_ceil(self.stride) * self.insns_per_touch
    }

    /// Claimed-page counts after each step of one cycle: 1..=max, then max-1..=0.
    pub fn claim_levels(&self) -> impl Iterator<Item = u64> + Clone {
        (1..=self.max_pages).chain((0..self.max_pages).rev())
    }
}

fn insn(addr: u64, stack: u32) -> Record {
    let mut ev = TraceEvent::new(AccessKind::InsnFetch, addr, INSN_SIZE);
    ev.stack_ref = Some(stack);
    Record::Event(ev)
}

fn store(addr: u64, stack: u32) -> Record {
    let mut ev = TraceEvent::new(AccessKind::DataStore, addr, 1);
    ev.stack_ref = Some(stack);
    Record::Event(ev)
}

fn code_addr(page_size: u64, region: u64, slot: u64) -> u64 {
    CODE_BASE + region * page_size + (slot % CODE_SLOTS) * u64::from(INSN_SIZE)
}

/// Emits the pageramp trace lazily. Two stack declarations come first.
pub fn gen_pageramp(config: PagerampConfig) -> Result<impl Iterator<Item = Record>, WorkloadError> {
    config.validate()?;
    let cfg = config;
    let header = [
        Record::Stack(CallStackDecl {
            id: TOUCH_STACK,
            frames: vec!["touch_pages".into(), "main".into()],
        }),
        Record::Stack(CallStackDecl {
            id: CLAIM_STACK,
            frames: vec!["claim_pages".into(), "main".into()],
        }),
    ];
    let steps = (0..cfg.cycles).flat_map(move |_| cfg.claim_levels());
    let body = steps.flat_map(move |claimed| {
        let step = (0..cfg.step_insns).map(move |i| insn(code_addr(cfg.page_size, 1, i), CLAIM_STACK));
        let pass = (0..claimed).step_by(cfg.stride as usize).flat_map(move |p| {
            (0..cfg.insns_per_touch)
                .map(move |i| insn(code_addr(cfg.page_size, 0, i), TOUCH_STACK))
                .chain(std::iter::once(store(cfg.base_address + p * cfg.page_size, TOUCH_STACK)))
        });
        step.chain(pass)
    });
    Ok(header.into_iter().chain(body))
}

/// Layout of the step fixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepConfig {
    /// Instructions per sampling interval; analyze with the same `every`.
    pub every: u64,
    /// Number of elevated intervals, each preceded by `flat_samples` flat ones.
    pub repeats: u64,
    pub base_address: u64,
    pub page_size: u64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            every: 1000,
            repeats: 1,
            base_address: 0x1000_0000,
            page_size: 4096,
        }
    }
}

/// Flat working set of `flat_pages` per interval with `repeats` single-interval
/// bumps to `flat_pages + step_pages`, `flat_samples` flat intervals before
/// each bump and after the last one.
///
/// Each interval is `every` instructions on one code page; all of the
/// interval's data stores follow its first instruction, so with
/// `tau == every` the sample at the end of the interval sees exactly that
/// interval's pages.
pub fn gen_step(
    flat_pages: u64,
    step_pages: u64,
    flat_samples: u64,
    config: StepConfig,
) -> Result<impl Iterator<Item = Record>, WorkloadError> {
    nonzero(flat_pages, "flat_pages")?;
    nonzero(flat_samples, "flat_samples")?;
    nonzero(config.every, "every")?;
    check_page_size(config.page_size)?;
    (flat_pages + step_pages)
        .checked_mul(config.page_size)
        .and_then(|len| config.base_address.checked_add(len))
        .ok_or(WorkloadError::Overflow)?;

    let cfg = config;
    let per_cycle = flat_samples + 1;
    let intervals = cfg.repeats * per_cycle + flat_samples;
    let body = (0..intervals).flat_map(move |k| {
        let elevated = k % per_cycle == flat_samples && k < cfg.repeats * per_cycle;
        let pages = if elevated { flat_pages + step_pages } else { flat_pages };
        let first = std::iter::once(Record::Event(TraceEvent::new(
            AccessKind::InsnFetch,
            CODE_BASE,
            INSN_SIZE,
        )));
        let stores = (0..pages).map(move |p| {
            Record::Event(TraceEvent::new(
                AccessKind::DataStore,
                cfg.base_address + p * cfg.page_size,
                1,
            ))
        });
        let rest = (1..cfg.every).map(move |i| {
            Record::Event(TraceEvent::new(
                AccessKind::InsnFetch,
                code_addr(cfg.page_size, 0, i),
                INSN_SIZE,
            ))
        });
        first.chain(stores).chain(rest)
    });
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_pages(recs: &[Record], cfg: &PagerampConfig) -> Vec<Vec<u64>> {
        // group data stores into touch passes separated by claim steps
        let mut passes = Vec::new();
        let mut cur: Option<Vec<u64>> = None;
        for r in recs {
            let Record::Event(ev) = r else { continue };
            match (ev.kind, ev.stack_ref) {
                (AccessKind::InsnFetch, Some(CLAIM_STACK)) => {
                    if let Some(p) = cur.take() {
                        passes.push(p);
                    }
                }
                (AccessKind::DataStore, _) => cur
                    .get_or_insert_with(Vec::new)
                    .push((ev.address - cfg.base_address) / cfg.page_size),
                _ => {}
            }
        }
        passes.extend(cur);
        passes
    }

    #[test]
    fn tiny_ramp_golden() {
        let cfg = PagerampConfig {
            max_pages: 4,
            stride: 2,
            cycles: 1,
            ..Default::default()
        };
        let recs: Vec<_> = gen_pageramp(cfg).unwrap().collect();
        // levels 1,2,3,4,3,2,1,0; the last pass is empty
        assert_eq!(
            store_pages(&recs, &cfg),
            vec![vec![0], vec![0], vec![0, 2], vec![0, 2], vec![0, 2], vec![0], vec![0]]
        );
        let insns = recs
            .iter()
            .filter(|r| matches!(r, Record::Event(e) if e.kind.is_insn()))
            .count();
        assert_eq!(insns, 8 * 16 + 10);
    }

    #[test]
    fn full_ramp_half_of_pages_touched() {
        let cfg = PagerampConfig::default();
        let max_pass = gen_pageramp(PagerampConfig { cycles: 1, ..cfg })
            .unwrap()
            .filter(|r| matches!(r, Record::Event(e) if e.kind == AccessKind::DataStore))
            .count();
        // sum over levels of ceil(level / 2)
        let expected: u64 = cfg.claim_levels().map(|l| l.div_ceil(2)).sum();
        assert_eq!(max_pass as u64, expected);
        assert_eq!(cfg.full_pass_insns(), 512);
    }

    #[test]
    fn deterministic() {
        let cfg = PagerampConfig {
            max_pages: 32,
            cycles: 2,
            ..Default::default()
        };
        let a: Vec<_> = gen_pageramp(cfg).unwrap().collect();
        let b: Vec<_> = gen_pageramp(cfg).unwrap().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            PagerampConfig { cycles: 0, ..Default::default() },
            PagerampConfig { max_pages: 0, ..Default::default() },
            PagerampConfig { stride: 0, ..Default::default() },
            PagerampConfig { insns_per_touch: 0, ..Default::default() },
            PagerampConfig { page_size: 128, ..Default::default() },
            PagerampConfig { page_size: 3000, ..Default::default() },
            PagerampConfig { base_address: u64::MAX - 10, ..Default::default() },
        ];
        for cfg in bad {
            assert!(gen_pageramp(cfg).is_err(), "{cfg:?}");
        }
        assert!(gen_step(0, 1, 1, StepConfig::default()).is_err());
        assert!(gen_step(1, 1, 0, StepConfig::default()).is_err());
    }

    #[test]
    fn step_layout() {
        let cfg = StepConfig { every: 5, ..Default::default() };
        let recs: Vec<_> = gen_step(2, 3, 2, cfg).unwrap().collect();
        let insns = recs
            .iter()
            .filter(|r| matches!(r, Record::Event(e) if e.kind.is_insn()))
            .count();
        assert_eq!(insns, 5 * 5);
        assert_eq!(recs.len(), 25 + 2 + 2 + 5 + 2 + 2);
    }
}
