mod common;

use proptest::prelude::*;
use wsprof_core::engine::{run_analysis, AnalysisConfig};
use wsprof_core::report;
use wsprof_core::trace::{read_trace, write_trace, AccessKind, CallStackDecl, ParseMode, Record, TraceEvent};
use wsprof_core::PeakParams;

fn kind() -> impl Strategy<Value = AccessKind> {
    prop_oneof![
        Just(AccessKind::InsnFetch),
        Just(AccessKind::DataLoad),
        Just(AccessKind::DataStore),
        Just(AccessKind::DataModify),
    ]
}

#[derive(Clone, Debug)]
enum Step {
    Event(AccessKind, u64, u32, u32),
    Switch(u32, u32),
    Declare(Vec<String>),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        8 => (kind(), any::<u64>(), 1u32..=u32::MAX, 0u32..4).prop_map(|(k, a, s, t)| Step::Event(k, a, s, t)),
        1 => (0u32..4, 0u32..8).prop_map(|(t, id)| Step::Switch(t, id)),
        1 => prop::collection::vec("[A-Za-z0-9_.:()]{1,12}", 1..4).prop_map(Step::Declare),
    ]
}

/// Valid record sequences: unique stack ids, and a thread never loses its
/// stack context once it has one.
fn records() -> impl Strategy<Value = Vec<Record>> {
    prop::collection::vec(step(), 0..200).prop_map(|steps| {
        let mut stack_of = [None; 4];
        let mut next_id = 0;
        let mut out = Vec::new();
        for s in steps {
            match s {
                Step::Event(kind, address, size, thread) => out.push(Record::Event(TraceEvent {
                    kind,
                    address,
                    size,
                    thread,
                    stack_ref: stack_of[thread as usize],
                })),
                Step::Switch(t, id) => stack_of[t as usize] = Some(id),
                Step::Declare(frames) => {
                    out.push(Record::Stack(CallStackDecl { id: next_id, frames }));
                    next_id += 1;
                }
            }
        }
        out
    })
}

proptest! {
    #[test]
    fn trace_round_trip(recs in records()) {
        let mut buf = Vec::new();
        write_trace(&recs, &mut buf).unwrap();
        let back = read_trace(&buf[..], ParseMode::Strict).unwrap();
        prop_assert_eq!(back, recs);
    }

    #[test]
    fn json_and_csv_round_trip(seed in any::<u64>(), tau in 1u64..200, every in 1u64..200, per_thread in any::<bool>()) {
        let mut r = common::rng(seed);
        let recs = common::random_trace(&mut r, 2000, 4096);
        let cfg = AnalysisConfig {
            tau,
            every,
            per_thread,
            peak: Some(PeakParams::default()),
            ..Default::default()
        };
        let result = run_analysis(&recs, cfg).unwrap();

        let mut json = Vec::new();
        report::write_json(&result, &mut json).unwrap();
        prop_assert_eq!(&report::read_json(&json[..]).unwrap(), &result);

        let mut csv = Vec::new();
        report::write_csv(&result.combined.samples, &mut csv).unwrap();
        prop_assert_eq!(csv.iter().filter(|&&b| b == b'\n').count(), result.combined.samples.len() + 1);
        prop_assert_eq!(report::read_csv(&csv[..]).unwrap(), result.combined.samples);
    }
}
