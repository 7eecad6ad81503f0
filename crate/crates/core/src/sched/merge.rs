//! Merging overlapping block outputs into one sorted event set.

use std::collections::BTreeMap;

use super::TaskSpec;
use crate::event::{sort_events, DetectionEvent};
use crate::time::Timestamp;

/// Events produced by one completed task.
#[derive(Debug, Clone)]
pub struct TaskEvents {
    pub task: TaskSpec,
    pub events: Vec<DetectionEvent>,
}

/// Minimum time-interval IoU for two detections from neighbouring blocks to
/// count as the same event.
pub const MATCH_IOU: f64 = 0.5;

struct Candidate {
    event: DetectionEvent,
    task: usize,
    in_core: bool,
    block_start: Timestamp,
}

impl Candidate {
    /// Lower wins: a detection inside its own task's core beats one found in
    /// a margin, then the earlier block wins.
    fn rank(&self) -> (bool, Timestamp, usize) {
        (!self.in_core, self.block_start, self.task)
    }
}

/// Merge per-task outputs. Within each (project, channel, algorithm) stream,
/// two detections from different tasks whose time intervals overlap with IoU
/// above [`MATCH_IOU`] are one event, and only the better-ranked survives.
/// Output is sorted by `(t0, channel, algorithm_id, event_id)` and does not
/// depend on the order `results` arrive in.
pub fn merge_dedupe(mut results: Vec<TaskEvents>) -> Vec<DetectionEvent> {
    results.sort_by(|a, b| {
        (a.task.stream_key(), a.task.core.start, &a.task.task_id).cmp(&(b.task.stream_key(), b.task.core.start, &b.task.task_id))
    });
    let mut streams: BTreeMap<(String, u16, String), Vec<Candidate>> = BTreeMap::new();
    for (k, r) in results.into_iter().enumerate() {
        let key = (r.task.project.clone(), r.task.channel, r.task.algorithm_id.clone());
        let stream = streams.entry(key).or_default();
        for event in r.events {
            stream.push(Candidate { in_core: r.task.core.contains(event.t0), task: k, block_start: r.task.core.start, event });
        }
    }
    let mut out = Vec::new();
    for (_, mut cands) in streams {
        cands.sort_by_key(|a| (a.event.t0, a.task, a.event.event_id));
        let mut dropped = vec![false; cands.len()];
        for i in 0..cands.len() {
            for j in i + 1..cands.len() {
                if cands[j].event.t0 >= cands[i].event.t1 {
                    break;
                }
                if cands[i].task == cands[j].task || cands[i].event.time_iou(&cands[j].event) <= MATCH_IOU {
                    continue;
                }
                let loser = if cands[i].rank() <= cands[j].rank() { j } else { i };
                dropped[loser] = true;
            }
        }
        out.extend(cands.into_iter().zip(dropped).filter(|(_, d)| !d).map(|(c, _)| c.event));
    }
    sort_events(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Bounds;
    use crate::time::Interval;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn at(s: f64) -> Timestamp {
        Timestamp::from_ymd_hms(2013, 1, 1, 0, 0, 0).add_seconds(s)
    }

    fn task(core: (f64, f64), block: (f64, f64)) -> TaskSpec {
        TaskSpec::new("p", "arch", 0, "cra", Interval::new(at(core.0), at(core.1)), Interval::new(at(block.0), at(block.1)))
    }

    fn ev(t0: f64, dur: f64, score: f64) -> DetectionEvent {
        let b = Bounds { t0: at(t0), t1: at(t0 + dur), f_lo: 100.0, f_hi: 200.0 };
        DetectionEvent::new("arch", 0, "cra", b, score, Default::default())
    }

    fn two_blocks() -> (TaskSpec, TaskSpec) {
        (task((0.0, 100.0), (0.0, 110.0)), task((100.0, 200.0), (90.0, 200.0)))
    }

    #[test]
    fn boundary_call_seen_twice_survives_once() {
        let (a, b) = two_blocks();
        // Left block sees it starting in its margin, right block in its core.
        let merged = merge_dedupe(vec![
            TaskEvents { task: a, events: vec![ev(100.2, 1.0, 0.9)] },
            TaskEvents { task: b, events: vec![ev(100.25, 1.0, 0.8)] },
        ]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].score, 0.8, "the copy inside its own core is kept");
    }

    #[test]
    fn straddling_copies_in_both_cores_keep_the_earlier_block() {
        let (a, b) = two_blocks();
        let merged = merge_dedupe(vec![
            TaskEvents { task: b, events: vec![ev(100.01, 1.0, 0.8)] },
            TaskEvents { task: a, events: vec![ev(99.99, 1.0, 0.9)] },
        ]);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].score, 0.9);
    }

    #[test]
    fn disjoint_and_weakly_overlapping_events_are_all_kept() {
        let (a, b) = two_blocks();
        let merged = merge_dedupe(vec![
            TaskEvents { task: a, events: vec![ev(50.0, 1.0, 0.5), ev(104.0, 2.0, 0.5)] },
            TaskEvents { task: b, events: vec![ev(105.5, 2.0, 0.5), ev(10.0 + 140.0, 1.0, 0.5)] },
        ]);
        assert_eq!(merged.len(), 4, "IoU of 0.5/3.5 is not a match");
        assert!(merged.windows(2).all(|w| w[0].order_key() <= w[1].order_key()));
    }

    #[test]
    fn one_stream_is_sorted_identity() {
        let (a, _) = two_blocks();
        let evs = vec![ev(30.0, 1.0, 0.5), ev(10.0, 1.0, 0.5), ev(10.5, 1.0, 0.5)];
        let merged = merge_dedupe(vec![TaskEvents { task: a, events: evs.clone() }]);
        let mut want = evs;
        sort_events(&mut want);
        assert_eq!(merged, want, "overlaps inside one task are never merged");
    }

    proptest! {
        #[test]
        fn arrival_order_does_not_matter(seed in 0u64..1000, n in 1usize..30) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let tasks: Vec<TaskSpec> = (0..4).map(|k| {
                let s = k as f64 * 100.0;
                task((s, s + 100.0), ((s - 10.0).max(0.0), (s + 110.0).min(400.0)))
            }).collect();
            let mut results: Vec<TaskEvents> = tasks.iter().map(|t| TaskEvents { task: t.clone(), events: Vec::new() }).collect();
            for _ in 0..n {
                let t0 = rand::Rng::gen_range(&mut rng, 0.0..398.0);
                let dur = rand::Rng::gen_range(&mut rng, 0.3..2.0);
                for r in results.iter_mut() {
                    let b = r.task.block;
                    if b.contains(at(t0)) && at(t0 + dur) <= b.end {
                        let jitter = rand::Rng::gen_range(&mut rng, -0.05..0.05);
                        r.events.push(ev(t0 + jitter, dur, 0.5));
                    }
                }
            }
            let reference = merge_dedupe(results.clone());
            results.shuffle(&mut rng);
            prop_assert_eq!(merge_dedupe(results), reference);
        }
    }
}
