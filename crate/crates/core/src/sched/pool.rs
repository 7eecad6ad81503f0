//! Pull-based worker pool over a shared task queue.
//!
//! Workers take the next task from one queue, so a slow block never holds up
//! idle workers. A task that returns an error or panics goes to the back of
//! the queue until it has been tried `retry_limit + 1` times. Results flow to
//! a single collector over a channel and are merged once every task is done.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{mpsc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::merge::{merge_dedupe, TaskEvents};
use super::runner::DetectorRunner;
use super::{coverage_micros, micros_to_hours, TaskSpec};
use crate::event::DetectionEvent;

/// Why one attempt at a task failed.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct TaskFailure(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTask {
    pub task: TaskSpec,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub workers: usize,
    pub tasks_planned: usize,
    pub tasks_completed: usize,
    pub retries: u32,
    /// Completed tasks per worker, indexed by worker number.
    pub per_worker_tasks: Vec<usize>,
    pub planned_channel_hours: f64,
    /// Σ core lengths of completed tasks.
    pub channel_hours_processed: f64,
    pub core_micros_processed: i64,
    pub wall_seconds: f64,
    /// Channel-hours per wall-clock hour.
    pub throughput: f64,
    pub failed: Vec<FailedTask>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub events: Vec<DetectionEvent>,
    pub stats: RunStats,
}

impl RunOutcome {
    /// 0 when every task completed, 2 when some exhausted their retries.
    pub fn exit_code(&self) -> i32 {
        if self.stats.failed.is_empty() {
            0
        } else {
            2
        }
    }
}

struct Queue {
    tasks: VecDeque<TaskSpec>,
    /// Tasks neither completed nor given up on.
    open: usize,
}

enum Attempt {
    Done(Vec<DetectionEvent>),
    Retry(String),
    GaveUp(String),
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".into()
    }
}

/// Run `exec` over every task on `workers` threads (at least one).
pub fn run_with<F>(tasks: Vec<TaskSpec>, workers: usize, retry_limit: u32, exec: F) -> RunOutcome
where
    F: Fn(&TaskSpec) -> Result<Vec<DetectionEvent>, TaskFailure> + Sync,
{
    let workers = workers.max(1);
    let planned = coverage_micros(&tasks);
    let tasks_planned = tasks.len();
    let queue = Mutex::new(Queue { open: tasks.len(), tasks: tasks.into() });
    let wake = Condvar::new();
    let (tx, rx) = mpsc::channel::<(usize, TaskSpec, Attempt)>();
    let started = Instant::now();

    let mut per_worker_tasks = vec![0usize; workers];
    let mut results = Vec::new();
    let mut failed = Vec::new();
    let mut retries = 0u32;

    std::thread::scope(|scope| {
        for w in 0..workers {
            let tx = tx.clone();
            let (queue, wake, exec) = (&queue, &wake, &exec);
            scope.spawn(move || loop {
                let task = {
                    let mut q = queue.lock().expect("queue lock");
                    loop {
                        if let Some(t) = q.tasks.pop_front() {
                            break Some(t);
                        }
                        if q.open == 0 {
                            break None;
                        }
                        q = wake.wait(q).expect("queue lock");
                    }
                };
                let Some(mut task) = task else {
                    wake.notify_all();
                    return;
                };
                let outcome = catch_unwind(AssertUnwindSafe(|| exec(&task)))
                    .unwrap_or_else(|p| Err(TaskFailure(panic_message(p))));
                let attempt = match outcome {
                    Ok(events) => Attempt::Done(events),
                    Err(e) if task.attempt < retry_limit => Attempt::Retry(e.0),
                    Err(e) => Attempt::GaveUp(e.0),
                };
                {
                    let mut q = queue.lock().expect("queue lock");
                    match &attempt {
                        Attempt::Retry(_) => {
                            let mut again = task.clone();
                            again.attempt += 1;
                            q.tasks.push_back(again);
                        }
                        _ => q.open -= 1,
                    }
                }
                wake.notify_all();
                if let Attempt::GaveUp(_) = attempt {
                    task.attempt += 1;
                }
                if tx.send((w, task, attempt)).is_err() {
                    return;
                }
            });
        }
        drop(tx);
        for (w, task, attempt) in rx {
            match attempt {
                Attempt::Done(events) => {
                    per_worker_tasks[w] += 1;
                    results.push(TaskEvents { task, events });
                }
                Attempt::Retry(e) => {
                    log::warn!("task {} attempt {} failed, retrying: {e}", task.task_id, task.attempt + 1);
                    retries += 1;
                }
                Attempt::GaveUp(error) => {
                    log::error!("task {} failed after {} attempts: {error}", task.task_id, task.attempt);
                    let attempts = task.attempt;
                    failed.push(FailedTask { task, attempts, error });
                }
            }
        }
    });

    let wall_seconds = started.elapsed().as_secs_f64();
    let done: Vec<TaskSpec> = results.iter().map(|r| r.task.clone()).collect();
    let core_micros_processed = coverage_micros(&done);
    let channel_hours_processed = micros_to_hours(core_micros_processed);
    failed.sort_by(|a, b| (a.task.stream_key(), a.task.core.start).cmp(&(b.task.stream_key(), b.task.core.start)));
    let stats = RunStats {
        workers,
        tasks_planned,
        tasks_completed: results.len(),
        retries,
        per_worker_tasks,
        planned_channel_hours: micros_to_hours(planned),
        channel_hours_processed,
        core_micros_processed,
        wall_seconds,
        throughput: if wall_seconds > 0.0 { channel_hours_processed / (wall_seconds / 3600.0) } else { 0.0 },
        failed,
    };
    RunOutcome { events: merge_dedupe(results), stats }
}

/// Run real detectors over the planned tasks.
pub fn run(tasks: Vec<TaskSpec>, workers: usize, retry_limit: u32, runner: &DetectorRunner) -> RunOutcome {
    run_with(tasks, workers, retry_limit, |t| runner.execute(t).map_err(|e| TaskFailure(e.to_string())))
}
