//! Task and application model, Standard Task Graph (STG) parsing and the
//! uniform random independent-task generator.
//!
//! STG files list one task per line as
//! `index processing_time predecessor_count predecessor...`, preceded by a
//! header line holding the task count. Published suite files count only the
//! real tasks in the header and add a zero-time entry node and exit node, so
//! the parser accepts either `count` or `count + 2` task lines.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TaskId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    /// Simulated seconds. Zero marks an STG dummy entry/exit node.
    pub duration: f64,
    pub predecessors: BTreeSet<TaskId>,
}

impl Task {
    /// Dummy nodes are kept for precedence but never executed or counted.
    pub fn is_dummy(&self) -> bool {
        self.duration == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppKind {
    Dag,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Application {
    pub name: String,
    pub kind: AppKind,
    /// Indexed by task id: `tasks[i].id == i`.
    pub tasks: Vec<Task>,
}

#[derive(Debug, Error, PartialEq)]
pub enum StgError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate task id {id}")]
    DuplicateId { line: usize, id: TaskId },
    #[error("line {line}: task {task} lists predecessor {pred}, which does not exist")]
    DanglingPredecessor {
        line: usize,
        task: TaskId,
        pred: TaskId,
    },
    #[error("line {line}: task {task} is part of a precedence cycle")]
    Cycle { line: usize, task: TaskId },
    #[error("file declares {declared} tasks but lists {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("file contains no task count header")]
    Empty,
}

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("task count must be at least 1")]
    ZeroCount,
    #[error("invalid duration range [{0}, {1}]")]
    BadRange(f64, f64),
}

impl Application {
    /// Tasks that are actually executed (non-dummy).
    pub fn real_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| !t.is_dummy())
    }

    pub fn real_task_count(&self) -> usize {
        self.real_tasks().count()
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id as usize]
    }

    /// Kahn's algorithm; ties resolved by ascending id. `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<TaskId>> {
        let n = self.tasks.len();
        let mut indegree: Vec<usize> = self.tasks.iter().map(|t| t.predecessors.len()).collect();
        let mut successors: Vec<Vec<TaskId>> = vec![Vec::new(); n];
        for t in &self.tasks {
            for &p in &t.predecessors {
                successors[p as usize].push(t.id);
            }
        }
        let mut ready: BTreeSet<TaskId> = (0..n as TaskId)
            .filter(|&i| indegree[i as usize] == 0)
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(next) = ready.pop_first() {
            order.push(next);
            for &s in &successors[next as usize] {
                indegree[s as usize] -= 1;
                if indegree[s as usize] == 0 {
                    ready.insert(s);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Writes the application back in STG form (header = number of lines).
    pub fn to_stg(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.name);
        let _ = writeln!(out, "{}", self.tasks.len());
        for t in &self.tasks {
            let _ = write!(out, "{} {} {}", t.id, t.duration, t.predecessors.len());
            for p in &t.predecessors {
                let _ = write!(out, " {p}");
            }
            out.push('\n');
        }
        out
    }

    pub fn total_work(&self) -> f64 {
        self.real_tasks().map(|t| t.duration).sum()
    }
}

struct ParsedLine {
    line: usize,
    id: TaskId,
    duration: f64,
    preds: Vec<TaskId>,
}

fn parse_field<T: std::str::FromStr>(
    tok: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, StgError> {
    let tok = tok.ok_or_else(|| StgError::Malformed {
        line,
        reason: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| StgError::Malformed {
        line,
        reason: format!("bad {what} `{tok}`"),
    })
}

/// Parses STG text into a `Dag` application named `name`.
pub fn parse_stg_named(name: &str, text: &str) -> Result<Application, StgError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or(StgError::Empty)?;
    let declared: usize = parse_field(header.split_whitespace().next(), header_line, "task count")?;

    let mut parsed = Vec::new();
    for (line, text) in lines {
        let mut toks = text.split_whitespace();
        let id: TaskId = parse_field(toks.next(), line, "task index")?;
        let duration: f64 = parse_field(toks.next(), line, "processing time")?;
        if !duration.is_finite() || duration < 0.0 {
            return Err(StgError::Malformed {
                line,
                reason: format!("negative processing time {duration}"),
            });
        }
        let count: usize = parse_field(toks.next(), line, "predecessor count")?;
        let preds = (0..count)
            .map(|_| parse_field(toks.next(), line, "predecessor"))
            .collect::<Result<Vec<TaskId>, _>>()?;
        if toks.next().is_some() {
            return Err(StgError::Malformed {
                line,
                reason: "more predecessors than declared".into(),
            });
        }
        parsed.push(ParsedLine {
            line,
            id,
            duration,
            preds,
        });
    }

    if parsed.len() != declared && parsed.len() != declared + 2 {
        return Err(StgError::CountMismatch {
            declared,
            found: parsed.len(),
        });
    }

    let n = parsed.len();
    let mut slots: Vec<Option<Task>> = vec![None; n];
    let mut line_of = vec![0usize; n];
    for p in &parsed {
        let idx = p.id as usize;
        if idx >= n {
            return Err(StgError::Malformed {
                line: p.line,
                reason: format!("task index {} out of range 0..{n}", p.id),
            });
        }
        if slots[idx].is_some() {
            return Err(StgError::DuplicateId {
                line: p.line,
                id: p.id,
            });
        }
        line_of[idx] = p.line;
        slots[idx] = Some(Task {
            id: p.id,
            duration: p.duration,
            predecessors: BTreeSet::new(),
        });
    }
    for p in &parsed {
        for &pred in &p.preds {
            if pred as usize >= n || slots[pred as usize].is_none() {
                return Err(StgError::DanglingPredecessor {
                    line: p.line,
                    task: p.id,
                    pred,
                });
            }
        }
        if let Some(t) = slots[p.id as usize].as_mut() {
            t.predecessors.extend(p.preds.iter().copied());
        }
    }
    let tasks: Vec<Task> = slots
        .into_iter()
        .map(|t| t.expect("every slot filled"))
        .collect();
    let app = Application {
        name: name.to_string(),
        kind: AppKind::Dag,
        tasks,
    };

    if app.topological_order().is_none() {
        let task = first_cycle_member(&app);
        return Err(StgError::Cycle {
            line: line_of[task as usize],
            task,
        });
    }
    Ok(app)
}

pub fn parse_stg(text: &str) -> Result<Application, StgError> {
    parse_stg_named("stg", text)
}

// Lowest id that can reach itself through the predecessor relation.
fn first_cycle_member(app: &Application) -> TaskId {
    for start in &app.tasks {
        let mut stack: Vec<TaskId> = start.predecessors.iter().copied().collect();
        let mut seen = BTreeSet::new();
        while let Some(t) = stack.pop() {
            if t == start.id {
                return start.id;
            }
            if seen.insert(t) {
                stack.extend(app.task(t).predecessors.iter().copied());
            }
        }
    }
    0
}

/// Independent tasks with durations uniform in `[min, max]`.
pub fn generate_random_app(
    count: usize,
    duration_range: (f64, f64),
    seed: u64,
) -> Result<Application, GenerateError> {
    let (min, max) = duration_range;
    if count == 0 {
        return Err(GenerateError::ZeroCount);
    }
    if !(min.is_finite() && max.is_finite()) || min <= 0.0 || min > max {
        return Err(GenerateError::BadRange(min, max));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = (0..count as TaskId)
        .map(|id| {
            let duration = if min == max {
                min
            } else {
                rng.gen_range(min..=max)
            };
            Task {
                id,
                duration,
                predecessors: BTreeSet::new(),
            }
        })
        .collect();
    Ok(Application {
        name: "random".into(),
        kind: AppKind::Independent,
        tasks,
    })
}
