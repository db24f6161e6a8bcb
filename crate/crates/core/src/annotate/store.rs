//! Event log plus snapshot.
//!
//! ```text
//! <dir>/events.jsonl    {"seq":1,"event":"created",...}   append-only
//! <dir>/snapshot.json   {"seq":N,"state":{...}}            state after event N
//! ```
//!
//! Mutations serialize through one writer: validate against the current
//! state, append and sync the event, then publish the new state. Readers load
//! the published state without locking. A torn final log line is dropped on
//! open.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::analysis::ReformulationPair;
use crate::digest::stable_u64;
use crate::humaneval::{Choice, Judgment};

const LOG: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotateOptions {
    pub lease_ms: u64,
    /// Events between snapshots.
    pub snapshot_every: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        AnnotateOptions {
            lease_ms: 10 * 60 * 1000,
            snapshot_every: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub created: usize,
    pub open: usize,
    pub assigned: usize,
    pub done: usize,
    pub submissions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created {
        batch_id: String,
        tasks: Vec<AnnotationTask>,
    },
    Assigned {
        task_id: String,
        lease: Lease,
    },
    Submitted {
        record: SubmissionRecord,
    },
    Reviewed {
        review: Review,
    },
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    tasks: Vec<AnnotationTask>,
    batches: Vec<String>,
    submissions: Vec<SubmissionRecord>,
    reviews: BTreeMap<u64, Review>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    #[serde(skip)]
    answered: HashMap<(String, String), usize>,
}

impl State {
    fn reindex(&mut self) {
        self.index = self.tasks.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect();
        self.answered = self
            .submissions
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.task_id.clone(), s.annotator_id.clone()), i))
            .collect();
    }

    fn task(&self, id: &str) -> Result<&AnnotationTask> {
        self.index
            .get(id)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| AnnotateError::UnknownTask(id.to_owned()))
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::Created { batch_id, tasks } => {
                self.batches.push(batch_id);
                for t in tasks {
                    self.index.insert(t.id.clone(), self.tasks.len());
                    self.tasks.push(t);
                }
            }
            Event::Assigned { task_id, lease } => {
                let t = &mut self.tasks[self.index[&task_id]];
                t.status = TaskStatus::Assigned;
                t.lease = Some(lease);
            }
            Event::Submitted { record } => {
                let t = &mut self.tasks[self.index[&record.task_id]];
                t.submissions += 1;
                t.lease = None;
                t.status = if t.submissions >= t.multiplicity {
                    TaskStatus::Done
                } else {
                    TaskStatus::Open
                };
                self.answered.insert(
                    (record.task_id.clone(), record.annotator_id.clone()),
                    self.submissions.len(),
                );
                self.submissions.push(record);
            }
            Event::Reviewed { review } => {
                self.reviews.insert(review.submission_id, review);
            }
        }
    }
}

/// The task as of `now`: an expired lease reads as open.
fn effective(task: &AnnotationTask, now: u64) -> AnnotationTask {
    let mut t = task.clone();
    if t.status == TaskStatus::Assigned && t.lease.as_ref().is_none_or(|l| l.deadline_ms <= now) {
        t.status = TaskStatus::Open;
        t.lease = None;
    }
    t
}

struct Writer {
    log: File,
    seq: u64,
    since_snapshot: usize,
}

pub struct AnnotationStore {
    dir: PathBuf,
    opts: AnnotateOptions,
    clock: Arc<dyn Clock>,
    state: ArcSwap<State>,
    writer: Mutex<Writer>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> AnnotateError + '_ {
    move |source| AnnotateError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: State,
}

fn validate_item(kind: TaskKind, item: &TaskItem) -> Result<()> {
    let bad = |m: String| Err(AnnotateError::Malformed(m));
    if item.id.trim().is_empty() {
        return bad("item id is empty".into());
    }
    if item.image_uri.trim().is_empty() {
        return bad(format!("item `{}` has no image_uri", item.id));
    }
    if item.payload.kind() != kind {
        return bad(format!("item `{}` is not a {kind:?} item", item.id));
    }
    match &item.payload {
        Payload::Reformulation { caption, language } => {
            if caption.trim().is_empty() {
                return bad(format!("item `{}` has an empty caption", item.id));
            }
            if !crate::corpus::is_valid_language(language) {
                return bad(format!("item `{}` has invalid language `{language}`", item.id));
            }
        }
        Payload::Comparison { axes, .. } => {
            if axes.is_empty() {
                return bad(format!("item `{}` has no axes", item.id));
            }
            if axes.iter().collect::<HashSet<_>>().len() != axes.len() {
                return bad(format!("item `{}` repeats an axis", item.id));
            }
        }
    }
    Ok(())
}

fn validate_body(task: &AnnotationTask, body: &SubmissionBody) -> Result<()> {
    match (&task.payload, body) {
        (Payload::Reformulation { .. }, SubmissionBody::Reformulation { text }) => {
            if text.trim().is_empty() {
                return Err(AnnotateError::Malformed("reformulated text is empty".into()));
            }
        }
        (Payload::Comparison { axes, .. }, SubmissionBody::Comparison { choices }) => {
            let want: HashSet<_> = axes.iter().collect();
            let got: HashSet<_> = choices.keys().collect();
            if want != got {
                return Err(AnnotateError::Malformed(format!(
                    "choices must cover exactly the axes of task `{}`",
                    task.id
                )));
            }
        }
        _ => {
            return Err(AnnotateError::Malformed(format!(
                "body does not match the kind of task `{}`",
                task.id
            )))
        }
    }
    Ok(())
}

fn derandomize(shown: Shown, left: Side) -> Choice {
    match (shown, left) {
        (Shown::Tie, _) => Choice::Tie,
        (Shown::Left, Side::A) | (Shown::Right, Side::B) => Choice::A,
        (Shown::Left, Side::B) | (Shown::Right, Side::A) => Choice::B,
    }
}

impl AnnotationStore {
    pub fn open(dir: impl Into<PathBuf>, opts: AnnotateOptions) -> Result<Self> {
        Self::open_with_clock(dir, opts, Arc::new(SystemClock))
    }

    pub fn open_with_clock(dir: impl Into<PathBuf>, opts: AnnotateOptions, clock: Arc<dyn Clock>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let snap_path = dir.join(SNAPSHOT);
        let (mut seq, mut state) = match fs::read_to_string(&snap_path) {
            Ok(text) => {
                let snap: Snapshot = serde_json::from_str(&text).map_err(|e| AnnotateError::Corrupt {
                    path: snap_path.clone(),
                    message: e.to_string(),
                })?;
                (snap.seq, snap.state)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (0, State::default()),
            Err(e) => return Err(io(&snap_path)(e)),
        };
        state.reindex();

        let log_path = dir.join(LOG);
        let text = match fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io(&log_path)(e)),
        };
        let mut good = 0usize;
        let mut rest = &text[..];
        while !rest.is_empty() {
            let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
                log::warn!("dropping torn final line of {}", log_path.display());
                break;
            };
            let corrupt = |message: String| AnnotateError::Corrupt {
                path: log_path.clone(),
                message,
            };
            let line: LogLine = match serde_json::from_slice(&rest[..nl]) {
                Ok(l) => l,
                Err(e) if nl + 1 == rest.len() => {
                    log::warn!("dropping unreadable final line of {}: {e}", log_path.display());
                    break;
                }
                Err(e) => return Err(corrupt(format!("byte {good}: {e}"))),
            };
            if line.seq > seq {
                if line.seq != seq + 1 {
                    return Err(corrupt(format!("event {} follows {seq}", line.seq)));
                }
                state.apply(line.event);
                seq = line.seq;
            }
            good += nl + 1;
            rest = &rest[nl + 1..];
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io(&log_path))?;
        if good < text.len() {
            log.set_len(good as u64).map_err(io(&log_path))?;
        }
        Ok(AnnotationStore {
            dir,
            opts,
            clock,
            state: ArcSwap::from_pointee(state),
            writer: Mutex::new(Writer {
                log,
                seq,
                since_snapshot: 0,
            }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn options(&self) -> AnnotateOptions {
        self.opts
    }

    fn mutate<R>(&self, f: impl FnOnce(&State, u64) -> Result<(Option<Event>, R)>) -> Result<R> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.state.load_full();
        let now = self.clock.now_ms();
        let (event, out) = f(&current, now)?;
        let Some(event) = event else {
            return Ok(out);
        };
        let line = LogLine { seq: w.seq + 1, event };
        let mut bytes = serde_json::to_vec(&line).expect("event serializes");
        bytes.push(b'\n');
        let log_path = self.dir.join(LOG);
        w.log.write_all(&bytes).map_err(io(&log_path))?;
        w.log.sync_data().map_err(io(&log_path))?;
        w.seq += 1;
        let mut next = (*current).clone();
        next.apply(line.event);
        let next = Arc::new(next);
        self.state.store(next.clone());
        w.since_snapshot += 1;
        if w.since_snapshot >= self.opts.snapshot_every {
            self.write_snapshot(w.seq, &next)?;
            w.since_snapshot = 0;
        }
        Ok(out)
    }

    fn write_snapshot(&self, seq: u64, state: &State) -> Result<()> {
        let path = self.dir.join(SNAPSHOT);
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        let bytes = serde_json::to_vec(&serde_json::json!({ "seq": seq, "state": state })).expect("state serializes");
        let mut f = File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(&bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))
    }

    /// Creates one open task per item, all in one batch. Returns the batch id
    /// and the task ids.
    pub fn create_tasks(
        &self,
        kind: TaskKind,
        items: &[TaskItem],
        batch: Option<&str>,
        multiplicity: usize,
    ) -> Result<(String, Vec<String>)> {
        if items.is_empty() {
            return Err(AnnotateError::Malformed("no items".into()));
        }
        if multiplicity == 0 {
            return Err(AnnotateError::Malformed("multiplicity must be at least 1".into()));
        }
        for item in items {
            validate_item(kind, item)?;
        }
        self.mutate(|state, _| {
            let mut seen = HashSet::new();
            for item in items {
                if state.index.contains_key(&item.id) || !seen.insert(item.id.as_str()) {
                    return Err(AnnotateError::DuplicateTask(item.id.clone()));
                }
            }
            let batch_id = match batch {
                Some(b) if state.batches.iter().any(|x| x == b) => {
                    return Err(AnnotateError::Malformed(format!("batch `{b}` already exists")));
                }
                Some(b) if b.trim().is_empty() => return Err(AnnotateError::Malformed("empty batch id".into())),
                Some(b) => b.to_owned(),
                None => (state.batches.len() + 1..)
                    .map(|n| format!("batch-{n:04}"))
                    .find(|b| !state.batches.contains(b))
                    .expect("unbounded range"),
            };
            let tasks: Vec<AnnotationTask> = items
                .iter()
                .map(|item| AnnotationTask {
                    id: item.id.clone(),
                    kind,
                    batch_id: batch_id.clone(),
                    image_id: item.image_id.clone().unwrap_or_else(|| item.id.clone()),
                    image_uri: item.image_uri.clone(),
                    payload: item.payload.clone(),
                    status: TaskStatus::Open,
                    multiplicity,
                    submissions: 0,
                    left: (kind == TaskKind::Comparison).then(|| {
                        if stable_u64(["left".as_bytes(), item.id.as_bytes()]) & 1 == 1 {
                            Side::B
                        } else {
                            Side::A
                        }
                    }),
                    lease: None,
                })
                .collect();
            let ids = tasks.iter().map(|t| t.id.clone()).collect();
            Ok((
                Some(Event::Created {
                    batch_id: batch_id.clone(),
                    tasks,
                }),
                (batch_id, ids),
            ))
        })
    }

    /// Leases the next open task of `kind` the annotator has not answered.
    /// A live lease the annotator already holds is returned again.
    pub fn next_task(&self, annotator_id: &str, kind: TaskKind) -> Result<Option<AnnotationTask>> {
        if annotator_id.trim().is_empty() {
            return Err(AnnotateError::Malformed("annotator id is empty".into()));
        }
        let lease_ms = self.opts.lease_ms;
        self.mutate(|state, now| {
            let mut candidate = None;
            for task in &state.tasks {
                if task.kind != kind {
                    continue;
                }
                let t = effective(task, now);
                if t.lease.as_ref().is_some_and(|l| l.annotator_id == annotator_id) {
                    return Ok((None, Some(t)));
                }
                if candidate.is_none()
                    && t.status == TaskStatus::Open
                    && !state.answered.contains_key(&(t.id.clone(), annotator_id.to_owned()))
                {
                    candidate = Some(t);
                }
            }
            let Some(mut t) = candidate else {
                return Ok((None, None));
            };
            let lease = Lease {
                id: uuid::Uuid::new_v4().simple().to_string(),
                annotator_id: annotator_id.to_owned(),
                deadline_ms: now + lease_ms,
            };
            t.status = TaskStatus::Assigned;
            t.lease = Some(lease.clone());
            Ok((
                Some(Event::Assigned {
                    task_id: t.id.clone(),
                    lease,
                }),
                Some(t),
            ))
        })
    }

    pub fn submit(&self, s: &Submission) -> Result<Ack> {
        self.mutate(|state, now| {
            let task = state.task(&s.task_id)?;
            if let Some(&i) = state.answered.get(&(s.task_id.clone(), s.annotator_id.clone())) {
                let prev = &state.submissions[i];
                if s.lease_id.is_some() && prev.lease_id == s.lease_id && prev.body == s.body {
                    return Ok((
                        None,
                        Ack {
                            submission_id: prev.id,
                            task_status: effective(task, now).status,
                            replay: true,
                        },
                    ));
                }
                return Err(AnnotateError::DoubleSubmission {
                    task: s.task_id.clone(),
                    annotator: s.annotator_id.clone(),
                });
            }
            validate_body(task, &s.body)?;
            let live = effective(task, now)
                .lease
                .filter(|l| l.annotator_id == s.annotator_id && s.lease_id.as_ref().is_none_or(|id| *id == l.id));
            let Some(lease) = live else {
                return Err(AnnotateError::StaleLease(s.task_id.clone()));
            };
            let id = state.submissions.len() as u64 + 1;
            let status = if task.submissions + 1 >= task.multiplicity {
                TaskStatus::Done
            } else {
                TaskStatus::Open
            };
            let record = SubmissionRecord {
                id,
                task_id: s.task_id.clone(),
                annotator_id: s.annotator_id.clone(),
                timestamp_ms: now,
                lease_id: Some(lease.id),
                body: s.body.clone(),
            };
            Ok((
                Some(Event::Submitted { record }),
                Ack {
                    submission_id: id,
                    task_status: status,
                    replay: false,
                },
            ))
        })
    }

    pub fn review(&self, review: Review) -> Result<()> {
        self.mutate(|state, _| {
            if review.submission_id == 0 || review.submission_id as usize > state.submissions.len() {
                return Err(AnnotateError::UnknownSubmission(review.submission_id));
            }
            Ok((Some(Event::Reviewed { review }), ()))
        })
    }

    pub fn task(&self, id: &str) -> Result<AnnotationTask> {
        let state = self.state.load();
        state.task(id).map(|t| effective(t, self.clock.now_ms()))
    }

    pub fn tasks(&self) -> Vec<AnnotationTask> {
        let now = self.clock.now_ms();
        self.state.load().tasks.iter().map(|t| effective(t, now)).collect()
    }

    pub fn submissions(&self) -> Vec<SubmissionRecord> {
        self.state.load().submissions.clone()
    }

    pub fn reviews(&self) -> Vec<Review> {
        self.state.load().reviews.values().cloned().collect()
    }

    pub fn counts(&self) -> Counts {
        let now = self.clock.now_ms();
        let state = self.state.load();
        let mut c = Counts {
            created: state.tasks.len(),
            submissions: state.submissions.len(),
            ..Counts::default()
        };
        for t in &state.tasks {
            match effective(t, now).status {
                TaskStatus::Open => c.open += 1,
                TaskStatus::Assigned => c.assigned += 1,
                TaskStatus::Done => c.done += 1,
            }
        }
        c
    }

    /// `k` submissions of `batch`, drawn uniformly with `seed`, in
    /// submission order.
    pub fn qc_sample(&self, batch: &str, k: usize, seed: u64) -> Result<Vec<SubmissionRecord>> {
        let state = self.state.load();
        if !state.batches.iter().any(|b| b == batch) {
            return Err(AnnotateError::UnknownBatch(batch.to_owned()));
        }
        let pool: Vec<&SubmissionRecord> = state
            .submissions
            .iter()
            .filter(|s| state.tasks[state.index[&s.task_id]].batch_id == batch)
            .collect();
        if k > pool.len() {
            return Err(AnnotateError::NotEnoughSubmissions {
                batch: batch.to_owned(),
                available: pool.len(),
                requested: k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
        picks.sort_unstable();
        Ok(picks.into_iter().map(|i| pool[i].clone()).collect())
    }

    /// JSONL in submission order: `ReformulationPair`s for reformulation
    /// tasks, one `Judgment` per axis for comparison tasks.
    pub fn export(&self, kind: TaskKind) -> String {
        let state = self.state.load();
        let mut out = String::new();
        fn line<T: Serialize>(out: &mut String, v: &T) {
            out.push_str(&serde_json::to_string(v).expect("record serializes"));
            out.push('\n');
        }
        for s in &state.submissions {
            let task = &state.tasks[state.index[&s.task_id]];
            match (&task.payload, &s.body) {
                (Payload::Reformulation { caption, language }, SubmissionBody::Reformulation { text })
                    if kind == TaskKind::Reformulation =>
                {
                    line(
                        &mut out,
                        &ReformulationPair {
                            image_id: task.image_id.clone(),
                            original: caption.clone(),
                            reformulated: text.clone(),
                            language: language.clone(),
                        },
                    );
                }
                (Payload::Comparison { axes, .. }, SubmissionBody::Comparison { choices })
                    if kind == TaskKind::Comparison =>
                {
                    let left = task.left.unwrap_or(Side::A);
                    for axis in axes {
                        line(
                            &mut out,
                            &Judgment {
                                item_id: task.id.clone(),
                                axis: *axis,
                                annotator_id: s.annotator_id.clone(),
                                choice: derandomize(choices[axis], left),
                            },
                        );
                    }
                }
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::humaneval::Axis;

    fn store(dir: &Path, clock: Arc<ManualClock>) -> AnnotationStore {
        AnnotationStore::open_with_clock(
            dir,
            AnnotateOptions {
                lease_ms: 1000,
                snapshot_every: 4,
            },
            clock,
        )
        .unwrap()
    }

    fn refo(id: &str) -> TaskItem {
        TaskItem {
            id: id.into(),
            image_id: None,
            image_uri: format!("file:///img/{id}.jpg"),
            payload: Payload::Reformulation {
                caption: format!("a dog on {id}"),
                language: "en".into(),
            },
        }
    }

    fn text(task: &str, who: &str, t: &str) -> Submission {
        Submission {
            task_id: task.into(),
            annotator_id: who.into(),
            lease_id: None,
            body: SubmissionBody::Reformulation { text: t.into() },
        }
    }

    #[test]
    fn create_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path(), Arc::new(ManualClock::new(0)));
        let (batch, ids) = s
            .create_tasks(TaskKind::Reformulation, &[refo("a"), refo("b"), refo("c")], None, 1)
            .unwrap();
        assert_eq!(batch, "batch-0001");
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(s.counts().open, 3);
        assert!(matches!(
            s.create_tasks(TaskKind::Reformulation, &[refo("a")], None, 1),
            Err(AnnotateError::DuplicateTask(_))
        ));
        let empty_axes = TaskItem {
            payload: Payload::Comparison {
                caption_a: "x".into(),
                caption_b: "y".into(),
                axes: vec![],
            },
            ..refo("z")
        };
        assert!(matches!(
            s.create_tasks(TaskKind::Comparison, &[empty_axes], None, 1),
            Err(AnnotateError::Malformed(_))
        ));
        assert_eq!(s.counts().created, 3);
    }

    #[test]
    fn lease_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let s = store(dir.path(), clock.clone());
        s.create_tasks(TaskKind::Reformulation, &[refo("a")], None, 1).unwrap();
        let t = s.next_task("ann1", TaskKind::Reformulation).unwrap().unwrap();
        assert_eq!(t.status, TaskStatus::Assigned);
        assert!(s.next_task("ann2", TaskKind::Reformulation).unwrap().is_none());
        // same annotator gets the same lease back
        assert_eq!(
            s.next_task("ann1", TaskKind::Reformulation).unwrap().unwrap().lease,
            t.lease
        );

        clock.advance(1000);
        assert_eq!(s.counts().open, 1);
        assert!(matches!(
            s.submit(&text("a", "ann1", "x")),
            Err(AnnotateError::StaleLease(_))
        ));
        let t2 = s.next_task("ann2", TaskKind::Reformulation).unwrap().unwrap();
        assert_eq!(t2.lease.as_ref().unwrap().annotator_id, "ann2");
        let ack = s.submit(&text("a", "ann2", "a dog on a")).unwrap();
        assert_eq!(ack.task_status, TaskStatus::Done);
        assert!(matches!(
            s.submit(&text("a", "ann2", "again")),
            Err(AnnotateError::DoubleSubmission { .. })
        ));
        let mut repeat = text("a", "ann2", "a dog on a");
        repeat.lease_id = t2.lease.map(|l| l.id);
        assert!(s.submit(&repeat).unwrap().replay);
        assert!(s.next_task("ann2", TaskKind::Reformulation).unwrap().is_none());
        let c = s.counts();
        assert_eq!((c.open + c.assigned + c.done, c.submissions), (c.created, 1));
    }

    #[test]
    fn multiplicity_never_repeats_annotator() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path(), Arc::new(ManualClock::new(0)));
        s.create_tasks(TaskKind::Reformulation, &[refo("a")], None, 2).unwrap();
        s.next_task("x", TaskKind::Reformulation).unwrap().unwrap();
        assert_eq!(s.submit(&text("a", "x", "t")).unwrap().task_status, TaskStatus::Open);
        assert!(s.next_task("x", TaskKind::Reformulation).unwrap().is_none());
        s.next_task("y", TaskKind::Reformulation).unwrap().unwrap();
        assert_eq!(s.submit(&text("a", "y", "t")).unwrap().task_status, TaskStatus::Done);
    }

    #[test]
    fn comparison_export_is_derandomized() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path(), Arc::new(ManualClock::new(0)));
        let items: Vec<TaskItem> = (0..8)
            .map(|i| TaskItem {
                payload: Payload::Comparison {
                    caption_a: "ours".into(),
                    caption_b: "theirs".into(),
                    axes: vec![Axis::Style, Axis::Overall],
                },
                ..refo(&format!("c{i}"))
            })
            .collect();
        s.create_tasks(TaskKind::Comparison, &items, None, 1).unwrap();
        let mut lefts = HashSet::new();
        while let Some(t) = s.next_task("r", TaskKind::Comparison).unwrap() {
            lefts.insert(format!("{:?}", t.left.unwrap()));
            let partial = Submission {
                task_id: t.id.clone(),
                annotator_id: "r".into(),
                lease_id: None,
                body: SubmissionBody::Comparison {
                    choices: [(Axis::Style, Shown::Left)].into(),
                },
            };
            assert!(matches!(s.submit(&partial), Err(AnnotateError::Malformed(_))));
            let full = Submission {
                body: SubmissionBody::Comparison {
                    choices: [(Axis::Style, Shown::Left), (Axis::Overall, Shown::Tie)].into(),
                },
                ..partial
            };
            s.submit(&full).unwrap();
        }
        assert_eq!(lefts.len(), 2, "both orders occur");
        let judgments: Vec<Judgment> = s
            .export(TaskKind::Comparison)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(judgments.len(), 16);
        for (j, t) in judgments
            .iter()
            .zip(s.tasks().iter().flat_map(|t| [t.clone(), t.clone()]))
        {
            let expected = match (j.axis, t.left.unwrap()) {
                (Axis::Overall, _) => Choice::Tie,
                (_, Side::A) => Choice::A,
                (_, Side::B) => Choice::B,
            };
            assert_eq!(j.choice, expected);
        }
    }

    #[test]
    fn recovery_matches_and_drops_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let before = {
            let s = store(dir.path(), clock.clone());
            let items: Vec<_> = (0..5).map(|i| refo(&format!("t{i}"))).collect();
            s.create_tasks(TaskKind::Reformulation, &items, None, 1).unwrap();
            for i in 0..5 {
                let t = s.next_task("w", TaskKind::Reformulation).unwrap().unwrap();
                s.submit(&text(&t.id, "w", &format!("edit {i}"))).unwrap();
            }
            s.export(TaskKind::Reformulation)
        };
        assert!(dir.path().join(SNAPSHOT).exists());
        let mut log = OpenOptions::new().append(true).open(dir.path().join(LOG)).unwrap();
        log.write_all(b"{\"seq\":12,\"event\":\"subm").unwrap();
        drop(log);
        let s = store(dir.path(), clock);
        assert_eq!(s.export(TaskKind::Reformulation), before);
        assert_eq!(s.counts().done, 5);
        s.create_tasks(TaskKind::Reformulation, &[refo("later")], None, 1)
            .unwrap();
        let s2 = store(dir.path(), Arc::new(ManualClock::new(0)));
        assert_eq!(s2.counts().created, 6);
    }

    #[test]
    fn qc_sampling() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path(), Arc::new(ManualClock::new(0)));
        let items: Vec<_> = (0..30).map(|i| refo(&format!("q{i}"))).collect();
        let (batch, _) = s.create_tasks(TaskKind::Reformulation, &items, Some("b1"), 1).unwrap();
        for _ in 0..30 {
            let t = s.next_task("w", TaskKind::Reformulation).unwrap().unwrap();
            s.submit(&text(&t.id, "w", "x")).unwrap();
        }
        assert_eq!(s.qc_sample(&batch, 30, 9).unwrap().len(), 30);
        assert!(s.qc_sample(&batch, 0, 9).unwrap().is_empty());
        let a = s.qc_sample(&batch, 20, 1).unwrap();
        assert_eq!(a, s.qc_sample(&batch, 20, 1).unwrap());
        assert_ne!(a, s.qc_sample(&batch, 20, 2).unwrap());
        assert!(s.qc_sample(&batch, 31, 1).is_err());
        assert!(matches!(s.qc_sample("nope", 1, 1), Err(AnnotateError::UnknownBatch(_))));
        s.review(Review {
            submission_id: a[0].id,
            accepted: false,
            note: Some("typo".into()),
        })
        .unwrap();
        assert_eq!(s.reviews().len(), 1);
        assert!(s
            .review(Review {
                submission_id: 99,
                accepted: true,
                note: None
            })
            .is_err());
    }
}
