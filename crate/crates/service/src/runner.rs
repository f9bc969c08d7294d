use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use cobos_core::sim::{InputAck, RunRecord};
use tokio::sync::{oneshot, watch};

use crate::live::{FeedEvent, InputRequest, LiveRun, RunSummary, Snapshot};
use crate::ServiceError;

pub(crate) enum Command {
    Input(InputRequest, oneshot::Sender<Result<InputAck, ServiceError>>),
    Pause,
    Resume,
    Record(oneshot::Sender<Option<RunRecord>>),
    Stop,
}

/// Append-only event log of one run. Readers keep their own cursor.
pub struct Feed {
    events: RwLock<Vec<FeedEvent>>,
    latest: watch::Sender<u64>,
    closed: watch::Sender<bool>,
}

impl Feed {
    fn new() -> Self {
        Self { events: RwLock::new(Vec::new()), latest: watch::Sender::new(0), closed: watch::Sender::new(false) }
    }

    /// Events with `seq > after`.
    pub fn after(&self, after: u64) -> Vec<FeedEvent> {
        let events = self.events.read().expect("feed lock");
        events.get(after as usize..).map(<[FeedEvent]>::to_vec).unwrap_or_default()
    }

    pub fn len(&self) -> u64 {
        *self.latest.borrow()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True once no more events will arrive.
    pub fn is_closed(&self) -> bool {
        *self.closed.borrow()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }

    fn extend(&self, fresh: &[FeedEvent]) {
        if fresh.is_empty() {
            return;
        }
        let mut events = self.events.write().expect("feed lock");
        events.extend_from_slice(fresh);
        let n = events.len() as u64;
        drop(events);
        self.latest.send_replace(n);
    }

    fn close(&self) {
        self.closed.send_replace(true);
        // Wake readers waiting on new events.
        self.latest.send_modify(|_| {});
    }
}

/// Endpoint-side view of a run whose loop lives on its own thread.
pub struct RunHandle {
    commands: mpsc::Sender<Command>,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    summary: watch::Receiver<RunSummary>,
    pub feed: Arc<Feed>,
}

impl RunHandle {
    /// Starts the loop thread. `tick` of zero runs as fast as possible.
    pub fn spawn(run: LiveRun, tick: Duration, export_dir: Option<PathBuf>) -> Self {
        let (tx, rx) = mpsc::channel();
        let (snap_tx, snapshot) = watch::channel(Arc::new(run.snapshot(false)));
        let (sum_tx, summary) = watch::channel(run.summary());
        let feed = Arc::new(Feed::new());
        let loop_feed = Arc::clone(&feed);
        thread::Builder::new()
            .name(format!("run-{}", run.id()))
            .spawn(move || run_thread(run, tick, export_dir, rx, snap_tx, sum_tx, loop_feed))
            .expect("spawn run thread");
        Self { commands: tx, snapshot, summary, feed }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.snapshot.borrow())
    }

    pub fn summary(&self) -> RunSummary {
        self.summary.borrow().clone()
    }

    pub async fn input(&self, req: InputRequest) -> Result<InputAck, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(Command::Input(req, tx)).map_err(|_| ServiceError::RunEnded)?;
        rx.await.map_err(|_| ServiceError::RunEnded)?
    }

    pub async fn record(&self) -> Option<RunRecord> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(Command::Record(tx)).ok()?;
        rx.await.ok().flatten()
    }

    pub fn pause(&self) {
        let _ = self.commands.send(Command::Pause);
    }

    pub fn resume(&self) {
        let _ = self.commands.send(Command::Resume);
    }

    pub fn stop(&self) {
        let _ = self.commands.send(Command::Stop);
    }
}

fn run_thread(
    mut run: LiveRun,
    tick: Duration,
    export_dir: Option<PathBuf>,
    commands: mpsc::Receiver<Command>,
    snapshot: watch::Sender<Arc<Snapshot>>,
    summary: watch::Sender<RunSummary>,
    feed: Arc<Feed>,
) {
    let mut paused = false;
    let mut sent = 0;
    let mut next = Instant::now() + tick;
    let mut publish = |run: &LiveRun, paused: bool| {
        feed.extend(&run.events()[sent..]);
        sent = run.events().len();
        snapshot.send_replace(Arc::new(run.snapshot(paused)));
        summary.send_replace(run.summary());
    };
    loop {
        let command = if run.is_over() || paused {
            match commands.recv() {
                Ok(c) => Some(c),
                Err(_) => break,
            }
        } else {
            match commands.recv_timeout(next.saturating_duration_since(Instant::now())) {
                Ok(c) => Some(c),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        };
        match command {
            Some(Command::Input(req, reply)) => {
                let _ = reply.send(run.input(&req));
                publish(&run, paused);
            }
            Some(Command::Pause) => {
                paused = true;
                publish(&run, paused);
            }
            Some(Command::Resume) => {
                if paused {
                    paused = false;
                    next = Instant::now() + tick;
                    publish(&run, paused);
                }
            }
            Some(Command::Record(reply)) => {
                let _ = reply.send(run.record());
            }
            Some(Command::Stop) => break,
            None => {
                let live = run.tick();
                next += tick;
                publish(&run, paused);
                if !live {
                    feed.close();
                    if let (Some(dir), Some(record)) = (&export_dir, run.record()) {
                        export(dir, run.id(), &record);
                    }
                }
            }
        }
    }
    feed.close();
}

fn export(dir: &std::path::Path, id: &str, record: &RunRecord) {
    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(record).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("run-{id}.json")), text)
    };
    if let Err(e) = write() {
        eprintln!("could not export run {id}: {e}");
    }
}
