//! Edit sessions: hold `(z, image)`, run one region edit at a time on a
//! worker thread, stream progress, and accept or revert the result.
//!
//! States move `idle -> editing -> {completed, failed} -> idle`. Accepting
//! freezes the edited interior as the base for the next split.

mod edit;
mod persist;
mod registry;

pub use edit::{execute_edit, prepare_edit, run_prepared, EditOutcome, EditRequest};
pub use registry::{ModelEntry, ModelKind, Registry, Transport};

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{GeneratorModel, InteriorBase, RegionLatent};
use crate::io::{downscale, encode_png};
use crate::losses::{quantize_f32, LatentObjective, LossBreakdown};
use crate::optim::{run_schedule, OptimizationSchedule, ProgressRecord};
use crate::realism::RealismProxy;
use crate::scorers::{Prompt, SemanticScorer};
use crate::tensor::{ImageTensor, LatentVector, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Emit a progress event (with preview) every this many evaluations.
    pub preview_every: usize,
    /// Integer box-filter factor applied to preview images.
    pub preview_downscale: usize,
    /// Fills in the realism probe for schedules that do not set it.
    pub realism_probe: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            preview_every: 25,
            preview_downscale: 2,
            realism_probe: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Idle,
    Editing,
    Completed,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditStatus {
    Running,
    Completed,
    Failed,
    Accepted,
    Reverted,
}

/// One streamed event of an edit. Exactly one `Done` or `Error` ends the
/// stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum EditEvent {
    Progress {
        #[serde(flatten)]
        record: ProgressRecord,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preview_png_b64: Option<String>,
    },
    Done {
        final_loss: LossBreakdown,
        initial_loss: LossBreakdown,
        evaluations: usize,
    },
    Error {
        code: String,
        message: String,
    },
}

impl EditEvent {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, EditEvent::Progress { .. })
    }

    fn from_error(e: &Error) -> Self {
        EditEvent::Error {
            code: e.code().to_string(),
            message: e.to_string(),
        }
    }
}

/// A finished edit; part of the session history once accepted.
#[derive(Clone, Debug)]
pub struct AppliedEdit {
    pub edit_id: String,
    pub mask: Mask,
    pub request: EditRequest,
    pub result_w: RegionLatent,
    pub result_image: ImageTensor,
    pub final_loss: LossBreakdown,
    pub initial_loss: LossBreakdown,
    pub evaluations: usize,
    pub accepted: bool,
    pub started_at: f64,
    pub finished_at: f64,
    new_base: InteriorBase,
}

struct EditLog {
    events: Vec<EditEvent>,
    status: EditStatus,
    result: Option<AppliedEdit>,
}

/// Shared view of a launched edit: its event log and status.
pub struct EditHandle {
    pub edit_id: String,
    pub session_id: String,
    log: Mutex<EditLog>,
    changed: Condvar,
    cancel: AtomicBool,
}

impl EditHandle {
    fn new(session_id: &str, edit_id: String) -> Self {
        Self {
            edit_id,
            session_id: session_id.to_string(),
            log: Mutex::new(EditLog {
                events: Vec::new(),
                status: EditStatus::Running,
                result: None,
            }),
            changed: Condvar::new(),
            cancel: AtomicBool::new(false),
        }
    }

    fn lock(&self) -> MutexGuard<'_, EditLog> {
        self.log.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn push(&self, e: EditEvent) {
        self.lock().events.push(e);
        self.changed.notify_all();
    }

    fn finish(&self, status: EditStatus, result: Option<AppliedEdit>, event: EditEvent) {
        let mut log = self.lock();
        log.status = status;
        log.result = result;
        log.events.push(event);
        drop(log);
        self.changed.notify_all();
    }

    fn set_status(&self, status: EditStatus) {
        self.lock().status = status;
        self.changed.notify_all();
    }

    pub fn status(&self) -> EditStatus {
        self.lock().status
    }

    pub fn events(&self) -> Vec<EditEvent> {
        self.lock().events.clone()
    }

    /// Events from index `from` on, waiting up to `timeout` for at least one.
    pub fn wait_events(&self, from: usize, timeout: Duration) -> Vec<EditEvent> {
        let log = self.lock();
        let (log, _) = self
            .changed
            .wait_timeout_while(log, timeout, |l| l.events.len() <= from)
            .unwrap_or_else(|p| p.into_inner());
        log.events.get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Blocks until the edit leaves the running state.
    pub fn wait(&self) -> EditStatus {
        let log = self.lock();
        let log = self
            .changed
            .wait_while(log, |l| l.status == EditStatus::Running)
            .unwrap_or_else(|p| p.into_inner());
        log.status
    }

    pub fn result(&self) -> Option<AppliedEdit> {
        self.lock().result.clone()
    }

    pub fn final_event(&self) -> Option<EditEvent> {
        self.lock().events.last().filter(|e| e.is_terminal()).cloned()
    }
}

pub struct EditSession {
    pub id: String,
    pub generator: String,
    pub scorer: String,
    pub seed: Option<u64>,
    pub z: LatentVector,
    pub current_image: ImageTensor,
    pub history: Vec<AppliedEdit>,
    pub state: SessionState,
    pub mask: Option<Mask>,
    base: InteriorBase,
    edits: BTreeMap<String, Arc<EditHandle>>,
    active: Option<Arc<EditHandle>>,
    edit_counter: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditSummary {
    pub edit_id: String,
    pub prompt: String,
    pub final_loss: LossBreakdown,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub generator: String,
    pub scorer: String,
    pub seed: Option<u64>,
    pub state: SessionState,
    pub image_shape: (usize, usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_edit: Option<String>,
    pub history: Vec<EditSummary>,
}

impl EditSession {
    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.id.clone(),
            generator: self.generator.clone(),
            scorer: self.scorer.clone(),
            seed: self.seed,
            state: self.state,
            image_shape: self.current_image.shape(),
            mask_coverage: self.mask.as_ref().map(Mask::coverage),
            active_edit: self.active.as_ref().map(|h| h.edit_id.clone()),
            history: self
                .history
                .iter()
                .map(|e| EditSummary {
                    edit_id: e.edit_id.clone(),
                    prompt: e.request.prompt.to_string(),
                    final_loss: e.final_loss,
                    evaluations: e.evaluations,
                })
                .collect(),
        }
    }

    pub fn base(&self) -> &InteriorBase {
        &self.base
    }
}

type SessionRef = Arc<Mutex<EditSession>>;

fn lock(s: &SessionRef) -> MutexGuard<'_, EditSession> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Full-image optimization result.
#[derive(Clone, Debug)]
pub struct FullImageResult {
    pub z: LatentVector,
    pub image: ImageTensor,
    pub loss: LossBreakdown,
    pub score: f64,
    pub evaluations: usize,
}

pub struct Engine {
    pub registry: Registry,
    pub config: EngineConfig,
    sessions: Mutex<BTreeMap<String, SessionRef>>,
    counter: AtomicU64,
}

impl Engine {
    pub fn new(registry: Registry, config: EngineConfig) -> Self {
        Self {
            registry,
            config,
            sessions: Mutex::new(BTreeMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    fn session(&self, id: &str) -> Result<SessionRef> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect()
    }

    /// Runs `f` with the session locked.
    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&EditSession) -> T) -> Result<T> {
        let s = self.session(id)?;
        let guard = lock(&s);
        Ok(f(&guard))
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary> {
        self.with_session(id, EditSession::summary)
    }

    pub fn current_image(&self, id: &str) -> Result<ImageTensor> {
        self.with_session(id, |s| s.current_image.clone())
    }

    /// New idle session. Without `z`, one is drawn from `N(0, I)` with
    /// `seed`, or with a fresh random seed that is recorded.
    pub fn create_session(
        &self,
        generator: &str,
        scorer: &str,
        z: Option<LatentVector>,
        seed: Option<u64>,
    ) -> Result<String> {
        let g = self.registry.generator(generator)?;
        self.registry.scorer(scorer)?;
        let (z, seed) = match z {
            Some(z) => (z, seed),
            None => {
                let seed = seed.unwrap_or_else(rand::random);
                (LatentVector::sample(g.info().latent_dim, seed), Some(seed))
            }
        };
        let base = InteriorBase::from(g.extract_latent(&z)?);
        let current_image = g.compose(&base)?;
        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        let id = format!("s{n:06}");
        let session = EditSession {
            id: id.clone(),
            generator: generator.to_string(),
            scorer: scorer.to_string(),
            seed,
            z,
            current_image,
            history: Vec::new(),
            state: SessionState::Idle,
            mask: None,
            base,
            edits: BTreeMap::new(),
            active: None,
            edit_counter: 0,
        };
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn delete_session(&self, id: &str) -> Result<()> {
        let s = self.session(id)?;
        if let Some(h) = lock(&s).active.clone() {
            h.cancel.store(true, Ordering::SeqCst);
        }
        self.sessions.lock().unwrap_or_else(|p| p.into_inner()).remove(id);
        Ok(())
    }

    /// Stores the mask for the next edit and returns its coverage.
    pub fn set_mask(&self, id: &str, mask: Mask) -> Result<f64> {
        let s = self.session(id)?;
        let mut s = lock(&s);
        s.current_image.check_mask(&mask)?;
        mask.require_nonempty()?;
        let coverage = mask.coverage();
        s.mask = Some(mask);
        Ok(coverage)
    }

    /// Validates the request and launches the optimization on a worker
    /// thread. A missing mask in `req` falls back to the session mask.
    pub fn begin_edit(&self, id: &str, mut req: EditRequest) -> Result<Arc<EditHandle>> {
        let session = self.session(id)?;
        let mut s = lock(&session);
        if s.state != SessionState::Idle {
            return Err(Error::Busy);
        }
        if req.mask.is_none() {
            req.mask = s.mask.clone();
        }
        if self.config.realism_probe {
            req.schedule.realism_probe = true;
        }
        let g = self.registry.generator(&s.generator)?;
        let c = self.registry.scorer(&s.scorer)?;
        let objective = prepare_edit(&g, &c, &s.base, &s.current_image, &req)?;

        s.edit_counter += 1;
        let edit_id = format!("e{}", s.edit_counter);
        let handle = Arc::new(EditHandle::new(&s.id, edit_id.clone()));
        s.state = SessionState::Editing;
        s.active = Some(handle.clone());
        s.edits.insert(edit_id.clone(), handle.clone());
        drop(s);

        let cfg = self.config.clone();
        let worker_handle = handle.clone();
        let worker_session = session.clone();
        let spawned = std::thread::Builder::new()
            .name(format!("edit-{id}-{edit_id}"))
            .spawn(move || run_worker(objective, req, cfg, worker_handle, worker_session));
        if let Err(e) = spawned {
            let err = Error::Io(e);
            handle.finish(EditStatus::Failed, None, EditEvent::from_error(&err));
            let mut s = lock(&session);
            s.state = SessionState::Failed;
            return Err(err);
        }
        Ok(handle)
    }

    pub fn edit_handle(&self, id: &str, edit_id: &str) -> Result<Arc<EditHandle>> {
        let s = self.session(id)?;
        let s = lock(&s);
        s.edits
            .get(edit_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("edit {edit_id} in session {id}")))
    }

    /// Makes a completed edit the session's current state.
    pub fn accept_edit(&self, id: &str, edit_id: &str) -> Result<SessionSummary> {
        let handle = self.edit_handle(id, edit_id)?;
        let session = self.session(id)?;
        let mut s = lock(&session);
        match handle.status() {
            EditStatus::Accepted => return Err(Error::AlreadyAccepted),
            EditStatus::Completed => {}
            _ => return Err(Error::NotCompleted),
        }
        let mut edit = handle.result().ok_or(Error::NotCompleted)?;
        edit.accepted = true;
        s.base = edit.new_base.clone();
        s.current_image = edit.result_image.clone();
        s.history.push(edit);
        s.state = SessionState::Idle;
        s.active = None;
        handle.set_status(EditStatus::Accepted);
        Ok(s.summary())
    }

    /// Discards an edit, cancelling it first if it is still running. The
    /// session image is left as it was before the edit.
    pub fn revert_edit(&self, id: &str, edit_id: &str) -> Result<SessionSummary> {
        let handle = self.edit_handle(id, edit_id)?;
        match handle.status() {
            EditStatus::Accepted => return Err(Error::AlreadyAccepted),
            EditStatus::Reverted => return self.summary(id),
            EditStatus::Running => {
                handle.cancel.store(true, Ordering::SeqCst);
                handle.wait();
            }
            EditStatus::Completed | EditStatus::Failed => {}
        }
        let session = self.session(id)?;
        let mut s = lock(&session);
        if s.active.as_ref().is_some_and(|a| a.edit_id == edit_id) {
            s.active = None;
            s.state = SessionState::Idle;
        }
        handle.set_status(EditStatus::Reverted);
        Ok(s.summary())
    }

    /// Convenience for headless use: launch, wait, and return the result.
    pub fn run_edit(&self, id: &str, req: EditRequest) -> Result<(String, AppliedEdit)> {
        let handle = self.begin_edit(id, req)?;
        handle.wait();
        match handle.result() {
            Some(r) => Ok((handle.edit_id.clone(), r)),
            None => match handle.final_event() {
                Some(EditEvent::Error { code, message }) => Err(error_from_code(&code, message)),
                _ => Err(Error::NotCompleted),
            },
        }
    }

    /// Optimizes `z` from a seeded draw under `-C(G(z), t)`.
    pub fn full_image_generate(
        &self,
        generator: &str,
        scorer: &str,
        prompt: &Prompt,
        schedule: &OptimizationSchedule,
        seed: u64,
    ) -> Result<FullImageResult> {
        let g = self.registry.generator(generator)?;
        let c = self.registry.scorer(scorer)?;
        full_image_generate(g, c, prompt, schedule, seed)
    }

    /// Re-runs every accepted edit from the stored `z` and returns the image
    /// this produces; equal to `current_image` when optimization is
    /// deterministic.
    pub fn replay(&self, id: &str) -> Result<ImageTensor> {
        let (gname, cname, z, edits) = self.with_session(id, |s| {
            (
                s.generator.clone(),
                s.scorer.clone(),
                s.z.clone(),
                s.history.iter().map(|e| e.request.clone()).collect::<Vec<_>>(),
            )
        })?;
        let g = self.registry.generator(&gname)?;
        let c = self.registry.scorer(&cname)?;
        let mut base = InteriorBase::from(g.extract_latent(&z)?);
        let mut image = g.compose(&base)?;
        for req in &edits {
            let out = execute_edit(&g, &c, &base, &image, req, &mut |_, _| ControlFlow::Continue(()))?;
            base = out.new_base;
            image = out.result_image;
        }
        Ok(image)
    }
}

pub fn full_image_generate(
    g: Arc<dyn GeneratorModel>,
    c: Arc<dyn SemanticScorer>,
    prompt: &Prompt,
    schedule: &OptimizationSchedule,
    seed: u64,
) -> Result<FullImageResult> {
    let objective = LatentObjective::new(g.clone(), c.clone(), prompt.clone())?.with_realism(RealismProxy::default());
    let z0 = LatentVector::sample(g.info().latent_dim, seed);
    let r = run_schedule(schedule, &objective, &z0.0, &mut |_, _| ControlFlow::Continue(()))?;
    let z = LatentVector(quantize_f32(&r.best));
    let image = g.generate(&z)?;
    let score = c.score(&image, prompt)?;
    Ok(FullImageResult {
        z,
        image,
        loss: LossBreakdown::plain(-score),
        score,
        evaluations: r.evaluations,
    })
}

/// Rebuilds an [`Error`] from a streamed error event.
pub fn error_from_code(code: &str, message: String) -> Error {
    match code {
        "DIMENSION_MISMATCH" => Error::DimensionMismatch(message),
        "EMPTY_MASK" => Error::EmptyMask,
        "EMPTY_PROMPT" => Error::EmptyPrompt,
        "UNKNOWN_TOKEN" => Error::UnknownToken(message),
        "UNKNOWN_MODEL" => Error::UnknownModel(message),
        "NUMERICAL_BREAKDOWN" => Error::NumericalBreakdown(message),
        "INVALID_LOSS" => Error::InvalidLoss,
        "INVALID_GRADIENT" => Error::InvalidGradient,
        "BUSY" => Error::Busy,
        "CANCELLED" => Error::Cancelled,
        "ADAPTER_TIMEOUT" => Error::AdapterTimeout,
        "ADAPTER_PROTOCOL_ERROR" => Error::AdapterProtocol(message),
        "NOT_COMPLETED" => Error::NotCompleted,
        "ALREADY_ACCEPTED" => Error::AlreadyAccepted,
        "NOT_FOUND" => Error::NotFound(message),
        "FORMAT_ERROR" => Error::Format(message),
        _ => Error::InvalidConfig(message),
    }
}

fn run_worker(
    objective: crate::losses::RegionObjective,
    req: EditRequest,
    cfg: EngineConfig,
    handle: Arc<EditHandle>,
    session: SessionRef,
) {
    let started_at = now();
    let every = cfg.preview_every.max(1);
    let mut last_bucket: Option<usize> = None;
    let mut callback = |rec: &ProgressRecord, best: &[f64]| {
        if handle.cancel.load(Ordering::SeqCst) {
            return ControlFlow::Break(());
        }
        let bucket = rec.evals / every;
        if last_bucket.is_none_or(|b| bucket > b) {
            last_bucket = Some(bucket);
            let preview = objective
                .render(best)
                .ok()
                .and_then(|img| encode_png(&downscale(&img, cfg.preview_downscale)).ok())
                .map(|png| base64::engine::general_purpose::STANDARD.encode(png));
            handle.push(EditEvent::Progress {
                record: rec.clone(),
                preview_png_b64: preview,
            });
        }
        ControlFlow::Continue(())
    };
    let outcome = run_prepared(&objective, &req.schedule, &mut callback);

    let mut s = lock(&session);
    let is_active = s.active.as_ref().is_some_and(|a| a.edit_id == handle.edit_id);
    match outcome {
        Ok(out) if !out.optimization.cancelled => {
            let mask = req.mask.clone().expect("validated before launch");
            let evaluations = out.optimization.evaluations;
            let edit = AppliedEdit {
                edit_id: handle.edit_id.clone(),
                mask,
                request: req,
                result_w: out.result_w,
                result_image: out.result_image,
                final_loss: out.final_loss,
                initial_loss: out.initial_loss,
                evaluations,
                accepted: false,
                started_at,
                finished_at: now(),
                new_base: out.new_base,
            };
            if is_active {
                s.state = SessionState::Completed;
            }
            let done = EditEvent::Done {
                final_loss: edit.final_loss,
                initial_loss: edit.initial_loss,
                evaluations,
            };
            handle.finish(EditStatus::Completed, Some(edit), done);
        }
        Ok(_) => {
            if is_active {
                s.state = SessionState::Failed;
            }
            handle.finish(EditStatus::Failed, None, EditEvent::from_error(&Error::Cancelled));
        }
        Err(e) => {
            if is_active {
                s.state = SessionState::Failed;
            }
            handle.finish(EditStatus::Failed, None, EditEvent::from_error(&e));
        }
    }
}
