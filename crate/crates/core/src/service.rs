//! Semi-automatic moderation: score, route by thresholds, queue the gray
//! zone for moderators, and record their decisions.
//!
//! State lives in memory and every change is appended to a JSON-lines
//! journal, which is replayed when the service opens.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{evaluate, EvalReport, Precisions, Scored, ScoredSet};
use crate::models::Variant;
use crate::scorer::Scorer;
use crate::tuner::{decide, gray_count, tune, Decision, Thresholds, DEFAULT_BATCH_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    AutoAccept,
    AutoReject,
    GrayPending,
    HumanAccept,
    HumanReject,
}

impl ItemStatus {
    pub const ALL: [ItemStatus; 5] = [
        ItemStatus::AutoAccept,
        ItemStatus::AutoReject,
        ItemStatus::GrayPending,
        ItemStatus::HumanAccept,
        ItemStatus::HumanReject,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ItemStatus::AutoAccept => "auto_accept",
            ItemStatus::AutoReject => "auto_reject",
            ItemStatus::GrayPending => "gray_pending",
            ItemStatus::HumanAccept => "human_accept",
            ItemStatus::HumanReject => "human_reject",
        }
    }

    /// Accepts the status names plus `gray` for `gray_pending`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "gray" {
            return Some(ItemStatus::GrayPending);
        }
        Self::ALL.into_iter().find(|st| st.name() == s)
    }

    fn routed(d: Decision) -> Self {
        match d {
            Decision::Accept => ItemStatus::AutoAccept,
            Decision::Reject => ItemStatus::AutoReject,
            Decision::Gray => ItemStatus::GrayPending,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Accept,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub label: Label,
    pub moderator: String,
    pub at: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub ts: i64,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<TokenWeight>>,
    pub decision: ItemStatus,
    pub decided_by: Option<String>,
    pub decided_at: Option<i64>,
    /// Moderator check of an automatic decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<Audit>,
    pub model_version: String,
    pub thresholds_version: u64,
}

impl QueueItem {
    /// The human label, from a gray-zone decision or an audit.
    pub fn human_label(&self) -> Option<Label> {
        match self.decision {
            ItemStatus::HumanAccept => Some(Label::Accept),
            ItemStatus::HumanReject => Some(Label::Reject),
            _ => self.audit.as_ref().map(|a| a.label),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub total: usize,
    pub auto_accept: usize,
    pub auto_reject: usize,
    pub gray_pending: usize,
    pub human_accept: usize,
    pub human_reject: usize,
    pub audited: usize,
}

impl Counters {
    fn bump(&mut self, status: ItemStatus, delta: isize) {
        let slot = match status {
            ItemStatus::AutoAccept => &mut self.auto_accept,
            ItemStatus::AutoReject => &mut self.auto_reject,
            ItemStatus::GrayPending => &mut self.gray_pending,
            ItemStatus::HumanAccept => &mut self.human_accept,
            ItemStatus::HumanReject => &mut self.human_reject,
        };
        *slot = slot.checked_add_signed(delta).expect("counter underflow");
    }

    /// Recount from scratch.
    pub fn scan<'a>(items: impl IntoIterator<Item = &'a QueueItem>) -> Self {
        let mut c = Counters::default();
        for it in items {
            c.total += 1;
            c.bump(it.decision, 1);
            c.audited += usize::from(it.audit.is_some());
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveThresholds {
    pub version: u64,
    #[serde(flatten)]
    pub thresholds: Thresholds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageUpdate {
    #[serde(flatten)]
    pub active: ActiveThresholds,
    /// Share of the development set that lands in the gray zone.
    pub projected_workload: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveMetrics {
    /// Automatic decisions checked against audit labels.
    pub audit: Precisions,
    /// Over every human-labeled item under the active thresholds; absent
    /// while AUC is undefined.
    pub report: Option<EvalReport>,
    pub counters: Counters,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown item {0}")]
    NotFound(String),
    #[error("item {0} is not in gray zone")]
    NotGray(String),
    #[error("item {0} was decided automatically and cannot be audited")]
    NotAutomatic(String),
    #[error("item {id} already labeled {existing:?}")]
    Conflict { id: String, existing: Label },
    #[error("no active model")]
    NoModel,
    #[error("no active thresholds")]
    NoThresholds,
    #[error("no development set registered")]
    NoDevSet,
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Internal(#[from] Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::NotGray(_) => "not_gray",
            ServiceError::NotAutomatic(_) => "not_automatic",
            ServiceError::Conflict { .. } => "conflict",
            ServiceError::NoModel => "no_model",
            ServiceError::NoThresholds => "no_thresholds",
            ServiceError::NoDevSet => "no_dev_set",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ServiceError::NotFound(_) => 404,
            ServiceError::BadRequest(_) => 400,
            ServiceError::Internal(_) => 500,
            _ => 409,
        }
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Thresholds(ActiveThresholds),
    Item(QueueItem),
    Decision {
        id: String,
        label: Label,
        moderator: String,
        at: i64,
    },
    Audit {
        id: String,
        label: Label,
        moderator: String,
        at: i64,
    },
}

#[derive(Default)]
struct State {
    items: Vec<QueueItem>,
    index: HashMap<String, usize>,
    counters: Counters,
    thresholds: Option<Arc<ActiveThresholds>>,
    history: BTreeMap<u64, Thresholds>,
}

impl State {
    fn apply(&mut self, ev: Event) -> std::result::Result<(), String> {
        match ev {
            Event::Thresholds(t) => {
                self.history.insert(t.version, t.thresholds.clone());
                self.thresholds = Some(Arc::new(t));
            }
            Event::Item(item) => {
                if self.index.contains_key(&item.id) {
                    return Err(format!("duplicate item {}", item.id));
                }
                self.counters.total += 1;
                self.counters.bump(item.decision, 1);
                self.counters.audited += usize::from(item.audit.is_some());
                self.index.insert(item.id.clone(), self.items.len());
                self.items.push(item);
            }
            Event::Decision {
                id,
                label,
                moderator,
                at,
            } => {
                let &i = self
                    .index
                    .get(&id)
                    .ok_or_else(|| format!("decision for unknown item {id}"))?;
                let item = &mut self.items[i];
                if item.decision != ItemStatus::GrayPending {
                    return Err(format!("decision for non-pending item {id}"));
                }
                let next = match label {
                    Label::Accept => ItemStatus::HumanAccept,
                    Label::Reject => ItemStatus::HumanReject,
                };
                self.counters.bump(item.decision, -1);
                self.counters.bump(next, 1);
                item.decision = next;
                item.decided_by = Some(moderator);
                item.decided_at = Some(at);
            }
            Event::Audit {
                id,
                label,
                moderator,
                at,
            } => {
                let &i = self
                    .index
                    .get(&id)
                    .ok_or_else(|| format!("audit for unknown item {id}"))?;
                let item = &mut self.items[i];
                if item.audit.is_some() {
                    return Err(format!("second audit for item {id}"));
                }
                item.audit = Some(Audit {
                    label,
                    moderator,
                    at,
                });
                self.counters.audited += 1;
            }
        }
        Ok(())
    }

    fn next_thresholds_version(&self) -> u64 {
        self.history.keys().next_back().map_or(1, |v| v + 1)
    }
}

struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    fn append(&mut self, ev: &Event) -> ServiceResult<()> {
        let mut line = serde_json::to_string(ev).map_err(Error::from)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(|e| Error::io(&self.path, e).into())
    }
}

fn unix_now() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64)
}

#[derive(Clone, Debug)]
pub struct DevSet {
    pub scored: ScoredSet,
    pub beta: f64,
    pub batch_size: usize,
}

pub struct ModerationService {
    scorer: RwLock<Option<Arc<Scorer>>>,
    dev: RwLock<Option<Arc<DevSet>>>,
    state: RwLock<State>,
    // Held while appending and applying, so events hit disk in apply order.
    journal: Mutex<Option<Journal>>,
    clock: Box<dyn Fn() -> i64 + Send + Sync>,
}

impl ModerationService {
    /// Service with no persistence.
    pub fn in_memory() -> Self {
        Self {
            scorer: RwLock::new(None),
            dev: RwLock::new(None),
            state: RwLock::new(State::default()),
            journal: Mutex::new(None),
            clock: Box::new(unix_now),
        }
    }

    /// Opens (or creates) a journal and replays it.
    pub fn open(path: &Path) -> crate::Result<Self> {
        let mut state = State::default();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(path, e))?;
            for (n, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let ev: Event = serde_json::from_str(line)
                    .map_err(|e| Error::format(path, n + 1, e.to_string()))?;
                state.apply(ev).map_err(|m| Error::format(path, n + 1, m))?;
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let svc = Self::in_memory();
        *svc.state.write() = state;
        *svc.journal.lock() = Some(Journal {
            path: path.to_path_buf(),
            file,
        });
        Ok(svc)
    }

    /// Replaces the wall clock used for `ts` defaults and decision times.
    pub fn with_clock(mut self, clock: impl Fn() -> i64 + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    /// Caller holds the journal lock for the whole read-check-write.
    fn commit(&self, journal: &mut Option<Journal>, ev: Event) -> ServiceResult<()> {
        if let Some(j) = journal.as_mut() {
            j.append(&ev)?;
        }
        self.state
            .write()
            .apply(ev)
            .map_err(|m| ServiceError::Internal(Error::Data(m)))
    }

    pub fn set_scorer(&self, scorer: Scorer) {
        *self.scorer.write() = Some(Arc::new(scorer));
    }

    pub fn scorer(&self) -> Option<Arc<Scorer>> {
        self.scorer.read().clone()
    }

    pub fn model_info(&self) -> Option<(Variant, String)> {
        self.scorer()
            .map(|s| (s.variant(), s.version().to_string()))
    }

    pub fn thresholds(&self) -> Option<Arc<ActiveThresholds>> {
        self.state.read().thresholds.clone()
    }

    /// Thresholds by version, including retired ones.
    pub fn thresholds_version(&self, version: u64) -> Option<Thresholds> {
        self.state.read().history.get(&version).cloned()
    }

    pub fn set_thresholds(&self, thresholds: Thresholds) -> ServiceResult<ActiveThresholds> {
        if !(0.0 <= thresholds.t_a && thresholds.t_a <= thresholds.t_r && thresholds.t_r <= 1.0) {
            return Err(ServiceError::BadRequest(format!(
                "thresholds must satisfy 0 <= t_a <= t_r <= 1, got ({}, {})",
                thresholds.t_a, thresholds.t_r
            )));
        }
        let mut journal = self.journal.lock();
        let active = ActiveThresholds {
            version: self.state.read().next_thresholds_version(),
            thresholds,
        };
        let ev = Event::Thresholds(active.clone());
        self.commit(&mut journal, ev)?;
        Ok(active)
    }

    pub fn register_dev(
        &self,
        scored: ScoredSet,
        beta: f64,
        batch_size: usize,
    ) -> ServiceResult<()> {
        if scored.is_empty() {
            return Err(ServiceError::BadRequest("development set is empty".into()));
        }
        *self.dev.write() = Some(Arc::new(DevSet {
            scored,
            beta,
            batch_size,
        }));
        Ok(())
    }

    pub fn has_dev(&self) -> bool {
        self.dev.read().is_some()
    }

    /// Tunes on the registered development set and swaps the result in.
    pub fn set_coverage(&self, coverage: f64) -> ServiceResult<CoverageUpdate> {
        if !(coverage > 0.0 && coverage <= 1.0) {
            return Err(ServiceError::BadRequest(format!(
                "coverage must be in (0, 1], got {coverage}"
            )));
        }
        let dev = self.dev.read().clone().ok_or(ServiceError::NoDevSet)?;
        let mut th = tune(&dev.scored, coverage, dev.beta, dev.batch_size)?;
        th.tuned_at = (self.clock)();
        let projected =
            gray_count(&dev.scored.items, th.t_a, th.t_r) as f64 / dev.scored.len() as f64;
        Ok(CoverageUpdate {
            active: self.set_thresholds(th)?,
            projected_workload: projected,
        })
    }

    pub fn score_and_route(&self, text: &str, ts: Option<i64>) -> ServiceResult<QueueItem> {
        let scorer = self.scorer().ok_or(ServiceError::NoModel)?;
        let active = self.thresholds().ok_or(ServiceError::NoThresholds)?;
        let (tokens, pred) = scorer.score_text(text)?;
        let attention = pred.attention.map(|w| {
            tokens
                .iter()
                .zip(w)
                .map(|(t, weight)| TokenWeight {
                    token: t.clone(),
                    weight,
                })
                .collect()
        });
        let ts = ts.unwrap_or_else(|| (self.clock)());
        let mut journal = self.journal.lock();
        let id = format!("c{:08}", self.state.read().items.len() + 1);
        let item = QueueItem {
            id,
            text: text.to_string(),
            tokens,
            ts,
            p: pred.p,
            attention,
            decision: ItemStatus::routed(decide(pred.p, &active.thresholds)),
            decided_by: None,
            decided_at: None,
            audit: None,
            model_version: scorer.version().to_string(),
            thresholds_version: active.version,
        };
        let ev = Event::Item(item.clone());
        self.commit(&mut journal, ev)?;
        Ok(item)
    }

    pub fn get(&self, id: &str) -> ServiceResult<QueueItem> {
        let state = self.state.read();
        state
            .index
            .get(id)
            .map(|&i| state.items[i].clone())
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Records a moderator's call on a gray-zone item. Repeating the same
    /// label is a no-op; a different label is a conflict.
    pub fn moderator_decide(
        &self,
        id: &str,
        label: Label,
        moderator: &str,
    ) -> ServiceResult<QueueItem> {
        let mut journal = self.journal.lock();
        let current = self.get(id)?;
        match (current.decision, label) {
            (ItemStatus::HumanAccept, Label::Accept) | (ItemStatus::HumanReject, Label::Reject) => {
                return Ok(current)
            }
            (ItemStatus::HumanAccept, _) => {
                return Err(ServiceError::Conflict {
                    id: id.into(),
                    existing: Label::Accept,
                })
            }
            (ItemStatus::HumanReject, _) => {
                return Err(ServiceError::Conflict {
                    id: id.into(),
                    existing: Label::Reject,
                })
            }
            (ItemStatus::GrayPending, _) => {}
            _ => return Err(ServiceError::NotGray(id.into())),
        }
        let ev = Event::Decision {
            id: id.to_string(),
            label,
            moderator: moderator.to_string(),
            at: (self.clock)(),
        };
        self.commit(&mut journal, ev)?;
        drop(journal);
        self.get(id)
    }

    /// Records a moderator's check of an automatic decision, used as gold
    /// for the live precisions. Same idempotency rules as decisions.
    pub fn audit(&self, id: &str, label: Label, moderator: &str) -> ServiceResult<QueueItem> {
        let mut journal = self.journal.lock();
        let current = self.get(id)?;
        if !matches!(
            current.decision,
            ItemStatus::AutoAccept | ItemStatus::AutoReject
        ) {
            return Err(ServiceError::NotAutomatic(id.into()));
        }
        if let Some(a) = &current.audit {
            return if a.label == label {
                Ok(current)
            } else {
                Err(ServiceError::Conflict {
                    id: id.into(),
                    existing: a.label,
                })
            };
        }
        let ev = Event::Audit {
            id: id.to_string(),
            label,
            moderator: moderator.to_string(),
            at: (self.clock)(),
        };
        self.commit(&mut journal, ev)?;
        drop(journal);
        self.get(id)
    }

    /// Items with `status` ordered by (ts, id), paginated; also returns the
    /// total count before pagination.
    pub fn list(
        &self,
        status: Option<ItemStatus>,
        limit: usize,
        offset: usize,
    ) -> (Vec<QueueItem>, usize) {
        let state = self.state.read();
        let mut matching: Vec<&QueueItem> = state
            .items
            .iter()
            .filter(|it| status.is_none_or(|s| it.decision == s))
            .collect();
        matching.sort_by(|a, b| a.ts.cmp(&b.ts).then_with(|| a.id.cmp(&b.id)));
        let total = matching.len();
        let page = matching
            .into_iter()
            .skip(offset)
            .take(limit)
            .cloned()
            .collect();
        (page, total)
    }

    pub fn queue(&self) -> Vec<QueueItem> {
        self.list(Some(ItemStatus::GrayPending), usize::MAX, 0).0
    }

    pub fn counters(&self) -> Counters {
        self.state.read().counters.clone()
    }

    pub fn live_metrics(&self) -> LiveMetrics {
        let state = self.state.read();
        let (mut acc, mut acc_ok, mut rej, mut rej_ok) = (0, 0, 0, 0);
        let mut labeled = Vec::new();
        for it in &state.items {
            if let Some(a) = &it.audit {
                match it.decision {
                    ItemStatus::AutoAccept => {
                        acc += 1;
                        acc_ok += usize::from(a.label == Label::Accept);
                    }
                    ItemStatus::AutoReject => {
                        rej += 1;
                        rej_ok += usize::from(a.label == Label::Reject);
                    }
                    _ => {}
                }
            }
            if let Some(label) = it.human_label() {
                labeled.push(Scored {
                    id: it.id.clone(),
                    p: it.p,
                    gold: if label == Label::Reject { 1.0 } else { 0.0 },
                    ts: it.ts,
                });
            }
        }
        let report = state.thresholds.as_ref().and_then(|th| {
            let set = ScoredSet::new(labeled).ok()?;
            let t = &th.thresholds;
            evaluate(&set, t.t_a, t.t_r, t.beta, DEFAULT_BATCH_SIZE).ok()
        });
        LiveMetrics {
            audit: Precisions::from_counts(acc, acc_ok, rej, rej_ok, state.counters.gray_pending),
            report,
            counters: state.counters.clone(),
        }
    }
}
