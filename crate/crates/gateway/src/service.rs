//! Request handling independent of HTTP: sessions, chat turns, design edits
//! and commits, search.
//!
//! Every mutating operation works on a copy of the session and writes it
//! back only on success, so a failed request leaves the session untouched.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use stylechat_core::codec::write_atomic;
use stylechat_core::dialog::{Action, DialogPolicy, DialogState, ItemCard, Phase, StepNotice};
use stylechat_core::flow::ConditionalFlow;
use stylechat_core::garment::{
    decode, measure, render, AttributeVector, CatalogItem, GarmentLatent, ItemId, MixingMatrix,
    ATTRIBUTE_COUNT,
};
use stylechat_core::nlu::{understand, EntityLexicon, IntentModel, NluError};
use stylechat_core::retrieval::{item_input, DualEncoder, RetrievalError, SearchHit, VectorIndex};
use thiserror::Error;

use crate::config::Artifact;
use crate::pipeline::Models;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: 400,
            code: "bad_request",
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: 404,
            code: "not_found",
            message: message.into(),
        }
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self {
            status: 409,
            code: "conflict",
            message: message.into(),
        }
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self {
            status: 422,
            code: "invalid_attributes",
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            status: 500,
            code: "internal",
            message: message.into(),
        }
    }
}

/// The garment being edited in a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    /// Catalog item the design started from.
    pub item_id: ItemId,
    pub latent: GarmentLatent,
    /// Latest attribute vector; the source of the next edit.
    pub attributes: AttributeVector,
    /// Every applied target, oldest first. Append-only.
    pub history: Vec<AttributeVector>,
    /// Id assigned by commit.
    #[serde(default)]
    pub committed: Option<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub state: DialogState,
    pub workspace: Option<Workspace>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

impl Session {
    fn new(id: &str) -> Self {
        let now = now_ms();
        Self {
            state: DialogState::new(id),
            workspace: None,
            created_ms: now,
            updated_ms: now,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.workspace.is_some() && !self.state.phase.has_selection() {
            return Err(format!("workspace present in phase {}", self.state.phase));
        }
        Ok(())
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignView {
    pub item_id: ItemId,
    pub svg: String,
    pub attributes: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub committed_id: Option<ItemId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatReply {
    pub session_id: String,
    pub reply: String,
    pub items: Vec<ItemCard>,
    pub actions: Vec<Action>,
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<StepNotice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignView>,
}

/// Target attributes either as a list in schema order or as an object keyed
/// by attribute name. Both must be complete.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TargetAttributes {
    List(Vec<f64>),
    Named(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Deserialize)]
pub struct EditRequest {
    pub session_id: String,
    pub attributes: TargetAttributes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditReply {
    pub svg: String,
    pub attributes: Vec<f64>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CommitRequest {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommitReply {
    pub item_id: ItemId,
    pub caption: String,
    pub svg: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchItem {
    pub id: ItemId,
    pub caption: String,
    pub image: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeInfo {
    pub name: String,
    pub label: String,
    pub slot: String,
    pub cyclic: bool,
    pub bins: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub attribute_count: usize,
    pub attributes: Vec<AttributeInfo>,
    pub items: usize,
    pub sessions: usize,
    pub k: usize,
}

type SessionSlot = Arc<Mutex<Session>>;

pub struct AppState {
    policy: DialogPolicy,
    intent: IntentModel,
    lexicon: EntityLexicon,
    encoders: DualEncoder,
    flow: ConditionalFlow,
    mixing: MixingMatrix,
    k: usize,
    catalog: RwLock<HashMap<ItemId, CatalogItem>>,
    index: RwLock<VectorIndex>,
    /// Serializes commits so fresh ids never collide.
    commit_lock: Mutex<()>,
    sessions: Mutex<HashMap<String, SessionSlot>>,
    /// Where commits and snapshots are persisted; `None` keeps everything in
    /// memory.
    data_dir: Option<PathBuf>,
}

fn lock_err<T>(_: T) -> ApiError {
    ApiError::internal("a lock was poisoned by an earlier panic")
}

impl AppState {
    pub fn new(models: Models, k: usize, data_dir: Option<PathBuf>) -> Self {
        let catalog = models.catalog.into_iter().map(|c| (c.id, c)).collect();
        Self {
            policy: models.policy,
            intent: models.intent,
            lexicon: models.lexicon,
            encoders: models.encoders,
            flow: models.flow,
            mixing: models.mixing,
            k,
            catalog: RwLock::new(catalog),
            index: RwLock::new(models.index),
            commit_lock: Mutex::new(()),
            sessions: Mutex::new(HashMap::new()),
            data_dir,
        }
    }

    pub fn policy(&self) -> &DialogPolicy {
        &self.policy
    }

    pub fn encoders(&self) -> &DualEncoder {
        &self.encoders
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn index_len(&self) -> usize {
        self.index.read().map(|i| i.len()).unwrap_or(0)
    }

    /// Embedding stored in the index for `id`.
    pub fn embedding(&self, id: ItemId) -> Option<Vec<f64>> {
        self.index.read().ok()?.get(id).map(<[f64]>::to_vec)
    }

    pub fn index_ids(&self) -> Vec<ItemId> {
        self.index.read().map(|i| i.ids()).unwrap_or_default()
    }

    pub fn search_vector(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>, ApiError> {
        let index = self.index.read().map_err(lock_err)?;
        index
            .search(query, k)
            .map_err(|e| ApiError::internal(e.to_string()))
    }

    pub fn catalog_item(&self, id: ItemId) -> Option<CatalogItem> {
        self.catalog.read().ok()?.get(&id).cloned()
    }

    pub fn session(&self, id: &str) -> Option<Session> {
        let slot = self.sessions.lock().ok()?.get(id).cloned()?;
        let session = slot.lock().ok()?.clone();
        Some(session)
    }

    fn slot(&self, id: &str) -> Result<SessionSlot, ApiError> {
        self.sessions
            .lock()
            .map_err(lock_err)?
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    fn slot_or_create(&self, id: Option<&str>) -> Result<(String, SessionSlot), ApiError> {
        let id = match id {
            Some(id) if !id.trim().is_empty() => id.to_string(),
            _ => uuid::Uuid::new_v4().simple().to_string(),
        };
        let mut sessions = self.sessions.lock().map_err(lock_err)?;
        let slot = sessions
            .entry(id.clone())
            .or_insert_with(|| Arc::new(Mutex::new(Session::new(&id))))
            .clone();
        Ok((id, slot))
    }

    fn retrieve_hits(
        &self,
        caption: &str,
        k: usize,
    ) -> Result<Vec<(SearchHit, CatalogItem)>, RetrievalError> {
        let query = self.encoders.text.encode(caption)?;
        let hits = self
            .index
            .read()
            .map_err(|_| RetrievalError::EmptyIndex)?
            .search(&query, k)?;
        let catalog = self
            .catalog
            .read()
            .map_err(|_| RetrievalError::EmptyIndex)?;
        Ok(hits
            .into_iter()
            .filter_map(|h| catalog.get(&h.id).map(|c| (h, c.clone())))
            .collect())
    }

    pub fn search(&self, q: &str, k: usize) -> Result<Vec<SearchItem>, ApiError> {
        if q.trim().is_empty() {
            return Err(ApiError::bad_request("query `q` must not be empty"));
        }
        if k == 0 {
            return Err(ApiError::bad_request("k must be at least 1"));
        }
        let hits = self.retrieve_hits(q, k).map_err(|e| match e {
            RetrievalError::EmptyCaption => ApiError::bad_request(e.to_string()),
            other => ApiError::internal(other.to_string()),
        })?;
        Ok(hits
            .into_iter()
            .map(|(h, c)| SearchItem {
                id: c.id,
                caption: c.caption,
                image: c.render.svg,
                score: h.score,
            })
            .collect())
    }

    pub fn health(&self) -> Health {
        let vocab = self.policy.vocabulary();
        Health {
            status: "ok",
            attribute_count: ATTRIBUTE_COUNT,
            attributes: vocab
                .attributes
                .iter()
                .map(|a| AttributeInfo {
                    name: a.name.clone(),
                    label: a.label.clone(),
                    slot: a.slot.clone(),
                    cyclic: a.cyclic,
                    bins: a.bins.clone(),
                })
                .collect(),
            items: self.index_len(),
            sessions: self.sessions.lock().map(|s| s.len()).unwrap_or(0),
            k: self.k,
        }
    }

    fn workspace_for(&self, item_id: ItemId) -> Result<Workspace, ApiError> {
        let item = self.catalog_item(item_id).ok_or_else(|| {
            ApiError::internal(format!("selected item {item_id} has no catalog row"))
        })?;
        Ok(Workspace {
            item_id,
            latent: item.latent,
            attributes: item.attributes,
            history: Vec::new(),
            committed: None,
        })
    }

    fn design_view(&self, ws: &Workspace) -> DesignView {
        DesignView {
            item_id: ws.item_id,
            svg: render(&decode(&self.mixing, &ws.latent)).svg,
            attributes: ws.attributes.values().to_vec(),
            committed_id: ws.committed,
        }
    }

    /// One conversation turn.
    pub fn chat(&self, req: &ChatRequest) -> Result<ChatReply, ApiError> {
        let text = req.text.trim();
        if text.is_empty() {
            return Err(ApiError::bad_request("text must not be empty"));
        }
        let (session_id, slot) = self.slot_or_create(req.session_id.as_deref())?;
        let mut guard = slot.lock().map_err(lock_err)?;
        let mut session = guard.clone();

        let frame = understand(&self.intent, &self.lexicon, text).map_err(|e| match e {
            NluError::EmptyUtterance => ApiError::bad_request(e.to_string()),
            other => ApiError::internal(other.to_string()),
        })?;
        let mut retrieve = |caption: &str, k: usize| {
            self.retrieve_hits(caption, k)
                .map(|hits| {
                    hits.into_iter()
                        .map(|(_, c)| ItemCard {
                            id: c.id,
                            caption: c.caption,
                            image: c.render.svg,
                        })
                        .collect()
                })
                .map_err(|e| e.to_string())
        };
        let before = session.state.phase;
        let (next, response) = self
            .policy
            .step(&session.state, &frame, &mut retrieve, self.k);

        match next.phase {
            Phase::Designing => {
                let selected = next.selected.expect("designing phase has a selection");
                let reuse = session
                    .workspace
                    .as_ref()
                    .is_some_and(|ws| ws.item_id == selected && before == Phase::Designing);
                if !reuse {
                    session.workspace = Some(self.workspace_for(selected)?);
                }
                if before == Phase::Designing && frame.intent == "edit_attribute" {
                    let ws = session.workspace.as_mut().expect("just ensured");
                    let mut target = ws.attributes;
                    for entity in &frame.entities {
                        let vocab = self.policy.vocabulary();
                        if let Some(attr) = vocab.attribute_for_slot(&entity.entity) {
                            if let Some(center) = vocab.word_center(attr, &entity.value) {
                                target = target.with(attr, center);
                            }
                        }
                    }
                    self.apply_edit(ws, target)?;
                }
            }
            Phase::Confirmed => {
                if before == Phase::Designing {
                    let ws = session.workspace.as_mut().ok_or_else(|| {
                        ApiError::internal("designing session without a workspace")
                    })?;
                    let item = self.commit_workspace(ws)?;
                    ws.committed = Some(item.id);
                }
            }
            _ => session.workspace = None,
        }
        session.state = next;
        session.updated_ms = now_ms();
        session.check().map_err(ApiError::internal)?;

        let design = session.workspace.as_ref().map(|ws| self.design_view(ws));
        *guard = session;
        Ok(ChatReply {
            session_id,
            reply: response.text,
            items: response.items,
            actions: response.actions,
            phase: guard.state.phase,
            notice: response.notice,
            design,
        })
    }

    fn target_vector(&self, target: &TargetAttributes) -> Result<AttributeVector, ApiError> {
        let values: Vec<f64> = match target {
            TargetAttributes::List(v) => v.clone(),
            TargetAttributes::Named(map) => {
                let names = self.policy.vocabulary().names();
                if let Some(extra) = map.keys().find(|k| !names.contains(&k.as_str())) {
                    return Err(ApiError::unprocessable(format!(
                        "unknown attribute `{extra}`"
                    )));
                }
                names
                    .iter()
                    .map(|n| {
                        map.get(*n).copied().ok_or_else(|| {
                            ApiError::unprocessable(format!("missing attribute `{n}`"))
                        })
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        AttributeVector::from_slice(&values).map_err(|e| ApiError::unprocessable(e.to_string()))
    }

    /// Moves the workspace to `target`. An unchanged target keeps the
    /// latent exactly, so re-sending the current sliders is a no-op.
    fn apply_edit(&self, ws: &mut Workspace, target: AttributeVector) -> Result<(), ApiError> {
        if target != ws.attributes {
            ws.latent = self
                .flow
                .edit(&ws.latent, &ws.attributes, &target)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            if !ws.latent.is_finite() {
                return Err(ApiError::internal("edit produced a non-finite latent"));
            }
        }
        ws.attributes = target;
        ws.history.push(target);
        Ok(())
    }

    pub fn edit(&self, req: &EditRequest) -> Result<EditReply, ApiError> {
        let start = Instant::now();
        let slot = self.slot(&req.session_id)?;
        let mut guard = slot.lock().map_err(lock_err)?;
        if guard.state.phase != Phase::Designing {
            return Err(ApiError::conflict(format!(
                "session is in phase {}, editing needs DESIGNING",
                guard.state.phase
            )));
        }
        let target = self.target_vector(&req.attributes)?;
        let mut ws = guard
            .workspace
            .clone()
            .ok_or_else(|| ApiError::internal("designing session without a workspace"))?;
        self.apply_edit(&mut ws, target)?;
        let svg = render(&decode(&self.mixing, &ws.latent)).svg;
        guard.workspace = Some(ws);
        guard.updated_ms = now_ms();
        Ok(EditReply {
            svg,
            attributes: target.values().to_vec(),
            latency_ms: start.elapsed().as_secs_f64() * 1000.0,
        })
    }

    pub fn commit(&self, req: &CommitRequest) -> Result<CommitReply, ApiError> {
        let slot = self.slot(&req.session_id)?;
        let mut guard = slot.lock().map_err(lock_err)?;
        if guard.state.phase != Phase::Designing {
            return Err(ApiError::conflict(format!(
                "session is in phase {}, commit needs DESIGNING",
                guard.state.phase
            )));
        }
        let mut session = guard.clone();
        let ws = session
            .workspace
            .as_mut()
            .ok_or_else(|| ApiError::internal("designing session without a workspace"))?;
        let item = self.commit_workspace(ws)?;
        ws.committed = Some(item.id);
        session.state.phase = Phase::Confirmed;
        session.updated_ms = now_ms();
        *guard = session;
        Ok(CommitReply {
            item_id: item.id,
            caption: item.caption,
            svg: item.render.svg,
        })
    }

    /// Renders the design, captions it from its measured attributes, and
    /// merges it into the index under a fresh id. The live index is only
    /// replaced after the new one (and the catalog row) are persisted.
    fn commit_workspace(&self, ws: &Workspace) -> Result<CatalogItem, ApiError> {
        let attributes = decode(&self.mixing, &ws.latent);
        let garment = render(&attributes);
        let measured = measure(&garment).map_err(|e| ApiError::internal(e.to_string()))?;
        let caption = self.policy.vocabulary().caption(&measured);
        let embedding = self
            .encoders
            .item
            .encode(&item_input(&attributes, &garment.features))
            .map_err(|e| ApiError::internal(e.to_string()))?;

        let _writer = self.commit_lock.lock().map_err(lock_err)?;
        let mut next = self.index.read().map_err(lock_err)?.clone();
        let catalog_max = self
            .catalog
            .read()
            .map_err(lock_err)?
            .keys()
            .copied()
            .max()
            .unwrap_or(0);
        let id = next.max_id().unwrap_or(0).max(catalog_max) + 1;
        next.merge(vec![(id, embedding)])
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let item = CatalogItem {
            id,
            attributes,
            latent: ws.latent,
            caption,
            render: garment,
        };
        if let Some(dir) = &self.data_dir {
            persist_commit(dir, &item, &next).map_err(|e| ApiError::internal(e.to_string()))?;
        }
        *self.index.write().map_err(lock_err)? = next;
        self.catalog
            .write()
            .map_err(lock_err)?
            .insert(id, item.clone());
        Ok(item)
    }

    /// All sessions as JSON, for snapshots.
    pub fn snapshot(&self) -> Result<String, ApiError> {
        let slots: Vec<SessionSlot> = self
            .sessions
            .lock()
            .map_err(lock_err)?
            .values()
            .cloned()
            .collect();
        let mut sessions: Vec<Session> = slots
            .iter()
            .map(|s| s.lock().map(|g| g.clone()).map_err(lock_err))
            .collect::<Result<_, _>>()?;
        sessions.sort_by(|a, b| a.state.session_id.cmp(&b.state.session_id));
        serde_json::to_string(&sessions).map_err(|e| ApiError::internal(e.to_string()))
    }

    /// Replaces the session store with a snapshot. Sessions that fail
    /// validation are dropped and counted.
    pub fn restore(&self, json: &str) -> Result<(usize, usize), ApiError> {
        let sessions: Vec<Session> =
            serde_json::from_str(json).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut store = self.sessions.lock().map_err(lock_err)?;
        store.clear();
        let mut dropped = 0;
        for s in sessions {
            if self.policy.validate(&s.state).is_err() || s.check().is_err() {
                dropped += 1;
                continue;
            }
            store.insert(s.state.session_id.clone(), Arc::new(Mutex::new(s)));
        }
        Ok((store.len(), dropped))
    }

    pub fn save_snapshot(&self) -> anyhow::Result<Option<PathBuf>> {
        let Some(dir) = &self.data_dir else {
            return Ok(None);
        };
        let path = dir.join(Artifact::Sessions.file_name());
        write_atomic(&path, self.snapshot()?.as_bytes())?;
        Ok(Some(path))
    }
}

fn persist_commit(
    dir: &std::path::Path,
    item: &CatalogItem,
    index: &VectorIndex,
) -> std::io::Result<()> {
    let mut row = serde_json::to_string(item).map_err(std::io::Error::other)?;
    row.push('\n');
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(Artifact::Catalog.file_name()))?
        .write_all(row.as_bytes())?;
    write_atomic(&dir.join(Artifact::Index.file_name()), &index.to_bytes())
}
