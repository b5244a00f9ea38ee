use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Action, DialogError, DialogState, ItemCard, Phase, Response, SlotValue, StepNotice};
use crate::garment::{Attr, Vocabulary};
use crate::nlu::{IntentFrame, INDEX_REFERENCE};

pub const SHIPPED_POLICY: &str = include_str!("../../data/dialog.json");

/// Retrieval callback: caption text and result count to item cards. An
/// `Err` means the backend is unavailable.
pub type RetrieveFn<'a> = dyn FnMut(&str, usize) -> Result<Vec<ItemCard>, String> + 'a;

const REQUIRED_REPLIES: [&str; 18] = [
    "clarify",
    "greet",
    "goodbye",
    "ask_slot",
    "show_results",
    "no_results",
    "retrieval_unavailable",
    "refine_prompt",
    "select_prompt",
    "index_out_of_range",
    "nothing_to_select",
    "open_editor",
    "edit_hint",
    "confirm_design",
    "already_confirmed",
    "confirm_without_selection",
    "reset",
    "fallback",
];

/// The data half of the policy: wording, required slots, threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyData {
    pub version: u32,
    pub required_slots: Vec<String>,
    pub confidence_threshold: f64,
    pub replies: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct DialogPolicy {
    data: PolicyData,
    vocab: Vocabulary,
    schema: Vec<String>,
}

impl DialogPolicy {
    pub fn new(data: PolicyData, vocab: Vocabulary) -> Result<Self, DialogError> {
        let schema: Vec<String> = vocab.attributes.iter().map(|a| a.slot.clone()).collect();
        if !(0.0..=1.0).contains(&data.confidence_threshold) {
            return Err(DialogError::Policy(format!(
                "confidence threshold {} outside [0, 1]",
                data.confidence_threshold
            )));
        }
        for slot in &data.required_slots {
            if !schema.contains(slot) {
                return Err(DialogError::Policy(format!(
                    "required slot `{slot}` is not in the schema"
                )));
            }
        }
        for attr in [Attr::Hue, Attr::SleeveLength] {
            let slot = &vocab.spec(attr).slot;
            if !data.required_slots.contains(slot) {
                return Err(DialogError::Policy(format!(
                    "captions need `{slot}`, so it must be a required slot"
                )));
            }
        }
        if let Some(missing) = REQUIRED_REPLIES
            .iter()
            .find(|k| !data.replies.contains_key(**k))
        {
            return Err(DialogError::Policy(format!("reply `{missing}` is missing")));
        }
        Ok(Self {
            data,
            vocab,
            schema,
        })
    }

    pub fn from_json(text: &str, vocab: Vocabulary) -> Result<Self, DialogError> {
        let data = serde_json::from_str(text).map_err(|e| DialogError::Policy(e.to_string()))?;
        Self::new(data, vocab)
    }

    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_POLICY, Vocabulary::shipped()).expect("shipped policy is valid")
    }

    pub fn data(&self) -> &PolicyData {
        &self.data
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Slot names the state may hold.
    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn validate(&self, state: &DialogState) -> Result<(), DialogError> {
        state.validate(&self.schema)
    }

    /// Caption synthesized from the filled slots.
    pub fn caption(&self, state: &DialogState) -> Result<String, crate::garment::GarmentError> {
        self.vocab.caption_from_slots(&state.slot_values())
    }

    /// One conversation turn. Never fails: problems are reported through
    /// [`Response::notice`] and leave a valid state.
    pub fn step(
        &self,
        state: &DialogState,
        frame: &IntentFrame,
        retrieve: &mut RetrieveFn<'_>,
        k: usize,
    ) -> (DialogState, Response) {
        let mut next = state.clone();
        next.turn += 1;

        if frame.confidence < self.data.confidence_threshold {
            let response = Response {
                text: self.reply("clarify", &[]),
                notice: Some(StepNotice::LowConfidence),
                ..Response::default()
            };
            return (next, response);
        }

        if frame.intent == "restart" {
            let mut fresh = DialogState::new(state.session_id.clone());
            fresh.turn = next.turn;
            return (fresh, self.simple("reset", vec![Action::Reset]));
        }

        let changed = self.absorb(&mut next, frame);
        let response = match frame.intent.as_str() {
            "greet" => self.simple("greet", vec![]),
            "goodbye" => self.simple("goodbye", vec![]),
            "request_item" => self.search_or_ask(&mut next, retrieve, k),
            "provide_attribute" | "refine" | "edit_attribute" => match next.phase {
                Phase::Start | Phase::Eliciting | Phase::Confirmed => {
                    self.search_or_ask(&mut next, retrieve, k)
                }
                Phase::Suggesting | Phase::Refining => {
                    if changed {
                        self.search_or_ask(&mut next, retrieve, k)
                    } else {
                        next.phase = Phase::Refining;
                        self.simple("refine_prompt", vec![])
                    }
                }
                Phase::Designing => self.simple("edit_hint", vec![Action::OpenEditor]),
            },
            "select_item" => self.select(&mut next, frame),
            "confirm" => match next.phase {
                Phase::Designing => {
                    next.phase = Phase::Confirmed;
                    self.simple("confirm_design", vec![Action::ConfirmDesign])
                }
                Phase::Confirmed => self.simple("already_confirmed", vec![]),
                Phase::Suggesting | Phase::Refining => {
                    self.simple("confirm_without_selection", vec![])
                }
                Phase::Start | Phase::Eliciting => self.simple("nothing_to_select", vec![]),
            },
            _ => self.simple("fallback", vec![]),
        };
        (next, response)
    }

    /// Writes schema entities into the slot store; reports whether any slot
    /// took a new value.
    fn absorb(&self, state: &mut DialogState, frame: &IntentFrame) -> bool {
        let mut changed = false;
        for e in &frame.entities {
            if !self.schema.contains(&e.entity) {
                continue;
            }
            if state.slot(&e.entity) == Some(e.value.as_str()) {
                continue;
            }
            state.slots.insert(
                e.entity.clone(),
                SlotValue {
                    value: e.value.clone(),
                    turn: state.turn,
                },
            );
            state.last_slot = Some(e.entity.clone());
            changed = true;
        }
        changed
    }

    fn search_or_ask(
        &self,
        state: &mut DialogState,
        retrieve: &mut RetrieveFn<'_>,
        k: usize,
    ) -> Response {
        if let Some(missing) = self
            .data
            .required_slots
            .iter()
            .find(|s| !state.slots.contains_key(*s))
        {
            state.phase = Phase::Eliciting;
            state.candidates.clear();
            state.selected = None;
            let text = match self.data.replies.get(&format!("ask_slot.{missing}")) {
                Some(t) => t.clone(),
                None => self.reply("ask_slot", &[("slot", slot_phrase(missing))]),
            };
            return Response {
                text,
                actions: vec![Action::AskSlot(missing.clone())],
                ..Response::default()
            };
        }

        let caption = self.caption(state).expect("required slots are filled");
        match retrieve(&caption, k) {
            Err(message) => Response {
                text: self.reply("retrieval_unavailable", &[]),
                notice: Some(StepNotice::RetrievalUnavailable { message }),
                ..Response::default()
            },
            Ok(items) if items.is_empty() || k == 0 => {
                if state.phase == Phase::Start {
                    state.phase = Phase::Eliciting;
                }
                let relax = state.last_slot.clone();
                let slot = relax.as_deref().map(slot_phrase).unwrap_or_default();
                Response {
                    text: self.reply("no_results", &[("caption", caption), ("slot", slot)]),
                    notice: Some(StepNotice::NoResults { relax }),
                    ..Response::default()
                }
            }
            Ok(mut items) => {
                items.truncate(k);
                state.phase = Phase::Suggesting;
                state.candidates = items.iter().map(|c| c.id).collect();
                state.selected = None;
                Response {
                    text: self.reply(
                        "show_results",
                        &[("count", items.len().to_string()), ("caption", caption)],
                    ),
                    items,
                    actions: vec![Action::ShowResults],
                    notice: None,
                }
            }
        }
    }

    fn select(&self, state: &mut DialogState, frame: &IntentFrame) -> Response {
        match state.phase {
            Phase::Start | Phase::Eliciting => return self.simple("nothing_to_select", vec![]),
            Phase::Confirmed => return self.simple("already_confirmed", vec![]),
            Phase::Suggesting | Phase::Refining | Phase::Designing => {}
        }
        let Some(index) = frame
            .entity(INDEX_REFERENCE)
            .and_then(|e| e.value.parse::<u32>().ok())
        else {
            return self.simple("select_prompt", vec![]);
        };
        let available = state.candidates.len();
        if index == 0 || index as usize > available {
            return Response {
                text: self.reply(
                    "index_out_of_range",
                    &[
                        ("index", index.to_string()),
                        ("available", available.to_string()),
                    ],
                ),
                notice: Some(StepNotice::IndexOutOfRange { index, available }),
                ..Response::default()
            };
        }
        state.selected = Some(state.candidates[index as usize - 1]);
        state.phase = Phase::Designing;
        Response {
            text: self.reply("open_editor", &[("index", index.to_string())]),
            actions: vec![Action::OpenEditor],
            ..Response::default()
        }
    }

    fn simple(&self, key: &str, actions: Vec<Action>) -> Response {
        Response {
            text: self.reply(key, &[]),
            actions,
            ..Response::default()
        }
    }

    fn reply(&self, key: &str, args: &[(&str, String)]) -> String {
        let mut text = self.data.replies[key].clone();
        for (name, value) in args {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        text
    }
}

fn slot_phrase(slot: &str) -> String {
    slot.replace('_', " ")
}
