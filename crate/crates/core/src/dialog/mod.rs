//! Slot-filling conversation manager.
//!
//! A [`DialogPolicy`] turns an [`IntentFrame`](crate::nlu::IntentFrame) and the
//! current [`DialogState`] into the next state plus a [`Response`] carrying
//! reply text, item cards and UI action tags. The transition rules live in
//! code; reply wording, the required slots and the confidence threshold are
//! loaded from data.

mod policy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::garment::ItemId;

pub use policy::{DialogPolicy, PolicyData, RetrieveFn, SHIPPED_POLICY};

#[derive(Debug, Error)]
pub enum DialogError {
    #[error("invalid dialog policy: {0}")]
    Policy(String),
    #[error("invalid dialog state: {0}")]
    InvalidState(String),
    #[error("unknown action tag `{0}`")]
    UnknownAction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Start,
    Eliciting,
    Suggesting,
    Refining,
    Designing,
    Confirmed,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Start,
        Phase::Eliciting,
        Phase::Suggesting,
        Phase::Refining,
        Phase::Designing,
        Phase::Confirmed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Start => "START",
            Phase::Eliciting => "ELICITING",
            Phase::Suggesting => "SUGGESTING",
            Phase::Refining => "REFINING",
            Phase::Designing => "DESIGNING",
            Phase::Confirmed => "CONFIRMED",
        }
    }

    /// Phases that show a list of candidates.
    pub fn is_browsing(self) -> bool {
        matches!(self, Phase::Suggesting | Phase::Refining)
    }

    /// Phases that own a selected item.
    pub fn has_selection(self) -> bool {
        matches!(self, Phase::Designing | Phase::Confirmed)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValue {
    pub value: String,
    /// Turn in which the value was last written.
    pub turn: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogState {
    pub session_id: String,
    pub phase: Phase,
    pub slots: BTreeMap<String, SlotValue>,
    pub candidates: Vec<ItemId>,
    pub selected: Option<ItemId>,
    pub turn: u64,
    /// Most recently written slot, named in relaxation suggestions.
    #[serde(default)]
    pub last_slot: Option<String>,
}

impl DialogState {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            phase: Phase::Start,
            slots: BTreeMap::new(),
            candidates: Vec::new(),
            selected: None,
            turn: 0,
            last_slot: None,
        }
    }

    pub fn slot(&self, name: &str) -> Option<&str> {
        self.slots.get(name).map(|s| s.value.as_str())
    }

    pub fn slot_values(&self) -> BTreeMap<String, String> {
        self.slots
            .iter()
            .map(|(k, v)| (k.clone(), v.value.clone()))
            .collect()
    }

    /// Checks the structural invariants against a slot schema.
    pub fn validate(&self, schema: &[String]) -> Result<(), DialogError> {
        let fail = |msg: String| Err(DialogError::InvalidState(msg));
        if self.selected.is_some() != self.phase.has_selection() {
            return fail(format!(
                "phase {} with selected = {:?}",
                self.phase, self.selected
            ));
        }
        if self.phase.is_browsing() && self.candidates.is_empty() {
            return fail(format!("phase {} with no candidates", self.phase));
        }
        if let Some(name) = self.slots.keys().find(|k| !schema.contains(k)) {
            return fail(format!("slot `{name}` is not in the schema"));
        }
        if let Some(last) = &self.last_slot {
            if !self.slots.contains_key(last) {
                return fail(format!("last slot `{last}` is not filled"));
            }
        }
        if self.slots.values().any(|s| s.turn > self.turn) {
            return fail("slot filled in a future turn".into());
        }
        Ok(())
    }
}

/// A search result as shown to the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCard {
    pub id: ItemId,
    pub caption: String,
    /// Rendered image: inline SVG markup or a URL.
    pub image: String,
}

/// UI action tag. On the wire these are plain strings such as
/// `"SHOW_RESULTS"` or `"ASK_SLOT(color)"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Action {
    AskSlot(String),
    ShowResults,
    OpenEditor,
    ConfirmDesign,
    Reset,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::AskSlot(slot) => write!(f, "ASK_SLOT({slot})"),
            Action::ShowResults => f.write_str("SHOW_RESULTS"),
            Action::OpenEditor => f.write_str("OPEN_EDITOR"),
            Action::ConfirmDesign => f.write_str("CONFIRM_DESIGN"),
            Action::Reset => f.write_str("RESET"),
        }
    }
}

impl FromStr for Action {
    type Err = DialogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SHOW_RESULTS" => Ok(Action::ShowResults),
            "OPEN_EDITOR" => Ok(Action::OpenEditor),
            "CONFIRM_DESIGN" => Ok(Action::ConfirmDesign),
            "RESET" => Ok(Action::Reset),
            _ => s
                .strip_prefix("ASK_SLOT(")
                .and_then(|rest| rest.strip_suffix(')'))
                .filter(|slot| !slot.is_empty())
                .map(|slot| Action::AskSlot(slot.to_string()))
                .ok_or_else(|| DialogError::UnknownAction(s.to_string())),
        }
    }
}

impl From<Action> for String {
    fn from(a: Action) -> Self {
        a.to_string()
    }
}

impl TryFrom<String> for Action {
    type Error = DialogError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Non-fatal problems a step ran into. The state is always left valid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepNotice {
    LowConfidence,
    IndexOutOfRange { index: u32, available: usize },
    RetrievalUnavailable { message: String },
    NoResults { relax: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Response {
    pub text: String,
    pub items: Vec<ItemCard>,
    pub actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<StepNotice>,
}

impl Response {
    pub fn has_action(&self, action: &Action) -> bool {
        self.actions.contains(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_tags_round_trip() {
        for a in [
            Action::AskSlot("color".into()),
            Action::ShowResults,
            Action::OpenEditor,
            Action::ConfirmDesign,
            Action::Reset,
        ] {
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(serde_json::from_str::<Action>(&json).unwrap(), a);
        }
        assert_eq!(
            Action::AskSlot("color".into()).to_string(),
            "ASK_SLOT(color)"
        );
        assert!("ASK_SLOT()".parse::<Action>().is_err());
        assert!("JUMP".parse::<Action>().is_err());
    }

    #[test]
    fn phase_wire_names() {
        assert_eq!(
            serde_json::to_string(&Phase::Designing).unwrap(),
            "\"DESIGNING\""
        );
        for p in Phase::ALL {
            let json = serde_json::to_string(&p).unwrap();
            assert_eq!(json.trim_matches('"'), p.as_str());
        }
    }

    #[test]
    fn validate_catches_each_invariant() {
        let schema = vec!["color".to_string()];
        let mut s = DialogState::new("s");
        assert!(s.validate(&schema).is_ok());
        s.selected = Some(3);
        assert!(s.validate(&schema).is_err());
        s.phase = Phase::Designing;
        assert!(s.validate(&schema).is_ok());
        s.selected = None;
        assert!(s.validate(&schema).is_err());
        let mut s = DialogState::new("s");
        s.phase = Phase::Suggesting;
        assert!(s.validate(&schema).is_err());
        let mut s = DialogState::new("s");
        s.slots.insert(
            "fabric".into(),
            SlotValue {
                value: "silk".into(),
                turn: 0,
            },
        );
        assert!(s.validate(&schema).is_err());
    }
}
