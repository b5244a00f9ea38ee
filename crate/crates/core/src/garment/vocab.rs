use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Attr, AttributeVector, GarmentError, ATTRIBUTE_COUNT};

/// Display metadata and caption words for one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub label: String,
    /// Dialog slot / NLU entity name this attribute is requested through.
    pub slot: String,
    pub cyclic: bool,
    /// Ordered words, one per equal-width bin.
    pub bins: Vec<String>,
}

/// Caption vocabulary shared by the catalog generator, dialog captions and
/// the entity lexicon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    pub garment: String,
    pub attributes: Vec<AttributeSpec>,
}

pub const SHIPPED_VOCABULARY: &str = include_str!("../../data/vocabulary.json");

impl Vocabulary {
    pub fn from_json(text: &str) -> Result<Self, GarmentError> {
        let vocab: Self =
            serde_json::from_str(text).map_err(|e| GarmentError::Vocabulary(e.to_string()))?;
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_VOCABULARY).expect("shipped vocabulary is valid")
    }

    fn validate(&self) -> Result<(), GarmentError> {
        if self.attributes.len() != ATTRIBUTE_COUNT {
            return Err(GarmentError::Vocabulary(format!(
                "expected {ATTRIBUTE_COUNT} attributes, found {}",
                self.attributes.len()
            )));
        }
        for (spec, attr) in self.attributes.iter().zip(Attr::ALL) {
            if spec.bins.is_empty() {
                return Err(GarmentError::Vocabulary(format!(
                    "`{}` has no bins",
                    spec.name
                )));
            }
            if spec.cyclic != attr.is_cyclic() {
                return Err(GarmentError::Vocabulary(format!(
                    "`{}` cyclic flag does not match attribute {}",
                    spec.name,
                    attr.index()
                )));
            }
        }
        Ok(())
    }

    pub fn spec(&self, attr: Attr) -> &AttributeSpec {
        &self.attributes[attr.index()]
    }

    pub fn names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn attribute_for_slot(&self, slot: &str) -> Option<Attr> {
        self.attributes
            .iter()
            .position(|a| a.slot == slot)
            .map(|i| Attr::ALL[i])
    }

    /// Linear attributes use equal-width bins over `[0, 1]`; cyclic ones use
    /// bins centered on `k / n`, so hue 0 sits in the middle of the first bin.
    pub fn bin_index(&self, attr: Attr, value: f64) -> usize {
        let n = self.spec(attr).bins.len();
        if attr.is_cyclic() {
            (value.rem_euclid(1.0) * n as f64).round() as usize % n
        } else {
            ((value * n as f64).floor() as usize).min(n - 1)
        }
    }

    pub fn bin_center(&self, attr: Attr, bin: usize) -> f64 {
        let n = self.spec(attr).bins.len() as f64;
        if attr.is_cyclic() {
            bin as f64 / n
        } else {
            (bin as f64 + 0.5) / n
        }
    }

    pub fn word(&self, attr: Attr, value: f64) -> &str {
        &self.spec(attr).bins[self.bin_index(attr, value)]
    }

    pub fn word_center(&self, attr: Attr, word: &str) -> Option<f64> {
        self.spec(attr)
            .bins
            .iter()
            .position(|w| w == word)
            .map(|b| self.bin_center(attr, b))
    }

    /// Caption for a fully specified garment.
    pub fn caption(&self, attributes: &AttributeVector) -> String {
        let words = Attr::ALL.map(|a| Some(self.word(a, attributes.get(a))));
        self.compose(&words)
    }

    /// Caption from slot values keyed by slot name. Hue and sleeve length
    /// are required.
    pub fn caption_from_slots(
        &self,
        slots: &BTreeMap<String, String>,
    ) -> Result<String, GarmentError> {
        let mut words: [Option<&str>; ATTRIBUTE_COUNT] = [None; ATTRIBUTE_COUNT];
        for attr in Attr::ALL {
            words[attr.index()] = slots.get(&self.spec(attr).slot).map(String::as_str);
        }
        for required in [Attr::Hue, Attr::SleeveLength] {
            if words[required.index()].is_none() {
                return Err(GarmentError::MissingRequiredSlot(
                    self.spec(required).slot.clone(),
                ));
            }
        }
        Ok(self.compose(&words))
    }

    /// `a {color} [{length}] dress with {sleeve} sleeves[, a {waist} waist][, a {neckline} neckline][ and a {pattern} pattern]`
    /// with the final clause joined by "and".
    fn compose(&self, words: &[Option<&str>; ATTRIBUTE_COUNT]) -> String {
        let w = |a: Attr| words[a.index()];
        let mut head = String::from("a");
        for attr in [Attr::Hue, Attr::GarmentLength] {
            if let Some(word) = w(attr) {
                head.push(' ');
                head.push_str(word);
            }
        }
        head.push(' ');
        head.push_str(&self.garment);

        let mut clauses = Vec::new();
        if let Some(s) = w(Attr::SleeveLength) {
            clauses.push(format!("{s} sleeves"));
        }
        for (attr, noun) in [
            (Attr::WaistFit, "waist"),
            (Attr::NecklineDepth, "neckline"),
            (Attr::PatternDensity, "pattern"),
        ] {
            if let Some(word) = w(attr) {
                clauses.push(format!("a {word} {noun}"));
            }
        }
        match clauses.len() {
            0 => head,
            1 => format!("{head} with {}", clauses[0]),
            n => format!(
                "{head} with {} and {}",
                clauses[..n - 1].join(", "),
                clauses[n - 1]
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn two_slot_caption() {
        let v = Vocabulary::shipped();
        let c = v
            .caption_from_slots(&slots(&[("color", "red"), ("sleeve_length", "long")]))
            .unwrap();
        assert_eq!(c, "a red dress with long sleeves");
    }

    #[test]
    fn missing_required_slot() {
        let v = Vocabulary::shipped();
        assert!(matches!(
            v.caption_from_slots(&slots(&[("color", "red")])),
            Err(GarmentError::MissingRequiredSlot(s)) if s == "sleeve_length"
        ));
    }

    #[test]
    fn full_caption_fixed_order() {
        let v = Vocabulary::shipped();
        let c = v
            .caption_from_slots(&slots(&[
                ("pattern_density", "dense"),
                ("color", "blue"),
                ("neckline_depth", "deep"),
                ("sleeve_length", "short"),
                ("waist_fit", "fitted"),
                ("garment_length", "midi"),
            ]))
            .unwrap();
        assert_eq!(
            c,
            "a blue midi dress with short sleeves, a fitted waist, a deep neckline and a dense pattern"
        );
    }

    #[test]
    fn binning() {
        let v = Vocabulary::shipped();
        assert_eq!(v.word(Attr::SleeveLength, 0.0), "cap");
        assert_eq!(v.word(Attr::SleeveLength, 1.0), "long");
        assert_eq!(v.word(Attr::SleeveLength, 0.5), "elbow-length");
        assert_eq!(v.word(Attr::Hue, 0.0), "red");
        assert_eq!(v.word(Attr::Hue, 0.97), "red");
        assert_eq!(v.word(Attr::Hue, 240.0 / 360.0), "blue");
        for attr in Attr::ALL {
            for b in 0..v.spec(attr).bins.len() {
                assert_eq!(v.bin_index(attr, v.bin_center(attr, b)), b);
            }
        }
    }

    #[test]
    fn caption_matches_attributes() {
        let v = Vocabulary::shipped();
        let a = AttributeVector::new([0.95, 0.1, 0.5, 0.3, 0.0, 0.5]).unwrap();
        assert_eq!(
            v.caption(&a),
            "a cyan micro dress with long sleeves, a regular waist, a crew neckline and a plain pattern"
        );
    }
}
