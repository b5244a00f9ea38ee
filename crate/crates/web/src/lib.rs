//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes plain numbers or strings and returns a JSON string, so
//! the page needs no generated TypeScript types. The `*_json` functions hold
//! the logic and are what the native tests call.

use std::num::NonZeroUsize;

use serde::Serialize;
use stylechat_core::garment::{
    decode, measure_svg, render, sample_latent, Attr, AttributeVector, MixingMatrix, Vocabulary,
};
use stylechat_core::grammar::{expand, expansion_count, parse_grammar, FASHION_GRAMMAR};
use wasm_bindgen::prelude::*;

/// Examples returned to the page; the full count is reported separately.
const PREVIEW_LIMIT: usize = 200;

#[derive(Serialize)]
struct AttributeMeta<'a> {
    name: &'a str,
    label: &'a str,
    cyclic: bool,
    bins: &'a [String],
}

#[derive(Serialize)]
pub struct Rendered {
    pub svg: String,
    /// Attributes read back from the SVG geometry.
    pub measured: Vec<f64>,
    pub caption: String,
}

#[derive(Serialize)]
pub struct RoundTrip {
    pub latent: Vec<f64>,
    pub decoded: Vec<f64>,
    /// Per-attribute distance between target and decoded values (hue wraps).
    pub error: Vec<f64>,
    pub svg: String,
}

#[derive(Serialize)]
pub struct IntentCount {
    pub intent: String,
    pub templates: usize,
    pub possible: String,
    pub generated: usize,
}

#[derive(Serialize)]
pub struct Expansion {
    pub intents: Vec<IntentCount>,
    pub total: usize,
    pub examples: Vec<stylechat_core::grammar::TrainingExample>,
}

fn attributes(values: &[f64]) -> Result<AttributeVector, String> {
    AttributeVector::from_slice(values).map_err(|e| e.to_string())
}

pub fn render_json(values: &[f64]) -> Result<Rendered, String> {
    let a = attributes(values)?;
    let svg = render(&a).svg;
    let measured = measure_svg(&svg).map_err(|e| e.to_string())?;
    Ok(Rendered {
        caption: Vocabulary::shipped().caption(&measured),
        measured: measured.values().to_vec(),
        svg,
    })
}

pub fn roundtrip_json(values: &[f64], sigma: f64, seed: u32) -> Result<RoundTrip, String> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(format!("noise must be within [0, 1], got {sigma}"));
    }
    let a = attributes(values)?;
    let mixing = MixingMatrix::shipped();
    let w = sample_latent(&mixing, &a, sigma, u64::from(seed));
    let decoded = decode(&mixing, &w);
    Ok(RoundTrip {
        latent: w.0.to_vec(),
        error: a.abs_diff(&decoded).to_vec(),
        decoded: decoded.values().to_vec(),
        svg: render(&decoded).svg,
    })
}

pub fn expand_json(source: &str, cap: u32, seed: u32) -> Result<Expansion, String> {
    let grammar = parse_grammar(source).map_err(|e| e.to_string())?;
    let cap = NonZeroUsize::new(cap as usize).ok_or("cap must be at least 1")?;
    let examples = expand(&grammar, cap, u64::from(seed));
    let intents = grammar
        .intents
        .iter()
        .map(|block| IntentCount {
            intent: block.name.clone(),
            templates: block.templates.len(),
            possible: expansion_count(&grammar, block).to_string(),
            generated: examples.iter().filter(|e| e.intent == block.name).count(),
        })
        .collect();
    Ok(Expansion {
        intents,
        total: examples.len(),
        examples: examples.into_iter().take(PREVIEW_LIMIT).collect(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Attribute names, labels and caption words, as JSON.
#[wasm_bindgen]
pub fn attribute_schema() -> String {
    let vocab = Vocabulary::shipped();
    let meta: Vec<AttributeMeta> = Attr::ALL
        .iter()
        .map(|&attr| {
            let spec = vocab.spec(attr);
            AttributeMeta {
                name: &spec.name,
                label: &spec.label,
                cyclic: spec.cyclic,
                bins: &spec.bins,
            }
        })
        .collect();
    serde_json::to_string(&meta).expect("schema serializes")
}

#[wasm_bindgen]
pub fn shipped_grammar() -> String {
    FASHION_GRAMMAR.to_string()
}

/// Renders six attribute values and measures the result.
#[wasm_bindgen]
pub fn render_garment(values: &[f64]) -> Result<String, JsError> {
    to_js(render_json(values))
}

/// Encodes attributes into a noisy latent and decodes them again.
#[wasm_bindgen]
pub fn latent_roundtrip(values: &[f64], sigma: f64, seed: u32) -> Result<String, JsError> {
    to_js(roundtrip_json(values, sigma, seed))
}

#[wasm_bindgen]
pub fn expand_grammar(source: &str, cap: u32, seed: u32) -> Result<String, JsError> {
    to_js(expand_json(source, cap, seed))
}
