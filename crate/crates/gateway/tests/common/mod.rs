#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use stylechat_gateway::config::ServiceConfig;
use stylechat_gateway::pipeline::Models;

/// A configuration small enough to train in a few seconds.
pub fn small_config() -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.data.catalog_size = 600;
    c.encoders.epochs = 15;
    c.flow.pairs = 1500;
    c.flow.epochs = 12;
    c.flow.hidden = 32;
    c
}

pub fn small_toml(data_dir: &std::path::Path) -> String {
    format!(
        "data_dir = {:?}\n[data]\ncatalog_size = 600\n[encoders]\nepochs = 15\n[flow]\npairs = 1500\nepochs = 12\nhidden = 32\n",
        data_dir.display().to_string()
    )
}

/// Trained once per test binary.
pub fn small_models() -> Arc<Models> {
    static MODELS: OnceLock<Arc<Models>> = OnceLock::new();
    MODELS
        .get_or_init(|| Arc::new(Models::train(&small_config()).expect("small models train")))
        .clone()
}
