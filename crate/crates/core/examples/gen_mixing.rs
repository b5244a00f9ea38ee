//! Regenerates `data/mixing.mix1` from the recorded seed.
//!
//! cargo run -p stylechat-core --example gen_mixing

use stylechat_core::garment::MixingMatrix;

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/mixing.mix1");
    let m = MixingMatrix::generate(MixingMatrix::SHIPPED_SEED);
    std::fs::write(path, m.to_bytes()).expect("write mixing matrix");
    println!("wrote {path}");
}
