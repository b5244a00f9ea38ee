use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stylechat_core::retrieval::{
    batch_loss_and_grads, info_nce, DualEncoder, HnswParams, VectorIndex,
};
use stylechat_core::text::{HashingFeaturizer, SparseVector};

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Independent reference: cross-entropy written directly from the
/// definition, with no shared helpers.
fn reference_loss(t: &[Vec<f64>], v: &[Vec<f64>], tau: f64) -> f64 {
    let n = t.len();
    let s = |i: usize, j: usize| t[i].iter().zip(&v[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..n {
        let denom: f64 = (0..n).map(|j| s(i, j).exp()).sum();
        rows += -(s(i, i).exp() / denom).ln();
        let denom: f64 = (0..n).map(|j| s(j, i).exp()).sum();
        cols += -(s(i, i).exp() / denom).ln();
    }
    0.5 * (rows / n as f64 + cols / n as f64)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[test]
fn info_nce_matches_reference_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t: Vec<Vec<f64>> = (0..4).map(|_| random_unit(&mut rng, 8)).collect();
    let v: Vec<Vec<f64>> = (0..4).map(|_| random_unit(&mut rng, 8)).collect();
    let tau = 0.07;
    let (loss, dt, dv) = info_nce(&t, &v, tau);
    assert!((loss - reference_loss(&t, &v, tau)).abs() < 1e-10);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (which, grads) in [(0, &dt), (1, &dv)] {
        for i in 0..4 {
            for k in 0..8 {
                let bump = |delta: f64| {
                    let (mut t2, mut v2) = (t.clone(), v.clone());
                    if which == 0 {
                        t2[i][k] += delta;
                    } else {
                        v2[i][k] += delta;
                    }
                    reference_loss(&t2, &v2, tau)
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                worst = worst.max(rel_err(grads[i][k], numeric));
            }
        }
    }
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn encoder_gradients_match_finite_differences() {
    // B = 4, d = 8 through projection and normalization.
    let featurizer = HashingFeaturizer::new(5, 2);
    let mut enc = DualEncoder::init(featurizer, 5, 8, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for w in enc
        .text
        .weights
        .iter_mut()
        .chain(&mut enc.text.bias)
        .chain(&mut enc.item.weights)
        .chain(&mut enc.item.bias)
    {
        *w = rng.random_range(-0.5..0.5);
    }
    let captions: Vec<SparseVector> = [
        "a red dress",
        "blue midi dress",
        "long sleeves",
        "a dense pattern",
    ]
    .iter()
    .map(|c| featurizer.featurize(c))
    .collect();
    let inputs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..5).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let xs: Vec<&SparseVector> = captions.iter().collect();
    let us: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let tau = 0.07;
    let (_, g) = batch_loss_and_grads(&enc, &xs, &us, tau);

    let loss_of = |e: &DualEncoder| {
        let t: Vec<Vec<f64>> = captions.iter().map(|x| e.text.encode_features(x)).collect();
        let v: Vec<Vec<f64>> = inputs.iter().map(|u| e.item.encode(u).unwrap()).collect();
        reference_loss(&t, &v, tau)
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut check = |get: &dyn Fn(&mut DualEncoder) -> &mut Vec<f64>, analytic: &[f64]| {
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = enc.clone();
            get(&mut plus)[i] += h;
            let mut minus = enc.clone();
            get(&mut minus)[i] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(a, numeric));
        }
    };
    check(&|e| &mut e.text.weights, &g.text_weights);
    check(&|e| &mut e.text.bias, &g.text_bias);
    check(&|e| &mut e.item.weights, &g.item_weights);
    check(&|e| &mut e.item.bias, &g.item_bias);
    assert!(worst < 1e-4, "relative error {worst}");
}

#[test]
fn fresh_encoders_start_near_log_batch_size() {
    let enc = DualEncoder::init(HashingFeaturizer::CAPTION, 32, 64, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let captions: Vec<SparseVector> = (0..64)
        .map(|i| {
            HashingFeaturizer::CAPTION
                .featurize(&format!("a dress number {i} with {} sleeves", i * 7))
        })
        .collect();
    let inputs: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..32).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let xs: Vec<&SparseVector> = captions.iter().collect();
    let us: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let (loss, _) = batch_loss_and_grads(&enc, &xs, &us, 0.07);
    assert!((loss - 64f64.ln()).abs() < 0.3, "initial loss {loss}");
}

fn brute_force(entries: &[(u64, Vec<f64>)], q: &[f64], k: usize) -> Vec<(u64, f64)> {
    let mut all: Vec<(u64, f64)> = entries
        .iter()
        .map(|(id, v)| (*id, v.iter().zip(q).map(|(a, b)| a * b).sum::<f64>()))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn exact_search_equals_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let entries: Vec<(u64, Vec<f64>)> = (0..500)
        .map(|i| (1000 - i, random_unit(&mut rng, 16)))
        .collect();
    let mut idx = VectorIndex::exact(16);
    idx.merge(entries.clone()).unwrap();
    for _ in 0..20 {
        let q = random_unit(&mut rng, 16);
        let got: Vec<(u64, f64)> = idx
            .search(&q, 10)
            .unwrap()
            .iter()
            .map(|h| (h.id, h.score))
            .collect();
        assert_eq!(got, brute_force(&entries, &q, 10));
    }
}

#[test]
fn hnsw_recall_against_exact_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let entries: Vec<(u64, Vec<f64>)> = (0..2000).map(|i| (i, random_unit(&mut rng, 64))).collect();
    let mut exact = VectorIndex::exact(64);
    exact.merge(entries.clone()).unwrap();
    let mut hnsw = VectorIndex::hnsw(64, HnswParams::default());
    hnsw.merge(entries).unwrap();
    if let VectorIndex::Hnsw(h) = &hnsw {
        h.check_structure().unwrap();
    }
    let mut total = 0.0;
    for _ in 0..50 {
        let q = random_unit(&mut rng, 64);
        let truth: Vec<u64> = exact.search(&q, 10).unwrap().iter().map(|h| h.id).collect();
        let approx = hnsw.search(&q, 10).unwrap();
        assert!(approx.windows(2).all(|w| w[0].score >= w[1].score));
        total += approx.iter().filter(|h| truth.contains(&h.id)).count() as f64 / 10.0;
    }
    let recall = total / 50.0;
    assert!(recall >= 0.95, "recall@10 {recall}");
}

#[test]
fn merged_items_rank_first_for_themselves() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for mut idx in [
        VectorIndex::exact(32),
        VectorIndex::hnsw(32, HnswParams::default()),
    ] {
        let old: Vec<(u64, Vec<f64>)> = (1..=300).map(|i| (i, random_unit(&mut rng, 32))).collect();
        idx.merge(old.clone()).unwrap();
        let new = random_unit(&mut rng, 32);
        idx.merge(vec![(301, new.clone())]).unwrap();
        let top = idx.search(&new, 1).unwrap()[0];
        assert_eq!(top.id, 301);
        assert!((top.score - 1.0).abs() < 1e-6);
        for (id, v) in &old {
            assert_eq!(idx.search(v, 1).unwrap()[0].id, *id);
        }
        let restored = VectorIndex::from_bytes(&idx.to_bytes()).unwrap();
        let q = random_unit(&mut rng, 32);
        assert_eq!(
            restored.search(&q, 10).unwrap(),
            idx.search(&q, 10).unwrap()
        );
    }
}
