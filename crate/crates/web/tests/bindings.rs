use stylechat_core::garment::{measure_svg, Attr, AttributeVector, MixingMatrix};
use stylechat_core::grammar::FASHION_GRAMMAR;
use stylechat_web::{attribute_schema, expand_json, render_json, roundtrip_json};

const MID: [f64; 6] = [0.3, 0.6, 0.5, 0.4, 0.2, 0.15];

#[test]
fn schema_lists_six_attributes() {
    let schema: serde_json::Value = serde_json::from_str(&attribute_schema()).unwrap();
    let attrs = schema.as_array().unwrap();
    assert_eq!(attrs.len(), 6);
    assert_eq!(attrs[Attr::Hue.index()]["cyclic"], true);
}

#[test]
fn render_reads_back_its_inputs() {
    let r = render_json(&MID).unwrap();
    assert!(r.svg.starts_with("<svg"));
    assert_eq!(measure_svg(&r.svg).unwrap().values().to_vec(), r.measured);
    let target = AttributeVector::from_slice(&MID).unwrap();
    let measured = AttributeVector::from_slice(&r.measured).unwrap();
    for (attr, d) in Attr::ALL.iter().zip(target.abs_diff(&measured)) {
        assert!(d < 0.05, "{attr:?} off by {d}");
    }
    assert!(!r.caption.is_empty());
}

#[test]
fn bad_attribute_vectors_are_rejected() {
    assert!(render_json(&[0.5; 5]).is_err());
    assert!(render_json(&[0.5, 0.5, 0.5, 0.5, 0.5, 1.2]).is_err());
    assert!(roundtrip_json(&MID, -0.1, 0).is_err());
}

#[test]
fn noiseless_roundtrip_recovers_attributes() {
    let r = roundtrip_json(&MID, 0.0, 9).unwrap();
    assert_eq!(r.latent.len(), 16);
    assert!(r.error.iter().all(|e| *e < 1e-9), "{:?}", r.error);
    // The latent is the mixing matrix applied to the signed attributes.
    let mixing = MixingMatrix::shipped();
    for (row, w) in r.latent.iter().enumerate() {
        let expected: f64 = MID
            .iter()
            .enumerate()
            .map(|(c, a)| mixing.mix(row, c) * (2.0 * a - 1.0))
            .sum();
        assert!((w - expected).abs() < 1e-12);
    }
    let noisy = roundtrip_json(&MID, 0.3, 9).unwrap();
    assert!(noisy.error.iter().any(|e| *e > 1e-6));
    assert_eq!(noisy.latent, roundtrip_json(&MID, 0.3, 9).unwrap().latent);
}

#[test]
fn expansion_reports_counts_and_errors() {
    let e = expand_json(FASHION_GRAMMAR, 50, 1).unwrap();
    assert_eq!(
        e.total,
        e.intents.iter().map(|i| i.generated).sum::<usize>()
    );
    assert!(e
        .intents
        .iter()
        .all(|i| i.generated <= 50 && i.generated > 0));
    assert!(e.examples.len() <= 200);

    let src = "%[greet]\n    hello @[name]\n\n@[name]\n    ann\n    bo\n";
    let e = expand_json(src, 10, 0).unwrap();
    assert_eq!(e.total, 2);
    assert_eq!(e.intents[0].possible, "2");

    let err = expand_json("%[greet]\n    hi @[missing]\n", 10, 0)
        .err()
        .unwrap();
    assert!(err.contains("missing"), "{err}");
    assert!(expand_json(src, 0, 0).is_err());
}
