use proptest::prelude::*;
use qfg::{parse_model, serialize_model, ModelIoError, ModelKind};
use qfg_core::random::{random_hmm, random_model, ModelRng, ModelShape};
use qfg_core::{InitialState, Matrix, Measurement, QuantumModel};

fn push_matrix(bits: &mut Vec<u64>, m: &Matrix) {
    for z in m.as_slice() {
        bits.push(z.re.to_bits());
        bits.push(z.im.to_bits());
    }
}

/// Every number of the model as raw bits, so comparisons are exact even for
/// signed zeros.
fn model_bits(m: &QuantumModel) -> Vec<u64> {
    let mut bits = vec![m.dimension() as u64];
    match m.initial() {
        InitialState::BasisState(i) => bits.push(*i as u64),
        InitialState::BasisPmf(p) => bits.extend(p.iter().map(|x| x.to_bits())),
        InitialState::PureVector(psi) => bits.extend(psi.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()])),
    }
    for s in m.stages() {
        push_matrix(&mut bits, &s.unitary);
        match &s.measurement {
            Measurement::Projection { basis } => push_matrix(&mut bits, basis),
            Measurement::General { kraus, .. } => kraus.iter().for_each(|k| push_matrix(&mut bits, k)),
        }
    }
    let t = m.tolerances();
    bits.extend([t.unitarity.to_bits(), t.completeness.to_bits(), t.normalization.to_bits()]);
    bits
}

fn sample_document() -> String {
    let m = random_model(&mut ModelRng::new(99), ModelShape::new(2, 2));
    serialize_model(&ModelKind::Quantum(m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantum_round_trip_is_bit_exact(seed in any::<u64>()) {
        let mut rng = ModelRng::new(seed);
        let dim = rng.range(1, 4);
        let steps = rng.range(1, 3);
        let m = random_model(&mut rng, ModelShape::new(dim, steps));
        let text = serialize_model(&ModelKind::Quantum(m.clone()));
        let doc = parse_model(&text).unwrap();
        let back = doc.quantum().unwrap();
        prop_assert_eq!(back, &m);
        prop_assert_eq!(model_bits(back), model_bits(&m));
        prop_assert_eq!(serialize_model(&doc.model), text);
        prop_assert!(doc.report.passed());
    }

    #[test]
    fn hmm_round_trip_is_exact(seed in any::<u64>()) {
        let mut rng = ModelRng::new(seed);
        let h = random_hmm(&mut rng, rng_range(seed, 4), 3, 2);
        let text = serialize_model(&ModelKind::Hmm(h.clone()));
        let doc = parse_model(&text).unwrap();
        prop_assert_eq!(&doc.model, &ModelKind::Hmm(h));
        prop_assert_eq!(serialize_model(&doc.model), text);
    }

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        let _ = parse_model(&text);
    }

    #[test]
    fn mutated_documents_fail_with_locations(cut in 0usize..2000, byte in any::<u8>()) {
        let doc = sample_document();
        let mut bytes = doc.into_bytes();
        let i = cut % bytes.len();
        bytes[i] = byte;
        let text = String::from_utf8_lossy(&bytes);
        if let Err(e) = parse_model(&text) {
            prop_assert!(!e.location().is_empty());
            prop_assert!(!e.to_string().is_empty());
        }
    }
}

fn rng_range(seed: u64, hi: usize) -> usize {
    1 + (seed % hi as u64) as usize
}

#[test]
fn identity_serializes_with_integer_literals() {
    let stage = qfg_core::Stage { unitary: Matrix::identity(2), measurement: Measurement::Projection { basis: Matrix::identity(2) } };
    let m = QuantumModel::new(2, InitialState::BasisState(0), vec![stage]).unwrap();
    let text = serialize_model(&ModelKind::Quantum(m));
    assert!(text.contains("[[1, 0], [0, 0]],\n"));
    assert!(text.contains("[[0, 0], [1, 0]]\n"));
    assert_eq!(text, serialize_model(&parse_model(&text).unwrap().model));
}

#[test]
fn signed_zero_survives() {
    let mut u = Matrix::identity(2);
    u[(0, 1)] = qfg_core::Complex64::new(-0.0, -0.0);
    let stage = qfg_core::Stage { unitary: u, measurement: Measurement::Projection { basis: Matrix::identity(2) } };
    let m = QuantumModel::new(2, InitialState::BasisState(0), vec![stage]).unwrap();
    let text = serialize_model(&ModelKind::Quantum(m.clone()));
    let back = parse_model(&text).unwrap();
    assert_eq!(model_bits(back.quantum().unwrap()), model_bits(&m));
}

#[test]
fn shipped_models_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../models");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let doc = qfg::load_model(&path).unwrap();
        let valid = !path.ends_with("incomplete_kraus.json");
        assert_eq!(doc.report.passed(), valid, "{}", path.display());
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn error_kinds() {
    let doc = sample_document();
    assert!(matches!(parse_model(""), Err(ModelIoError::Syntax { line: 1, .. })));
    assert!(matches!(parse_model("[1, 2"), Err(ModelIoError::Syntax { .. })));
    assert!(matches!(parse_model("1e999"), Err(ModelIoError::Syntax { .. })));
    assert!(matches!(parse_model(&doc.replace("\"quantum\"", "\"classical\"")), Err(ModelIoError::InvalidValue { .. })));
    let e = parse_model(&doc.replacen("\"dimension\": 2", "\"dimension\": 3", 1)).unwrap_err();
    assert!(matches!(e, ModelIoError::ShapeMismatch { .. }), "{e}");
    assert!(e.location().starts_with("$.model."), "{}", e.location());
    let e = qfg::load_model(std::path::Path::new("/nonexistent/model.json")).unwrap_err();
    assert!(matches!(e, ModelIoError::Io { .. }));
}
