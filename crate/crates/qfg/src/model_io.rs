//! Versioned JSON model files.
//!
//! A document is an object with `format_version` (currently `"1"`), `kind`
//! (`"quantum"` or `"hmm"`), `model` and optional `tolerances`. Complex
//! numbers are `[re, im]` arrays and matrices are row-major arrays of rows.
//! All state and outcome indices are 0-based. See `docs/model-format.md` for
//! the full schema.

use std::fmt;
use std::path::Path;

use qfg_core::model::{ModelError, Tolerances};
use qfg_core::{Complex64, HmmKernel, HmmModel, InitialState, Matrix, Measurement, QuantumModel, Stage, ValidationReport};
use serde_json::Value;
use thiserror::Error;

use crate::json::Node;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelIoError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{path}: unsupported format_version {found:?} (expected \"1\")")]
    UnknownVersion { path: String, found: String },
    #[error("{path}: missing field")]
    MissingField { path: String },
    #[error("{path}: {message}")]
    InvalidValue { path: String, message: String },
    #[error("{path}: shape mismatch: {message}")]
    ShapeMismatch { path: String, message: String },
    #[error("{path}: {source}")]
    Model { path: String, source: ModelError },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl ModelIoError {
    /// Where in the input the error was found: `line:column` for syntax
    /// errors, a JSON path otherwise.
    pub fn location(&self) -> String {
        match self {
            ModelIoError::Syntax { line, column, .. } => format!("{line}:{column}"),
            ModelIoError::UnknownVersion { path, .. }
            | ModelIoError::MissingField { path }
            | ModelIoError::InvalidValue { path, .. }
            | ModelIoError::ShapeMismatch { path, .. }
            | ModelIoError::Model { path, .. }
            | ModelIoError::Io { path, .. } => path.clone(),
        }
    }
}

pub type IoResult<T> = Result<T, ModelIoError>;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Quantum(QuantumModel),
    Hmm(HmmModel),
}

/// A parsed model file together with the numeric validity report of its
/// payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDocument {
    pub model: ModelKind,
    pub report: ValidationReport,
}

impl ModelDocument {
    pub fn new(model: ModelKind) -> Self {
        let report = match &model {
            ModelKind::Quantum(m) => m.validate(),
            ModelKind::Hmm(h) => h.validate(),
        };
        Self { model, report }
    }

    pub fn quantum(&self) -> Option<&QuantumModel> {
        match &self.model {
            ModelKind::Quantum(m) => Some(m),
            ModelKind::Hmm(_) => None,
        }
    }
}

/// Cursor over a JSON value that remembers its path for error messages.
#[derive(Clone, Copy)]
struct At<'a> {
    value: &'a Value,
    path: &'a dyn fmt::Display,
}

struct Path2<'a>(&'a dyn fmt::Display, &'a str);

impl fmt::Display for Path2<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0, self.1)
    }
}

struct Index<'a>(&'a dyn fmt::Display, usize);

impl fmt::Display for Index<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.0, self.1)
    }
}

fn invalid(path: &dyn fmt::Display, message: impl Into<String>) -> ModelIoError {
    ModelIoError::InvalidValue { path: path.to_string(), message: message.into() }
}

fn shape(path: &dyn fmt::Display, message: impl Into<String>) -> ModelIoError {
    ModelIoError::ShapeMismatch { path: path.to_string(), message: message.into() }
}

fn describe(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

impl<'a> At<'a> {
    fn object(&self, allowed: &[&str]) -> IoResult<&'a serde_json::Map<String, Value>> {
        let map = self.value.as_object().ok_or_else(|| invalid(self.path, format!("expected an object, found {}", describe(self.value))))?;
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(invalid(&Path2(self.path, k), "unknown field"));
        }
        Ok(map)
    }

    fn array(&self) -> IoResult<&'a [Value]> {
        self.value
            .as_array()
            .map(Vec::as_slice)
            .ok_or_else(|| invalid(self.path, format!("expected an array, found {}", describe(self.value))))
    }

    fn str(&self) -> IoResult<&'a str> {
        self.value.as_str().ok_or_else(|| invalid(self.path, format!("expected a string, found {}", describe(self.value))))
    }

    fn f64(&self) -> IoResult<f64> {
        self.value.as_f64().ok_or_else(|| invalid(self.path, format!("expected a number, found {}", describe(self.value))))
    }

    fn usize(&self) -> IoResult<usize> {
        self.value
            .as_u64()
            .and_then(|x| usize::try_from(x).ok())
            .ok_or_else(|| invalid(self.path, "expected a nonnegative integer"))
    }
}

fn field<'a, R>(
    map: &'a serde_json::Map<String, Value>,
    path: &dyn fmt::Display,
    name: &str,
    f: impl FnOnce(At<'_>) -> IoResult<R>,
) -> IoResult<R> {
    let p = Path2(path, name);
    let value = map.get(name).ok_or_else(|| ModelIoError::MissingField { path: p.to_string() })?;
    f(At { value, path: &p })
}

fn each<R>(at: At<'_>, mut f: impl FnMut(At<'_>) -> IoResult<R>) -> IoResult<Vec<R>> {
    at.array()?
        .iter()
        .enumerate()
        .map(|(i, value)| {
            let p = Index(at.path, i);
            f(At { value, path: &p })
        })
        .collect()
}

fn complex(at: At<'_>) -> IoResult<Complex64> {
    match at.array()? {
        [re, im] => {
            let re = At { value: re, path: &Index(at.path, 0) }.f64()?;
            let im = At { value: im, path: &Index(at.path, 1) }.f64()?;
            Ok(Complex64::new(re, im))
        }
        other => Err(shape(at.path, format!("complex number needs [re, im], found {} elements", other.len()))),
    }
}

fn matrix(at: At<'_>, dim: usize) -> IoResult<Matrix> {
    let rows = each(at, |row| each(row, complex))?;
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        let cols: Vec<usize> = rows.iter().map(Vec::len).collect();
        return Err(shape(at.path, format!("expected {dim}x{dim}, found {} rows with lengths {cols:?}", rows.len())));
    }
    Ok(Matrix::from_rows(&rows).expect("rows checked"))
}

fn initial_state(at: At<'_>, dim: usize) -> IoResult<InitialState> {
    let ty = field(at.object(&["type", "index", "p", "amplitudes"])?, at.path, "type", |t| t.str().map(str::to_owned))?;
    match ty.as_str() {
        "basis_state" => {
            let map = at.object(&["type", "index"])?;
            let index = field(map, at.path, "index", |a| a.usize())?;
            if index >= dim {
                return Err(invalid(&Path2(at.path, "index"), format!("basis state {index} outside 0..{dim}")));
            }
            Ok(InitialState::BasisState(index))
        }
        "pmf" => {
            let map = at.object(&["type", "p"])?;
            let p = field(map, at.path, "p", |a| each(a, |x| x.f64()))?;
            if p.len() != dim {
                return Err(shape(&Path2(at.path, "p"), format!("expected {dim} entries, found {}", p.len())));
            }
            Ok(InitialState::BasisPmf(p))
        }
        "pure" => {
            let map = at.object(&["type", "amplitudes"])?;
            let psi = field(map, at.path, "amplitudes", |a| each(a, complex))?;
            if psi.len() != dim {
                return Err(shape(&Path2(at.path, "amplitudes"), format!("expected {dim} entries, found {}", psi.len())));
            }
            Ok(InitialState::PureVector(psi))
        }
        other => Err(invalid(&Path2(at.path, "type"), format!("unknown initial state type {other:?}"))),
    }
}

fn measurement(at: At<'_>, dim: usize) -> IoResult<Measurement> {
    let ty = field(at.object(&["type", "basis", "kraus"])?, at.path, "type", |t| t.str().map(str::to_owned))?;
    match ty.as_str() {
        "projection" => {
            let map = at.object(&["type", "basis"])?;
            Ok(Measurement::Projection { basis: field(map, at.path, "basis", |a| matrix(a, dim))? })
        }
        "general" => {
            let map = at.object(&["type", "kraus"])?;
            field(map, at.path, "kraus", |k| {
                let ops = k.value.as_object().ok_or_else(|| invalid(k.path, "expected an object of label: matrix"))?;
                if ops.is_empty() {
                    return Err(invalid(k.path, "general measurement needs at least one outcome"));
                }
                let mut labels = Vec::new();
                let mut kraus = Vec::new();
                for (label, value) in ops {
                    labels.push(label.clone());
                    kraus.push(matrix(At { value, path: &Path2(k.path, label) }, dim)?);
                }
                Ok(Measurement::General { labels, kraus })
            })
        }
        other => Err(invalid(&Path2(at.path, "type"), format!("unknown measurement type {other:?}"))),
    }
}

fn tolerance_field(map: &serde_json::Map<String, Value>, path: &dyn fmt::Display, name: &str, default: f64) -> IoResult<f64> {
    if !map.contains_key(name) {
        return Ok(default);
    }
    let t = field(map, path, name, |a| a.f64())?;
    if !(t >= 0.0) {
        return Err(invalid(&Path2(path, name), "tolerance must be nonnegative"));
    }
    Ok(t)
}

fn quantum(at: At<'_>, tolerances: Tolerances) -> IoResult<QuantumModel> {
    let map = at.object(&["dimension", "initial", "stages"])?;
    let dim = field(map, at.path, "dimension", |a| a.usize())?;
    if dim == 0 {
        return Err(invalid(&Path2(at.path, "dimension"), "dimension must be at least 1"));
    }
    let initial = field(map, at.path, "initial", |a| initial_state(a, dim))?;
    let stages = field(map, at.path, "stages", |a| {
        each(a, |s| {
            let m = s.object(&["unitary", "measurement"])?;
            Ok(Stage {
                unitary: field(m, s.path, "unitary", |u| matrix(u, dim))?,
                measurement: field(m, s.path, "measurement", |x| measurement(x, dim))?,
            })
        })
    })?;
    let model = QuantumModel::new(dim, initial, stages).map_err(|source| ModelIoError::Model { path: at.path.to_string(), source })?;
    Ok(model.with_tolerances(tolerances))
}

fn hmm(at: At<'_>, tolerance: f64) -> IoResult<HmmModel> {
    let map = at.object(&["initial", "kernels"])?;
    let initial = field(map, at.path, "initial", |a| each(a, |x| x.f64()))?;
    let kernels = field(map, at.path, "kernels", |a| {
        each(a, |k| {
            let table = each(k, |row| each(row, |ys| each(ys, |x| x.f64())))?;
            let states_in = table.len();
            let outcomes = table.first().map_or(0, Vec::len);
            let states_out = table.first().and_then(|r| r.first()).map_or(0, Vec::len);
            if states_in == 0 || outcomes == 0 || states_out == 0 {
                return Err(shape(k.path, "kernel must be a nonempty [x_prev][y][x_next] array"));
            }
            if table.iter().any(|r| r.len() != outcomes || r.iter().any(|ys| ys.len() != states_out)) {
                return Err(shape(k.path, format!("kernel rows must all be {outcomes}x{states_out}")));
            }
            let values = table.into_iter().flatten().flatten().collect();
            HmmKernel::new(states_in, outcomes, states_out, values).map_err(|source| ModelIoError::Model { path: k.path.to_string(), source })
        })
    })?;
    let model = HmmModel::new(initial, kernels).map_err(|source| ModelIoError::Model { path: at.path.to_string(), source })?;
    Ok(model.with_tolerance(tolerance))
}

/// Parses a model document. Structural problems are errors; numeric validity
/// (unitarity, completeness, normalization) is reported in
/// [`ModelDocument::report`].
pub fn parse_model(text: &str) -> IoResult<ModelDocument> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| ModelIoError::Syntax { line: e.line(), column: e.column(), message: e.to_string() })?;
    let path: &dyn fmt::Display = &"$";
    let top = At { value: &root, path }.object(&["format_version", "kind", "model", "tolerances"])?;
    let version = field(top, path, "format_version", |a| a.str().map(str::to_owned))?;
    if version != FORMAT_VERSION {
        return Err(ModelIoError::UnknownVersion { path: "$.format_version".into(), found: version });
    }
    let kind = field(top, path, "kind", |a| a.str().map(str::to_owned))?;
    let defaults = Tolerances::default();
    let tolerances = match top.get("tolerances") {
        None => defaults,
        Some(value) => {
            let p = Path2(path, "tolerances");
            let at = At { value, path: &p };
            let allowed: &[&str] = if kind == "hmm" { &["normalization"] } else { &["unitarity", "completeness", "normalization"] };
            let map = at.object(allowed)?;
            Tolerances {
                unitarity: tolerance_field(map, &p, "unitarity", defaults.unitarity)?,
                completeness: tolerance_field(map, &p, "completeness", defaults.completeness)?,
                normalization: tolerance_field(map, &p, "normalization", defaults.normalization)?,
            }
        }
    };
    let model = match kind.as_str() {
        "quantum" => ModelKind::Quantum(field(top, path, "model", |a| quantum(a, tolerances))?),
        "hmm" => ModelKind::Hmm(field(top, path, "model", |a| hmm(a, tolerances.normalization))?),
        other => return Err(invalid(&"$.kind", format!("unknown model kind {other:?}"))),
    };
    Ok(ModelDocument::new(model))
}

/// Reads and parses a model file.
pub fn load_model(path: &Path) -> IoResult<ModelDocument> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelIoError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_model(&text)
}

pub fn complex_node(z: Complex64) -> Node {
    Node::floats(&[z.re, z.im])
}

pub fn matrix_node(m: &Matrix) -> Node {
    Node::Array((0..m.rows()).map(|r| Node::Array(m.row(r).iter().map(|&z| complex_node(z)).collect())).collect())
}

fn initial_node(s: &InitialState) -> Node {
    match s {
        InitialState::BasisState(i) => Node::object([("type", Node::str("basis_state")), ("index", Node::uint(*i))]),
        InitialState::BasisPmf(p) => Node::object([("type", Node::str("pmf")), ("p", Node::floats(p))]),
        InitialState::PureVector(psi) => Node::object([
            ("type", Node::str("pure")),
            ("amplitudes", Node::Array(psi.iter().map(|&z| complex_node(z)).collect())),
        ]),
    }
}

fn measurement_node(m: &Measurement) -> Node {
    match m {
        Measurement::Projection { basis } => Node::object([("type", Node::str("projection")), ("basis", matrix_node(basis))]),
        Measurement::General { labels, kraus } => Node::object([
            ("type", Node::str("general")),
            ("kraus", Node::object_ordered(labels.iter().zip(kraus).map(|(l, k)| (l.clone(), matrix_node(k))))),
        ]),
    }
}

/// The document as a JSON tree; keys are sorted except Kraus labels, which
/// keep declaration order because it defines the outcome indices.
pub fn model_node(model: &ModelKind) -> Node {
    match model {
        ModelKind::Quantum(m) => {
            let t = m.tolerances();
            let body = Node::object([
                ("dimension", Node::uint(m.dimension())),
                ("initial", initial_node(m.initial())),
                (
                    "stages",
                    Node::Array(
                        m.stages()
                            .iter()
                            .map(|s| Node::object([("unitary", matrix_node(&s.unitary)), ("measurement", measurement_node(&s.measurement))]))
                            .collect(),
                    ),
                ),
            ]);
            Node::object([
                ("format_version", Node::str(FORMAT_VERSION)),
                ("kind", Node::str("quantum")),
                ("model", body),
                (
                    "tolerances",
                    Node::object([
                        ("unitarity", Node::Float(t.unitarity)),
                        ("completeness", Node::Float(t.completeness)),
                        ("normalization", Node::Float(t.normalization)),
                    ]),
                ),
            ])
        }
        ModelKind::Hmm(h) => {
            let kernels = h
                .kernels()
                .iter()
                .map(|k| {
                    Node::Array(
                        (0..k.states_in())
                            .map(|x| {
                                Node::Array(
                                    (0..k.outcomes())
                                        .map(|y| Node::Array((0..k.states_out()).map(|z| Node::Float(k.get(x, y, z))).collect()))
                                        .collect(),
                                )
                            })
                            .collect(),
                    )
                })
                .collect();
            Node::object([
                ("format_version", Node::str(FORMAT_VERSION)),
                ("kind", Node::str("hmm")),
                ("model", Node::object([("initial", Node::floats(h.initial())), ("kernels", Node::Array(kernels))])),
                ("tolerances", Node::object([("normalization", Node::Float(h.tolerance()))])),
            ])
        }
    }
}

/// Canonical text of a model: deterministic and bit-exact under
/// [`parse_model`].
pub fn serialize_model(model: &ModelKind) -> String {
    model_node(model).to_pretty()
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUBIT: &str = r#"{
  "format_version": "1",
  "kind": "quantum",
  "model": {
    "dimension": 2,
    "initial": {"type": "basis_state", "index": 0},
    "stages": [
      {
        "unitary": [[[0.7071067811865476, 0], [0.7071067811865476, 0]], [[0.7071067811865476, 0], [-0.7071067811865476, 0]]],
        "measurement": {"type": "projection", "basis": [[[1, 0], [0, 0]], [[0, 0], [1, 0]]]}
      }
    ]
  }
}"#;

    #[test]
    fn parses_a_qubit() {
        let doc = parse_model(QUBIT).unwrap();
        assert!(doc.report.passed());
        let m = doc.quantum().unwrap();
        assert_eq!(m.dimension(), 2);
        assert_eq!(m.tolerances(), Tolerances::default());
    }

    #[test]
    fn serialization_is_canonical() {
        let doc = parse_model(QUBIT).unwrap();
        let text = serialize_model(&doc.model);
        assert_eq!(serialize_model(&parse_model(&text).unwrap().model), text);
        assert!(text.contains("[[1, 0], [0, 0]]"));
    }

    #[test]
    fn kraus_labels_keep_declaration_order() {
        let text = QUBIT.replace(
            r#"{"type": "projection", "basis": [[[1, 0], [0, 0]], [[0, 0], [1, 0]]]}"#,
            r#"{"type": "general", "kraus": {"up": [[[0, 0], [0, 0]], [[0, 0], [1, 0]]], "down": [[[1, 0], [0, 0]], [[0, 0], [0, 0]]]}}"#,
        );
        let doc = parse_model(&text).unwrap();
        let m = doc.quantum().unwrap();
        assert_eq!(m.stages()[0].measurement.labels(), vec!["up".to_string(), "down".to_string()]);
        let again = serialize_model(&doc.model);
        assert!(again.find("\"up\"").unwrap() < again.find("\"down\"").unwrap());
    }

    #[test]
    fn errors_carry_locations() {
        let e = parse_model("{\n  \"format_version\": \"1\",\n  oops\n}").unwrap_err();
        assert!(matches!(e, ModelIoError::Syntax { line: 3, .. }), "{e:?}");
        let e = parse_model(&QUBIT.replace("\"1\"", "\"2\"")).unwrap_err();
        assert!(matches!(e, ModelIoError::UnknownVersion { .. }));
        let e = parse_model(&QUBIT.replace("[[1, 0], [0, 0]], [[0, 0], [1, 0]]]}", "[[1, 0], [0, 0]]]}")).unwrap_err();
        assert_eq!(e.location(), "$.model.stages[0].measurement.basis");
        assert!(matches!(e, ModelIoError::ShapeMismatch { .. }));
        let e = parse_model(&QUBIT.replace("\"index\": 0", "\"index\": 0, \"extra\": 1")).unwrap_err();
        assert_eq!(e.location(), "$.model.initial.extra");
        let e = parse_model(&QUBIT.replace("\"dimension\": 2,", "")).unwrap_err();
        assert_eq!(e, ModelIoError::MissingField { path: "$.model.dimension".into() });
        let e = parse_model(&QUBIT.replace("[0.7071067811865476, 0], [0.7071067811865476, 0]]", "[0.7071067811865476], [0.7071067811865476, 0]]")).unwrap_err();
        assert_eq!(e.location(), "$.model.stages[0].unitary[0][0]");
    }

    #[test]
    fn numeric_problems_are_reported_not_rejected() {
        let doc = parse_model(&QUBIT.replace("-0.7071067811865476", "0.7071067811865476")).unwrap();
        assert!(!doc.report.passed());
        assert!(doc.report.failures().any(|c| c.name == "unitarity"));
    }

    #[test]
    fn hmm_documents() {
        let text = r#"{"format_version": "1", "kind": "hmm", "model": {"initial": [1, 0],
            "kernels": [[[[0, 1], [0, 0]], [[0.5, 0], [0, 0.5]]]]}}"#;
        let doc = parse_model(text).unwrap();
        assert!(doc.report.passed());
        let again = parse_model(&serialize_model(&doc.model)).unwrap();
        assert_eq!(again, doc);
        let bad = text.replace("[[0.5, 0], [0, 0.5]]", "[[0.5, 0, 1], [0, 0.5]]");
        assert!(matches!(parse_model(&bad).unwrap_err(), ModelIoError::ShapeMismatch { .. }));
    }
}
