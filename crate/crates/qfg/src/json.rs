//! Deterministic JSON writer shared by model files and structured CLI output.

use std::fmt::Write as _;

/// A JSON tree whose object keys keep the order they were given in.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Array(Vec<Node>),
    Object(Vec<(String, Node)>),
}

impl Node {
    /// Object with keys sorted bytewise.
    pub fn object<K: Into<String>>(pairs: impl IntoIterator<Item = (K, Node)>) -> Node {
        let mut v: Vec<(String, Node)> = pairs.into_iter().map(|(k, n)| (k.into(), n)).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        Node::Object(v)
    }

    /// Object that keeps the given key order.
    pub fn object_ordered<K: Into<String>>(pairs: impl IntoIterator<Item = (K, Node)>) -> Node {
        Node::Object(pairs.into_iter().map(|(k, n)| (k.into(), n)).collect())
    }

    pub fn str(s: impl Into<String>) -> Node {
        Node::Str(s.into())
    }

    pub fn uint(x: usize) -> Node {
        Node::Int(x as i64)
    }

    pub fn floats(xs: &[f64]) -> Node {
        Node::Array(xs.iter().map(|&x| Node::Float(x)).collect())
    }

    fn depth(&self) -> usize {
        match self {
            Node::Array(items) => 1 + items.iter().map(Node::depth).max().unwrap_or(0),
            Node::Object(_) => usize::MAX / 2,
            _ => 0,
        }
    }

    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        write_node(self, 0, &mut out);
        out.push('\n');
        out
    }
}

/// Integral values print as integer literals, everything else with 17
/// significant digits, which round-trips every `f64` exactly.
pub fn format_float(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    if x == 0.0 && x.is_sign_negative() {
        return "-0.0".into();
    }
    if x.fract() == 0.0 && x.abs() < 1e15 {
        return format!("{}", x as i64);
    }
    format!("{x:.16e}")
}

fn write_str(s: &str, out: &mut String) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_inline(node: &Node, out: &mut String) {
    match node {
        Node::Null => out.push_str("null"),
        Node::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Node::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Node::Float(x) => out.push_str(&format_float(*x)),
        Node::Str(s) => write_str(s, out),
        Node::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_inline(item, out);
            }
            out.push(']');
        }
        Node::Object(pairs) => {
            out.push('{');
            for (i, (k, v)) in pairs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_str(k, out);
                out.push_str(": ");
                write_inline(v, out);
            }
            out.push('}');
        }
    }
}

fn indent(level: usize, out: &mut String) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_node(node: &Node, level: usize, out: &mut String) {
    match node {
        Node::Array(items) if node.depth() > 2 && !items.is_empty() => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(level + 1, out);
                write_node(item, level + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(level, out);
            out.push(']');
        }
        Node::Object(pairs) if !pairs.is_empty() => {
            out.push_str("{\n");
            for (i, (k, v)) in pairs.iter().enumerate() {
                indent(level + 1, out);
                write_str(k, out);
                out.push_str(": ");
                write_node(v, level + 1, out);
                out.push_str(if i + 1 < pairs.len() { ",\n" } else { "\n" });
            }
            indent(level, out);
            out.push('}');
        }
        _ => write_inline(node, out),
    }
}
