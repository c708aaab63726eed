//! Text <-> [`WorkflowIr`] for the five workflow representation schemes.
//!
//! Every parser is strict: malformed records, unknown content, or grammar
//! violations produce a [`ParseFailure`] instead of a best-effort repair.
//! Serializers emit one canonical form per scheme, documented under
//! `docs/formats/`.

mod bpmn;
mod core_flow;
mod cursor;
mod pseudo;
mod pysteps;
mod yaml;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::WorkflowIr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Bpmn,
    Core,
    Pysteps,
    Yaml,
    Pseudo,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Bpmn, Scheme::Core, Scheme::Pysteps, Scheme::Yaml, Scheme::Pseudo];

    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Bpmn => "bpmn",
            Scheme::Core => "core",
            Scheme::Pysteps => "pysteps",
            Scheme::Yaml => "yaml",
            Scheme::Pseudo => "pseudo",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown scheme `{0}` (expected bpmn, core, pysteps, yaml or pseudo)")]
pub struct UnknownScheme(pub String);

impl FromStr for Scheme {
    type Err = UnknownScheme;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownScheme(s.to_string()))
    }
}

/// A workflow document in a known scheme. The text is kept raw; nothing is
/// checked until it is parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowDoc {
    pub text: String,
    pub scheme: Scheme,
}

impl WorkflowDoc {
    pub fn new(text: impl Into<String>, scheme: Scheme) -> Self {
        Self {
            text: text.into(),
            scheme,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    /// Byte offset into the document.
    pub offset: usize,
    /// 1-based.
    pub line: usize,
    /// 1-based, in characters.
    pub column: usize,
}

impl Position {
    /// Resolves a byte offset, clamped to the text.
    pub fn locate(text: &str, offset: usize) -> Self {
        let mut offset = offset.min(text.len());
        while !text.is_char_boundary(offset) {
            offset -= 1;
        }
        let before = &text[..offset];
        let line = before.matches('\n').count() + 1;
        let line_start = before.rfind('\n').map_or(0, |i| i + 1);
        let column = text[line_start..offset].chars().count() + 1;
        Self { offset, line, column }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// Bad characters, unterminated strings, malformed tokens.
    Lexical,
    /// Well-formed tokens in the wrong arrangement.
    Structural,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{scheme} {kind:?} error at {position}: {reason}")]
pub struct ParseFailure {
    pub scheme: Scheme,
    pub position: Position,
    pub kind: FailureKind,
    pub reason: String,
}

impl ParseFailure {
    pub(crate) fn new(scheme: Scheme, text: &str, offset: usize, kind: FailureKind, reason: impl Into<String>) -> Self {
        Self {
            scheme,
            position: Position::locate(text, offset),
            kind,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SerializeError {
    #[error("{scheme} cannot encode `{value}`: {reason}")]
    Unserializable {
        scheme: Scheme,
        value: String,
        reason: &'static str,
    },
}

/// `[A-Za-z_][A-Za-z0-9_]*`, the identifier shape every scheme accepts.
/// Lowercase is enforced later by validation, not by the grammars.
pub(crate) fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Strips a single markdown code fence enclosing the whole text, as chat
/// models tend to add around documents. Anything else is returned unchanged.
pub fn strip_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return text;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return text;
    };
    match body.find('\n') {
        Some(nl) if !body[nl + 1..].contains("```") => &body[nl + 1..],
        _ => text,
    }
}

pub fn parse(doc: &WorkflowDoc) -> Result<WorkflowIr, ParseFailure> {
    let text = doc.text.as_str();
    if text.trim().is_empty() {
        return Err(ParseFailure::new(
            doc.scheme,
            text,
            0,
            FailureKind::Structural,
            "empty document",
        ));
    }
    let steps = match doc.scheme {
        Scheme::Bpmn => bpmn::parse(text)?,
        Scheme::Core => core_flow::parse(text)?,
        Scheme::Pysteps => pysteps::parse(text)?,
        Scheme::Yaml => yaml::parse(text)?,
        Scheme::Pseudo => pseudo::parse(text)?,
    };
    Ok(WorkflowIr::new(steps).with_hint(doc.scheme))
}

pub fn serialize(w: &WorkflowIr, scheme: Scheme) -> Result<WorkflowDoc, SerializeError> {
    for step in &w.steps {
        for value in std::iter::once(&step.name)
            .chain(step.args.iter())
            .chain(std::iter::once(&step.output))
        {
            if !is_ident(value) {
                return Err(SerializeError::Unserializable {
                    scheme,
                    value: value.clone(),
                    reason: "not an identifier",
                });
            }
        }
    }
    let text = match scheme {
        Scheme::Bpmn => bpmn::serialize(&w.steps),
        Scheme::Core => core_flow::serialize(&w.steps),
        Scheme::Pysteps => pysteps::serialize(&w.steps),
        Scheme::Yaml => yaml::serialize(&w.steps),
        Scheme::Pseudo => pseudo::serialize(&w.steps),
    };
    Ok(WorkflowDoc::new(text, scheme))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscodeError {
    #[error(transparent)]
    Parse(#[from] ParseFailure),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
}

pub fn transcode(doc: &WorkflowDoc, target: Scheme) -> Result<WorkflowDoc, TranscodeError> {
    let ir = parse(doc)?;
    Ok(serialize(&ir, target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{template_workflow, StepSpec};

    #[test]
    fn fences_are_stripped_only_when_enclosing() {
        assert_eq!(strip_fence("```yaml\n- name: a\n```\n"), "- name: a\n");
        assert_eq!(strip_fence("a(b) -> c\n"), "a(b) -> c\n");
        assert_eq!(strip_fence("```\nx\n```\ny\n```"), "```\nx\n```\ny\n```");
    }

    #[test]
    fn scheme_tags_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.tag().parse::<Scheme>().unwrap(), s);
        }
        assert!("xml".parse::<Scheme>().is_err());
    }

    #[test]
    fn empty_document_fails_for_every_scheme() {
        for s in Scheme::ALL {
            let err = parse(&WorkflowDoc::new("", s)).unwrap_err();
            assert_eq!(err.scheme, s);
            assert_eq!(err.position.offset, 0);
        }
    }

    #[test]
    fn position_counts_lines_and_columns() {
        let p = Position::locate("ab\ncd", 4);
        assert_eq!((p.line, p.column), (2, 2));
        assert_eq!(Position::locate("ab", 99).offset, 2);
    }

    #[test]
    fn illegal_names_are_unserializable() {
        let w = WorkflowIr::new(vec![StepSpec::new("code generation", ["task_description"], "out")]);
        for s in Scheme::ALL {
            assert!(matches!(serialize(&w, s), Err(SerializeError::Unserializable { .. })));
        }
    }

    #[test]
    fn single_step_pseudo() {
        let w = WorkflowIr::new(vec![StepSpec::new(
            "code_generation_agent",
            ["task_description"],
            "generated_code",
        )]);
        assert_eq!(
            serialize(&w, Scheme::Pseudo).unwrap().text,
            "code_generation_agent(task_description) -> generated_code\n"
        );
    }

    #[test]
    fn transcode_preserves_ir() {
        let w = template_workflow();
        for from in Scheme::ALL {
            let doc = serialize(&w, from).unwrap();
            for to in Scheme::ALL {
                let out = transcode(&doc, to).unwrap();
                assert_eq!(out.scheme, to);
                assert_eq!(parse(&out).unwrap(), w);
            }
            assert_eq!(transcode(&doc, from).unwrap(), doc);
        }
    }

    #[test]
    fn transcode_rejects_malformed_input() {
        let doc = WorkflowDoc::new("steps = [", Scheme::Pysteps);
        assert!(matches!(transcode(&doc, Scheme::Yaml), Err(TranscodeError::Parse(_))));
    }
}
