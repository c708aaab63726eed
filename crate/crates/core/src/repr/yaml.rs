//! Restricted YAML: a top-level block sequence of mappings with keys `name`,
//! `args` and `output` in that order. Only plain scalars; no anchors, tags,
//! flow collections (except `[]` for an empty args list), or trailing
//! comments. Full-line `#` comments and blank lines are ignored.

use super::cursor::lines_with_offsets;
use super::{is_ident, FailureKind, ParseFailure, Scheme};
use crate::ir::StepSpec;

const SCHEME: Scheme = Scheme::Yaml;

struct Line<'a> {
    offset: usize,
    indent: usize,
    body: &'a str,
}

pub(super) fn parse(text: &str) -> Result<Vec<StepSpec>, ParseFailure> {
    let fail = |offset: usize, kind, reason: String| ParseFailure::new(SCHEME, text, offset, kind, reason);

    let mut lines = Vec::new();
    for (offset, raw) in lines_with_offsets(text) {
        let trimmed = raw.trim_start_matches(' ');
        if trimmed.starts_with('\t') {
            return Err(fail(
                offset,
                FailureKind::Lexical,
                "tabs are not allowed in indentation".into(),
            ));
        }
        let body = trimmed.trim_end();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        if body == "---" || body == "..." {
            return Err(fail(
                offset,
                FailureKind::Structural,
                "document markers are not supported".into(),
            ));
        }
        lines.push(Line {
            offset,
            indent: raw.len() - trimmed.len(),
            body,
        });
    }

    let mut steps = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = &lines[i];
        if line.indent != 0 || !(line.body == "-" || line.body.starts_with("- ")) {
            return Err(fail(
                line.offset + line.indent,
                FailureKind::Structural,
                "expected `- name: ...` at column 1".into(),
            ));
        }
        let first = line.body[1..].trim_start_matches(' ');
        let first_offset = line.offset + line.body.len() - first.len();
        let name = key_value(text, first_offset, first, "name")?;
        if first_offset - line.offset != 2 {
            return Err(fail(
                first_offset,
                FailureKind::Structural,
                "mapping keys must start at column 3".into(),
            ));
        }
        i += 1;

        let args_line = expect_key_line(text, &lines, i, "args")?;
        let after_colon = args_line.body["args:".len()..].trim_start_matches(' ');
        let mut args = Vec::new();
        i += 1;
        match after_colon {
            "" => {
                let mut item_indent = None;
                while i < lines.len() && lines[i].indent >= 2 && lines[i].body.starts_with('-') {
                    let l = &lines[i];
                    if *item_indent.get_or_insert(l.indent) != l.indent {
                        return Err(fail(
                            l.offset + l.indent,
                            FailureKind::Structural,
                            "inconsistent list indentation".into(),
                        ));
                    }
                    let Some(value) = l.body.strip_prefix("- ") else {
                        return Err(fail(
                            l.offset + l.indent,
                            FailureKind::Lexical,
                            "expected `- ` before list item".into(),
                        ));
                    };
                    let value = value.trim_start_matches(' ');
                    let value_offset = l.offset + l.indent + l.body.len() - value.len();
                    args.push(scalar(text, value_offset, value)?);
                    i += 1;
                }
            }
            "[]" => {}
            other => {
                let offset = args_line.offset + args_line.body.len() - other.len() + args_line.indent;
                return Err(fail(offset, FailureKind::Structural, "args must be a block sequence".into()));
            }
        }

        let out_line = expect_key_line(text, &lines, i, "output")?;
        let output = key_value(text, out_line.offset + out_line.indent, out_line.body, "output")?;
        i += 1;
        steps.push(StepSpec { name, args, output });
    }
    Ok(steps)
}

fn expect_key_line<'l, 'a>(text: &str, lines: &'l [Line<'a>], i: usize, key: &str) -> Result<&'l Line<'a>, ParseFailure> {
    let Some(line) = lines.get(i) else {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            text.len(),
            FailureKind::Structural,
            format!("expected `{key}:`"),
        ));
    };
    if line.indent != 2 || !line.body.starts_with(key) || !line.body[key.len()..].starts_with(':') {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            line.offset + line.indent,
            FailureKind::Structural,
            format!("expected `{key}:` at column 3"),
        ));
    }
    Ok(line)
}

/// `key: value` where value is a plain identifier scalar.
fn key_value(text: &str, offset: usize, body: &str, key: &str) -> Result<String, ParseFailure> {
    let Some(rest) = body.strip_prefix(key).and_then(|r| r.strip_prefix(':')) else {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            offset,
            FailureKind::Structural,
            format!("expected `{key}:`"),
        ));
    };
    if !rest.starts_with(' ') {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            offset + key.len() + 1,
            FailureKind::Lexical,
            format!("expected a space and a value after `{key}:`"),
        ));
    }
    let value = rest.trim_start_matches(' ');
    scalar(text, offset + body.len() - value.len(), value)
}

fn scalar(text: &str, offset: usize, value: &str) -> Result<String, ParseFailure> {
    if !is_ident(value) {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            offset,
            FailureKind::Lexical,
            format!("`{value}` is not a plain identifier scalar"),
        ));
    }
    Ok(value.to_string())
}

pub(super) fn serialize(steps: &[StepSpec]) -> String {
    let blocks: Vec<String> = steps
        .iter()
        .map(|s| {
            let mut b = format!("- name: {}\n", s.name);
            if s.args.is_empty() {
                b.push_str("  args: []\n");
            } else {
                b.push_str("  args:\n");
                for a in &s.args {
                    b.push_str(&format!("    - {a}\n"));
                }
            }
            b.push_str(&format!("  output: {}\n", s.output));
            b
        })
        .collect();
    blocks.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_item_indent_is_free_but_consistent() {
        let text = "- name: a\n  args:\n      - task_description\n      - x\n  output: b\n";
        assert_eq!(parse(text).unwrap()[0].args, vec!["task_description", "x"]);
        let text = "- name: a\n  args:\n  - task_description\n  output: b\n";
        assert_eq!(parse(text).unwrap()[0].args, vec!["task_description"]);
        assert!(parse("- name: a\n  args:\n    - x\n   - y\n  output: b\n").is_err());
    }

    #[test]
    fn empty_args_forms() {
        assert!(parse("- name: a\n  args: []\n  output: b\n").unwrap()[0].args.is_empty());
        assert!(parse("- name: a\n  args:\n  output: b\n").unwrap()[0].args.is_empty());
    }

    #[test]
    fn rejects_flow_style_and_quotes() {
        assert!(parse("- name: a\n  args: [x]\n  output: b\n").is_err());
        assert!(parse("- name: 'a'\n  args: []\n  output: b\n").is_err());
        assert!(parse("- {name: a, args: [], output: b}\n").is_err());
    }

    #[test]
    fn rejects_wrong_key_order() {
        let err = parse("- name: a\n  output: b\n  args: []\n").unwrap_err();
        assert_eq!(err.kind, FailureKind::Structural);
        assert_eq!(err.position.line, 2);
    }

    #[test]
    fn rejects_missing_space_and_tabs() {
        assert_eq!(
            parse("- name:a\n  args: []\n  output: b\n").unwrap_err().kind,
            FailureKind::Lexical
        );
        assert_eq!(
            parse("- name: a\n\targs: []\n  output: b\n").unwrap_err().kind,
            FailureKind::Lexical
        );
    }

    #[test]
    fn rejects_truncated_record() {
        let err = parse("- name: a\n  args:\n    - x\n").unwrap_err();
        assert!(err.reason.contains("output"));
    }
}
