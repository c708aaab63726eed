//! CoRE-style flow listing. Each line is one instruction with the four CoRE
//! components (step number, instruction type, content, next pointer):
//!
//! ```text
//! 1:: process:: task_parsing_agent :: args=[task_description] :: output=parsed_task :: next::2
//! 2:: process:: code_generation_agent :: args=[parsed_task] :: output=code :: next::END
//! ```
//!
//! Steps are numbered from 1 and every `next` must point at the following
//! line, with `END` on the last one.

use super::cursor::lines_with_offsets;
use super::{is_ident, FailureKind, ParseFailure, Scheme};
use crate::ir::StepSpec;

const SCHEME: Scheme = Scheme::Core;

struct Part<'a> {
    offset: usize,
    text: &'a str,
}

fn split_parts(offset: usize, line: &str) -> Vec<Part<'_>> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut push = |from: usize, to: usize| {
        let raw = &line[from..to];
        let lead = raw.len() - raw.trim_start().len();
        parts.push(Part {
            offset: offset + from + lead,
            text: raw.trim(),
        });
    };
    while let Some(i) = line[start..].find("::") {
        push(start, start + i);
        start += i + 2;
    }
    push(start, line.len());
    parts
}

pub(super) fn parse(text: &str) -> Result<Vec<StepSpec>, ParseFailure> {
    let fail = |offset, kind, reason: String| ParseFailure::new(SCHEME, text, offset, kind, reason);
    let mut steps = Vec::new();
    let mut ended = false;

    for (offset, line) in lines_with_offsets(text) {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if ended {
            return Err(fail(offset, FailureKind::Structural, "instruction after `next::END`".into()));
        }
        let parts = split_parts(offset, line);
        if parts.len() != 7 {
            return Err(fail(
                offset,
                FailureKind::Structural,
                format!("expected 7 `::`-separated fields, found {}", parts.len()),
            ));
        }
        let number = steps.len() + 1;
        if parts[0].text != number.to_string() {
            return Err(fail(
                parts[0].offset,
                FailureKind::Structural,
                format!("expected step number {number}"),
            ));
        }
        if parts[1].text != "process" {
            return Err(fail(
                parts[1].offset,
                FailureKind::Structural,
                "instruction type must be `process`".into(),
            ));
        }
        let name = ident(text, &parts[2])?;

        let Some(arg_list) = parts[3].text.strip_prefix("args=[").and_then(|r| r.strip_suffix(']')) else {
            return Err(fail(parts[3].offset, FailureKind::Structural, "expected `args=[...]`".into()));
        };
        let mut args = Vec::new();
        if !arg_list.trim().is_empty() {
            let mut local = parts[3].offset + "args=[".len();
            for raw in arg_list.split(',') {
                let lead = raw.len() - raw.trim_start().len();
                args.push(ident(
                    text,
                    &Part {
                        offset: local + lead,
                        text: raw.trim(),
                    },
                )?);
                local += raw.len() + 1;
            }
        }

        let Some(out) = parts[4].text.strip_prefix("output=") else {
            return Err(fail(
                parts[4].offset,
                FailureKind::Structural,
                "expected `output=<name>`".into(),
            ));
        };
        let output = ident(
            text,
            &Part {
                offset: parts[4].offset + "output=".len(),
                text: out,
            },
        )?;

        if parts[5].text != "next" {
            return Err(fail(parts[5].offset, FailureKind::Structural, "expected `next`".into()));
        }
        let target = parts[6].text;
        if target == "END" {
            ended = true;
        } else if target != (number + 1).to_string() {
            return Err(fail(
                parts[6].offset,
                FailureKind::Structural,
                format!("next must be {} or END, found `{target}`", number + 1),
            ));
        }
        steps.push(StepSpec { name, args, output });
    }

    if !ended {
        return Err(fail(
            text.len(),
            FailureKind::Structural,
            "flow never reaches `next::END`".into(),
        ));
    }
    Ok(steps)
}

fn ident(text: &str, part: &Part<'_>) -> Result<String, ParseFailure> {
    if !is_ident(part.text) {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            part.offset,
            FailureKind::Lexical,
            format!("`{}` is not an identifier", part.text),
        ));
    }
    Ok(part.text.to_string())
}

pub(super) fn serialize(steps: &[StepSpec]) -> String {
    let mut out = String::new();
    for (i, s) in steps.iter().enumerate() {
        let next = if i + 1 == steps.len() {
            "END".to_string()
        } else {
            (i + 2).to_string()
        };
        out.push_str(&format!(
            "{}:: process:: {} :: args=[{}] :: output={} :: next::{}\n",
            i + 1,
            s.name,
            s.args.join(","),
            s.output,
            next
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loose_spacing_is_accepted() {
        let text = "1::process::a::args=[ x , y ]::output=b::next::END\n";
        assert_eq!(parse(text).unwrap(), vec![StepSpec::new("a", ["x", "y"], "b")]);
    }

    #[test]
    fn flow_must_be_linear() {
        let text = "1:: process:: a :: args=[] :: output=b :: next::3\n2:: process:: c :: args=[b] :: output=d :: next::END\n";
        let err = parse(text).unwrap_err();
        assert!(err.reason.contains("next must be 2"));
    }

    #[test]
    fn numbering_is_checked() {
        let text = "2:: process:: a :: args=[] :: output=b :: next::END\n";
        assert!(parse(text).unwrap_err().reason.contains("step number 1"));
    }

    #[test]
    fn missing_end_and_content_after_end() {
        assert!(parse("1:: process:: a :: args=[] :: output=b :: next::2\n").is_err());
        let text = "1:: process:: a :: args=[] :: output=b :: next::END\n2:: process:: c :: args=[] :: output=d :: next::END\n";
        assert!(parse(text).is_err());
    }

    #[test]
    fn bad_arg_position() {
        let text = "1:: process:: a :: args=[x,y-z] :: output=b :: next::END";
        let err = parse(text).unwrap_err();
        assert_eq!(err.kind, FailureKind::Lexical);
        assert_eq!(&text[err.position.offset..err.position.offset + 3], "y-z");
    }
}
