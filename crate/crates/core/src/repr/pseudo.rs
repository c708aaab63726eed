//! Pseudo-code: one `name(arg, arg) -> output` call per line. Blank lines
//! and `#` comments are ignored.

use super::cursor::{lines_with_offsets, Cursor};
use super::{ParseFailure, Scheme};
use crate::ir::StepSpec;

pub(super) fn parse(text: &str) -> Result<Vec<StepSpec>, ParseFailure> {
    let mut steps = Vec::new();
    for (offset, line) in lines_with_offsets(text) {
        let code = line.split('#').next().unwrap_or_default();
        if code.trim().is_empty() {
            continue;
        }
        let mut c = Cursor::at(&text[..offset + code.len()], offset, Scheme::Pseudo);
        c.skip_inline_ws();
        let name = c.ident()?.to_string();
        c.skip_inline_ws();
        c.expect('(', "`(`")?;
        c.skip_inline_ws();
        let mut args = Vec::new();
        if !c.eat(')') {
            loop {
                c.skip_inline_ws();
                args.push(c.ident()?.to_string());
                c.skip_inline_ws();
                if c.eat(',') {
                    continue;
                }
                c.expect(')', "`,` or `)`")?;
                break;
            }
        }
        c.skip_inline_ws();
        if !c.eat_str("->") {
            return Err(c.structural(format!("expected `->`, found {}", c.describe_next())));
        }
        c.skip_inline_ws();
        let output = c.ident()?.to_string();
        c.skip_inline_ws();
        if !c.is_eof() {
            return Err(c.structural(format!("unexpected {} after output", c.describe_next())));
        }
        steps.push(StepSpec { name, args, output });
    }
    Ok(steps)
}

pub(super) fn serialize(steps: &[StepSpec]) -> String {
    steps
        .iter()
        .map(|s| format!("{}({}) -> {}\n", s.name, s.args.join(", "), s.output))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::FailureKind;

    #[test]
    fn comments_blank_lines_and_spacing() {
        let text = "# wf\n\n  a( x ,y )->z   # note\nb() -> w\n";
        let steps = parse(text).unwrap();
        assert_eq!(steps[0], StepSpec::new("a", ["x", "y"], "z"));
        assert_eq!(steps[1], StepSpec::new("b", Vec::<String>::new(), "w"));
    }

    #[test]
    fn missing_arrow_is_structural() {
        let err = parse("a(x)\n").unwrap_err();
        assert_eq!(err.kind, FailureKind::Structural);
        assert_eq!(err.position.line, 1);
    }

    #[test]
    fn errors_point_at_the_offending_line() {
        let err = parse("a(x) -> y\nb(y) -> z w\n").unwrap_err();
        assert_eq!((err.position.line, err.position.column), (2, 11));
    }

    #[test]
    fn rejects_dangling_comma() {
        assert!(parse("a(x,) -> y").is_err());
    }
}
