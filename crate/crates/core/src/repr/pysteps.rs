//! Python-style step list:
//!
//! ```text
//! steps = [
//!     {'name': 'a', 'args': ['task_description'], 'output': 'x'},
//! ]
//! ```
//!
//! Read with a dedicated grammar; the text is never evaluated.

use super::cursor::Cursor;
use super::{is_ident, FailureKind, ParseFailure, Scheme};
use crate::ir::StepSpec;

const SCHEME: Scheme = Scheme::Pysteps;

pub(super) fn parse(text: &str) -> Result<Vec<StepSpec>, ParseFailure> {
    let mut c = Cursor::new(text, SCHEME);
    c.skip_trivia();
    let start = c.pos;
    let head = c.ident()?;
    if head != "steps" {
        return Err(c.fail_at(start, FailureKind::Structural, format!("expected `steps`, found `{head}`")));
    }
    c.skip_trivia();
    c.expect('=', "`=`")?;
    c.skip_trivia();
    c.expect('[', "`[`")?;

    let mut steps = Vec::new();
    loop {
        c.skip_trivia();
        if c.eat(']') {
            break;
        }
        steps.push(step(&mut c)?);
        // Every step is terminated by a comma, the last one included.
        c.skip_trivia();
        c.expect(',', "`,` after the step")?;
    }
    c.skip_trivia();
    if !c.is_eof() {
        return Err(c.structural(format!("unexpected trailing content {}", c.describe_next())));
    }
    Ok(steps)
}

fn step(c: &mut Cursor<'_>) -> Result<StepSpec, ParseFailure> {
    c.expect('{', "`{` opening a step")?;
    key(c, "name")?;
    let name = ident_string(c)?;
    separator(c)?;
    key(c, "args")?;
    c.expect('[', "`[` opening args")?;
    let mut args = Vec::new();
    loop {
        c.skip_trivia();
        if c.eat(']') {
            break;
        }
        args.push(ident_string(c)?);
        c.skip_trivia();
        if c.eat(',') {
            c.skip_trivia();
            if c.peek() == Some(']') {
                return Err(c.structural("trailing `,` in args"));
            }
            continue;
        }
        c.expect(']', "`,` or `]` in args")?;
        break;
    }
    separator(c)?;
    key(c, "output")?;
    let output = ident_string(c)?;
    c.skip_trivia();
    c.expect('}', "`}` closing the step")?;
    Ok(StepSpec { name, args, output })
}

fn separator(c: &mut Cursor<'_>) -> Result<(), ParseFailure> {
    c.skip_trivia();
    c.expect(',', "`,`")
}

fn key(c: &mut Cursor<'_>, expected: &str) -> Result<(), ParseFailure> {
    c.skip_trivia();
    let start = c.pos;
    let found = quoted(c)?;
    if found != expected {
        return Err(c.fail_at(
            start,
            FailureKind::Structural,
            format!("expected key '{expected}', found '{found}'"),
        ));
    }
    c.skip_trivia();
    c.expect(':', "`:` after key")?;
    c.skip_trivia();
    Ok(())
}

fn ident_string(c: &mut Cursor<'_>) -> Result<String, ParseFailure> {
    c.skip_trivia();
    let start = c.pos;
    let s = quoted(c)?;
    if !is_ident(s) {
        return Err(c.fail_at(start, FailureKind::Lexical, format!("'{s}' is not an identifier")));
    }
    Ok(s.to_string())
}

fn quoted<'a>(c: &mut Cursor<'a>) -> Result<&'a str, ParseFailure> {
    if c.peek() != Some('\'') {
        return Err(c.lexical(format!("expected single-quoted string, found {}", c.describe_next())));
    }
    c.bump();
    let start = c.pos;
    loop {
        match c.peek() {
            Some('\'') => {
                let s = &c.src[start..c.pos];
                c.bump();
                return Ok(s);
            }
            Some('\\') => return Err(c.lexical("escape sequences are not supported")),
            None | Some('\n') => return Err(c.lexical("unterminated string")),
            Some(_) => {
                c.bump();
            }
        }
    }
}

pub(super) fn serialize(steps: &[StepSpec]) -> String {
    let mut out = String::from("steps = [\n");
    for s in steps {
        let args = s.args.iter().map(|a| format!("'{a}'")).collect::<Vec<_>>().join(", ");
        out.push_str(&format!(
            "    {{'name': '{}', 'args': [{}], 'output': '{}'}},\n",
            s.name, args, s.output
        ));
    }
    out.push_str("]\n");
    out
}
