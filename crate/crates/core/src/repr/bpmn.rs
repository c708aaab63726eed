//! Minimal BPMN subset.
//!
//! A `<process>` (optionally wrapped in `<definitions>`) holding `<task>`
//! elements, optional `<startEvent>`/`<endEvent>`, and `<sequenceFlow>` edges.
//! Each task carries its bindings in `<documentation>args=a,b;output=o</documentation>`.
//! The flows must chain every node into one linear path; step order is the
//! order along that path, not document order.

use std::collections::HashMap;

use super::cursor::Cursor;
use super::{is_ident, FailureKind, ParseFailure, Scheme};
use crate::ir::StepSpec;

const SCHEME: Scheme = Scheme::Bpmn;

#[derive(Debug)]
struct Element {
    name: String,
    offset: usize,
    attrs: Vec<(String, String)>,
    children: Vec<Element>,
    /// Concatenated character data, entity-decoded.
    text: String,
    text_offset: usize,
}

impl Element {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub(super) fn parse(text: &str) -> Result<Vec<StepSpec>, ParseFailure> {
    let root = read_document(text)?;
    let fail = |offset, reason: String| ParseFailure::new(SCHEME, text, offset, FailureKind::Structural, reason);

    let process = match root.name.as_str() {
        "process" => &root,
        "definitions" => match root.children.as_slice() {
            [p] if p.name == "process" => p,
            _ => return Err(fail(root.offset, "`definitions` must contain exactly one `process`".into())),
        },
        other => return Err(fail(root.offset, format!("unexpected root element `{other}`"))),
    };
    allow_attrs(text, process, &["id", "name", "isExecutable"])?;
    no_text(text, process)?;

    #[derive(Clone, Copy, PartialEq)]
    enum Node {
        Start,
        End,
        Task(usize),
    }
    let mut nodes: HashMap<&str, (Node, usize)> = HashMap::new();
    let mut tasks: Vec<StepSpec> = Vec::new();
    let mut flows: Vec<(&str, &str, usize)> = Vec::new();

    for child in &process.children {
        let kind = match child.name.as_str() {
            "task" => {
                allow_attrs(text, child, &["id", "name"])?;
                let name = required(text, child, "name")?;
                if !is_ident(name) {
                    return Err(ParseFailure::new(
                        SCHEME,
                        text,
                        child.offset,
                        FailureKind::Lexical,
                        format!("task name `{name}` is not an identifier"),
                    ));
                }
                let (args, output) = documentation(text, child)?;
                tasks.push(StepSpec {
                    name: name.to_string(),
                    args,
                    output,
                });
                Node::Task(tasks.len() - 1)
            }
            "startEvent" | "endEvent" => {
                allow_attrs(text, child, &["id", "name"])?;
                no_children(text, child)?;
                if child.name == "startEvent" {
                    Node::Start
                } else {
                    Node::End
                }
            }
            "sequenceFlow" => {
                allow_attrs(text, child, &["id", "name", "sourceRef", "targetRef"])?;
                no_children(text, child)?;
                flows.push((
                    required(text, child, "sourceRef")?,
                    required(text, child, "targetRef")?,
                    child.offset,
                ));
                continue;
            }
            other => return Err(fail(child.offset, format!("unsupported element `{other}`"))),
        };
        let id = required(text, child, "id")?;
        if matches!(kind, Node::Start | Node::End) && nodes.values().any(|(k, _)| *k == kind) {
            return Err(fail(child.offset, format!("more than one `{}`", child.name)));
        }
        if nodes.insert(id, (kind, child.offset)).is_some() {
            return Err(fail(child.offset, format!("duplicate id `{id}`")));
        }
    }

    if tasks.is_empty() {
        return Err(fail(process.offset, "process has no tasks".into()));
    }

    let mut succ: HashMap<&str, &str> = HashMap::new();
    let mut pred: HashMap<&str, &str> = HashMap::new();
    for &(src, dst, offset) in &flows {
        for end in [src, dst] {
            if !nodes.contains_key(end) {
                return Err(fail(offset, format!("flow references unknown id `{end}`")));
            }
        }
        if succ.insert(src, dst).is_some() {
            return Err(fail(offset, format!("`{src}` has more than one outgoing flow")));
        }
        if pred.insert(dst, src).is_some() {
            return Err(fail(offset, format!("`{dst}` has more than one incoming flow")));
        }
    }

    let heads: Vec<&str> = nodes.keys().copied().filter(|id| !pred.contains_key(id)).collect();
    let [head] = heads.as_slice() else {
        return Err(fail(
            process.offset,
            format!("flows must form a single chain ({} entry points)", heads.len()),
        ));
    };
    let mut order = Vec::with_capacity(nodes.len());
    let mut cursor = Some(*head);
    while let Some(id) = cursor {
        if order.len() > nodes.len() {
            return Err(fail(process.offset, "flows contain a cycle".into()));
        }
        order.push(id);
        cursor = succ.get(id).copied();
    }
    if order.len() != nodes.len() {
        return Err(fail(process.offset, "flows do not connect every node".into()));
    }

    let mut steps = Vec::with_capacity(tasks.len());
    for (pos, id) in order.iter().enumerate() {
        let (kind, offset) = nodes[id];
        match kind {
            Node::Start if pos != 0 => return Err(fail(offset, "startEvent must begin the chain".into())),
            Node::End if pos + 1 != order.len() => return Err(fail(offset, "endEvent must finish the chain".into())),
            Node::Task(i) => steps.push(tasks[i].clone()),
            _ => {}
        }
    }
    Ok(steps)
}

fn required<'e>(text: &str, el: &'e Element, key: &str) -> Result<&'e str, ParseFailure> {
    el.attr(key).ok_or_else(|| {
        ParseFailure::new(
            SCHEME,
            text,
            el.offset,
            FailureKind::Structural,
            format!("`{}` is missing attribute `{key}`", el.name),
        )
    })
}

fn allow_attrs(text: &str, el: &Element, allowed: &[&str]) -> Result<(), ParseFailure> {
    match el.attrs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        Some((k, _)) => Err(ParseFailure::new(
            SCHEME,
            text,
            el.offset,
            FailureKind::Structural,
            format!("unexpected attribute `{k}` on `{}`", el.name),
        )),
        None => Ok(()),
    }
}

fn no_children(text: &str, el: &Element) -> Result<(), ParseFailure> {
    if let Some(child) = el.children.first() {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            child.offset,
            FailureKind::Structural,
            format!("`{}` may not contain `{}`", el.name, child.name),
        ));
    }
    no_text(text, el)
}

fn no_text(text: &str, el: &Element) -> Result<(), ParseFailure> {
    if !el.text.trim().is_empty() {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            el.text_offset,
            FailureKind::Structural,
            format!("unexpected text inside `{}`", el.name),
        ));
    }
    Ok(())
}

fn documentation(text: &str, task: &Element) -> Result<(Vec<String>, String), ParseFailure> {
    no_text(text, task)?;
    let doc = match task.children.as_slice() {
        [d] if d.name == "documentation" => d,
        _ => {
            return Err(ParseFailure::new(
                SCHEME,
                text,
                task.offset,
                FailureKind::Structural,
                "a task must contain exactly one `documentation` element",
            ))
        }
    };
    allow_attrs(text, doc, &[])?;
    if let Some(child) = doc.children.first() {
        return Err(ParseFailure::new(
            SCHEME,
            text,
            child.offset,
            FailureKind::Structural,
            "nested element in documentation",
        ));
    }
    let fail = |reason: String| ParseFailure::new(SCHEME, text, doc.text_offset, FailureKind::Structural, reason);
    let body = doc.text.trim();
    let Some((args_part, out_part)) = body.split_once(';') else {
        return Err(fail(format!("expected `args=...;output=...`, found `{body}`")));
    };
    let Some(arg_list) = args_part.trim().strip_prefix("args=") else {
        return Err(fail("documentation must start with `args=`".into()));
    };
    let Some(output) = out_part.trim().strip_prefix("output=") else {
        return Err(fail("expected `output=` after `;`".into()));
    };
    let mut args = Vec::new();
    if !arg_list.trim().is_empty() {
        for a in arg_list.split(',') {
            let a = a.trim();
            if !is_ident(a) {
                return Err(fail(format!("`{a}` is not an identifier")));
            }
            args.push(a.to_string());
        }
    }
    let output = output.trim();
    if !is_ident(output) {
        return Err(fail(format!("`{output}` is not an identifier")));
    }
    Ok((args, output.to_string()))
}

// ---- XML subset reader ------------------------------------------------------

fn read_document(text: &str) -> Result<Element, ParseFailure> {
    let mut c = Cursor::new(text, SCHEME);
    c.skip_ws();
    if c.rest().starts_with("<?xml") {
        match c.rest().find("?>") {
            Some(end) => c.pos += end + 2,
            None => return Err(c.lexical("unterminated XML declaration")),
        }
    }
    skip_misc(&mut c)?;
    if c.peek() != Some('<') {
        return Err(c.structural(format!("expected root element, found {}", c.describe_next())));
    }
    let root = element(&mut c)?;
    skip_misc(&mut c)?;
    if !c.is_eof() {
        return Err(c.structural(format!("unexpected content after root element: {}", c.describe_next())));
    }
    Ok(root)
}

/// Whitespace and comments.
fn skip_misc(c: &mut Cursor<'_>) -> Result<(), ParseFailure> {
    loop {
        c.skip_ws();
        if c.rest().starts_with("<!--") {
            comment(c)?;
        } else {
            return Ok(());
        }
    }
}

fn comment(c: &mut Cursor<'_>) -> Result<(), ParseFailure> {
    match c.rest().find("-->") {
        Some(end) => {
            c.pos += end + 3;
            Ok(())
        }
        None => Err(c.lexical("unterminated comment")),
    }
}

fn name(c: &mut Cursor<'_>) -> Result<String, ParseFailure> {
    let start = c.pos;
    match c.peek() {
        Some(ch) if ch.is_ascii_alphabetic() || ch == '_' => {
            c.bump();
        }
        _ => return Err(c.lexical(format!("expected a name, found {}", c.describe_next()))),
    }
    while matches!(c.peek(), Some(ch) if ch.is_ascii_alphanumeric() || matches!(ch, '_' | '-' | '.' | ':')) {
        c.bump();
    }
    Ok(c.src[start..c.pos].to_string())
}

fn element(c: &mut Cursor<'_>) -> Result<Element, ParseFailure> {
    let offset = c.pos;
    c.expect('<', "`<`")?;
    let tag = name(c)?;
    let mut attrs: Vec<(String, String)> = Vec::new();
    loop {
        let had_space = matches!(c.peek(), Some(ch) if ch.is_whitespace());
        c.skip_ws();
        if c.eat_str("/>") {
            return Ok(Element {
                name: tag,
                offset,
                attrs,
                children: Vec::new(),
                text: String::new(),
                text_offset: c.pos,
            });
        }
        if c.eat('>') {
            break;
        }
        if !had_space {
            return Err(c.lexical(format!("expected whitespace, `>` or `/>`, found {}", c.describe_next())));
        }
        let key_offset = c.pos;
        let key = name(c)?;
        c.skip_ws();
        c.expect('=', "`=` after attribute name")?;
        c.skip_ws();
        let value = attr_value(c)?;
        if attrs.iter().any(|(k, _)| *k == key) {
            return Err(c.fail_at(key_offset, FailureKind::Lexical, format!("duplicate attribute `{key}`")));
        }
        attrs.push((key, value));
    }

    let mut children = Vec::new();
    let mut text = String::new();
    let mut text_offset = None;
    loop {
        if c.is_eof() {
            return Err(c.lexical(format!("unclosed element `{tag}`")));
        }
        if c.rest().starts_with("<!--") {
            comment(c)?;
        } else if c.rest().starts_with("</") {
            c.pos += 2;
            let close_at = c.pos;
            let closing = name(c)?;
            if closing != tag {
                return Err(c.fail_at(
                    close_at,
                    FailureKind::Structural,
                    format!("`</{closing}>` does not close `<{tag}>`"),
                ));
            }
            c.skip_ws();
            c.expect('>', "`>`")?;
            break;
        } else if c.rest().starts_with("<!") || c.rest().starts_with("<?") {
            return Err(c.lexical("declarations and processing instructions are not supported here"));
        } else if c.peek() == Some('<') {
            children.push(element(c)?);
        } else {
            let here = c.pos;
            let ch = char_data(c)?;
            if !ch.trim().is_empty() && text_offset.is_none() {
                text_offset = Some(here + (ch.len() - ch.trim_start().len()));
            }
            text.push_str(&ch);
        }
    }
    Ok(Element {
        name: tag,
        offset,
        attrs,
        children,
        text,
        text_offset: text_offset.unwrap_or(offset),
    })
}

fn attr_value(c: &mut Cursor<'_>) -> Result<String, ParseFailure> {
    let quote = match c.peek() {
        Some(q @ ('"' | '\'')) => q,
        _ => return Err(c.lexical(format!("expected quoted attribute value, found {}", c.describe_next()))),
    };
    c.bump();
    let mut out = String::new();
    loop {
        match c.peek() {
            None => return Err(c.lexical("unterminated attribute value")),
            Some('<') => return Err(c.lexical("`<` inside attribute value")),
            Some('&') => out.push(entity(c)?),
            Some(ch) if ch == quote => {
                c.bump();
                return Ok(out);
            }
            Some(ch) => {
                out.push(ch);
                c.bump();
            }
        }
    }
}

fn char_data(c: &mut Cursor<'_>) -> Result<String, ParseFailure> {
    let mut out = String::new();
    while let Some(ch) = c.peek() {
        match ch {
            '<' => break,
            '&' => out.push(entity(c)?),
            '>' => return Err(c.lexical("stray `>` in text")),
            _ => {
                out.push(ch);
                c.bump();
            }
        }
    }
    Ok(out)
}

fn entity(c: &mut Cursor<'_>) -> Result<char, ParseFailure> {
    for (ent, ch) in [
        ("&lt;", '<'),
        ("&gt;", '>'),
        ("&amp;", '&'),
        ("&quot;", '"'),
        ("&apos;", '\''),
    ] {
        if c.eat_str(ent) {
            return Ok(ch);
        }
    }
    Err(c.lexical("unknown entity reference"))
}

pub(super) fn serialize(steps: &[StepSpec]) -> String {
    let mut out = String::from("<process id=\"workflow\">\n");
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!("  <task id=\"task_{}\" name=\"{}\">\n", i + 1, s.name));
        out.push_str(&format!(
            "    <documentation>args={};output={}</documentation>\n",
            s.args.join(","),
            s.output
        ));
        out.push_str("  </task>\n");
    }
    for i in 1..steps.len() {
        out.push_str(&format!(
            "  <sequenceFlow id=\"flow_{i}\" sourceRef=\"task_{i}\" targetRef=\"task_{}\"/>\n",
            i + 1
        ));
    }
    out.push_str("</process>\n");
    out
}
