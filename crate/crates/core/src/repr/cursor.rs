use super::{FailureKind, ParseFailure, Scheme};

/// Byte cursor over a document with failure constructors that carry the
/// current position.
pub(crate) struct Cursor<'a> {
    pub src: &'a str,
    pub pos: usize,
    scheme: Scheme,
}

impl<'a> Cursor<'a> {
    pub fn new(src: &'a str, scheme: Scheme) -> Self {
        Self { src, pos: 0, scheme }
    }

    pub fn at(src: &'a str, pos: usize, scheme: Scheme) -> Self {
        Self { src, pos, scheme }
    }

    pub fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    pub fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    pub fn is_eof(&self) -> bool {
        self.pos >= self.src.len()
    }

    pub fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    pub fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    pub fn eat_str(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    pub fn expect(&mut self, c: char, what: &str) -> Result<(), ParseFailure> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.structural(format!("expected {what}, found {}", self.describe_next())))
        }
    }

    pub fn skip_inline_ws(&mut self) {
        while matches!(self.peek(), Some(' ' | '\t')) {
            self.pos += 1;
        }
    }

    pub fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    /// Whitespace and `#` line comments.
    pub fn skip_trivia(&mut self) {
        loop {
            self.skip_ws();
            if self.peek() == Some('#') {
                while !matches!(self.peek(), None | Some('\n')) {
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    /// `[A-Za-z_][A-Za-z0-9_]*`
    pub fn ident(&mut self) -> Result<&'a str, ParseFailure> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                self.pos += 1;
            }
            _ => return Err(self.lexical(format!("expected identifier, found {}", self.describe_next()))),
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        Ok(&self.src[start..self.pos])
    }

    pub fn describe_next(&self) -> String {
        match self.peek() {
            None => "end of input".to_string(),
            Some('\n') => "end of line".to_string(),
            Some(c) => format!("`{c}`"),
        }
    }

    pub fn lexical(&self, reason: impl Into<String>) -> ParseFailure {
        self.fail_at(self.pos, FailureKind::Lexical, reason)
    }

    pub fn structural(&self, reason: impl Into<String>) -> ParseFailure {
        self.fail_at(self.pos, FailureKind::Structural, reason)
    }

    pub fn fail_at(&self, offset: usize, kind: FailureKind, reason: impl Into<String>) -> ParseFailure {
        ParseFailure::new(self.scheme, self.src, offset, kind, reason)
    }
}

/// Lines with their byte offsets, newline excluded.
pub(crate) fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |raw| {
        let start = offset;
        offset += raw.len();
        let line = raw.strip_suffix('\n').unwrap_or(raw);
        let line = line.strip_suffix('\r').unwrap_or(line);
        (start, line)
    })
}
