use super::{ParseError, SourceSpan};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    /// Integer literal with an optional alphabetic suffix (`5s`, `100ms`).
    Int(u64, String),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Arrow,
    Colon,
    Comma,
    At,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n, suffix) => format!("`{n}{suffix}`"),
            Tok::Str(_) => "string".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Comma => "`,`".into(),
            Tok::At => "`@`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub span: SourceSpan,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
    col: u32,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn mark(&self) -> (usize, u32, u32) {
        (self.pos, self.line, self.col)
    }

    fn span_from(&self, mark: (usize, u32, u32)) -> SourceSpan {
        SourceSpan {
            offset: mark.0,
            line: mark.1,
            column: mark.2,
            length: self.src[mark.0..self.pos].chars().count() as u32,
        }
    }
}

/// Lexes into `out`, leaving the tokens read so far there on error.
pub(crate) fn lex(src: &str, out: &mut Vec<Token>) -> Result<(), ParseError> {
    let mut cur = Cursor {
        src,
        pos: 0,
        line: 1,
        col: 1,
    };
    loop {
        while let Some(c) = cur.peek() {
            if c.is_whitespace() {
                cur.bump();
            } else if c == '#' {
                while let Some(c) = cur.peek() {
                    if c == '\n' {
                        break;
                    }
                    cur.bump();
                }
            } else {
                break;
            }
        }
        let mark = cur.mark();
        let Some(c) = cur.bump() else {
            out.push(Token {
                tok: Tok::Eof,
                span: cur.span_from(mark),
            });
            return Ok(());
        };
        let tok = match c {
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ':' => Tok::Colon,
            ',' => Tok::Comma,
            '@' => Tok::At,
            '-' if cur.peek() == Some('>') => {
                cur.bump();
                Tok::Arrow
            }
            '"' => lex_string(&mut cur, mark)?,
            c if c.is_ascii_digit() => {
                let mut digits = String::from(c);
                while let Some(d) = cur.peek().filter(char::is_ascii_digit) {
                    digits.push(d);
                    cur.bump();
                }
                let mut suffix = String::new();
                while let Some(a) = cur.peek().filter(char::is_ascii_alphabetic) {
                    suffix.push(a);
                    cur.bump();
                }
                let value = digits.parse::<u64>().map_err(|_| ParseError {
                    span: cur.span_from(mark),
                    expected: "integer that fits in 64 bits".into(),
                    found: format!("`{digits}`"),
                })?;
                Tok::Int(value, suffix)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::from(c);
                while let Some(a) = cur
                    .peek()
                    .filter(|a| a.is_ascii_alphanumeric() || *a == '_')
                {
                    ident.push(a);
                    cur.bump();
                }
                Tok::Ident(ident)
            }
            other => {
                let expected = if other == '-' { "`->`" } else { "token" };
                let found = format!("character `{other}`");
                return Err(ParseError {
                    span: cur.span_from(mark),
                    expected: expected.into(),
                    found,
                });
            }
        };
        out.push(Token {
            tok,
            span: cur.span_from(mark),
        });
    }
}

fn lex_string(cur: &mut Cursor<'_>, mark: (usize, u32, u32)) -> Result<Tok, ParseError> {
    let mut value = String::new();
    loop {
        match cur.peek() {
            None | Some('\n') | Some('\r') => {
                return Err(ParseError {
                    span: SourceSpan {
                        offset: mark.0,
                        line: mark.1,
                        column: mark.2,
                        length: 1,
                    },
                    expected: "closing `\"` on the same line".into(),
                    found: "unterminated string".into(),
                });
            }
            Some('"') => {
                cur.bump();
                return Ok(Tok::Str(value));
            }
            Some('\\') => {
                let esc = cur.mark();
                cur.bump();
                match cur.peek() {
                    Some(c @ ('"' | '\\')) => {
                        cur.bump();
                        value.push(c);
                    }
                    other => {
                        return Err(ParseError {
                            span: cur.span_from(esc),
                            expected: "`\\\"` or `\\\\`".into(),
                            found: match other {
                                Some(c) => format!("escape `\\{c}`"),
                                None => "end of input".into(),
                            },
                        })
                    }
                }
            }
            Some(c) => {
                cur.bump();
                value.push(c);
            }
        }
    }
}
