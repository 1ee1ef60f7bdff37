//! Textual process definition language (`.sbpm` files).
//!
//! ```text
//! process SendReceive {
//!   subject Customer @acme
//!   multi(4) subject Supplier
//!   message Order {
//!     item: text
//!   }
//!   channel Customer -> Supplier: Order
//!   behavior Customer {
//!     start send order "Send order"
//!       msg Order to Supplier all -> done
//!     end do done "Done"
//!   }
//!   ...
//! }
//! ```
//!
//! [`parse`] stops at the first error. [`serialize`] writes the canonical
//! form: subjects, messages, channels, behaviors; two-space indentation; LF
//! line endings; durations in the largest exact unit.

mod lexer;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BehaviorDef, Cardinality, ChannelDef, FieldDef, FieldType, MessageTypeDef, ProcessModel,
    StateDef, StateKind, SubjectDef, SubjectKind, TransitionDef, Trigger, ValidModel,
};
use lexer::{lex, Tok, Token};

/// Position of a token in the source. Line and column are 1-based and
/// count characters; `offset` is the byte offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub line: u32,
    pub column: u32,
    pub length: u32,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub struct ParseError {
    pub span: SourceSpan,
    pub expected: String,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: expected {}, found {}",
            self.span.line, self.span.column, self.expected, self.found
        )
    }
}

/// Byte offsets of the tokens in `source`, end of input included. If
/// lexing fails, the list stops with the offset of the offending token.
pub fn token_offsets(source: &str) -> Vec<usize> {
    let mut tokens = Vec::new();
    let failed = lex(source, &mut tokens).err();
    let mut out: Vec<usize> = tokens.iter().map(|t| t.span.offset).collect();
    out.extend(failed.map(|e| e.span.offset));
    out
}

/// Parses a process definition. When the text also fails to lex, the
/// earlier of the syntax error and the lexical one is reported.
pub fn parse(source: &str) -> Result<ProcessModel, ParseError> {
    let mut tokens = Vec::new();
    let Err(lexical) = lex(source, &mut tokens) else {
        let mut p = Parser { tokens, pos: 0 };
        let model = p.process()?;
        p.expect_eof()?;
        return Ok(model);
    };
    tokens.push(Token {
        tok: Tok::Eof,
        span: lexical.span,
    });
    let mut p = Parser { tokens, pos: 0 };
    match p.process().and_then(|_| p.expect_eof()) {
        Err(e) if e.span.offset < lexical.span.offset => Err(e),
        _ => Err(lexical),
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn peek_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: impl Into<String>) -> ParseError {
        let t = &self.tokens[self.pos];
        ParseError {
            span: t.span,
            expected: expected.into(),
            found: t.tok.describe(),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.peek_kw(kw) {
            self.advance();
            Ok(())
        } else {
            Err(self.error(format!("`{kw}`")))
        }
    }

    fn punct(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.advance();
            Ok(())
        } else {
            Err(self.error(want.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.advance();
                Ok(s)
            }
            _ => Err(self.error("string label")),
        }
    }

    fn int(&mut self) -> Result<u64, ParseError> {
        match self.peek().clone() {
            Tok::Int(n, suffix) if suffix.is_empty() => {
                self.advance();
                Ok(n)
            }
            _ => Err(self.error("integer")),
        }
    }

    fn int_u32(&mut self) -> Result<u32, ParseError> {
        let save = self.pos;
        let n = self.int()?;
        u32::try_from(n).map_err(|_| {
            self.pos = save;
            self.error("integer below 2^32")
        })
    }

    fn duration(&mut self) -> Result<u64, ParseError> {
        let (n, suffix) = match self.peek().clone() {
            Tok::Int(n, suffix) => (n, suffix),
            _ => return Err(self.error("duration such as `5s`")),
        };
        let factor = match suffix.as_str() {
            "ms" => 1,
            "s" => 1_000,
            "m" => 60_000,
            _ => return Err(self.error("duration unit `ms`, `s` or `m`")),
        };
        let ms = n
            .checked_mul(factor)
            .ok_or_else(|| self.error("duration below 2^64 ms"))?;
        self.advance();
        Ok(ms)
    }

    fn expect_eof(&self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Eof => Ok(()),
            _ => Err(self.error("end of input")),
        }
    }

    fn process(&mut self) -> Result<ProcessModel, ParseError> {
        self.keyword("process")?;
        let mut model = ProcessModel::new(self.ident("process name")?);
        self.punct(Tok::LBrace)?;
        loop {
            match self.peek() {
                Tok::RBrace => {
                    self.advance();
                    return Ok(model);
                }
                Tok::Ident(kw) => match kw.as_str() {
                    "subject" | "multi" | "external" => model.subjects.push(self.subject()?),
                    "message" => model.message_types.push(self.message()?),
                    "channel" => model.channels.push(self.channel()?),
                    "behavior" => model.behaviors.push(self.behavior()?),
                    _ => {
                        return Err(self.error("`subject`, `message`, `channel`, `behavior` or `}`"))
                    }
                },
                _ => return Err(self.error("`subject`, `message`, `channel`, `behavior` or `}`")),
            }
        }
    }

    fn subject(&mut self) -> Result<SubjectDef, ParseError> {
        let (kind, max_instances) = if self.peek_kw("multi") {
            self.advance();
            self.punct(Tok::LParen)?;
            let n = self.int_u32()?;
            self.punct(Tok::RParen)?;
            (SubjectKind::Multi, n)
        } else if self.peek_kw("external") {
            self.advance();
            (SubjectKind::External, 1)
        } else {
            (SubjectKind::Single, 1)
        };
        self.keyword("subject")?;
        let name = self.ident("subject name")?;
        let company = if *self.peek() == Tok::At {
            self.advance();
            Some(self.ident("company name")?)
        } else {
            None
        };
        Ok(SubjectDef {
            name,
            kind,
            max_instances,
            company,
        })
    }

    fn message(&mut self) -> Result<MessageTypeDef, ParseError> {
        self.keyword("message")?;
        let mut msg = MessageTypeDef::new(self.ident("message type name")?);
        self.punct(Tok::LBrace)?;
        // A field is `IDENT ":" type`; anything else must close the block.
        while matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::Colon {
            let name = self.ident("field name")?;
            self.punct(Tok::Colon)?;
            let ty = match self.peek() {
                Tok::Ident(w) => FieldType::from_keyword(w),
                _ => None,
            }
            .ok_or_else(|| self.error("field type `text`, `int`, `dec` or `bool`"))?;
            self.advance();
            msg.fields.push(FieldDef { name, ty });
        }
        if *self.peek() != Tok::RBrace {
            return Err(self.error("field or `}`"));
        }
        self.advance();
        Ok(msg)
    }

    fn channel(&mut self) -> Result<ChannelDef, ParseError> {
        self.keyword("channel")?;
        let from = self.ident("sender subject")?;
        self.punct(Tok::Arrow)?;
        let to = self.ident("recipient subject")?;
        self.punct(Tok::Colon)?;
        let mut types = vec![self.ident("message type")?];
        while *self.peek() == Tok::Comma {
            self.advance();
            types.push(self.ident("message type")?);
        }
        Ok(ChannelDef {
            from,
            to,
            message_types: types,
        })
    }

    fn behavior(&mut self) -> Result<BehaviorDef, ParseError> {
        self.keyword("behavior")?;
        let mut b = BehaviorDef::new(self.ident("subject name")?);
        self.punct(Tok::LBrace)?;
        loop {
            if *self.peek() == Tok::RBrace {
                self.advance();
                return Ok(b);
            }
            self.state(&mut b)?;
        }
    }

    fn state(&mut self, b: &mut BehaviorDef) -> Result<(), ParseError> {
        let is_start = self.peek_kw("start");
        if is_start {
            self.advance();
        }
        let is_end = self.peek_kw("end");
        if is_end {
            self.advance();
        }
        let kind = match self.peek() {
            Tok::Ident(w) if w == "do" => StateKind::Function,
            Tok::Ident(w) if w == "send" => StateKind::Send,
            Tok::Ident(w) if w == "recv" => StateKind::Receive,
            _ => {
                let expected = if is_start || is_end {
                    "`do`, `send` or `recv`"
                } else {
                    "state (`start`, `end`, `do`, `send`, `recv`) or `}`"
                };
                return Err(self.error(expected));
            }
        };
        self.advance();
        let id = self.ident("state id")?;
        let label = self.string()?;
        b.states.push(StateDef {
            id: id.clone(),
            label,
            kind,
            is_start,
            is_end,
        });

        match kind {
            StateKind::Function => {
                while self.peek_kw("on") {
                    self.advance();
                    let label = self.string()?;
                    self.punct(Tok::Arrow)?;
                    let to = self.ident("target state")?;
                    b.transitions.push(TransitionDef {
                        from: id.clone(),
                        to,
                        trigger: Trigger::Branch { label },
                    });
                }
            }
            StateKind::Send => {
                while self.peek_kw("msg") {
                    self.advance();
                    let message = self.ident("message type")?;
                    self.keyword("to")?;
                    let recipient = self.ident("recipient subject")?;
                    let cardinality = self.cardinality()?;
                    self.punct(Tok::Arrow)?;
                    let to = self.ident("target state")?;
                    b.transitions.push(TransitionDef {
                        from: id.clone(),
                        to,
                        trigger: Trigger::Send {
                            message,
                            to: recipient,
                            cardinality,
                        },
                    });
                }
                self.timeout_arm(&id, b)?;
            }
            StateKind::Receive => {
                while self.peek_kw("msg") {
                    self.advance();
                    let message = self.ident("message type")?;
                    self.keyword("from")?;
                    let sender = self.ident("sender subject")?;
                    self.punct(Tok::Arrow)?;
                    let to = self.ident("target state")?;
                    b.transitions.push(TransitionDef {
                        from: id.clone(),
                        to,
                        trigger: Trigger::Receive {
                            message,
                            from: sender,
                        },
                    });
                }
                self.timeout_arm(&id, b)?;
            }
        }
        Ok(())
    }

    fn cardinality(&mut self) -> Result<Cardinality, ParseError> {
        if self.peek_kw("one") {
            self.advance();
            Ok(Cardinality::One)
        } else if self.peek_kw("all") {
            self.advance();
            Ok(Cardinality::All)
        } else if self.peek_kw("choose") {
            self.advance();
            self.punct(Tok::LParen)?;
            let min = self.int_u32()?;
            self.punct(Tok::Comma)?;
            let max = self.int_u32()?;
            self.punct(Tok::RParen)?;
            Ok(Cardinality::Choose { min, max })
        } else if *self.peek() == Tok::Arrow {
            Ok(Cardinality::One)
        } else {
            Err(self.error("`one`, `all`, `choose(min, max)` or `->`"))
        }
    }

    fn timeout_arm(&mut self, state: &str, b: &mut BehaviorDef) -> Result<(), ParseError> {
        if self.peek_kw("timeout") {
            self.advance();
            let after_ms = self.duration()?;
            self.punct(Tok::Arrow)?;
            let to = self.ident("target state")?;
            b.transitions.push(TransitionDef {
                from: state.into(),
                to,
                trigger: Trigger::Timeout { after_ms },
            });
        }
        Ok(())
    }
}

/// Formats a duration in the largest unit that represents it exactly.
pub fn format_duration(ms: u64) -> String {
    if ms == 0 {
        "0ms".into()
    } else if ms % 60_000 == 0 {
        format!("{}m", ms / 60_000)
    } else if ms % 1_000 == 0 {
        format!("{}s", ms / 1_000)
    } else {
        format!("{ms}ms")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// Canonical text of a validated model. Transitions of each state are
/// written in declaration order with the timeout arm last.
pub fn serialize(model: &ValidModel) -> String {
    use std::fmt::Write;

    let mut out = String::new();
    let _ = writeln!(out, "process {} {{", model.name);
    for s in &model.subjects {
        let prefix = match s.kind {
            SubjectKind::Single => String::new(),
            SubjectKind::Multi => format!("multi({}) ", s.max_instances),
            SubjectKind::External => "external ".into(),
        };
        let _ = write!(out, "  {prefix}subject {}", s.name);
        if let Some(c) = &s.company {
            let _ = write!(out, " @{c}");
        }
        out.push('\n');
    }
    for m in &model.message_types {
        if m.fields.is_empty() {
            let _ = writeln!(out, "  message {} {{}}", m.name);
        } else {
            let _ = writeln!(out, "  message {} {{", m.name);
            for f in &m.fields {
                let _ = writeln!(out, "    {}: {}", f.name, f.ty.keyword());
            }
            out.push_str("  }\n");
        }
    }
    for c in &model.channels {
        let _ = writeln!(
            out,
            "  channel {} -> {}: {}",
            c.from,
            c.to,
            c.message_types.join(", ")
        );
    }
    for b in &model.behaviors {
        let _ = writeln!(out, "  behavior {} {{", b.subject);
        for s in &b.states {
            out.push_str("    ");
            if s.is_start {
                out.push_str("start ");
            }
            if s.is_end {
                out.push_str("end ");
            }
            let kw = match s.kind {
                StateKind::Function => "do",
                StateKind::Send => "send",
                StateKind::Receive => "recv",
            };
            let _ = writeln!(out, "{kw} {} {}", s.id, quote(&s.label));
            let outgoing: Vec<_> = b.outgoing(&s.id).collect();
            for t in outgoing.iter().filter(|t| !t.trigger.is_timeout()) {
                match &t.trigger {
                    Trigger::Branch { label } => {
                        let _ = writeln!(out, "      on {} -> {}", quote(label), t.to);
                    }
                    Trigger::Send {
                        message,
                        to,
                        cardinality,
                    } => {
                        let card = match cardinality {
                            Cardinality::One => String::new(),
                            Cardinality::All => " all".into(),
                            Cardinality::Choose { min, max } => format!(" choose({min}, {max})"),
                        };
                        let _ = writeln!(out, "      msg {message} to {to}{card} -> {}", t.to);
                    }
                    Trigger::Receive { message, from } => {
                        let _ = writeln!(out, "      msg {message} from {from} -> {}", t.to);
                    }
                    Trigger::Timeout { .. } => unreachable!(),
                }
            }
            for t in outgoing.iter().filter(|t| t.trigger.is_timeout()) {
                if let Trigger::Timeout { after_ms } = t.trigger {
                    let _ = writeln!(
                        out,
                        "      timeout {} -> {}",
                        format_duration(after_ms),
                        t.to
                    );
                }
            }
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}
