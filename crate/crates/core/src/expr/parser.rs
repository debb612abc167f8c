//! Recursive-descent parser with standard precedence:
//! `^` > unary `-` > `*` `/` > `+` `-`, binary operators left-associative.

use super::token::{lex, Tok, Token};
use super::{Func, Node, ParseError, ParseErrorKind};

pub(super) struct Parser<'a> {
    tokens: Vec<Token>,
    cursor: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    pub fn parse(source: &str, vars: &'a [String]) -> Result<Node, ParseError> {
        if source.trim().is_empty() {
            return Err(ParseError {
                offset: 0,
                kind: ParseErrorKind::EmptySource,
            });
        }
        let mut p = Parser {
            tokens: lex(source)?,
            cursor: 0,
            vars,
        };
        let node = p.expr()?;
        match p.peek().tok {
            Tok::Eof => Ok(node),
            _ => Err(p.unexpected()),
        }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.cursor]
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.cursor].clone();
        if self.cursor + 1 < self.tokens.len() {
            self.cursor += 1;
        }
        tok
    }

    fn unexpected(&self) -> ParseError {
        let tok = self.peek();
        ParseError {
            offset: tok.offset,
            kind: match &tok.tok {
                Tok::Eof => ParseErrorKind::UnexpectedEnd,
                other => ParseErrorKind::UnexpectedToken(describe(other)),
            },
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if self.peek().tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let tok = self.bump();
        let Tok::Number(value) = tok.tok else {
            return Err(ParseError {
                offset: tok.offset,
                kind: ParseErrorKind::NonIntegerExponent,
            });
        };
        if value.fract() != 0.0 || value.abs() > i32::MAX as f64 {
            return Err(ParseError {
                offset: tok.offset,
                kind: ParseErrorKind::NonIntegerExponent,
            });
        }
        let mut exponent = value as i32;
        if negative {
            exponent = -exponent;
        }
        Ok(Node::Pow(Box::new(base), exponent))
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let tok = self.bump();
        match tok.tok {
            Tok::Number(value) => Ok(Node::Num(value)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => self.ident(name, tok.offset),
            Tok::Eof => Err(ParseError {
                offset: tok.offset,
                kind: ParseErrorKind::UnexpectedEnd,
            }),
            other => Err(ParseError {
                offset: tok.offset,
                kind: ParseErrorKind::UnexpectedToken(describe(&other)),
            }),
        }
    }

    fn ident(&mut self, name: String, offset: usize) -> Result<Node, ParseError> {
        if let Some(func) = Func::from_name(&name) {
            let lparen = self.bump();
            if lparen.tok != Tok::LParen {
                return Err(ParseError {
                    offset: lparen.offset,
                    kind: ParseErrorKind::ArityMismatch(name),
                });
            }
            let arg = self.expr()?;
            // A comma here means a second argument: all functions are unary.
            if self.peek().tok == Tok::Comma {
                return Err(ParseError {
                    offset: self.peek().offset,
                    kind: ParseErrorKind::ArityMismatch(name),
                });
            }
            self.expect_rparen()?;
            return Ok(Node::Call(func, Box::new(arg)));
        }
        if name == "t" {
            return Ok(Node::Time);
        }
        if let Some(index) = self.vars.iter().position(|v| v == &name) {
            return Ok(Node::Var(index));
        }
        Err(ParseError {
            offset,
            kind: ParseErrorKind::UnknownIdentifier(name),
        })
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let tok = self.bump();
        if tok.tok == Tok::RParen {
            Ok(())
        } else {
            Err(ParseError {
                offset: tok.offset,
                kind: match tok.tok {
                    Tok::Eof => ParseErrorKind::UnexpectedEnd,
                    other => ParseErrorKind::UnexpectedToken(describe(&other)),
                },
            })
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Number(v) => format!("number {v}"),
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Plus => "`+`".to_string(),
        Tok::Minus => "`-`".to_string(),
        Tok::Star => "`*`".to_string(),
        Tok::Slash => "`/`".to_string(),
        Tok::Caret => "`^`".to_string(),
        Tok::LParen => "`(`".to_string(),
        Tok::RParen => "`)`".to_string(),
        Tok::Comma => "`,`".to_string(),
        Tok::Eof => "end of input".to_string(),
    }
}
