//! Integer expression language used for parameter constraints and
//! local-memory usage formulas.
//!
//! ```text
//! expr   := or
//! or     := and ("||" and)*
//! and    := cmp ("&&" cmp)*
//! cmp    := sum (("==" | "!=" | "<=" | ">=" | "<" | ">") sum)?
//! sum    := term (("+" | "-") term)*
//! term   := factor (("*" | "/" | "%") factor)*
//! factor := "!" factor | "(" expr ")" | integer | identifier
//! ```
//!
//! Values are `i64`. Comparisons and logical operators produce `0` or `1`,
//! and any non-zero value counts as true. Division truncates toward zero and
//! `%` takes the sign of the dividend.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: expected {}", .expected.join(" or "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("integer overflow in `{0}`")]
    Overflow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
        }
    }
}

/// Parsed expression. Identifiers are resolved to parameter positions at
/// parse time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Param { index: usize, name: String },
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Parses `text`, resolving identifiers against `names` (the parameter
    /// names of the owning space, in order).
    pub fn parse<S: AsRef<str>>(text: &str, names: &[S]) -> Result<Expr, ExprError> {
        let tokens = lex(text)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            names,
            end: text.len(),
        };
        if parser.tokens.is_empty() {
            return Err(ExprError::Syntax {
                offset: 0,
                expected: alloc::vec!["expression"],
            });
        }
        let expr = parser.or()?;
        if let Some(tok) = parser.peek() {
            return Err(ExprError::Syntax {
                offset: tok.offset,
                expected: alloc::vec!["operator", "end of input"],
            });
        }
        Ok(expr)
    }

    /// Evaluates against parameter values indexed like the owning space.
    pub fn eval(&self, values: &[u64]) -> Result<i64, ExprError> {
        match self {
            Expr::Int(v) => Ok(*v),
            Expr::Param { index, name } => {
                let v = values[*index];
                i64::try_from(v).map_err(|_| ExprError::Overflow(name.clone()))
            }
            Expr::Not(inner) => Ok((inner.eval(values)? == 0) as i64),
            Expr::Binary(BinOp::And, l, r) => Ok((l.eval(values)? != 0 && r.eval(values)? != 0) as i64),
            Expr::Binary(BinOp::Or, l, r) => Ok((l.eval(values)? != 0 || r.eval(values)? != 0) as i64),
            Expr::Binary(op, l, r) => {
                let a = l.eval(values)?;
                let b = r.eval(values)?;
                let overflow = || ExprError::Overflow(self.to_string());
                Ok(match op {
                    BinOp::Eq => (a == b) as i64,
                    BinOp::Ne => (a != b) as i64,
                    BinOp::Lt => (a < b) as i64,
                    BinOp::Le => (a <= b) as i64,
                    BinOp::Gt => (a > b) as i64,
                    BinOp::Ge => (a >= b) as i64,
                    BinOp::Add => a.checked_add(b).ok_or_else(overflow)?,
                    BinOp::Sub => a.checked_sub(b).ok_or_else(overflow)?,
                    BinOp::Mul => a.checked_mul(b).ok_or_else(overflow)?,
                    BinOp::Div | BinOp::Rem if b == 0 => {
                        return Err(ExprError::DivisionByZero(self.to_string()))
                    }
                    BinOp::Div => a.checked_div(b).ok_or_else(overflow)?,
                    BinOp::Rem => a.checked_rem(b).ok_or_else(overflow)?,
                    BinOp::And | BinOp::Or => unreachable!(),
                })
            }
        }
    }

    /// Evaluates as a predicate: non-zero is true.
    pub fn holds(&self, values: &[u64]) -> Result<bool, ExprError> {
        self.eval(values).map(|v| v != 0)
    }

    /// Highest parameter position referenced, if any.
    pub fn max_param_index(&self) -> Option<usize> {
        match self {
            Expr::Int(_) => None,
            Expr::Param { index, .. } => Some(*index),
            Expr::Not(inner) => inner.max_param_index(),
            Expr::Binary(_, l, r) => match (l.max_param_index(), r.max_param_index()) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Param { name, .. } => f.write_str(name),
            Expr::Not(inner) => write!(f, "!{inner}"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum TokenKind {
    Int(i64),
    Ident(String),
    LParen,
    RParen,
    Bang,
    Op(BinOp),
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let value = text[start..i].parse::<i64>().map_err(|_| ExprError::Syntax {
                offset: start,
                expected: alloc::vec!["integer that fits in 64 bits"],
            })?;
            tokens.push(Token {
                kind: TokenKind::Int(value),
                offset: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(text[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        let next = bytes.get(i + 1).copied();
        let (kind, len) = match (c, next) {
            (b'|', Some(b'|')) => (TokenKind::Op(BinOp::Or), 2),
            (b'&', Some(b'&')) => (TokenKind::Op(BinOp::And), 2),
            (b'=', Some(b'=')) => (TokenKind::Op(BinOp::Eq), 2),
            (b'!', Some(b'=')) => (TokenKind::Op(BinOp::Ne), 2),
            (b'<', Some(b'=')) => (TokenKind::Op(BinOp::Le), 2),
            (b'>', Some(b'=')) => (TokenKind::Op(BinOp::Ge), 2),
            (b'<', _) => (TokenKind::Op(BinOp::Lt), 1),
            (b'>', _) => (TokenKind::Op(BinOp::Gt), 1),
            (b'!', _) => (TokenKind::Bang, 1),
            (b'+', _) => (TokenKind::Op(BinOp::Add), 1),
            (b'-', _) => (TokenKind::Op(BinOp::Sub), 1),
            (b'*', _) => (TokenKind::Op(BinOp::Mul), 1),
            (b'/', _) => (TokenKind::Op(BinOp::Div), 1),
            (b'%', _) => (TokenKind::Op(BinOp::Rem), 1),
            (b'(', _) => (TokenKind::LParen, 1),
            (b')', _) => (TokenKind::RParen, 1),
            (b'|', _) => return Err(expected_at(start, "||")),
            (b'&', _) => return Err(expected_at(start, "&&")),
            (b'=', _) => return Err(expected_at(start, "==")),
            _ => {
                return Err(ExprError::Syntax {
                    offset: start,
                    expected: alloc::vec!["operator", "operand"],
                })
            }
        };
        tokens.push(Token { kind, offset: start });
        i += len;
    }
    Ok(tokens)
}

fn expected_at(offset: usize, what: &'static str) -> ExprError {
    ExprError::Syntax {
        offset,
        expected: alloc::vec![what],
    }
}

struct Parser<'n, S> {
    tokens: Vec<Token>,
    pos: usize,
    names: &'n [S],
    end: usize,
}

impl<S: AsRef<str>> Parser<'_, S> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<BinOp> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(op),
                ..
            }) => Some(*op),
            _ => None,
        }
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn binary_level(
        &mut self,
        ops: &[BinOp],
        next: fn(&mut Self) -> Result<Expr, ExprError>,
    ) -> Result<Expr, ExprError> {
        let mut lhs = next(self)?;
        while let Some(op) = self.peek_op().filter(|op| ops.contains(op)) {
            self.pos += 1;
            let rhs = next(self)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        self.binary_level(&[BinOp::Or], Self::and)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        self.binary_level(&[BinOp::And], Self::cmp)
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        const CMP: [BinOp; 6] = [BinOp::Eq, BinOp::Ne, BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge];
        let lhs = self.sum()?;
        match self.peek_op().filter(|op| CMP.contains(op)) {
            Some(op) => {
                self.pos += 1;
                let rhs = self.sum()?;
                Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
            }
            None => Ok(lhs),
        }
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        self.binary_level(&[BinOp::Add, BinOp::Sub], Self::term)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        self.binary_level(&[BinOp::Mul, BinOp::Div, BinOp::Rem], Self::factor)
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return Err(ExprError::Syntax {
                offset,
                expected: alloc::vec!["operand"],
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Bang => Ok(Expr::Not(Box::new(self.factor()?))),
            TokenKind::Int(v) => Ok(Expr::Int(v)),
            TokenKind::Ident(name) => match self.names.iter().position(|n| n.as_ref() == name) {
                Some(index) => Ok(Expr::Param { index, name }),
                None => Err(ExprError::UnknownParameter(name)),
            },
            TokenKind::LParen => {
                let inner = self.or()?;
                match self.peek() {
                    Some(Token {
                        kind: TokenKind::RParen,
                        ..
                    }) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(expected_at(self.offset(), ")")),
                }
            }
            TokenKind::RParen | TokenKind::Op(_) => Err(ExprError::Syntax {
                offset: tok.offset,
                expected: alloc::vec!["operand"],
            }),
        }
    }
}
