//! Tokenizer and recursive-descent parser for the reward expression
//! grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := NUMBER | SIGNAL | func | '(' expr ')'
//! func   := NAME '(' expr (',' expr)* ')'
//! SIGNAL := 'sa' | 'sb' | 'sc'
//! ```
//!
//! Numbers are non-negative decimal literals (`12`, `0.85`); negatives are
//! written as subtractions. The parser is total: any input produces either
//! an AST or a positioned error, never a panic (nesting is depth-guarded).

use super::{BinOp, Expr, ParseError, Signal};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

/// Hard recursion limit for the parser itself (comfortably above the
/// validator's depth-12 rule, small enough to never exhaust the stack).
const MAX_PARSE_DEPTH: usize = 64;

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b',' => {
                toks.push((Tok::Comma, i));
                i += 1;
            }
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return Err(ParseError::Syntax {
                            pos: start,
                            msg: "number has a trailing decimal point".into(),
                        });
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    msg: format!("bad number literal {text:?}"),
                })?;
                toks.push((Tok::Num(value), start));
            }
            b'a'..=b'z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_lowercase()
                        || bytes[i].is_ascii_digit()
                        || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(src[start..i].to_string()), start));
            }
            _ => {
                return Err(ParseError::Syntax {
                    pos: i,
                    msg: format!("unexpected character {:?}", src[i..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    src_len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|&(_, p)| p)
            .unwrap_or(self.src_len)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ParseError::Syntax {
                pos: self.here(),
                msg: format!("expected {what}"),
            }),
        }
    }

    fn guard(&self, depth: usize) -> Result<(), ParseError> {
        if depth > MAX_PARSE_DEPTH {
            Err(ParseError::Syntax {
                pos: self.here(),
                msg: format!("expression nesting deeper than {MAX_PARSE_DEPTH}"),
            })
        } else {
            Ok(())
        }
    }

    fn expr(&mut self, depth: usize) -> Result<Expr, ParseError> {
        self.guard(depth)?;
        let mut lhs = self.term(depth + 1)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term(depth + 1)?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self, depth: usize) -> Result<Expr, ParseError> {
        self.guard(depth)?;
        let mut lhs = self.factor(depth + 1)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.factor(depth + 1)?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn factor(&mut self, depth: usize) -> Result<Expr, ParseError> {
        self.guard(depth)?;
        let at = self.here();
        match self.bump() {
            Some((Tok::Num(v), _)) => Ok(Expr::Num(v)),
            Some((Tok::LParen, _)) => {
                let inner = self.expr(depth + 1)?;
                self.expect(Tok::RParen, "closing `)`")?;
                Ok(inner)
            }
            Some((Tok::Ident(name), pos)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let args = self.args(depth + 1)?;
                    self.expect(Tok::RParen, "closing `)` after arguments")?;
                    build_call(&name, args, pos)
                } else {
                    match name.as_str() {
                        "sa" => Ok(Expr::Signal(Signal::Sa)),
                        "sb" => Ok(Expr::Signal(Signal::Sb)),
                        "sc" => Ok(Expr::Signal(Signal::Sc)),
                        _ => Err(ParseError::UnknownIdentifier { name, pos }),
                    }
                }
            }
            Some((_, pos)) => Err(ParseError::Syntax {
                pos,
                msg: "expected a number, signal, function call, or `(`".into(),
            }),
            None => Err(ParseError::Syntax {
                pos: at,
                msg: "unexpected end of expression".into(),
            }),
        }
    }

    /// Parses `expr (',' expr)*` along with each argument's start position.
    fn args(&mut self, depth: usize) -> Result<Vec<(Expr, usize)>, ParseError> {
        let mut out = Vec::new();
        loop {
            let at = self.here();
            let e = self.expr(depth)?;
            out.push((e, at));
            if self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
            } else {
                return Ok(out);
            }
        }
    }
}

fn build_call(name: &str, args: Vec<(Expr, usize)>, pos: usize) -> Result<Expr, ParseError> {
    let arity = |want: usize| -> Result<(), ParseError> {
        if args.len() == want {
            Ok(())
        } else {
            Err(ParseError::Arity {
                name: name.to_string(),
                expected: want,
                got: args.len(),
                pos,
            })
        }
    };
    let mut take = args.clone().into_iter().map(|(e, _)| Box::new(e));
    match name {
        "min" => {
            arity(2)?;
            Ok(Expr::Min(take.next().unwrap(), take.next().unwrap()))
        }
        "max" => {
            arity(2)?;
            Ok(Expr::Max(take.next().unwrap(), take.next().unwrap()))
        }
        "clip" => {
            arity(3)?;
            Ok(Expr::Clip {
                x: take.next().unwrap(),
                lo: take.next().unwrap(),
                hi: take.next().unwrap(),
            })
        }
        "exp" => {
            arity(1)?;
            Ok(Expr::Exp(take.next().unwrap()))
        }
        "log1p" => {
            arity(1)?;
            Ok(Expr::Log1p(take.next().unwrap()))
        }
        "sigmoid" => {
            arity(1)?;
            Ok(Expr::Sigmoid(take.next().unwrap()))
        }
        "pow" => {
            arity(2)?;
            let base = take.next().unwrap();
            let (exp_expr, exp_pos) = (&args[1].0, args[1].1);
            let exp = match exp_expr {
                Expr::Num(v)
                    if v.fract() == 0.0 && *v >= 0.0 && *v <= i32::MAX as f64 =>
                {
                    *v as u32
                }
                _ => {
                    return Err(ParseError::Syntax {
                        pos: exp_pos,
                        msg: "pow exponent must be a non-negative integer literal".into(),
                    })
                }
            };
            Ok(Expr::Pow { base, exp })
        }
        _ => Err(ParseError::UnknownIdentifier {
            name: name.to_string(),
            pos,
        }),
    }
}

/// Collapses a top-level left-associative chain of `Num*Signal` addends
/// into the weighted-sum node. Anything else passes through unchanged.
fn apply_weighted_sum_sugar(expr: Expr) -> Expr {
    fn collect<'e>(e: &'e Expr, terms: &mut Vec<&'e Expr>) -> bool {
        match e {
            Expr::Binary {
                op: BinOp::Add,
                lhs,
                rhs,
            } => collect(lhs, terms) && collect(rhs, terms),
            other => {
                terms.push(other);
                true
            }
        }
    }
    let mut raw_terms = Vec::new();
    if !collect(&expr, &mut raw_terms) || raw_terms.len() < 2 {
        return expr;
    }
    let mut weighted = Vec::with_capacity(raw_terms.len());
    for t in &raw_terms {
        match t {
            Expr::Binary {
                op: BinOp::Mul,
                lhs,
                rhs,
            } => match (lhs.as_ref(), rhs.as_ref()) {
                (Expr::Num(w), Expr::Signal(s)) => weighted.push((*w, *s)),
                _ => return expr,
            },
            _ => return expr,
        }
    }
    Expr::WeightedSum(weighted)
}

/// Parses reward-expression source text into an AST.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    if toks.is_empty() {
        return Err(ParseError::Syntax {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        src_len: src.len(),
    };
    let expr = p.expr(0)?;
    if p.pos != toks.len() {
        return Err(ParseError::Syntax {
            pos: p.here(),
            msg: "trailing input after expression".into(),
        });
    }
    Ok(apply_weighted_sum_sugar(expr))
}
