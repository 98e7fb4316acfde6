//! Affine solver for single-unknown equations such as `( 2.0 * x ) + 2 = 1`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("malformed equation: {0}")]
    Malformed(String),
    #[error("division by zero or non-finite value")]
    NonFinite,
    #[error("residual does not depend on x")]
    Degenerate,
    #[error("candidate root fails verification (equation not affine in x)")]
    NotAffine,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    X,
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
}

impl Expr {
    fn eval(&self, x: f64) -> Option<f64> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x)?, b.eval(x)?);
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => {
                        if b == 0.0 {
                            return None;
                        }
                        a / b
                    }
                    _ => unreachable!("lexer only emits + - * /"),
                }
            }
        };
        v.is_finite().then_some(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    X,
    Op(char),
    Open,
    Close,
}

fn lex(s: &str) -> Result<Vec<Tok>, SolveError> {
    let mut out = Vec::new();
    let mut chars = s.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            c if c.is_whitespace() => {}
            '(' => out.push(Tok::Open),
            ')' => out.push(Tok::Close),
            '+' | '-' | '*' | '/' => out.push(Tok::Op(c)),
            'x' => out.push(Tok::X),
            c if c.is_ascii_digit() || c == '.' => {
                let mut end = i + 1;
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_ascii_digit() || d == '.' {
                        end = j + 1;
                        chars.next();
                    } else {
                        break;
                    }
                }
                let lit = &s[i..end];
                let v = lit.parse().map_err(|_| SolveError::Malformed(format!("bad number `{lit}`")))?;
                out.push(Tok::Num(v));
            }
            other => return Err(SolveError::Malformed(format!("unexpected `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn expr(&mut self) -> Result<Expr, SolveError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, SolveError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, SolveError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SolveError> {
        let tok = self.peek().cloned();
        self.pos += 1;
        match tok {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::X) => Ok(Expr::X),
            Some(Tok::Open) => {
                let e = self.expr()?;
                match self.peek() {
                    Some(Tok::Close) => {
                        self.pos += 1;
                        Ok(e)
                    }
                    _ => Err(SolveError::Malformed("missing `)`".into())),
                }
            }
            Some(t) => Err(SolveError::Malformed(format!("unexpected {t:?}"))),
            None => Err(SolveError::Malformed("unexpected end".into())),
        }
    }
}

fn parse_side(s: &str) -> Result<Expr, SolveError> {
    let mut p = Parser { toks: lex(s)?, pos: 0 };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(SolveError::Malformed("trailing tokens".into()));
    }
    Ok(e)
}

/// Solves `lhs = rhs` for x assuming the residual is affine in x: the
/// residual is sampled at 0 and 1, the line's root is taken, and the root
/// is accepted only if it balances both sides to a relative 1e-6.
pub fn solve_linear(equation: &str) -> Result<f64, SolveError> {
    let mut sides = equation.split('=');
    let (Some(l), Some(r), None) = (sides.next(), sides.next(), sides.next()) else {
        return Err(SolveError::Malformed("expected exactly one `=`".into()));
    };
    let (f, g) = (parse_side(l)?, parse_side(r)?);
    let residual = |x: f64| -> Result<f64, SolveError> {
        let (a, b) = (f.eval(x).ok_or(SolveError::NonFinite)?, g.eval(x).ok_or(SolveError::NonFinite)?);
        Ok(a - b)
    };
    let r0 = residual(0.0)?;
    let d = residual(1.0)? - r0;
    if d == 0.0 || !d.is_finite() {
        return Err(SolveError::Degenerate);
    }
    let x = -r0 / d;
    let (fx, gx) = (f.eval(x).ok_or(SolveError::NonFinite)?, g.eval(x).ok_or(SolveError::NonFinite)?);
    if (fx - gx).abs() <= 1e-6 * fx.abs().max(gx.abs()).max(1.0) {
        Ok(x)
    } else {
        Err(SolveError::NotAffine)
    }
}
