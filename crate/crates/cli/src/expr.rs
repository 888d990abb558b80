//! Arithmetic used for numeric config values: numbers, `pi`, the binding
//! variables, unary minus, `*` and `/`.

use std::fmt;

use pdcnet::experiments::Bindings;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    Phi,
    PhiP,
    Tau,
    Theta,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::Phi => "phi",
            Var::PhiP => "phi_p",
            Var::Tau => "tau",
            Var::Theta => "theta",
        }
    }

    fn value(self, b: &Bindings) -> f64 {
        match self {
            Var::Phi => b.phi,
            Var::PhiP => b.phi_p,
            Var::Tau => b.tau,
            Var::Theta => b.theta,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, b: &Bindings) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(v) => v.value(b),
            Expr::Neg(e) => -e.eval(b),
            Expr::Mul(l, r) => l.eval(b) * r.eval(b),
            Expr::Div(l, r) => l.eval(b) / r.eval(b),
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Var(v) => *v == var,
            Expr::Num(_) | Expr::Pi => false,
            Expr::Neg(e) => e.uses(var),
            Expr::Mul(l, r) | Expr::Div(l, r) => l.uses(var) || r.uses(var),
        }
    }

    pub fn is_constant(&self) -> bool {
        [Var::Phi, Var::PhiP, Var::Tau, Var::Theta].iter().all(|&v| !self.uses(v))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Pi => f.write_str("pi"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => write!(f, "-{e}"),
            Expr::Mul(l, r) => write!(f, "{l}*{r}"),
            Expr::Div(l, r) => write!(f, "{l}/{r}"),
        }
    }
}

/// Parses one expression. Products and quotients associate to the left;
/// there are no parentheses.
pub fn parse_expr(text: &str) -> Result<Expr, String> {
    let mut p = Parser { s: text.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.pos == p.s.len() {
        return Err("empty expression".into());
    }
    let mut lhs = p.factor()?;
    loop {
        p.skip_ws();
        match p.peek() {
            None => return Ok(lhs),
            Some(b'*') => {
                p.pos += 1;
                lhs = Expr::Mul(Box::new(lhs), Box::new(p.factor()?));
            }
            Some(b'/') => {
                p.pos += 1;
                lhs = Expr::Div(Box::new(lhs), Box::new(p.factor()?));
            }
            Some(c) => return Err(format!("unexpected `{}` in `{text}`", c as char)),
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t')) {
            self.pos += 1;
        }
    }

    fn factor(&mut self) -> Result<Expr, String> {
        self.skip_ws();
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(match self.factor()? {
                    Expr::Num(x) => Expr::Num(-x),
                    e => Expr::Neg(Box::new(e)),
                })
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                match &self.s[start..self.pos] {
                    b"pi" => Ok(Expr::Pi),
                    b"phi" => Ok(Expr::Var(Var::Phi)),
                    b"phi_p" => Ok(Expr::Var(Var::PhiP)),
                    b"tau" => Ok(Expr::Var(Var::Tau)),
                    b"theta" => Ok(Expr::Var(Var::Theta)),
                    other => Err(format!("unknown name `{}`", String::from_utf8_lossy(other))),
                }
            }
            Some(c) => Err(format!("unexpected `{}`", c as char)),
            None => Err("expression ends early".into()),
        }
    }

    fn number(&mut self) -> Result<Expr, String> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii slice");
        match text.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Expr::Num(x)),
            Ok(_) => Err(format!("number `{text}` is not finite")),
            Err(_) => Err(format!("malformed number `{text}`")),
        }
    }
}

/// Parses and evaluates an expression that must not reference variables.
pub fn parse_constant(text: &str) -> Result<f64, String> {
    let e = parse_expr(text)?;
    if !e.is_constant() {
        return Err(format!("`{text}` must be a constant"));
    }
    let v = e.eval(&Bindings::default());
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{text}` is not finite"))
    }
}
