//! Small arithmetic expressions for exact lengths such as `sqrt(17)` and
//! for coordinate templates such as `-u2` or `x1 + 0.5`.

use std::collections::HashMap;

use crate::error::ModelError;

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Var(String),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(String, Box<Node>),
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<char>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            chars: src.chars().collect(),
            pos: 0,
        }
    }

    fn err(&self, msg: &str) -> ModelError {
        ModelError::Expression {
            expr: self.src.to_string(),
            reason: format!("{msg} at offset {}", self.pos),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node, ModelError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(c, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ModelError> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(c, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ModelError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ModelError> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ModelError> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while self.pos < self.chars.len() {
                    let c = self.chars[self.pos];
                    let exp_sign = (c == '-' || c == '+')
                        && matches!(self.chars[self.pos - 1], 'e' | 'E');
                    if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                text.parse::<f64>()
                    .map(Node::Num)
                    .map_err(|_| self.err("malformed number"))
            }
            Some(c) if c.is_alphabetic() || c == '_' => {
                let start = self.pos;
                while self.pos < self.chars.len()
                    && (self.chars[self.pos].is_alphanumeric() || self.chars[self.pos] == '_')
                {
                    self.pos += 1;
                }
                let name: String = self.chars[start..self.pos].iter().collect();
                if self.peek() == Some('(') {
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(')') {
                        return Err(self.err("expected ')'"));
                    }
                    self.pos += 1;
                    return Ok(Node::Call(name, Box::new(arg)));
                }
                Ok(Node::Var(name))
            }
            _ => Err(self.err("unexpected token")),
        }
    }
}

/// A parsed expression.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    src: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ModelError> {
        let mut p = Parser::new(src);
        let root = p.expr()?;
        if p.peek().is_some() {
            return Err(p.err("trailing input"));
        }
        Ok(Self {
            src: src.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    /// Evaluates with `lookup` resolving variable names.
    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ModelError> {
        self.eval_node(&self.root, lookup)
    }

    /// Evaluates an expression without free variables.
    pub fn eval(&self) -> Result<f64, ModelError> {
        self.eval_with(&|_| None)
    }

    fn eval_node(&self, n: &Node, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ModelError> {
        let err = |reason: String| ModelError::Expression {
            expr: self.src.clone(),
            reason,
        };
        Ok(match n {
            Node::Num(v) => *v,
            Node::Var(name) => match name.as_str() {
                "pi" => std::f64::consts::PI,
                _ => lookup(name).ok_or_else(|| err(format!("unknown symbol '{name}'")))?,
            },
            Node::Neg(a) => -self.eval_node(a, lookup)?,
            Node::Bin(op, a, b) => {
                let (x, y) = (self.eval_node(a, lookup)?, self.eval_node(b, lookup)?);
                match op {
                    '+' => x + y,
                    '-' => x - y,
                    '*' => x * y,
                    '/' => x / y,
                    _ => x.powf(y),
                }
            }
            Node::Call(f, a) => {
                let x = self.eval_node(a, lookup)?;
                match f.as_str() {
                    "sqrt" => x.sqrt(),
                    "cbrt" => x.cbrt(),
                    "abs" => x.abs(),
                    _ => return Err(err(format!("unknown function '{f}'"))),
                }
            }
        })
    }

    /// Extracts `c + Σ a_k·p_k` for an expression that is affine in `params`.
    pub fn affine_in(&self, params: &[String]) -> Result<(f64, Vec<(usize, f64)>), ModelError> {
        let index: HashMap<&str, usize> = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let at = |vals: &[f64]| {
            self.eval_with(&|name| index.get(name).map(|&i| vals[i]))
        };
        let zero = vec![0.0; params.len()];
        let c = at(&zero)?;
        let mut terms = Vec::new();
        let mut unit = zero.clone();
        for k in 0..params.len() {
            unit[k] = 1.0;
            let a = at(&unit)? - c;
            unit[k] = 0.0;
            if a != 0.0 {
                terms.push((k, a));
            }
        }
        // Reject non-affine templates by probing an off-lattice point.
        let probe: Vec<f64> = (0..params.len()).map(|k| 0.37 + 0.61 * k as f64).collect();
        let expect = c + terms.iter().map(|&(k, a)| a * probe[k]).sum::<f64>();
        let got = at(&probe)?;
        if (expect - got).abs() > 1e-12 * (1.0 + got.abs()) {
            return Err(ModelError::Expression {
                expr: self.src.clone(),
                reason: "coordinate template is not affine in the parameters".into(),
            });
        }
        Ok((c, terms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_and_functions() {
        let e = Expr::parse("(25*sqrt(3)-15)/((3*sqrt(2)+10)*sqrt(3)-3*sqrt(2)+6)").unwrap();
        assert!((e.eval().unwrap() - 1.070_95).abs() < 1e-5);
        assert_eq!(Expr::parse("2^3^2").unwrap().eval().unwrap(), 512.0);
        assert_eq!(Expr::parse("-2^2").unwrap().eval().unwrap(), -4.0);
        assert_eq!(Expr::parse("1.5e-3*2").unwrap().eval().unwrap(), 3e-3);
        assert_eq!(Expr::parse("3/2").unwrap().eval().unwrap(), 1.5);
    }

    #[test]
    fn affine_templates() {
        let params = vec!["x1".to_string(), "y3".to_string()];
        let (c, t) = Expr::parse("-y3").unwrap().affine_in(&params).unwrap();
        assert_eq!((c, t), (0.0, vec![(1, -1.0)]));
        let (c, t) = Expr::parse("0.5 + 2*x1").unwrap().affine_in(&params).unwrap();
        assert_eq!((c, t), (0.5, vec![(0, 2.0)]));
        assert!(Expr::parse("x1*y3").unwrap().affine_in(&params).is_err());
    }

    #[test]
    fn errors_carry_context() {
        assert!(Expr::parse("sqrt(2").is_err());
        assert!(Expr::parse("2 +").is_err());
        assert!(Expr::parse("foo").unwrap().eval().is_err());
    }
}
