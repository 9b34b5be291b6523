//! Parser for the polynomial expression grammar shared by all input files.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor ('*' factor)*
//! factor := atom ('^' posint)?
//! atom   := rational | decimal | 'x'posint | '(' expr ')'
//! ```
//!
//! Unary minus is allowed at the head of an expression. Whitespace is
//! insignificant. Decimal literals are ingested as exact rationals
//! (`0.5 -> 1/2`); `a/b` with integer literals is an exact rational atom.

use super::{Multinomial, Rat};
use crate::error::Error;
use crate::Result;
use num_bigint::BigInt;
use num_traits::One;

/// Lexical token. `Dx(i)` (`dx3`) only appears in structure-definition
/// files, where a field component follows a coefficient expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Token {
    Num(Rat),
    Var(usize),
    Dx(usize),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

pub fn tokenize(input: &str) -> Result<Vec<Token>> {
    let bytes = input.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '^' => {
                out.push(Token::Caret);
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let (tok, next) = lex_number(input, i)?;
                out.push(tok);
                i = next;
            }
            'x' | 'd' => {
                let is_dx = c == 'd';
                let name_len = if is_dx { 2 } else { 1 };
                if is_dx && bytes.get(i + 1).copied() != Some(b'x') {
                    return Err(Error::Parse(format!("unexpected character 'd' at byte {i}")));
                }
                let start = i + name_len;
                let mut j = start;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j == start {
                    return Err(Error::Parse(format!(
                        "expected variable index after '{}' at byte {i}",
                        if is_dx { "dx" } else { "x" }
                    )));
                }
                let idx: usize = input[start..j]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad variable index at byte {start}")))?;
                if idx == 0 {
                    return Err(Error::Parse("variable indices start at 1".into()));
                }
                out.push(if is_dx { Token::Dx(idx - 1) } else { Token::Var(idx - 1) });
                i = j;
            }
            _ => {
                return Err(Error::Parse(format!(
                    "unexpected character {c:?} at byte {i}"
                )))
            }
        }
    }
    Ok(out)
}

/// Lex an unsigned numeric literal: integer, `a/b` rational, or decimal.
fn lex_number(input: &str, start: usize) -> Result<(Token, usize)> {
    let bytes = input.as_bytes();
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let int_end = i;
    if i < bytes.len() && bytes[i] == b'.' {
        // Decimal literal, converted exactly: mantissa / 10^frac_digits.
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if int_end == start && i == frac_start {
            return Err(Error::Parse(format!("bare '.' at byte {start}")));
        }
        let digits: String = format!("{}{}", &input[start..int_end], &input[frac_start..i]);
        let mantissa: BigInt = if digits.is_empty() {
            BigInt::from(0)
        } else {
            digits
                .parse()
                .map_err(|_| Error::Parse(format!("bad decimal at byte {start}")))?
        };
        let scale = BigInt::from(10u32).pow((i - frac_start) as u32);
        return Ok((Token::Num(Rat::new(mantissa, scale)), i));
    }
    if int_end == start {
        return Err(Error::Parse(format!("expected digits at byte {start}")));
    }
    let numer: BigInt = input[start..int_end]
        .parse()
        .map_err(|_| Error::Parse(format!("bad integer at byte {start}")))?;
    // Optional '/ posint' continuation making an exact rational atom.
    let mut j = int_end;
    while j < bytes.len() && (bytes[j] as char).is_whitespace() {
        j += 1;
    }
    if j < bytes.len() && bytes[j] == b'/' {
        let mut k = j + 1;
        while k < bytes.len() && (bytes[k] as char).is_whitespace() {
            k += 1;
        }
        let den_start = k;
        while k < bytes.len() && bytes[k].is_ascii_digit() {
            k += 1;
        }
        if k == den_start {
            return Err(Error::Parse(format!("expected denominator at byte {j}")));
        }
        let denom: BigInt = input[den_start..k]
            .parse()
            .map_err(|_| Error::Parse(format!("bad denominator at byte {den_start}")))?;
        if denom == BigInt::from(0) {
            return Err(Error::Parse("zero denominator".into()));
        }
        return Ok((Token::Num(Rat::new(numer, denom)), k));
    }
    Ok((Token::Num(Rat::from_integer(numer)), int_end))
}

pub(crate) struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    pub fn new(tokens: &'a [Token], dim: usize) -> Self {
        Parser { tokens, pos: 0, dim }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.tokens.len()
    }

    /// Consume a `dx<i>` marker, if next.
    pub fn next_dx(&mut self) -> Option<usize> {
        if let Some(Token::Dx(i)) = self.peek() {
            let i = *i;
            self.pos += 1;
            return Some(i);
        }
        None
    }

    /// True when the next token continues a `summand (± summand)*` list.
    pub fn at_sign(&self) -> bool {
        matches!(self.peek(), Some(Token::Plus) | Some(Token::Minus))
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    /// Parse an expression greedily; stops at `Dx`, `RParen` or end of input.
    pub fn parse_expr(&mut self) -> Result<Multinomial> {
        let mut negate = false;
        match self.peek() {
            Some(Token::Minus) => {
                negate = true;
                self.pos += 1;
            }
            Some(Token::Plus) => {
                self.pos += 1;
            }
            _ => {}
        }
        let mut acc = self.parse_term()?;
        if negate {
            acc = acc.neg();
        }
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    let t = self.parse_term()?;
                    acc = acc.add(&t)?;
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    let t = self.parse_term()?;
                    acc = acc.sub(&t)?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn parse_term(&mut self) -> Result<Multinomial> {
        let mut acc = self.parse_factor()?;
        while matches!(self.peek(), Some(Token::Star)) {
            self.pos += 1;
            let f = self.parse_factor()?;
            acc = acc.mul(&f)?;
        }
        Ok(acc)
    }

    fn parse_factor(&mut self) -> Result<Multinomial> {
        let base = self.parse_atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.pos += 1;
            match self.bump() {
                Some(Token::Num(n)) if n.is_integer() && *n >= Rat::one() => {
                    let e: u32 = n
                        .to_integer()
                        .try_into()
                        .map_err(|_| Error::Parse("exponent too large".into()))?;
                    return Ok(base.pow(e));
                }
                other => {
                    return Err(Error::Parse(format!(
                        "expected positive integer exponent, found {other:?}"
                    )))
                }
            }
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Multinomial> {
        match self.bump().cloned() {
            Some(Token::Num(r)) => Ok(Multinomial::constant(self.dim, r)),
            Some(Token::Var(i)) => {
                if i >= self.dim {
                    return Err(Error::Parse(format!(
                        "variable x{} exceeds dimension {}",
                        i + 1,
                        self.dim
                    )));
                }
                Ok(Multinomial::var(self.dim, i))
            }
            Some(Token::LParen) => {
                let inner = self.parse_expr()?;
                match self.bump() {
                    Some(Token::RParen) => Ok(inner),
                    other => Err(Error::Parse(format!("expected ')', found {other:?}"))),
                }
            }
            other => Err(Error::Parse(format!(
                "expected atom, found {other:?}"
            ))),
        }
    }
}

/// Parse a standalone polynomial expression in `dim` variables.
pub fn parse_expr(input: &str, dim: usize) -> Result<Multinomial> {
    let tokens = tokenize(input)?;
    let mut p = Parser::new(&tokens, dim);
    let poly = p.parse_expr()?;
    if p.pos() != tokens.len() {
        return Err(Error::Parse(format!(
            "trailing tokens after expression: {:?}",
            &tokens[p.pos()..]
        )));
    }
    Ok(poly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{rat, rat_int};

    #[test]
    fn decimals_become_exact_rationals() {
        let p = parse_expr("0.5", 1).unwrap();
        assert_eq!(p, Multinomial::constant(1, rat(1, 2)));
        let p = parse_expr("2.25*x1", 1).unwrap();
        assert_eq!(p, Multinomial::var(1, 0).scale(&rat(9, 4)));
    }

    #[test]
    fn rational_atoms() {
        let p = parse_expr("-1/2*x2", 3).unwrap();
        assert_eq!(p, Multinomial::var(3, 1).scale(&rat(-1, 2)));
    }

    #[test]
    fn precedence_and_parens() {
        let p = parse_expr("x1 + x2*x1^2 - (x1 - x2)", 2).unwrap();
        let x1 = Multinomial::var(2, 0);
        let x2 = Multinomial::var(2, 1);
        let want = x1
            .add(&x2.mul(&x1.pow(2)).unwrap())
            .unwrap()
            .sub(&x1.sub(&x2).unwrap())
            .unwrap();
        assert_eq!(p, want);
    }

    #[test]
    fn unary_minus_at_head_only() {
        assert!(parse_expr("-x1", 1).is_ok());
        assert!(parse_expr("(-x1 + x1)", 1).unwrap().is_zero());
        assert!(parse_expr("x1 * -x1", 1).is_err());
    }

    #[test]
    fn whitespace_insignificant() {
        let a = parse_expr("1/2 * x1 ^ 2", 1).unwrap();
        let b = parse_expr("1/2*x1^2", 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_expr("x0", 1).is_err());
        assert!(parse_expr("x9", 2).is_err());
        assert!(parse_expr("1 +", 1).is_err());
        assert!(parse_expr("y1", 1).is_err());
        assert!(parse_expr("x1 x2", 2).is_err());
        assert_eq!(parse_expr("3", 0).unwrap(), Multinomial::constant(0, rat_int(3)));
    }
}
