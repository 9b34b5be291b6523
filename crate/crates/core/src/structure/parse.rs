//! Structure-definition file parser.
//!
//! ```text
//! name = heisenberg-variant        (optional)
//! dim = 3
//! rank = 2
//! domain = [-1,1]x[-1,1]x[-2,2]    (optional)
//! X1 = 1 dx1 - 1/2*x2 dx3
//! X2 = 1 dx2 + 1/2*x1 dx3
//! ```
//!
//! Each frame line is a sum of components `<coeff> dx<i>` where the
//! coefficient follows the polynomial expression grammar. The coefficient is
//! parsed greedily up to the `dx<i>` marker, so `x1 + x2 dx1` means
//! `(x1+x2) dx1`. Lines starting with `#` are comments.

use super::{DomainBox, SRStructure};
use crate::error::Error;
use crate::poly::{tokenize, Multinomial, VectorField};
use crate::Result;

/// Parse one frame line RHS (after `X<k> =`) into a vector field.
///
/// The expression parser handles the sign separating summands as the head
/// sign of the next coefficient, so `1 dx1 - 1/2*x2 dx3` parses as expected.
pub fn parse_field_line(rhs: &str, dim: usize) -> Result<VectorField> {
    let tokens = tokenize(rhs)?;
    let mut comps = vec![Multinomial::zero(dim); dim];
    let mut parser = crate::poly::parse::Parser::new(&tokens, dim);
    loop {
        let coeff = parser.parse_expr()?;
        let idx = match parser.next_dx() {
            Some(i) => i,
            None => {
                return Err(Error::Parse(format!(
                    "expected dx<i> after coefficient in field line {rhs:?}"
                )))
            }
        };
        if idx >= dim {
            return Err(Error::Parse(format!(
                "dx{} exceeds dimension {dim}",
                idx + 1
            )));
        }
        comps[idx] = comps[idx].add(&coeff)?;
        if parser.at_end() {
            break;
        }
        if !parser.at_sign() {
            return Err(Error::Parse(format!(
                "trailing tokens in field line {rhs:?}"
            )));
        }
    }
    Ok(VectorField::new(comps))
}

/// Parse a full structure-definition text.
pub fn parse_structure(text: &str) -> Result<SRStructure> {
    let mut name = String::from("structure");
    let mut dim: Option<usize> = None;
    let mut rank: Option<usize> = None;
    let mut domain: Option<DomainBox> = None;
    let mut fields: Vec<(usize, String)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "name" => name = value.to_string(),
            "dim" => {
                dim = Some(value.parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad dim {value:?}", lineno + 1))
                })?)
            }
            "rank" => {
                rank = Some(value.parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad rank {value:?}", lineno + 1))
                })?)
            }
            "domain" => domain = Some(parse_domain(value)?),
            _ if key.starts_with('X') => {
                let k: usize = key[1..].parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad field key {key:?}", lineno + 1))
                })?;
                if k == 0 {
                    return Err(Error::Parse("field indices start at 1".into()));
                }
                fields.push((k - 1, value.to_string()));
            }
            _ => {
                return Err(Error::Parse(format!(
                    "line {}: unknown key {key:?}",
                    lineno + 1
                )))
            }
        }
    }

    let dim = dim.ok_or_else(|| Error::Parse("missing `dim`".into()))?;
    let rank = rank.ok_or_else(|| Error::Parse("missing `rank`".into()))?;
    if let Some(b) = &domain {
        if b.dim() != dim {
            return Err(Error::Parse(format!(
                "domain has {} factors for dim {dim}",
                b.dim()
            )));
        }
    }
    let mut frame = vec![None; rank];
    for (k, rhs) in fields {
        if k >= rank {
            return Err(Error::Parse(format!("X{} exceeds rank {rank}", k + 1)));
        }
        frame[k] = Some(parse_field_line(&rhs, dim)?);
    }
    let frame: Result<Vec<VectorField>> = frame
        .into_iter()
        .enumerate()
        .map(|(k, f)| f.ok_or_else(|| Error::Parse(format!("missing field X{}", k + 1))))
        .collect();
    SRStructure::new(name, frame?, domain)
}

fn parse_domain(value: &str) -> Result<DomainBox> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for part in value.split('x') {
        let part = part.trim();
        let inner = part
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::Parse(format!("bad domain factor {part:?}")))?;
        let (a, b) = inner
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("bad domain factor {part:?}")))?;
        let a: f64 = a
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad bound {a:?}")))?;
        let b: f64 = b
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad bound {b:?}")))?;
        if a >= b {
            return Err(Error::Parse(format!("empty domain factor {part:?}")));
        }
        lo.push(a);
        hi.push(b);
    }
    Ok(DomainBox::new(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::builtin_structure;

    #[test]
    fn heisenberg_definition_round_trips() {
        let s = builtin_structure("heisenberg", &Default::default()).unwrap();
        let text = s.to_definition();
        let back = parse_structure(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn all_builtins_round_trip() {
        for name in crate::structure::builtin_names() {
            let s = builtin_structure(name, &Default::default()).unwrap();
            let back = parse_structure(&s.to_definition()).unwrap();
            assert_eq!(back, s, "round trip failed for {name}");
        }
    }

    #[test]
    fn greedy_coefficient_binding() {
        // `x1 + x2 dx1` binds the whole sum to dx1.
        let f = parse_field_line("x1 + x2 dx1", 2).unwrap();
        let want = crate::poly::parse_expr("x1 + x2", 2).unwrap();
        assert_eq!(f.component(0), &want);
        assert!(f.component(1).is_zero());
    }

    #[test]
    fn missing_pieces_are_errors() {
        assert!(parse_structure("dim = 2\nrank = 1\n").is_err());
        assert!(parse_structure("rank = 1\nX1 = 1 dx1\n").is_err());
        assert!(parse_structure("dim = 2\nrank = 2\nX1 = 1 dx1\n").is_err());
        assert!(parse_structure("dim = 2\nrank = 1\nX1 = 1 dx3\n").is_err());
    }
}
