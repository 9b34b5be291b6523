//! Built-in structures and lifts, loadable by name.
//!
//! Names resolve before file paths in the CLI. Parametric entries read their
//! parameters from a string map (`alpha=-1`), parsed with the same exact
//! rational rules as input files.

use super::{DomainBox, SRStructure};
use crate::error::Error;
use crate::lift::LiftSpec;
use crate::poly::{parse_expr, rat, Multinomial, Rat, VectorField};
use crate::Result;
use std::collections::BTreeMap;

type Params = BTreeMap<String, String>;

struct BuiltinEntry {
    name: &'static str,
    build: fn(&Params) -> Result<SRStructure>,
}

const BUILTINS: &[BuiltinEntry] = &[
    BuiltinEntry {
        name: "heisenberg",
        build: |_| heisenberg(),
    },
    BuiltinEntry {
        name: "grushin",
        build: |_| grushin(),
    },
    BuiltinEntry {
        name: "engel",
        build: |_| engel(),
    },
    BuiltinEntry {
        name: "martinet",
        build: |_| martinet(),
    },
    BuiltinEntry {
        name: "step3alpha",
        build: step3alpha,
    },
];

/// Names of the built-in structures.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|e| e.name).collect()
}

/// Resolve a built-in structure by name.
pub fn builtin_structure(name: &str, params: &Params) -> Result<SRStructure> {
    for e in BUILTINS {
        if e.name == name {
            return (e.build)(params);
        }
    }
    Err(Error::InvalidArgument(format!(
        "unknown builtin structure {name:?}; available: {}",
        builtin_names().join(", ")
    )))
}

/// Names of the built-in lifts.
pub fn builtin_lift_names() -> Vec<&'static str> {
    vec!["heisenberg->grushin"]
}

/// Resolve a built-in lift by name.
pub fn builtin_lift(name: &str) -> Result<LiftSpec> {
    match name {
        "heisenberg->grushin" => heisenberg_to_grushin(),
        _ => Err(Error::InvalidArgument(format!(
            "unknown builtin lift {name:?}; available: {}",
            builtin_lift_names().join(", ")
        ))),
    }
}

fn field(dim: usize, comps: &[&str]) -> VectorField {
    VectorField::new(
        comps
            .iter()
            .map(|s| parse_expr(s, dim).expect("builtin component parses"))
            .collect(),
    )
}

fn heisenberg() -> Result<SRStructure> {
    SRStructure::new(
        "heisenberg",
        vec![
            field(3, &["1", "0", "-1/2*x2"]),
            field(3, &["0", "1", "1/2*x1"]),
        ],
        Some(DomainBox::cube(3, 2.0)),
    )
}

fn grushin() -> Result<SRStructure> {
    SRStructure::new(
        "grushin",
        vec![field(2, &["1", "0"]), field(2, &["0", "x1"])],
        Some(DomainBox::cube(2, 1.5)),
    )
}

fn engel() -> Result<SRStructure> {
    SRStructure::new(
        "engel",
        vec![
            field(4, &["1", "0", "0", "0"]),
            field(4, &["0", "1", "x1", "1/2*x1^2"]),
        ],
        Some(DomainBox::cube(4, 1.5)),
    )
}

fn martinet() -> Result<SRStructure> {
    SRStructure::new(
        "martinet",
        vec![
            field(3, &["1", "0", "0"]),
            field(3, &["0", "1", "1/2*x1^2"]),
        ],
        Some(DomainBox::cube(3, 1.5)),
    )
}

/// Rank-3 step-3 structure on R^6 with a tunable quadratic coefficient:
/// `X1 = d1`, `X2 = d2`, `X3 = d3 + x1 d4 + x2 d5 + (x1^2 + alpha x2^2)/2 d6`.
fn step3alpha(params: &Params) -> Result<SRStructure> {
    let alpha: Rat = match params.get("alpha") {
        None => rat(-1, 1),
        Some(s) => {
            let p = parse_expr(s, 0)
                .map_err(|_| Error::InvalidArgument(format!("bad alpha value {s:?}")))?;
            if p.is_zero() {
                Rat::from_integer(0.into())
            } else if p.num_terms() == 1 {
                p.terms().next().unwrap().1.clone()
            } else {
                return Err(Error::InvalidArgument(format!(
                    "alpha must be a rational constant, got {s:?}"
                )));
            }
        }
    };
    let half = rat(1, 2);
    let x1 = Multinomial::var(6, 0);
    let x2 = Multinomial::var(6, 1);
    let quad = x1
        .pow(2)
        .add(&x2.pow(2).scale(&alpha))?
        .scale(&half);
    let mut x3_comps = vec![Multinomial::zero(6); 6];
    x3_comps[2] = Multinomial::constant(6, rat(1, 1));
    x3_comps[3] = x1;
    x3_comps[4] = x2;
    x3_comps[5] = quad;
    SRStructure::new(
        format!("step3alpha(alpha={alpha})"),
        vec![
            VectorField::coordinate(6, 0),
            VectorField::coordinate(6, 1),
            VectorField::new(x3_comps),
        ],
        Some(DomainBox::cube(6, 1.5)),
    )
}

fn heisenberg_to_grushin() -> Result<LiftSpec> {
    let psi = vec![
        parse_expr("x1", 3)?,
        parse_expr("x3 + 1/2*x1*x2", 3)?,
    ];
    LiftSpec::new("heisenberg->grushin", heisenberg()?, grushin()?, psi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_bracket_generating() {
        for name in builtin_names() {
            let s = builtin_structure(name, &Params::new()).unwrap();
            s.validate(6, 1e-9).unwrap();
        }
    }

    #[test]
    fn step3alpha_parameter() {
        let mut params = Params::new();
        params.insert("alpha".into(), "1/3".into());
        let s = builtin_structure("step3alpha", &params).unwrap();
        assert!(s.name.contains("1/3"));
        assert_eq!(s.dim, 6);
        assert_eq!(s.rank, 3);
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(builtin_structure("nope", &Params::new()).is_err());
        assert!(builtin_lift("nope").is_err());
    }
}
