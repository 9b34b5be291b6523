//! Sub-Riemannian geometry toolkit over polynomial vector-field frames.
//!
//! A structure is given by `m` polynomial vector fields on `R^d` (a frame of
//! the distribution). On top of that substrate the crate provides:
//!
//! - exact Lie-bracket algebra, flags, growth vectors and regularity
//!   classification ([`structure`]),
//! - privileged coordinates, quasi-homogeneous dilations and nilpotent
//!   approximations, built symbolically so that all homogeneity certificates
//!   are exact polynomial identities ([`nilpotent`]),
//! - numerical integration of controlled horizontal fields with dense output,
//!   plus validators for the variation-of-constants formula and the
//!   `exp(ad)` series ([`flow`]),
//! - endpoint maps, their differentials, strong-pliability certificates,
//!   Goh/Legendre/medium-fat/cone condition checkers and Carnot-Caratheodory
//!   distance estimation ([`endpoint`]),
//! - first-order Whitney-type verification of curve data, extension of the
//!   data to a globally horizontal curve with continuous control, and Lusin
//!   approximation of absolutely continuous horizontal curves ([`whitney`]),
//! - lifts/desingularizations with symbolic commutation checks and lifting of
//!   curve data through a submersion ([`lift`]).
//!
//! All symbolic computation uses exact rational arithmetic; floating point
//! enters only through quadrature, ODE integration and linear algebra on
//! evaluated quantities.

pub mod config;
pub mod endpoint;
pub mod error;
pub mod flow;
pub mod lift;
pub mod nilpotent;
pub mod poly;
pub mod structure;
pub mod whitney;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
