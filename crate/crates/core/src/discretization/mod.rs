//! Grids, piecewise-multilinear finite element functions, quadrature and norms.

pub mod assembly;
mod function;
mod grid;
mod quadrature;

pub use function::{
    fmt17, interpolate_cell, interpolate_macro, lp_distance, lp_norm, w1p_seminorm, CellFunction, FeFunction,
    MacroFunction,
};
pub use grid::{wrap, CellGrid, Element, MacroGrid};
pub use quadrature::{
    gauss_legendre, integrate_oscillatory, OscillatoryIntegral, QuadratureRule, RefQuad, SUBCELLS_PER_PERIOD,
};
