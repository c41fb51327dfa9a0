pub mod fit;
pub mod linalg;
pub mod reduction;
pub mod grid;
pub mod symbols;
pub mod propagator;
pub mod solver;
pub mod ode;
pub mod limit;
