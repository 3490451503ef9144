pub mod bifurcation;
pub mod cli;
pub mod energy;
pub mod fields;
pub mod mesh;
pub mod modular;
pub mod oracle;
pub mod solver;
