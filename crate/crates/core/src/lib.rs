pub mod broker;
pub mod certifier;
pub mod expr;
pub mod grouphom;
pub mod hes;
pub mod simplicial;
pub mod snf;
pub mod term;
pub mod wire;

#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
