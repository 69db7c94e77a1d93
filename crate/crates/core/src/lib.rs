pub mod acoustic;
pub mod attention;
pub mod autodiff;
pub mod binio;
pub mod config;
pub mod corpus;
pub mod data;
pub mod error;
pub mod eval;
pub mod report;
pub mod rng;
pub mod system;
pub mod transducer;
pub mod visual;

pub use error::{Error, Result};
