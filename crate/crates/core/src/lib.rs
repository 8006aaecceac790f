pub mod analysis;
pub mod asymcov;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod model;
pub mod pvalue;
pub mod resample;
pub mod seeding;
pub mod study;
pub mod wchisq;

pub use error::{Error, Result};
