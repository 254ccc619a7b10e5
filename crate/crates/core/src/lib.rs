pub mod augment;
pub mod autodiff;
pub mod bounds;
pub mod data;
pub mod deeponet;
pub mod error;
pub mod experiment;
pub mod inn;
pub mod interval;
pub mod layers;
pub mod models;
pub mod objectives;
pub mod optprop;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
