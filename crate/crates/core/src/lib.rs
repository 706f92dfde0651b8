pub mod error;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod space;
pub mod gp;
pub mod posterior;
pub mod acquisition;
pub mod testbeds;
pub mod metrics;
pub mod designer;
