pub mod affinity;
pub mod data;
pub mod error;
pub mod init;
pub mod knn;
pub mod lowdim;
pub mod metrics;
pub mod optimizer;
pub mod plot;

pub use error::Error;
