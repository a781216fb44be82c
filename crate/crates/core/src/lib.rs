pub mod dataset;
pub mod entropy;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod signal;
