pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod coarsening;
pub mod config;
pub mod datasets;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod perturbation;
pub mod pipeline;
pub mod routing;
pub mod train;
