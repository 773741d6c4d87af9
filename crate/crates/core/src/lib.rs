//! Spatiotemporal graph forecasting of daily cases over a ten-region flight
//! network, with perturbation-based sensitivity ranking and flight-reduction
//! policy search.

pub mod analysis;
pub mod dataio;
pub mod forecast;
pub mod model;
pub mod numerics;
pub mod training;
