//! Finite-difference reference solutions and synthetic sensor data.

mod grid;
mod measure;
mod solver;

pub use grid::FieldGrid;
pub use measure::{
    add_noise, add_noise_scaled, generate_inverse_dataset, inverse_truth_field, sample_sensors, sensor_times, InverseDataConfig,
    Measurement, MeasurementSet, NoiseScale, NOISE_SIGMA, SENSOR_POSITIONS,
};
pub use solver::{heat_content, interface_flux_jump, solve_two_region, FarBoundary, Scheme, SolverConfig};
