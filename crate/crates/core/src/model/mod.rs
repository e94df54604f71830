//! Scenario configuration, aperture layouts, link geometry and the
//! optimization state.

pub mod config;
pub mod geometry;
pub mod layout;
pub mod solution;

pub use config::{db_to_linear, SystemConfig};
pub use geometry::{derive_link_geometry, draw_user_positions, LinkAngles, LinkGeometry};
pub use layout::{aperture_grid, inside_aperture, min_squared_spacing, rigid_grid, squared_distance, Point2};
pub use solution::{init_solution, initial_layout, matched_filter, Feasibility, SolutionState};
