pub mod cli;
pub mod comms;
pub mod geometry;
pub mod hexapod;
pub mod localization;
pub mod mission;
pub mod perception;
pub mod photometry;
pub mod planning;
pub mod rng;
pub mod simworld;
