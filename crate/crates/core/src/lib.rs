pub mod geometry;
pub mod scene;
pub mod contact;
pub mod solver;
pub mod sim;
pub mod primitives;
pub mod retarget;
pub mod pipeline;
pub mod templates;
pub mod plot;
pub mod cli;
