//! Metric cognitive maps of indoor scenes and deterministic reasoning over
//! them.
//!
//! A [`cogmap::MetricCogMap`] places every object instance on a square grid
//! and keeps its metric centroid and size. The procedures in [`cogcot`]
//! answer direction, distance, size, count, room-size and appearance-order
//! questions as step-by-step traces. [`pipeline`] builds maps from posed
//! observations and detections, and [`eval`] runs and scores question sets.
//!
//! ```
//! use cogmap::cogcot::{extract_answer, reason_room_size, render_trace, OccupancyGrid};
//!
//! let grid = OccupancyGrid::from_flags(0.6, [0.0, 0.0], vec![vec![true; 19]; 4]);
//! let text = render_trace(&reason_room_size(&grid).unwrap());
//! assert_eq!(extract_answer(&text), Some("27.36"));
//! ```

pub mod cogcot;
pub mod cogmap;
pub mod config;
pub mod covis;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grounding;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scene-maps.md")]
    mod scene_maps {}
    #[doc = include_str!("../../../book/src/reasoning.md")]
    mod reasoning {}
    #[doc = include_str!("../../../book/src/covisibility.md")]
    mod covisibility {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
