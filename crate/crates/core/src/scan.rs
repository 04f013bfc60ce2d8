//! Semantic point clouds: raw frames as read from disk and their canonical form.

use serde::{Deserialize, Serialize};

use crate::semantic_map::ClassSet;

/// A labelled point as delivered by the sensor pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub label: u32,
}

/// One scan as stored in a stream, labels still in the sensor's label space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanFrame {
    pub timestamp: f64,
    pub points: Vec<RawPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub class: u8,
}

/// Points in the robot frame carrying canonical class indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticScan {
    pub points: Vec<ScanPoint>,
}

impl SemanticScan {
    pub fn new(points: Vec<ScanPoint>) -> Self {
        SemanticScan { points }
    }

    /// Ingests a raw frame: resolves every label through `classes` and drops
    /// points whose label does not resolve. This is the only place labels are
    /// remapped.
    pub fn from_frame(frame: &ScanFrame, classes: &ClassSet) -> Self {
        let points = frame
            .points
            .iter()
            .filter_map(|p| {
                classes.resolve(p.label).map(|class| ScanPoint {
                    x: p.x as f64,
                    y: p.y as f64,
                    z: p.z as f64,
                    class,
                })
            })
            .collect();
        SemanticScan { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
