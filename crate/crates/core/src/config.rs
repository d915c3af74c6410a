use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable used across map building, the covisibility pipeline and
/// reasoning. The defaults are the constants the method is defined with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Cells per side of the discrete cognitive map.
    pub grid_size: u32,
    /// Occupancy cell pitch for room-size estimation, meters.
    pub cell_size: f64,
    /// Minimum number of points that make an occupancy cell valid.
    pub min_cell_points: usize,
    /// Depth agreement for reprojection consistency, meters.
    pub depth_tol: f64,
    /// Pixel neighborhood radius searched during reprojection consistency.
    pub covis_radius: u32,
    /// Fraction of a candidate region that must be covisible to suppress it.
    pub overlap_frac: f64,
    /// Merge radius as a fraction of the mean box diagonal of a pair.
    pub merge_frac: f64,
    /// Front-point occlusion margin for appearance frames, meters.
    pub occl_tol: f64,
    /// Number of frames kept by crucial frame selection.
    pub frame_budget: usize,
    /// Detector stride over the raw video.
    pub scan_stride: usize,
    /// Voxel edge used to quantize instance clouds, meters.
    pub voxel_size: f64,
    pub ransac_iterations: usize,
    pub ransac_tol: f64,
    /// A dominant plane whose normal is within this many degrees of
    /// horizontal is treated as a wall.
    pub vertical_angle_deg: f64,
    /// Metric rescale applied to reconstructions before alignment.
    pub scale: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_size: 20,
            cell_size: 0.6,
            min_cell_points: 1,
            depth_tol: 0.05,
            covis_radius: 1,
            overlap_frac: 0.5,
            merge_frac: 0.2,
            occl_tol: 0.2,
            frame_budget: 64,
            scan_stride: 10,
            voxel_size: 0.05,
            ransac_iterations: 500,
            ransac_tol: 0.02,
            vertical_angle_deg: 30.0,
            scale: 1.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cell_size", self.cell_size),
            ("depth_tol", self.depth_tol),
            ("overlap_frac", self.overlap_frac),
            ("merge_frac", self.merge_frac),
            ("occl_tol", self.occl_tol),
            ("voxel_size", self.voxel_size),
            ("ransac_tol", self.ransac_tol),
            ("vertical_angle_deg", self.vertical_angle_deg),
            ("scale", self.scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.grid_size == 0 {
            return Err(Error::invalid("grid_size must be >= 1"));
        }
        if self.frame_budget == 0 {
            return Err(Error::invalid("frame_budget must be >= 1"));
        }
        if self.scan_stride == 0 {
            return Err(Error::invalid("scan_stride must be >= 1"));
        }
        if self.min_cell_points == 0 {
            return Err(Error::invalid("min_cell_points must be >= 1"));
        }
        if self.ransac_iterations == 0 {
            return Err(Error::invalid("ransac_iterations must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.grid_size, c.frame_budget), (20, 64));
        assert_eq!((c.cell_size, c.occl_tol, c.merge_frac), (0.6, 0.2, 0.2));
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        let c = RunConfig { occl_tol: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { frame_budget: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
