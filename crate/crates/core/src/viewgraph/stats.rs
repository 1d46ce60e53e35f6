use super::ViewGraph;
use crate::error::Result;
use crate::so3::UnitQuaternion;
use crate::tolerances::HIST_BINS;

/// Angle histogram (36 bins of 5° over [0°, 180°]) plus the raw angles and
/// unit axes it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleAxisStats {
    pub histogram: Vec<usize>,
    pub angles_deg: Vec<f64>,
    pub axes: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub relative: AngleAxisStats,
    /// Discrepancy rotations `R̂_uv⁻¹ ⋆ R̃_uv`, present when requested.
    pub noise: Option<AngleAxisStats>,
}

impl AngleAxisStats {
    fn from_rotations(qs: impl Iterator<Item = UnitQuaternion>) -> Self {
        let mut histogram = vec![0; HIST_BINS];
        let mut angles_deg = Vec::new();
        let mut axes = Vec::new();
        let width = 180.0 / HIST_BINS as f64;
        for q in qs {
            let aa = q.to_axis_angle();
            let deg = aa.angle.to_degrees();
            let bin = ((deg / width) as usize).min(HIST_BINS - 1);
            histogram[bin] += 1;
            angles_deg.push(deg);
            axes.push(aa.axis);
        }
        AngleAxisStats {
            histogram,
            angles_deg,
            axes,
        }
    }

    pub fn bin_edges_deg(k: usize) -> (f64, f64) {
        let width = 180.0 / HIST_BINS as f64;
        (k as f64 * width, (k + 1) as f64 * width)
    }

    /// Root-mean-square angle in degrees.
    pub fn rms_deg(&self) -> f64 {
        if self.angles_deg.is_empty() {
            return 0.0;
        }
        let ms = self.angles_deg.iter().map(|a| a * a).sum::<f64>() / self.angles_deg.len() as f64;
        ms.sqrt()
    }
}

/// Relative-orientation statistics; with `with_noise`, also the noise
/// statistics against ground truth (errors if any node lacks it).
pub fn graph_stats(g: &ViewGraph, with_noise: bool) -> Result<GraphStats> {
    let relative = AngleAxisStats::from_rotations(g.edges().iter().map(|e| e.q));
    let noise = if with_noise {
        let discrepancies = g
            .edges()
            .iter()
            .map(|e| Ok(g.relative_gt(e.u, e.v)?.inverse().compose(&e.q)))
            .collect::<Result<Vec<_>>>()?;
        Some(AngleAxisStats::from_rotations(discrepancies.into_iter()))
    } else {
        None
    };
    Ok(GraphStats { relative, noise })
}
