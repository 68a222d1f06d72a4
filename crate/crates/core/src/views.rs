//! Posed RGB-D views shared by training, selection and evaluation.

use crate::geom::CameraView;

/// Where a view's pixels came from. Real views supervise at full weight;
/// rendered views carry uncertainty sidecars that drive masking and
/// residual weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Rendered,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Real => "real",
            Provenance::Rendered => "rendered",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(Provenance::Real),
            "rendered" => Some(Provenance::Rendered),
            _ => None,
        }
    }
}

/// One posed RGB-D view, optionally with rendered-uncertainty sidecars.
#[derive(Debug, Clone)]
pub struct PosedImage {
    pub id: u32,
    pub camera: CameraView,
    /// Row-major [h*w] RGB in [0,1].
    pub color: Vec<[f64; 3]>,
    /// Row-major [h*w] along-ray depth, meters; 0 = invalid.
    pub depth: Vec<f64>,
    /// Channel-mean rendered color variance, present on rendered views.
    pub color_var: Option<Vec<f64>>,
    /// Rendered depth variance, present on rendered views.
    pub depth_var: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl PosedImage {
    pub fn pixel_count(&self) -> usize {
        self.camera.width * self.camera.height
    }
}
