//! Desk-scale visual localization from uncertainty-aware rendered data.
//!
//! The crate trains a small radiance field that renders color and depth as
//! Gaussians (mean plus variance), an evidential scene-coordinate regressor
//! whose Normal-Inverse-Gamma head exposes epistemic uncertainty, a
//! two-stage view selection policy driven by those uncertainties, and a
//! RANSAC-PnP localizer with uncertainty-ranked correspondence filtering.
//! Everything runs on procedural synthetic scenes with analytic ground
//! truth, in f64, deterministically from a single seed.

pub mod diff;
pub mod nerf;
pub mod scene;
pub mod views;
pub mod geom;
pub mod par;
pub mod rng;
