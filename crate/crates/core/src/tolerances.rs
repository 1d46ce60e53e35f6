//! Numeric tolerances and fixed constants shared across the crate.

/// Unit-norm tolerance every constructed quaternion satisfies.
pub const UNIT_NORM: f64 = 1e-9;
/// |w| below this counts as zero when choosing the canonical sign.
pub const CANONICAL_ZERO_W: f64 = 1e-12;
/// Inputs whose norm deviates from one by more than this are rejected
/// instead of silently renormalised.
pub const RENORMALIZE_LIMIT: f64 = 1e-6;
/// Orthogonality / determinant tolerance accepted by `from_matrix`.
pub const MATRIX_ORTHO: f64 = 1e-6;
/// Below this norm a quaternion has no direction.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Rotation angle (rad) below which log/exp switch to their series forms.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Relative-orientation discrepancy (deg) above which an edge is labelled an outlier.
pub const OUTLIER_LABEL_DEG: f64 = 20.0;
/// Default outlier-probability threshold for pruning edges.
pub const CLEAN_EPSILON: f64 = 0.75;
/// Weight of the outlier BCE term in the cleaning loss.
pub const CLEAN_LAMBDA: f64 = 10.0;
/// Weight of the absolute anchoring term in the fine-tuning loss.
pub const FINE_BETA: f64 = 0.1;

/// Minimum angle (rad) used as Weiszfeld weight denominator.
pub const WEISZFELD_MIN_DIST: f64 = 1e-6;
/// IRLS weight floor.
pub const IRLS_DELTA: f64 = 1e-5;
/// IRLS stops once the largest node update falls below this (rad).
pub const IRLS_STEP_TOL: f64 = 1e-3;
/// Relative residual at which the conjugate-gradient solve stops.
pub const CG_REL_TOL: f64 = 1e-10;

/// Number of histogram bins over [0°, 180°].
pub const HIST_BINS: usize = 36;
