//! Numerical thresholds shared by the face, reduction and recovery code.
//!
//! The algebra assumes exact ranks. Floating point and measurement noise do
//! not provide them, so every rank or equality decision goes through one of
//! the cut-offs below.

use crate::error::{Result, SnlError};

/// Relative eigenvalue cut used to decide the numerical rank of a Gram matrix:
/// an eigenvalue counts iff it exceeds `relative_cut * max(lambda_max, eps)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankTolerance {
    relative_cut: f64,
}

impl RankTolerance {
    pub const DEFAULT_CUT: f64 = 1e-9;

    pub fn new(relative_cut: f64) -> Result<Self> {
        if relative_cut > 0.0 && relative_cut < 1.0 {
            Ok(Self { relative_cut })
        } else {
            Err(SnlError::InvalidConfig(format!(
                "rank tolerance must lie in (0, 1), got {relative_cut}"
            )))
        }
    }

    pub fn relative_cut(&self) -> f64 {
        self.relative_cut
    }

    /// Threshold below which an eigenvalue is treated as zero, given the
    /// largest eigenvalue of the spectrum.
    pub fn threshold(&self, lambda_max: f64) -> f64 {
        self.relative_cut * lambda_max.max(f64::EPSILON)
    }
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self {
            relative_cut: Self::DEFAULT_CUT,
        }
    }
}

/// All tolerances used by a solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Gram-matrix rank decisions (clique faces, `Z` solves).
    pub rank: RankTolerance,
    /// Relative singular value cut deciding the rank of the shared block of
    /// two faces (rigid vs non-rigid path).
    pub middle_rank_cut: f64,
    /// Rigid intersections are refused when the shared nodes are flatter than
    /// this (smallest over largest singular value of their centered rows).
    /// The reducer tightens it in early passes; zero disables the check.
    pub min_overlap_spread: f64,
    /// Largest principal angle (radians) allowed between the ranges of the two
    /// shared blocks.
    pub range_angle: f64,
    /// Absolute tolerance on squared distances for the two-completion
    /// feasibility test.
    pub feas_tol: f64,
    /// Multiplicative noise factor of the data; widens the feasibility test.
    pub noise_factor: f64,
    /// Radio range, used only when `lower_bounds` is set.
    pub radio_range: f64,
    /// Also require unmeasured pairs to be at least `radio_range` apart when
    /// choosing between two completions.
    pub lower_bounds: bool,
}

impl Tolerances {
    /// Defaults for exact data.
    pub fn noiseless() -> Self {
        Self {
            rank: RankTolerance::default(),
            middle_rank_cut: 1e-8,
            min_overlap_spread: 0.0,
            range_angle: 1e-6,
            feas_tol: 1e-6,
            noise_factor: 0.0,
            radio_range: f64::INFINITY,
            lower_bounds: false,
        }
    }

    /// Defaults for data generated with multiplicative noise factor `sigma`.
    pub fn for_noise(sigma: f64) -> Self {
        if sigma <= 0.0 {
            return Self::noiseless();
        }
        Self {
            noise_factor: sigma,
            // Shared blocks of noisy faces never agree exactly; only reject
            // merges whose subspaces are grossly inconsistent.
            range_angle: (1e4 * sigma).clamp(1e-6, std::f64::consts::FRAC_PI_2),
            ..Self::noiseless()
        }
    }

    pub fn with_radio_range(mut self, radio_range: f64) -> Self {
        self.radio_range = radio_range;
        self
    }

    /// Allowed deviation between a candidate squared distance and a measured
    /// one. Measured squared distances carry relative error about `2 sigma`.
    pub fn feasibility_slack(&self, measured: f64) -> f64 {
        self.feas_tol + 3.0 * 2.0 * self.noise_factor * measured.abs()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("middle rank cut", self.middle_rank_cut),
            ("range angle", self.range_angle),
            ("feasibility tolerance", self.feas_tol),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(SnlError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.min_overlap_spread) {
            return Err(SnlError::InvalidConfig(format!(
                "overlap spread floor must lie in [0, 1), got {}",
                self.min_overlap_spread
            )));
        }
        if self.noise_factor < 0.0 {
            return Err(SnlError::InvalidConfig("noise factor must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::noiseless()
    }
}
