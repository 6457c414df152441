//! Angle arithmetic on the circle: canonical azimuths, the unit circle
//! `{(cos t, sin t, 0)}` in 3-space that positive samples regress onto,
//! Euclidean projection onto it, angle recovery, and view binning.

use std::f64::consts::{PI, TAU};

use thiserror::Error;

/// Squared-radius threshold below which a point counts as lying on the
/// degenerate axis and projects to the fixed point (1, 0, 0).
pub const DEGENERATE_RADIUS_SQ: f64 = 1e-30;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("bin count must be at least 2, got {0}")]
    InvalidBinCount(usize),
    #[error("bin index {index} out of range 1..={bins}")]
    InvalidBinIndex { index: usize, bins: usize },
}

/// An azimuth angle in radians, canonicalized to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Azimuth(f64);

impl Azimuth {
    pub fn new(theta: f64) -> Self {
        Azimuth(canonicalize(theta))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// The point (cos θ, sin θ, 0) on the positive circle.
    pub fn embed(self) -> CirclePoint3 {
        CirclePoint3([self.0.cos(), self.0.sin(), 0.0])
    }
}

fn canonicalize(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can return exactly 2π when theta is a tiny negative number.
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// A point on the circle χ = {(cos θ, sin θ, 0)}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirclePoint3(pub [f64; 3]);

impl CirclePoint3 {
    pub fn coords(&self) -> [f64; 3] {
        self.0
    }

    pub fn azimuth(&self) -> Azimuth {
        Azimuth::new(self.0[1].atan2(self.0[0]))
    }
}

/// Euclidean nearest point of χ: `(y₁, y₂, 0) / ‖(y₁, y₂)‖`.
///
/// Points on the third axis (squared radius below [`DEGENERATE_RADIUS_SQ`])
/// are equidistant from all of χ and resolve to (1, 0, 0). The result is a
/// bit-exact fixed point: projecting it again returns identical coordinates.
pub fn project_to_circle(y: [f64; 3]) -> CirclePoint3 {
    let r2 = y[0] * y[0] + y[1] * y[1];
    if r2 < DEGENERATE_RADIUS_SQ {
        return CirclePoint3([1.0, 0.0, 0.0]);
    }
    if r2 == 1.0 && y[2] == 0.0 {
        return CirclePoint3([y[0], y[1], 0.0]);
    }
    let r = r2.sqrt();
    let mut p = [y[0] / r, y[1] / r];
    // Renormalize until stationary so the projection is exactly idempotent:
    // rounding can leave ‖p‖² one ulp away from 1 after a single division.
    for _ in 0..32 {
        let q2 = p[0] * p[0] + p[1] * p[1];
        if q2 == 1.0 {
            break;
        }
        let q = q2.sqrt();
        if q == 1.0 {
            break;
        }
        let next = [p[0] / q, p[1] / q];
        if next == p {
            break;
        }
        p = next;
    }
    CirclePoint3([p[0], p[1], 0.0])
}

/// Distance from `y` to its projection on χ.
pub fn distance_to_circle(y: [f64; 3]) -> f64 {
    let p = project_to_circle(y).0;
    let d = [y[0] - p[0], y[1] - p[1], y[2] - p[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Recovers the azimuth encoded by a feature vector: the two-argument
/// arctangent of the selected (cosine, sine) coordinate pair, canonicalized.
///
/// The pair is given as indices into `y`; `pair.0` selects the cosine
/// coordinate and `pair.1` the sine coordinate. A pair that is exactly
/// (0, 0) falls back to azimuth 0, matching the degenerate projection.
pub fn angle_from_feature(y: &[f64], pair: (usize, usize)) -> Azimuth {
    let c = y[pair.0];
    let s = y[pair.1];
    if s == 0.0 && c == 0.0 {
        return Azimuth::new(0.0);
    }
    Azimuth::new(s.atan2(c))
}

/// Wrapped angular distance, in `[0, π]`.
pub fn angular_distance(a: Azimuth, b: Azimuth) -> f64 {
    let d = (a.radians() - b.radians()).abs();
    d.min(TAU - d)
}

/// A 1-based orientation bin among `bins` views.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinIndex {
    pub index: usize,
    pub bins: usize,
}

/// Maps an azimuth to its view bin. Bins are centered on multiples of
/// `2π/P` with half-open boundaries: bin `j` covers
/// `[(j−1)·2π/P − π/P, (j−1)·2π/P + π/P)`, and bin 1 is centered at 0.
pub fn discretize(theta: Azimuth, bins: usize) -> Result<BinIndex, GeometryError> {
    if bins < 2 {
        return Err(GeometryError::InvalidBinCount(bins));
    }
    let width = TAU / bins as f64;
    let shifted = canonicalize(theta.radians() + width / 2.0);
    let mut j = (shifted / width).floor() as usize;
    if j >= bins {
        j = 0; // canonicalize guarantees shifted < 2π, but floor may round up
    }
    Ok(BinIndex {
        index: j + 1,
        bins,
    })
}

/// Center azimuth of a bin: `(index − 1) · 2π / P`.
pub fn bin_center(b: BinIndex) -> Result<Azimuth, GeometryError> {
    if b.bins < 2 {
        return Err(GeometryError::InvalidBinCount(b.bins));
    }
    if b.index < 1 || b.index > b.bins {
        return Err(GeometryError::InvalidBinIndex {
            index: b.index,
            bins: b.bins,
        });
    }
    Ok(Azimuth::new((b.index - 1) as f64 * TAU / b.bins as f64))
}

/// True when both azimuths fall in the same bin of a `views`-bin grid.
pub fn same_view_bin(a: Azimuth, b: Azimuth, views: usize) -> Result<bool, GeometryError> {
    Ok(discretize(a, views)? == discretize(b, views)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn azimuth_canonicalization_is_idempotent() {
        for &t in &[-10.0, -TAU, -1e-18, 0.0, 1.5, TAU, 17.3, 1e9] {
            let a = Azimuth::new(t);
            assert!(a.radians() >= 0.0 && a.radians() < TAU, "t={t}");
            assert_eq!(Azimuth::new(a.radians()), a);
        }
    }

    #[test]
    fn projection_scales_radially() {
        assert_eq!(project_to_circle([2.0, 0.0, 0.0]).0, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn projection_fixes_circle_points() {
        for k in 0..64 {
            let t = k as f64 * TAU / 64.0;
            let p = [t.cos(), t.sin(), 0.0];
            let proj = project_to_circle(p).0;
            let d = ((proj[0] - p[0]).powi(2) + (proj[1] - p[1]).powi(2)).sqrt();
            assert!(d < EPS, "t={t} moved by {d}");
        }
    }

    // Oracle: dense sampling of χ at 10⁶ angles confirms the minimizer.
    #[test]
    fn projection_matches_dense_sampling_oracle() {
        let y = [0.0, 3.0, 4.0];
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..1_000_000u32 {
            let t = k as f64 * TAU / 1e6;
            let d2 = (y[0] - t.cos()).powi(2) + (y[1] - t.sin()).powi(2) + y[2] * y[2];
            if d2 < best.0 {
                best = (d2, t);
            }
        }
        let p = project_to_circle(y).0;
        assert!((p[0] - 0.0).abs() < 1e-9 && (p[1] - 1.0).abs() < 1e-9 && p[2] == 0.0);
        assert!((best.1 - PI / 2.0).abs() < 1e-5);
        assert!((distance_to_circle(y) - 20f64.sqrt()).abs() < 1e-9);
        assert!((distance_to_circle(y) - best.0.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn degenerate_projection_resolves_to_unit_x() {
        assert_eq!(project_to_circle([0.0, 0.0, 4.0]).0, [1.0, 0.0, 0.0]);
        assert_eq!(project_to_circle([1e-200, 0.0, -3.0]).0, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn angle_recovery_examples() {
        assert_eq!(angle_from_feature(&[1.0, 0.0, 0.0], (0, 1)).radians(), 0.0);
        assert!(
            (angle_from_feature(&[0.0, 1.0, -5.0], (0, 1)).radians() - PI / 2.0).abs() < EPS
        );
        // Inverse check: cos/sin of the result reproduces the normalized input.
        let a = angle_from_feature(&[-0.7, -0.7], (0, 1));
        assert!((a.radians() - 5.0 * PI / 4.0).abs() < 1e-9);
        let n = 0.7f64.hypot(0.7);
        assert!((a.radians().cos() - (-0.7 / n)).abs() < EPS);
        assert!((a.radians().sin() - (-0.7 / n)).abs() < EPS);
    }

    #[test]
    fn angle_round_trip_on_grid() {
        for k in 0..10_000 {
            let t = k as f64 * TAU / 10_000.0;
            let got = angle_from_feature(&[t.cos(), t.sin(), 0.0], (0, 1)).radians();
            let diff = (got - t).abs().min(TAU - (got - t).abs());
            assert!(diff < EPS, "t={t} got={got}");
        }
    }

    #[test]
    fn angular_distance_examples() {
        assert_eq!(angular_distance(Azimuth::new(0.0), Azimuth::new(0.0)), 0.0);
        assert!(
            (angular_distance(Azimuth::new(0.1), Azimuth::new(TAU - 0.1)) - 0.2).abs() < EPS
        );
        // Enumeration over both wrap branches: |a−b| = π and 2π−π = π.
        let d = angular_distance(Azimuth::new(PI / 3.0), Azimuth::new(4.0 * PI / 3.0));
        assert!((d - PI).abs() < EPS);
    }

    #[test]
    fn discretize_centers_and_boundaries() {
        let bin = |t: f64, p| discretize(Azimuth::new(t), p).unwrap().index;
        assert_eq!(bin(0.0, 4), 1);
        assert_eq!(bin(PI, 4), 3);
        assert_eq!(bin(PI / 4.0 - 1e-9, 4), 1);
        assert_eq!(bin(PI / 4.0 + 1e-9, 4), 2);
        assert_eq!(discretize(Azimuth::new(0.0), 1), Err(GeometryError::InvalidBinCount(1)));
    }

    #[test]
    fn bin_center_examples() {
        let c = |i, p| bin_center(BinIndex { index: i, bins: p }).unwrap().radians();
        assert_eq!(c(1, 4), 0.0);
        assert!((c(3, 4) - PI).abs() < EPS);
        assert!((c(13, 24) - PI).abs() < EPS);
        assert!(bin_center(BinIndex { index: 5, bins: 4 }).is_err());
    }

    #[test]
    fn bin_round_trip_all_views() {
        for &p in &[4usize, 8, 16, 24] {
            for i in 1..=p {
                let b = BinIndex { index: i, bins: p };
                assert_eq!(discretize(bin_center(b).unwrap(), p).unwrap(), b);
            }
        }
    }

    #[test]
    fn bin_center_is_within_half_width() {
        for &p in &[4usize, 8, 16, 24] {
            for k in 0..1000 {
                let t = Azimuth::new(k as f64 * TAU / 1000.0);
                let b = discretize(t, p).unwrap();
                let c = bin_center(b).unwrap();
                assert!(angular_distance(t, c) <= PI / p as f64 + EPS);
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_exactly_idempotent(
            x in -1e6f64..1e6, y in -1e6f64..1e6, z in -1e6f64..1e6
        ) {
            let once = project_to_circle([x, y, z]);
            let twice = project_to_circle(once.0);
            prop_assert_eq!(once.0, twice.0);
            let c = once.0;
            prop_assert!((c[0] * c[0] + c[1] * c[1] - 1.0).abs() < 1e-12);
            prop_assert_eq!(c[2], 0.0);
        }

        #[test]
        fn projection_beats_random_circle_points(
            x in -100f64..100.0, y in -100f64..100.0, z in -100f64..100.0, seed in any::<u64>()
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = distance_to_circle([x, y, z]);
            for _ in 0..100 {
                let t: f64 = rng.gen_range(0.0..TAU);
                let alt = ((x - t.cos()).powi(2) + (y - t.sin()).powi(2) + z * z).sqrt();
                prop_assert!(d <= alt + 1e-9);
            }
        }

        #[test]
        fn angular_distance_is_a_metric(a in 0f64..TAU, b in 0f64..TAU, c in 0f64..TAU) {
            let (a, b, c) = (Azimuth::new(a), Azimuth::new(b), Azimuth::new(c));
            let ab = angular_distance(a, b);
            prop_assert!(ab <= PI + 1e-15);
            prop_assert!((ab - angular_distance(b, a)).abs() < 1e-15);
            prop_assert!(ab <= angular_distance(a, c) + angular_distance(c, b) + 1e-12);
        }

        #[test]
        fn zero_distance_means_equal_canonical(a in 0f64..TAU) {
            let x = Azimuth::new(a);
            prop_assert_eq!(angular_distance(x, x), 0.0);
        }
    }
}
