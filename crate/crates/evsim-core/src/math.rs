//! Thin float helpers so the crate builds without `std`.

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn hypot(x: f64, y: f64) -> f64 {
    libm::hypot(x, y)
}

/// Kilometres per statute mile.
pub const KM_PER_MI: f64 = 1.609_344;

/// Euclidean distance between two planar points.
#[inline]
pub fn dist2d(a: (f64, f64), b: (f64, f64)) -> f64 {
    hypot(a.0 - b.0, a.1 - b.1)
}

/// Minimum distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist2d(p, a);
    }
    let t = ((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2;
    let t = t.clamp(0.0, 1.0);
    dist2d(p, (a.0 + t * dx, a.1 + t * dy))
}

/// Minimum distance between segments `a0`-`a1` and `b0`-`b1`.
///
/// Segments in the plane either intersect (distance 0) or realise their
/// minimum at an endpoint-to-segment pair.
pub fn segment_segment_distance(
    a0: (f64, f64),
    a1: (f64, f64),
    b0: (f64, f64),
    b1: (f64, f64),
) -> f64 {
    if segments_intersect(a0, a1, b0, b1) {
        return 0.0;
    }
    let d1 = point_segment_distance(a0, b0, b1);
    let d2 = point_segment_distance(a1, b0, b1);
    let d3 = point_segment_distance(b0, a0, a1);
    let d4 = point_segment_distance(b1, a0, a1);
    d1.min(d2).min(d3.min(d4))
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_intersect(a0: (f64, f64), a1: (f64, f64), b0: (f64, f64), b1: (f64, f64)) -> bool {
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(b0, b1, a0))
        || (d2 == 0.0 && on_segment(b0, b1, a1))
        || (d3 == 0.0 && on_segment(a0, a1, b0))
        || (d4 == 0.0 && on_segment(a0, a1, b1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_to_segment_perpendicular() {
        let d = point_segment_distance((0.5, 0.3), (0.0, 0.0), (1.0, 0.0));
        assert!((d - 0.3).abs() < 1e-12);
    }

    #[test]
    fn point_to_segment_beyond_endpoint() {
        let d = point_segment_distance((2.0, 0.0), (0.0, 0.0), (1.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_segments_touch() {
        let d = segment_segment_distance((0.0, -1.0), (0.0, 1.0), (-1.0, 0.0), (1.0, 0.0));
        assert_eq!(d, 0.0);
    }

    #[test]
    fn parallel_segments_gap() {
        let d = segment_segment_distance((0.0, 0.0), (1.0, 0.0), (0.0, 0.5), (1.0, 0.5));
        assert!((d - 0.5).abs() < 1e-12);
    }
}
