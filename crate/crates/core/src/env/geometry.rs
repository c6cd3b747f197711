use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn intersection(&self, other: &Rect) -> Rect {
        Rect::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        )
    }

    /// Liang–Barsky: does the segment `p -> q` touch the rectangle?
    pub fn hits_segment(&self, p: (f64, f64), q: (f64, f64)) -> bool {
        let (dx, dy) = (q.0 - p.0, q.1 - p.1);
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (pk, qk) in [
            (-dx, p.0 - self.x0),
            (dx, self.x1 - p.0),
            (-dy, p.1 - self.y0),
            (dy, self.y1 - p.1),
        ] {
            if pk == 0.0 {
                if qk < 0.0 {
                    return false;
                }
            } else {
                let r = qk / pk;
                if pk < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }

    /// Smallest non-negative ray parameter at which the ray from `o` along
    /// unit direction `d` enters the rectangle.
    pub fn ray_entry(&self, o: (f64, f64), d: (f64, f64)) -> Option<f64> {
        let mut tmin = f64::NEG_INFINITY;
        let mut tmax = f64::INFINITY;
        for (oc, dc, lo, hi) in [(o.0, d.0, self.x0, self.x1), (o.1, d.1, self.y0, self.y1)] {
            if dc.abs() < 1e-12 {
                if oc < lo || oc > hi {
                    return None;
                }
            } else {
                let a = (lo - oc) / dc;
                let b = (hi - oc) / dc;
                tmin = tmin.max(a.min(b));
                tmax = tmax.min(a.max(b));
            }
        }
        if tmax < tmin.max(0.0) {
            None
        } else {
            Some(tmin.max(0.0))
        }
    }

    /// Ray parameter at which a ray starting inside the rectangle leaves it.
    pub fn ray_exit(&self, o: (f64, f64), d: (f64, f64)) -> f64 {
        let mut t = f64::INFINITY;
        if d.0 > 1e-12 {
            t = t.min((self.x1 - o.0) / d.0);
        } else if d.0 < -1e-12 {
            t = t.min((self.x0 - o.0) / d.0);
        }
        if d.1 > 1e-12 {
            t = t.min((self.y1 - o.1) / d.1);
        } else if d.1 < -1e-12 {
            t = t.min((self.y0 - o.1) / d.1);
        }
        t.max(0.0)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_hits() {
        let r = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert!(r.hits_segment((-1.0, 0.5), (2.0, 0.5)));
        assert!(r.hits_segment((0.5, 0.5), (0.6, 0.6)));
        assert!(!r.hits_segment((-1.0, 2.0), (2.0, 2.0)));
        assert!(!r.hits_segment((-1.0, -0.5), (-0.1, 0.9)));
        assert!(r.hits_segment((1.0, 2.0), (1.0, 1.0)));
    }

    #[test]
    fn ray_entry_distance() {
        let r = Rect::new(5.0, -1.0, 6.0, 1.0);
        assert_eq!(r.ray_entry((0.0, 0.0), (1.0, 0.0)), Some(5.0));
        assert_eq!(r.ray_entry((0.0, 0.0), (-1.0, 0.0)), None);
        assert_eq!(r.ray_entry((0.0, 0.0), (0.0, 1.0)), None);
        let s = 0.5f64.sqrt();
        let t = Rect::new(-1.0, -1.0, 10.0, 10.0).ray_exit((0.0, 0.0), (s, s));
        assert!((t - 10.0 / s).abs() < 1e-12);
    }

    #[test]
    fn wrap() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-12);
    }
}
