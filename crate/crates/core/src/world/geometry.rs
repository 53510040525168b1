use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar pose: position in metres, heading in radians (counter-clockwise from +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Pose { x, y, psi }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite()
    }

    /// Expresses `world` in the frame attached to `self`.
    pub fn to_local(&self, world: &Pose) -> Pose {
        let (s, c) = self.psi.sin_cos();
        let dx = world.x - self.x;
        let dy = world.y - self.y;
        Pose {
            x: c * dx + s * dy,
            y: -s * dx + c * dy,
            psi: wrap_angle(world.psi - self.psi),
        }
    }

    /// Inverse of [`Pose::to_local`].
    pub fn to_world(&self, local: &Pose) -> Pose {
        let (s, c) = self.psi.sin_cos();
        Pose {
            x: self.x + c * local.x - s * local.y,
            y: self.y + s * local.x + c * local.y,
            psi: wrap_angle(self.psi + local.psi),
        }
    }

    /// Linear interpolation; heading takes the short way round.
    pub fn lerp(&self, other: &Pose, t: f64) -> Pose {
        Pose {
            x: self.x + t * (other.x - self.x),
            y: self.y + t * (other.y - self.y),
            psi: self.psi + t * wrap_angle(other.psi - self.psi),
        }
    }
}

/// Maps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Rectangle given by center, heading and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn from_pose(pose: &Pose, length: f64, width: f64) -> Self {
        OrientedRect {
            cx: pose.x,
            cy: pose.y,
            heading: pose.psi,
            half_length: 0.5 * length,
            half_width: 0.5 * width,
        }
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [u, v] = self.axes();
        let (l, w) = (self.half_length, self.half_width);
        let at = |a: f64, b: f64| [self.cx + a * u[0] + b * v[0], self.cy + a * u[1] + b * v[1]];
        [at(l, w), at(-l, w), at(-l, -w), at(l, -w)]
    }

    fn project(&self, axis: [f64; 2]) -> (f64, f64) {
        let c = self.cx * axis[0] + self.cy * axis[1];
        let [u, v] = self.axes();
        let r = self.half_length * (u[0] * axis[0] + u[1] * axis[1]).abs()
            + self.half_width * (v[0] * axis[0] + v[1] * axis[1]).abs();
        (c - r, c + r)
    }
}

/// Separating-axis test for two rectangles. Touching counts as overlap.
pub fn obb_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (amin, amax) = a.project(axis);
        let (bmin, bmax) = b.project(axis);
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

/// Euclidean distance between two rectangles, 0 when they overlap.
pub fn rect_distance(a: &OrientedRect, b: &OrientedRect) -> f64 {
    if obb_overlap(a, b) {
        return 0.0;
    }
    let ca = a.corners();
    let cb = b.corners();
    let mut best = f64::INFINITY;
    for i in 0..4 {
        let (a0, a1) = (ca[i], ca[(i + 1) % 4]);
        let (b0, b1) = (cb[i], cb[(i + 1) % 4]);
        for p in cb {
            best = best.min(point_segment_distance(p, a0, a1).0);
        }
        for p in ca {
            best = best.min(point_segment_distance(p, b0, b1).0);
        }
    }
    best
}

/// Distance from `p` to segment `[a, b]` and the clamped segment parameter.
fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let qx = a[0] + t * dx - p[0];
    let qy = a[1] + t * dy - p[1];
    ((qx * qx + qy * qy).sqrt(), t)
}

/// Lane centerline polyline with a drivable half-width on either side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LaneDoc", into = "LaneDoc")]
pub struct Lane {
    centerline: Vec<[f64; 2]>,
    half_width: f64,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LaneDoc {
    centerline: Vec<[f64; 2]>,
    half_width: f64,
}

impl TryFrom<LaneDoc> for Lane {
    type Error = Error;

    fn try_from(doc: LaneDoc) -> Result<Self> {
        Lane::new(doc.centerline, doc.half_width)
    }
}

impl From<Lane> for LaneDoc {
    fn from(lane: Lane) -> Self {
        LaneDoc {
            centerline: lane.centerline,
            half_width: lane.half_width,
        }
    }
}

impl Lane {
    pub fn new(centerline: Vec<[f64; 2]>, half_width: f64) -> Result<Self> {
        if centerline.len() < 2 {
            return Err(Error::Input("lane centerline needs at least two points".into()));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Input(format!("lane half width {half_width} must be positive")));
        }
        let mut cumulative = Vec::with_capacity(centerline.len());
        cumulative.push(0.0);
        for w in centerline.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Input("lane arclength must be strictly increasing".into()));
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Lane {
            centerline,
            half_width,
            cumulative,
        })
    }

    pub fn centerline(&self) -> &[[f64; 2]] {
        &self.centerline
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn nearest_segment(&self, p: [f64; 2]) -> (usize, f64, f64) {
        let mut best = (0, 0.0, f64::INFINITY);
        for i in 0..self.centerline.len() - 1 {
            let (d, t) = point_segment_distance(p, self.centerline[i], self.centerline[i + 1]);
            if d < best.2 {
                best = (i, t, d);
            }
        }
        best
    }

    fn segment_dir(&self, i: usize) -> [f64; 2] {
        let (a, b) = (self.centerline[i], self.centerline[i + 1]);
        let len = self.cumulative[i + 1] - self.cumulative[i];
        [(b[0] - a[0]) / len, (b[1] - a[1]) / len]
    }

    /// Nearest-point projection: arclength in `[0, length]` and signed
    /// distance to the centerline, positive on the left.
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        let (i, t, dist) = self.nearest_segment([x, y]);
        let a = self.centerline[i];
        let dir = self.segment_dir(i);
        let cross = dir[0] * (y - a[1]) - dir[1] * (x - a[0]);
        let s = self.cumulative[i] + t * (self.cumulative[i + 1] - self.cumulative[i]);
        (s, if cross < 0.0 { -dist } else { dist })
    }

    /// Like [`Lane::project`] but extends the first and last segments
    /// indefinitely, so arclength may leave `[0, length]`.
    pub fn project_extended(&self, x: f64, y: f64) -> (f64, f64) {
        let n = self.centerline.len();
        let (i, t, _) = self.nearest_segment([x, y]);
        let end = (i == 0 && t == 0.0) || (i == n - 2 && t == 1.0);
        if !end {
            return self.project(x, y);
        }
        let a = self.centerline[i];
        let dir = self.segment_dir(i);
        let along = dir[0] * (x - a[0]) + dir[1] * (y - a[1]);
        let lateral = dir[0] * (y - a[1]) - dir[1] * (x - a[0]);
        (self.cumulative[i] + along, lateral)
    }

    /// Centerline pose at arclength `s`, extrapolating linearly past either end.
    pub fn point_at(&self, s: f64) -> Pose {
        let n = self.centerline.len();
        let i = match self.cumulative.partition_point(|&c| c <= s) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let dir = self.segment_dir(i);
        let a = self.centerline[i];
        let ds = s - self.cumulative[i];
        Pose {
            x: a[0] + ds * dir[0],
            y: a[1] + ds * dir[1],
            psi: dir[1].atan2(dir[0]),
        }
    }

    /// Pose offset `lateral` metres to the left of the centerline at `s`.
    pub fn offset_point(&self, s: f64, lateral: f64) -> Pose {
        let p = self.point_at(s);
        let (sn, cs) = p.psi.sin_cos();
        Pose {
            x: p.x - lateral * sn,
            y: p.y + lateral * cs,
            psi: p.psi,
        }
    }

    /// Signed curvature (1/m, left positive) of the circle through the three
    /// vertices centred on the vertex nearest to `s`.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let n = self.centerline.len();
        if n < 3 {
            return 0.0;
        }
        let k = self.cumulative.partition_point(|&c| c < s);
        let idx = if k == 0 {
            0
        } else if k >= n {
            n - 1
        } else if (self.cumulative[k] - s) < (s - self.cumulative[k - 1]) {
            k
        } else {
            k - 1
        };
        let i = idx.clamp(1, n - 2);
        menger_curvature(self.centerline[i - 1], self.centerline[i], self.centerline[i + 1])
    }
}

fn menger_curvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let ab = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let bc = ((c[0] - b[0]).powi(2) + (c[1] - b[1]).powi(2)).sqrt();
    let ca = ((a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2)).sqrt();
    2.0 * cross / (ab * bc * ca)
}
