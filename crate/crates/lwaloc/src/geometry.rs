//! Cone constraints and planar localization.
//!
//! A receiver that recovers the radiated frequency of an LWA learns the polar
//! angle of its own direction as seen from that antenna — a cone of possible
//! positions around the antenna axis. Two antennas with distinct poses give
//! two cones; intersecting them with the horizontal plane of the target's
//! (known) height pins the planar position down to a handful of candidates,
//! of which sign, field-of-view and room-bound filters leave the estimate.
//!
//! The implicit surface used throughout: with `u = (p - vertex) . axis`,
//! `rho = |(p - vertex) - u * axis|` and slope `a = cot(theta)`,
//!
//! ```text
//! F(p) = u^2 - a^2 * rho^2
//! ```
//!
//! which vanishes exactly where the direction `p - vertex` makes angle
//! `theta` with the axis (`rho / |u| = tan(theta)`). The quadratic admits the
//! mirror nappe at `180 - theta`; the half-space constraint
//! `sign(u) = sign(cos(theta))` excludes it. `theta = 90` degrees degrades
//! the quadratic to a perfect square, so that case evaluates the signed
//! plane distance `u` instead.

use crate::dispersion::{DispersionError, LwaFeed};
use crate::polarization::Handedness;
use crate::vec3::Vec3;
use thiserror::Error;

/// Samples taken along the scanned cone/plane curve before sign-change
/// bracketing.
const SCAN_SAMPLES: usize = 3600;
/// Bisection stops once |F| falls below this (m^2 for the quadratic form).
const RESIDUAL_TOL: f64 = 1e-9;
/// Distance under which two localization candidates count as the same point.
const DEDUP_DISTANCE_M: f64 = 5e-7;
/// Slack for room-bound membership of candidates (m).
const BOUNDS_TOL_M: f64 = 1e-6;
/// Slack for FoV membership of candidates (degrees).
const FOV_TOL_DEG: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("axis vector must be non-zero and finite")]
    InvalidAxis,
    #[error("position must be finite")]
    NonFinitePosition,
    #[error("cone half-angle must lie in (0, 180) degrees (got {0})")]
    InvalidConeAngle(f64),
    #[error("room bounds must be finite with min < max on every axis")]
    InvalidRoom,
    #[error("the two cones share a vertex; localization needs distinct poses")]
    CoincidentPoses,
    #[error("target height {z_t} m is outside the room height {lo} .. {hi} m")]
    HeightOutsideRoom { z_t: f64, lo: f64, hi: f64 },
    #[error("target sits at the {handedness}-handed antenna vertex; its direction is undefined")]
    TargetAtVertex { handedness: Handedness },
    #[error(
        "target at {theta_deg:.3} deg from the {handedness}-handed antenna axis is outside \
         its {lo} .. {hi} deg field of view"
    )]
    TargetOutsideFov { handedness: Handedness, theta_deg: f64, lo: f64, hi: f64 },
    #[error("the cone contains the whole target plane; localization is underdetermined")]
    DegenerateIntersection,
    #[error("the two cone curves do not intersect inside the room at the given height")]
    NoIntersection,
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
}

/// Axis-aligned room extent in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl RoomBounds {
    pub fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self, GeometryError> {
        for (lo, hi) in [x, y, z] {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(GeometryError::InvalidRoom);
            }
        }
        Ok(RoomBounds { x, y, z })
    }

    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        p.x >= self.x.0 - tol
            && p.x <= self.x.1 + tol
            && p.y >= self.y.0 - tol
            && p.y <= self.y.1 + tol
            && p.z >= self.z.0 - tol
            && p.z <= self.z.1 + tol
    }

    pub fn diagonal(&self) -> f64 {
        Vec3::new(self.x.1 - self.x.0, self.y.1 - self.y.0, self.z.1 - self.z.0).norm()
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.x.0 + self.x.1),
            0.5 * (self.y.0 + self.y.1),
            0.5 * (self.z.0 + self.z.1),
        )
    }
}

/// Placement of one LWA: mounting point, traveling-wave axis (unit) and the
/// feed radiating from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LwaPose {
    vertex: Vec3,
    axis: Vec3,
    feed: LwaFeed,
}

impl LwaPose {
    pub fn new(vertex: Vec3, axis: Vec3, feed: LwaFeed) -> Result<Self, GeometryError> {
        if !vertex.is_finite() {
            return Err(GeometryError::NonFinitePosition);
        }
        if !axis.is_finite() {
            return Err(GeometryError::InvalidAxis);
        }
        let axis = axis.normalized().ok_or(GeometryError::InvalidAxis)?;
        Ok(LwaPose { vertex, axis, feed })
    }

    pub fn vertex(&self) -> Vec3 {
        self.vertex
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn feed(&self) -> &LwaFeed {
        &self.feed
    }

    /// Polar angle (degrees from the axis) of `p` as seen from the vertex.
    pub fn angle_to_deg(&self, p: Vec3) -> Result<f64, GeometryError> {
        let d = p - self.vertex;
        if d.norm() < 1e-9 {
            return Err(GeometryError::TargetAtVertex {
                handedness: self.feed.handedness(),
            });
        }
        Ok(self.axis.angle_deg(d))
    }
}

/// One cone of candidate directions: vertex, axis, half-angle, and the
/// angular field of view of the feed that produced it (used as a candidate
/// filter; absent for cones built directly from an angle).
#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint {
    vertex: Vec3,
    axis: Vec3,
    theta_deg: f64,
    /// Slope cot(theta); the radial coefficient of the implicit quadratic.
    a: f64,
    cos_theta: f64,
    sin_theta: f64,
    fov_deg: Option<(f64, f64)>,
}

impl ConeConstraint {
    /// Cone at `theta_deg` (degrees, in (0, 180)) around `axis` from `vertex`.
    pub fn from_axis_angle(
        vertex: Vec3,
        axis: Vec3,
        theta_deg: f64,
    ) -> Result<Self, GeometryError> {
        if !vertex.is_finite() {
            return Err(GeometryError::NonFinitePosition);
        }
        let axis = axis.normalized().ok_or(GeometryError::InvalidAxis)?;
        if !theta_deg.is_finite() || theta_deg <= 0.0 || theta_deg >= 180.0 {
            return Err(GeometryError::InvalidConeAngle(theta_deg));
        }
        let rad = theta_deg.to_radians();
        Ok(ConeConstraint {
            vertex,
            axis,
            theta_deg,
            a: rad.cos() / rad.sin(),
            cos_theta: rad.cos(),
            sin_theta: rad.sin(),
            fov_deg: None,
        })
    }

    pub fn vertex(&self) -> Vec3 {
        self.vertex
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn slope(&self) -> f64 {
        self.a
    }

    fn is_plane(&self) -> bool {
        (self.theta_deg - 90.0).abs() < 1e-9
    }

    /// Implicit surface value at `p`: zero on the cone, of mixed sign across
    /// it. For the 90-degree special case this is the signed distance to the
    /// vertex plane rather than the (degenerate, sign-definite) quadratic.
    pub fn evaluate(&self, p: Vec3) -> f64 {
        let d = p - self.vertex;
        let u = d.dot(self.axis);
        if self.is_plane() {
            return u;
        }
        let rho_sq = (d - self.axis * u).dot(d - self.axis * u);
        u * u - self.a * self.a * rho_sq
    }

    /// Whether `p` lies on the nappe selected by `sign(u) = sign(cos theta)`.
    pub fn half_space_ok(&self, p: Vec3) -> bool {
        if self.is_plane() {
            return true;
        }
        let d = p - self.vertex;
        let u = d.dot(self.axis);
        u * self.cos_theta.signum() >= -1e-9 * (1.0 + d.norm())
    }

    fn fov_ok(&self, p: Vec3) -> bool {
        match self.fov_deg {
            None => true,
            Some((lo, hi)) => {
                let d = p - self.vertex;
                if d.norm() < 1e-12 {
                    return false;
                }
                let angle = self.axis.angle_deg(d);
                angle >= lo - FOV_TOL_DEG && angle <= hi + FOV_TOL_DEG
            }
        }
    }

    /// Gradient of [`Self::evaluate`] at `p`.
    fn gradient(&self, p: Vec3) -> Vec3 {
        let d = p - self.vertex;
        let u = d.dot(self.axis);
        if self.is_plane() {
            return self.axis;
        }
        let r_perp = d - self.axis * u;
        self.axis * (2.0 * u) - r_perp * (2.0 * self.a * self.a)
    }
}

/// Build the cone constraint implied by observing frequency `f_hz` from the
/// antenna at `pose`.
pub fn cone_from_frequency(pose: &LwaPose, f_hz: f64) -> Result<ConeConstraint, GeometryError> {
    let theta = pose.feed.angle_of_frequency(f_hz)?;
    let mut cone = ConeConstraint::from_axis_angle(pose.vertex, pose.axis, theta)?;
    cone.fov_deg = Some(pose.feed.angular_range_deg());
    Ok(cone)
}

/// Ground-truth inverse of the whole chain: the exact frequencies the two
/// feeds radiate toward `target`. Fails when the target leaves either feed's
/// field of view.
pub fn forward_frequencies(
    lwa_r: &LwaPose,
    lwa_l: &LwaPose,
    target: Vec3,
) -> Result<(f64, f64), GeometryError> {
    let mut out = [0.0; 2];
    for (slot, pose) in out.iter_mut().zip([lwa_r, lwa_l]) {
        let theta = pose.angle_to_deg(target)?;
        let (lo, hi) = pose.feed.angular_range_deg();
        *slot = pose.feed.frequency_of_angle(theta).map_err(|_| {
            GeometryError::TargetOutsideFov {
                handedness: pose.feed.handedness(),
                theta_deg: theta,
                lo,
                hi,
            }
        })?;
    }
    Ok((out[0], out[1]))
}

/// Planar position estimate at a known height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationEstimate {
    pub x_m: f64,
    pub y_m: f64,
    /// The height the solve was constrained to (an input, echoed back).
    pub z_m: f64,
    /// max |F| over both cones at the returned point.
    pub residual: f64,
    /// Distinct candidates that survived all filters.
    pub candidates_considered: usize,
}

/// Intersect two cone constraints with the horizontal plane `z = z_t` and
/// return the surviving candidate (minimum residual if several survive).
///
/// The curve of the first cone in the plane is swept with a dense parameter
/// scan; sign changes of the second cone's implicit value along it are
/// bracketed and refined by bisection. Candidates are then filtered by both
/// half-space constraints, both fields of view, and the room bounds.
pub fn localize(
    cone_r: &ConeConstraint,
    cone_l: &ConeConstraint,
    z_t: f64,
    bounds: &RoomBounds,
) -> Result<LocationEstimate, GeometryError> {
    if cone_r.vertex.distance(cone_l.vertex) < 1e-9 {
        return Err(GeometryError::CoincidentPoses);
    }
    if !z_t.is_finite() || z_t < bounds.z.0 - 1e-9 || z_t > bounds.z.1 + 1e-9 {
        return Err(GeometryError::HeightOutsideRoom { z_t, lo: bounds.z.0, hi: bounds.z.1 });
    }

    let mut candidates: Vec<(Vec3, f64)> = Vec::new();
    let mut push_candidate = |p: Vec3| {
        let residual = cone_r.evaluate(p).abs().max(cone_l.evaluate(p).abs());
        if residual > RESIDUAL_TOL {
            return;
        }
        if !cone_r.half_space_ok(p) || !cone_l.half_space_ok(p) {
            return;
        }
        if !cone_r.fov_ok(p) || !cone_l.fov_ok(p) {
            return;
        }
        if !bounds.contains(p, BOUNDS_TOL_M) {
            return;
        }
        // Merge with an existing candidate when it is the same intersection
        // point found through a second bracket.
        for existing in candidates.iter_mut() {
            if existing.0.distance(p) < DEDUP_DISTANCE_M {
                if residual < existing.1 {
                    *existing = (p, residual);
                }
                return;
            }
        }
        candidates.push((p, residual));
    };

    let h = z_t - cone_r.vertex.z;
    let plane_scale = 1.0 + z_t.abs() + cone_r.vertex.z.abs();
    let apex_in_plane = h.abs() < 1e-12 * plane_scale;
    // The ray sweep always runs: with the vertex in the plane it traces the
    // section exactly, and otherwise it seeds the branches of the conic from
    // their asymptote directions, which keeps working as the vertex
    // approaches the plane and the azimuth parameterization collapses. A
    // degenerate section is only a hard error when the vertex actually lies
    // in the plane; off the plane the azimuth scan still decides.
    let ray_scan = scan_section_rays(cone_r, cone_l, z_t, bounds, &mut push_candidate);
    if apex_in_plane {
        ray_scan?;
    } else {
        scan_conic(cone_r, cone_l, z_t, &mut push_candidate);
    }

    let considered = candidates.len();
    candidates
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(p, residual)| LocationEstimate {
            x_m: p.x,
            y_m: p.y,
            z_m: z_t,
            residual,
            candidates_considered: considered,
        })
        .ok_or(GeometryError::NoIntersection)
}

/// Orthonormal pair completing `axis` to a right-handed frame, with the
/// first vector horizontal whenever the axis allows it.
fn orthonormal_basis(axis: Vec3) -> (Vec3, Vec3) {
    let up = Vec3::new(0.0, 0.0, 1.0);
    let e1 = up
        .cross(axis)
        .normalized()
        .unwrap_or_else(|| Vec3::new(1.0, 0.0, 0.0));
    let e2 = axis.cross(e1);
    (e1, e2)
}

/// Direction at polar angle theta from `axis`, azimuth `psi` in the
/// (`e1`, `e2`) plane.
fn cone_direction(cone: &ConeConstraint, e1: Vec3, e2: Vec3, psi: f64) -> Vec3 {
    cone.axis * cone.cos_theta + (e1 * psi.cos() + e2 * psi.sin()) * cone.sin_theta
}

/// Generic case: the scanned cone's vertex is off the target plane, so the
/// curve is parameterized by azimuth with `t(psi) = h / dir_z(psi)`.
fn scan_conic(
    cone_r: &ConeConstraint,
    cone_l: &ConeConstraint,
    z_t: f64,
    push_candidate: &mut impl FnMut(Vec3),
) {
    let (e1, e2) = orthonormal_basis(cone_r.axis);
    let h = z_t - cone_r.vertex.z;
    let point_at = |psi: f64| -> Option<Vec3> {
        let dir = cone_direction(cone_r, e1, e2, psi);
        let t = h / dir.z;
        // Reject the wrong side of the vertex and runaway hyperbola arms;
        // anything that far out cannot survive the room filter anyway.
        if !t.is_finite() || t <= 1e-12 || t > 1e9 {
            return None;
        }
        Some(cone_r.vertex + dir * t)
    };

    let step = 2.0 * std::f64::consts::PI / SCAN_SAMPLES as f64;
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=SCAN_SAMPLES {
        let psi = i as f64 * step;
        let sample = point_at(psi).map(|p| (psi, cone_l.evaluate(p)));
        if let (Some((psi0, f0)), Some((psi1, f1))) = (prev, sample) {
            if f0 == 0.0 {
                if let Some(p) = point_at(psi0) {
                    push_candidate(p);
                }
            } else if f0.signum() != f1.signum() && f1 != 0.0 {
                if let Some(p) = bisect(psi0, f0, psi1, |psi| {
                    point_at(psi).map(|p| (p, cone_l.evaluate(p)))
                }) {
                    push_candidate(p);
                }
            }
        }
        prev = sample;
    }
}

/// Sweep the target-plane rays whose directions lie on the scanned cone.
///
/// With the vertex in the plane these rays are the section itself (at most
/// two of them; a vertical axis at 90 degrees puts the whole cone in the
/// plane, reported as degenerate). With the vertex off the plane they are the
/// asymptote directions of the conic section, cast from the vertex projected
/// onto the plane; for the horizontal antenna axes this projection is the
/// conic's center, so each bracketed root lands near a true branch and a
/// planar Newton polish pulls it onto both cones. This sweep stays robust as
/// the vertex approaches the plane, exactly where the azimuth scan's
/// parameterization degenerates.
fn scan_section_rays(
    cone_r: &ConeConstraint,
    cone_l: &ConeConstraint,
    z_t: f64,
    bounds: &RoomBounds,
    push_candidate: &mut impl FnMut(Vec3),
) -> Result<(), GeometryError> {
    let (e1, e2) = orthonormal_basis(cone_r.axis);
    // Solve dir_z(psi) = 0: A cos(psi) + B sin(psi) = C.
    let a = cone_r.sin_theta * e1.z;
    let b = cone_r.sin_theta * e2.z;
    let c = -cone_r.cos_theta * cone_r.axis.z;
    let r = a.hypot(b);
    let mut ray_azimuths = Vec::new();
    if r < 1e-15 {
        if c.abs() < 1e-15 {
            // Vertical axis at 90 degrees: every azimuth stays in the plane.
            return Err(GeometryError::DegenerateIntersection);
        }
        // No in-plane direction: the plane touches the cone at the vertex
        // only, so there is nothing to scan.
        return Ok(());
    } else {
        let ratio = c / r;
        if ratio.abs() <= 1.0 {
            let delta = ratio.clamp(-1.0, 1.0).acos();
            let phi0 = b.atan2(a);
            ray_azimuths.push(phi0 + delta);
            if delta > 1e-12 && delta < std::f64::consts::PI - 1e-12 {
                ray_azimuths.push(phi0 - delta);
            }
        }
    }

    let t_max = 3.0 * (bounds.diagonal() + cone_r.vertex.distance(bounds.center()) + 1.0);
    for psi in ray_azimuths {
        let dir = cone_direction(cone_r, e1, e2, psi);
        // The rays run inside the plane z = vertex.z; cast them in the target
        // plane instead so every sample reports the requested height exactly.
        let point_at = |t: f64| {
            let p = cone_r.vertex + dir * t;
            Vec3::new(p.x, p.y, z_t)
        };
        let step = t_max / SCAN_SAMPLES as f64;
        let mut prev: Option<(f64, f64)> = None;
        for i in 1..=SCAN_SAMPLES {
            let t = i as f64 * step;
            let p = point_at(t);
            let f = cone_l.evaluate(p);
            if let Some((t0, f0)) = prev {
                if f0 == 0.0 {
                    let q = point_at(t0);
                    push_candidate(polish_joint_root(cone_r, cone_l, q).unwrap_or(q));
                } else if f0.signum() != f.signum() && f != 0.0 {
                    if let Some(q) =
                        bisect(t0, f0, t, |t| Some((point_at(t), cone_l.evaluate(point_at(t)))))
                    {
                        push_candidate(polish_joint_root(cone_r, cone_l, q).unwrap_or(q));
                    }
                }
            }
            prev = Some((t, f));
        }
    }
    Ok(())
}

/// Residual both cones must reach for the planar Newton refinement to accept
/// a point; well inside `RESIDUAL_TOL` so polished candidates pass the
/// acceptance filter with margin.
const RESIDUAL_POLISH_TOL: f64 = 1e-12;

/// Pull a near-intersection onto both cones with planar Newton steps
/// (x and y free, z fixed). Returns `None` when the planar Jacobian is close
/// to singular (tangential crossing) or a step runs away, leaving the caller
/// with the unrefined point.
fn polish_joint_root(cone_r: &ConeConstraint, cone_l: &ConeConstraint, start: Vec3) -> Option<Vec3> {
    let max_step = 1.0 + start.distance(cone_r.vertex) + start.distance(cone_l.vertex);
    let mut p = start;
    for _ in 0..50 {
        let f1 = cone_r.evaluate(p);
        let f2 = cone_l.evaluate(p);
        if f1.abs().max(f2.abs()) <= RESIDUAL_POLISH_TOL {
            return Some(p);
        }
        let g1 = cone_r.gradient(p);
        let g2 = cone_l.gradient(p);
        let det = g1.x * g2.y - g1.y * g2.x;
        if det.abs() <= 1e-12 * g1.norm() * g2.norm() {
            return None;
        }
        let dx = (-f1 * g2.y + f2 * g1.y) / det;
        let dy = (-f2 * g1.x + f1 * g2.x) / det;
        if !dx.is_finite() || !dy.is_finite() || dx.hypot(dy) > max_step {
            return None;
        }
        p = Vec3::new(p.x + dx, p.y + dy, p.z);
    }
    None
}

/// Refine a bracketed sign change of `eval` down to |F| <= RESIDUAL_TOL.
/// Returns `None` when the bracket cannot be refined (invalid interior
/// samples or a sign change too steep to meet the tolerance).
fn bisect(
    mut lo: f64,
    mut f_lo: f64,
    mut hi: f64,
    eval: impl Fn(f64) -> Option<(Vec3, f64)>,
) -> Option<Vec3> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (p, f_mid) = eval(mid)?;
        if f_mid.abs() <= RESIDUAL_TOL {
            return Some(p);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() < f64::EPSILON * (1.0 + lo.abs() + hi.abs()) {
            break;
        }
    }
    None
}
