//! Coordinate frames and image-to-ground georeferencing.
//!
//! All planning happens in a field-local east/north plane anchored at a
//! declared WGS84 origin. The projection is an equirectangular tangent
//! plane, which is sub-centimetre accurate at field scale; conversions
//! refuse points further than [`MAX_LOCAL_RANGE_M`] from the origin.
//!
//! Image convention: pixel `x` grows to the right, pixel `y` grows
//! downwards, and the top edge of the frame points along the flight
//! direction (the pose heading). Image-right is therefore 90° clockwise
//! from the heading.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Mean Earth radius used by the tangent-plane projection.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Field-scale validity bound of the local projection.
pub const MAX_LOCAL_RANGE_M: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("point is {distance_m:.1} m from the frame origin, beyond the {MAX_LOCAL_RANGE_M} m validity range")]
    OutOfValidityRange { distance_m: f64 },
    #[error("invalid WGS84 coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds { x: f64, y: f64, width: u32, height: u32 },
    #[error("invalid camera model: {0}")]
    InvalidCamera(&'static str),
    #[error("altitude must be positive, got {0}")]
    NonPositiveAltitude(f64),
}

/// WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        let p = Self { lat_deg, lon_deg };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let ok = self.lat_deg.is_finite()
            && self.lon_deg.is_finite()
            && (-90.0..=90.0).contains(&self.lat_deg)
            && (-180.0..=180.0).contains(&self.lon_deg);
        if ok {
            Ok(())
        } else {
            Err(GeoError::InvalidCoordinate {
                lat: self.lat_deg,
                lon: self.lon_deg,
            })
        }
    }
}

/// Position in the field-local east/north plane, metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalPoint {
    pub east_m: f64,
    pub north_m: f64,
}

impl LocalPoint {
    pub const ORIGIN: LocalPoint = LocalPoint {
        east_m: 0.0,
        north_m: 0.0,
    };

    pub const fn new(east_m: f64, north_m: f64) -> Self {
        Self { east_m, north_m }
    }

    pub fn distance(&self, other: &LocalPoint) -> f64 {
        (self.east_m - other.east_m).hypot(self.north_m - other.north_m)
    }

    pub fn norm(&self) -> f64 {
        self.east_m.hypot(self.north_m)
    }

    pub fn add(&self, other: &LocalPoint) -> LocalPoint {
        LocalPoint::new(self.east_m + other.east_m, self.north_m + other.north_m)
    }

    pub fn sub(&self, other: &LocalPoint) -> LocalPoint {
        LocalPoint::new(self.east_m - other.east_m, self.north_m - other.north_m)
    }

    pub fn scale(&self, k: f64) -> LocalPoint {
        LocalPoint::new(self.east_m * k, self.north_m * k)
    }

    pub fn dot(&self, other: &LocalPoint) -> f64 {
        self.east_m * other.east_m + self.north_m * other.north_m
    }

    /// z component of the 2-D cross product.
    pub fn cross(&self, other: &LocalPoint) -> f64 {
        self.east_m * other.north_m - self.north_m * other.east_m
    }

    pub fn is_finite(&self) -> bool {
        self.east_m.is_finite() && self.north_m.is_finite()
    }
}

/// Unit vector pointing along a compass heading (degrees clockwise from north).
pub fn heading_unit(heading_deg: f64) -> LocalPoint {
    let h = heading_deg.to_radians();
    LocalPoint::new(h.sin(), h.cos())
}

/// Unit vector 90° clockwise from the heading (the "right-hand" side).
pub fn right_unit(heading_deg: f64) -> LocalPoint {
    let h = heading_deg.to_radians();
    LocalPoint::new(h.cos(), -h.sin())
}

/// Compass heading of a direction vector, normalised to [0, 360).
pub fn heading_of(v: &LocalPoint) -> f64 {
    normalize_heading(v.east_m.atan2(v.north_m).to_degrees())
}

pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// UAV attitude needed for nadir georeferencing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub position: GeoPoint,
    pub altitude_agl_m: f64,
    pub heading_deg: f64,
}

/// Nadir pinhole camera. Ground sample distance scales linearly with altitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub width_px: u32,
    pub height_px: u32,
    pub gsd_m_per_px_at_ref: f64,
    pub ref_altitude_m: f64,
}

impl Default for CameraModel {
    /// 12.3 MP survey camera sized so that at 10 m the along-track footprint
    /// is 2.733 m (2.46 m stride at 10% overlap) and the cross-track
    /// footprint is 4.366 m (3.93 m track width at 10% overlap).
    fn default() -> Self {
        Self {
            width_px: 4433,
            height_px: 2775,
            gsd_m_per_px_at_ref: 2.46 / (0.9 * 2775.0),
            ref_altitude_m: 10.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), GeoError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(GeoError::InvalidCamera("image dimensions must be positive"));
        }
        if !(self.gsd_m_per_px_at_ref > 0.0 && self.gsd_m_per_px_at_ref.is_finite()) {
            return Err(GeoError::InvalidCamera("gsd must be positive"));
        }
        if !(self.ref_altitude_m > 0.0 && self.ref_altitude_m.is_finite()) {
            return Err(GeoError::InvalidCamera("reference altitude must be positive"));
        }
        Ok(())
    }

    pub fn gsd_at(&self, altitude_m: f64) -> f64 {
        self.gsd_m_per_px_at_ref * altitude_m / self.ref_altitude_m
    }

    /// Cross-track ground extent (image width) at the given altitude.
    pub fn footprint_width_m(&self, altitude_m: f64) -> f64 {
        self.width_px as f64 * self.gsd_at(altitude_m)
    }

    /// Along-track ground extent (image height) at the given altitude.
    pub fn footprint_length_m(&self, altitude_m: f64) -> f64 {
        self.height_px as f64 * self.gsd_at(altitude_m)
    }

    pub fn center_px(&self) -> PixelCoord {
        PixelCoord::new(self.width_px as f64 / 2.0, self.height_px as f64 / 2.0)
    }

    pub fn contains(&self, px: &PixelCoord) -> bool {
        px.x >= 0.0
            && px.y >= 0.0
            && px.x <= self.width_px as f64
            && px.y <= self.height_px as f64
    }
}

/// Continuous pixel coordinate; `(0, 0)` is the top-left corner of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

pub fn wgs84_to_enu(origin: GeoPoint, p: GeoPoint) -> Result<LocalPoint, GeoError> {
    origin.validate()?;
    p.validate()?;
    let deg = PI / 180.0;
    let north = (p.lat_deg - origin.lat_deg) * EARTH_RADIUS_M * deg;
    let east = (p.lon_deg - origin.lon_deg) * EARTH_RADIUS_M * (origin.lat_deg * deg).cos() * deg;
    let l = LocalPoint::new(east, north);
    check_range(&l)?;
    Ok(l)
}

pub fn enu_to_wgs84(origin: GeoPoint, l: LocalPoint) -> Result<GeoPoint, GeoError> {
    origin.validate()?;
    check_range(&l)?;
    let deg = PI / 180.0;
    let lat = origin.lat_deg + l.north_m / (EARTH_RADIUS_M * deg);
    let lon = origin.lon_deg + l.east_m / (EARTH_RADIUS_M * (origin.lat_deg * deg).cos() * deg);
    GeoPoint::new(lat, lon)
}

fn check_range(l: &LocalPoint) -> Result<(), GeoError> {
    let d = l.norm();
    if !d.is_finite() || d > MAX_LOCAL_RANGE_M {
        return Err(GeoError::OutOfValidityRange { distance_m: d });
    }
    Ok(())
}

/// A local tangent-plane frame anchored at a WGS84 origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: GeoPoint,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        Self { origin }
    }

    pub fn to_local(&self, p: GeoPoint) -> Result<LocalPoint, GeoError> {
        wgs84_to_enu(self.origin, p)
    }

    pub fn to_geo(&self, l: LocalPoint) -> Result<GeoPoint, GeoError> {
        enu_to_wgs84(self.origin, l)
    }

    pub fn pixel_to_ground(
        &self,
        pose: &Pose,
        cam: &CameraModel,
        px: PixelCoord,
    ) -> Result<LocalPoint, GeoError> {
        pixel_to_ground(self, pose, cam, px)
    }
}

fn check_altitude(pose: &Pose) -> Result<(), GeoError> {
    if pose.altitude_agl_m > 0.0 && pose.altitude_agl_m.is_finite() {
        Ok(())
    } else {
        Err(GeoError::NonPositiveAltitude(pose.altitude_agl_m))
    }
}

/// Map a pixel of a nadir image to the ground plane.
pub fn pixel_to_ground(
    frame: &LocalFrame,
    pose: &Pose,
    cam: &CameraModel,
    px: PixelCoord,
) -> Result<LocalPoint, GeoError> {
    check_altitude(pose)?;
    if !cam.contains(&px) {
        return Err(GeoError::PixelOutOfBounds {
            x: px.x,
            y: px.y,
            width: cam.width_px,
            height: cam.height_px,
        });
    }
    let center = frame.to_local(pose.position)?;
    let gsd = cam.gsd_at(pose.altitude_agl_m);
    let c = cam.center_px();
    let right = (px.x - c.x) * gsd;
    let forward = (c.y - px.y) * gsd;
    let f = heading_unit(pose.heading_deg);
    let r = right_unit(pose.heading_deg);
    Ok(center.add(&f.scale(forward)).add(&r.scale(right)))
}

/// Inverse of [`pixel_to_ground`]. The returned pixel may lie outside the
/// image; callers decide visibility with [`CameraModel::contains`].
pub fn ground_to_pixel(
    frame: &LocalFrame,
    pose: &Pose,
    cam: &CameraModel,
    ground: LocalPoint,
) -> Result<PixelCoord, GeoError> {
    check_altitude(pose)?;
    let center = frame.to_local(pose.position)?;
    let gsd = cam.gsd_at(pose.altitude_agl_m);
    let d = ground.sub(&center);
    let forward = d.dot(&heading_unit(pose.heading_deg));
    let right = d.dot(&right_unit(pose.heading_deg));
    let c = cam.center_px();
    Ok(PixelCoord::new(c.x + right / gsd, c.y - forward / gsd))
}

/// Ground quadrilateral of a nadir image, corners counter-clockwise in the
/// local frame starting at the rear-left corner.
pub fn footprint(
    frame: &LocalFrame,
    pose: &Pose,
    cam: &CameraModel,
) -> Result<[LocalPoint; 4], GeoError> {
    check_altitude(pose)?;
    let center = frame.to_local(pose.position)?;
    let half_w = cam.footprint_width_m(pose.altitude_agl_m) / 2.0;
    let half_l = cam.footprint_length_m(pose.altitude_agl_m) / 2.0;
    let f = heading_unit(pose.heading_deg);
    let r = right_unit(pose.heading_deg);
    let corner = |right: f64, fwd: f64| center.add(&r.scale(right)).add(&f.scale(fwd));
    Ok([
        corner(-half_w, -half_l),
        corner(half_w, -half_l),
        corner(half_w, half_l),
        corner(-half_w, half_l),
    ])
}

/// Shoelace area, positive for counter-clockwise rings.
pub fn signed_area(ring: &[LocalPoint]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += ring[i].cross(&ring[(i + 1) % n]);
    }
    acc / 2.0
}

/// Point-in-convex-quad test for a counter-clockwise footprint.
pub fn footprint_contains(quad: &[LocalPoint; 4], p: &LocalPoint) -> bool {
    (0..4).all(|i| {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        b.sub(&a).cross(&p.sub(&a)) >= 0.0
    })
}
