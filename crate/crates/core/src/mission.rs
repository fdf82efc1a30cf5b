//! Boustrophedon survey planning for a single UAV.
//!
//! Tracks run parallel to the sweep heading and are offset perpendicular to
//! it at a fixed spacing, centred on the field's perpendicular extent. Each
//! track line is clipped against the field polygon, so a concave field can
//! produce several segments on the same line. Lines alternate direction.

use crate::geo::{
    heading_unit, normalize_heading, right_unit, signed_area, CameraModel, GeoError, LocalFrame,
    LocalPoint, Pose,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissionError {
    #[error("degenerate polygon: area {area_m2} m² is zero or smaller than spacing² ({min_m2} m²)")]
    DegeneratePolygon { area_m2: f64, min_m2: f64 },
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid survey parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Simple polygon in the local frame, stored counter-clockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LocalPoint>", into = "Vec<LocalPoint>")]
pub struct FieldPolygon {
    vertices: Vec<LocalPoint>,
}

impl TryFrom<Vec<LocalPoint>> for FieldPolygon {
    type Error = MissionError;
    fn try_from(v: Vec<LocalPoint>) -> Result<Self, Self::Error> {
        FieldPolygon::new(v)
    }
}

impl From<FieldPolygon> for Vec<LocalPoint> {
    fn from(p: FieldPolygon) -> Self {
        p.vertices
    }
}

impl FieldPolygon {
    /// Validates the ring and reorders clockwise input to counter-clockwise.
    pub fn new(mut vertices: Vec<LocalPoint>) -> Result<Self, MissionError> {
        if vertices.len() > 3 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(MissionError::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(MissionError::InvalidPolygon("non-finite vertex".into()));
        }
        if let Some((i, j)) = first_self_intersection(&vertices) {
            return Err(MissionError::InvalidPolygon(format!(
                "edges {i} and {j} intersect"
            )));
        }
        let area = signed_area(&vertices);
        if area == 0.0 {
            return Err(MissionError::DegeneratePolygon {
                area_m2: 0.0,
                min_m2: 0.0,
            });
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle with its south-west corner at `sw`.
    pub fn rectangle(sw: LocalPoint, width_east_m: f64, height_north_m: f64) -> Result<Self, MissionError> {
        Self::new(vec![
            sw,
            LocalPoint::new(sw.east_m + width_east_m, sw.north_m),
            LocalPoint::new(sw.east_m + width_east_m, sw.north_m + height_north_m),
            LocalPoint::new(sw.east_m, sw.north_m + height_north_m),
        ])
    }

    pub fn vertices(&self) -> &[LocalPoint] {
        &self.vertices
    }

    pub fn area_m2(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn edges(&self) -> impl Iterator<Item = (LocalPoint, LocalPoint)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Even-odd ray cast; boundary points may fall either way.
    pub fn contains(&self, p: &LocalPoint) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.north_m > p.north_m) != (b.north_m > p.north_m) {
                let t = (p.north_m - a.north_m) / (b.north_m - a.north_m);
                let x = a.east_m + t * (b.east_m - a.east_m);
                if p.east_m < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// (min, max) corners of the axis-aligned bounding box.
    pub fn bounds(&self) -> (LocalPoint, LocalPoint) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices[1..] {
            lo.east_m = lo.east_m.min(v.east_m);
            lo.north_m = lo.north_m.min(v.north_m);
            hi.east_m = hi.east_m.max(v.east_m);
            hi.north_m = hi.north_m.max(v.north_m);
        }
        (lo, hi)
    }

    pub fn translated(&self, by: LocalPoint) -> FieldPolygon {
        FieldPolygon {
            vertices: self.vertices.iter().map(|v| v.add(&by)).collect(),
        }
    }
}

fn orient(a: &LocalPoint, b: &LocalPoint, c: &LocalPoint) -> f64 {
    b.sub(a).cross(&c.sub(a))
}

fn on_segment(a: &LocalPoint, b: &LocalPoint, p: &LocalPoint) -> bool {
    p.east_m >= a.east_m.min(b.east_m)
        && p.east_m <= a.east_m.max(b.east_m)
        && p.north_m >= a.north_m.min(b.north_m)
        && p.north_m <= a.north_m.max(b.north_m)
}

pub(crate) fn segments_intersect(a: &LocalPoint, b: &LocalPoint, c: &LocalPoint, d: &LocalPoint) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn first_self_intersection(v: &[LocalPoint]) -> Option<(usize, usize)> {
    let n = v.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(&v[i], &v[(i + 1) % n], &v[j], &v[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyParams {
    pub track_spacing_m: f64,
    pub altitude_agl_m: f64,
    pub speed_mps: f64,
    pub sweep_heading_deg: f64,
    /// Fixed penalty for each track-to-track transition.
    pub turn_time_s: f64,
}

impl Default for SurveyParams {
    fn default() -> Self {
        Self {
            track_spacing_m: 3.93,
            altitude_agl_m: 10.0,
            speed_mps: 3.0,
            sweep_heading_deg: 0.0,
            turn_time_s: 3.0,
        }
    }
}

impl SurveyParams {
    pub fn validate(&self) -> Result<(), MissionError> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(MissionError::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.track_spacing_m, "track_spacing_m")?;
        positive(self.altitude_agl_m, "altitude_agl_m")?;
        positive(self.speed_mps, "speed_mps")?;
        if !self.sweep_heading_deg.is_finite() {
            return Err(MissionError::InvalidParameter("sweep_heading_deg must be finite".into()));
        }
        if !(self.turn_time_s >= 0.0 && self.turn_time_s.is_finite()) {
            return Err(MissionError::InvalidParameter("turn_time_s must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track {
    /// Index of the parallel sweep line this segment lies on.
    pub line_index: usize,
    pub start: LocalPoint,
    pub end: LocalPoint,
    pub heading_deg: f64,
}

impl Track {
    pub fn length_m(&self) -> f64 {
        self.start.distance(&self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyPlan {
    pub frame: LocalFrame,
    pub tracks: Vec<Track>,
    pub altitude_agl_m: f64,
    pub speed_mps: f64,
    pub track_spacing_m: f64,
    pub turn_time_s: f64,
}

impl SurveyPlan {
    pub fn track_length_m(&self) -> f64 {
        self.tracks.iter().map(Track::length_m).sum()
    }

    /// Straight cross-over legs between consecutive tracks.
    pub fn connector_length_m(&self) -> f64 {
        self.tracks
            .windows(2)
            .map(|w| w[0].end.distance(&w[1].start))
            .sum()
    }

    pub fn total_path_m(&self) -> f64 {
        self.track_length_m() + self.connector_length_m()
    }

    pub fn duration_s(&self) -> f64 {
        let turns = self.tracks.len().saturating_sub(1) as f64;
        self.total_path_m() / self.speed_mps + self.turn_time_s * turns
    }

    /// Mission time at which each track begins.
    pub fn track_start_times(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.tracks.len());
        let mut dist = 0.0;
        for (i, t) in self.tracks.iter().enumerate() {
            if i > 0 {
                dist += self.tracks[i - 1].end.distance(&t.start);
            }
            out.push(dist / self.speed_mps + self.turn_time_s * i as f64);
            dist += t.length_m();
        }
        out
    }
}

pub fn plan_coverage(
    frame: LocalFrame,
    field: &FieldPolygon,
    params: &SurveyParams,
) -> Result<SurveyPlan, MissionError> {
    params.validate()?;
    let spacing = params.track_spacing_m;
    let area = field.area_m2();
    let min_area = spacing * spacing;
    if area <= 0.0 || area < min_area {
        return Err(MissionError::DegeneratePolygon {
            area_m2: area,
            min_m2: min_area,
        });
    }
    let along = heading_unit(params.sweep_heading_deg);
    let across = right_unit(params.sweep_heading_deg);
    // (u, v) = (along, across) coordinates of each vertex
    let uv: Vec<(f64, f64)> = field
        .vertices()
        .iter()
        .map(|p| (p.dot(&along), p.dot(&across)))
        .collect();
    let v_min = uv.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let v_max = uv.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let extent = v_max - v_min;
    let line_count = ((extent / spacing) - 1e-9).ceil().max(1.0) as usize;
    let inset = (extent - (line_count - 1) as f64 * spacing) / 2.0;

    let to_local = |u: f64, v: f64| along.scale(u).add(&across.scale(v));
    let mut tracks = Vec::new();
    for k in 0..line_count {
        let v = v_min + inset + k as f64 * spacing;
        let mut crossings = clip_line(&uv, v);
        let forward = k % 2 == 0;
        let heading = if forward {
            normalize_heading(params.sweep_heading_deg)
        } else {
            normalize_heading(params.sweep_heading_deg + 180.0)
        };
        let mut spans: Vec<(f64, f64)> = crossings
            .chunks_exact(2)
            .map(|c| (c[0], c[1]))
            .filter(|(a, b)| b - a > 1e-9)
            .collect();
        if !forward {
            spans.reverse();
            for s in spans.iter_mut() {
                *s = (s.1, s.0);
            }
        }
        crossings.clear();
        for (u0, u1) in spans {
            tracks.push(Track {
                line_index: k,
                start: to_local(u0, v),
                end: to_local(u1, v),
                heading_deg: heading,
            });
        }
    }
    Ok(SurveyPlan {
        frame,
        tracks,
        altitude_agl_m: params.altitude_agl_m,
        speed_mps: params.speed_mps,
        track_spacing_m: spacing,
        turn_time_s: params.turn_time_s,
    })
}

/// Sorted along-coordinates where the line `across == v` crosses the ring.
fn clip_line(uv: &[(f64, f64)], v: f64) -> Vec<f64> {
    let n = uv.len();
    let mut us = Vec::new();
    for i in 0..n {
        let (ua, va) = uv[i];
        let (ub, vb) = uv[(i + 1) % n];
        if (va <= v) != (vb <= v) {
            let t = (v - va) / (vb - va);
            us.push(ua + t * (ub - ua));
        }
    }
    us.sort_by(f64::total_cmp);
    us
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureEvent {
    pub image_id: u32,
    pub time_s: f64,
    pub track_index: usize,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSchedule {
    pub overlap: f64,
    pub stride_m: f64,
    pub interval_s: f64,
    pub events: Vec<CaptureEvent>,
}

impl CaptureSchedule {
    pub fn get(&self, image_id: u32) -> Option<&CaptureEvent> {
        // ids are dense and assigned in order
        self.events
            .get(image_id as usize)
            .filter(|e| e.image_id == image_id)
            .or_else(|| self.events.iter().find(|e| e.image_id == image_id))
    }
}

pub fn capture_schedule(
    plan: &SurveyPlan,
    cam: &CameraModel,
    overlap: f64,
) -> Result<CaptureSchedule, MissionError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(MissionError::InvalidParameter(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    cam.validate()?;
    let stride = cam.footprint_length_m(plan.altitude_agl_m) * (1.0 - overlap);
    let interval = stride / plan.speed_mps;
    let starts = plan.track_start_times();
    let mut events = Vec::new();
    for (ti, (track, t0)) in plan.tracks.iter().zip(starts).enumerate() {
        let len = track.length_m();
        let regular = (len / stride + 1e-9).floor() as usize + 1;
        let mut offsets: Vec<f64> = (0..regular).map(|k| k as f64 * stride).collect();
        // closing capture so the footprint reaches the track end
        if len - offsets[regular - 1] > 1e-9 * stride.max(1.0) {
            offsets.push(len);
        }
        let dir = track.end.sub(&track.start).scale(1.0 / len);
        for s in offsets {
            let pos = track.start.add(&dir.scale(s));
            events.push(CaptureEvent {
                image_id: events.len() as u32,
                time_s: t0 + s / plan.speed_mps,
                track_index: ti,
                pose: Pose {
                    position: plan.frame.to_geo(pos)?,
                    altitude_agl_m: plan.altitude_agl_m,
                    heading_deg: track.heading_deg,
                },
            });
        }
    }
    Ok(CaptureSchedule {
        overlap,
        stride_m: stride,
        interval_s: interval,
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyEstimate {
    pub track_count: usize,
    pub total_path_m: f64,
    pub duration_s: f64,
    pub image_count: usize,
    pub capture_interval_s: f64,
    pub data_volume_bits: f64,
    pub mean_capture_rate_bps: f64,
    pub fpv_rate_bps: f64,
}

pub fn survey_estimate(
    plan: &SurveyPlan,
    schedule: &CaptureSchedule,
    image_size_bits: f64,
    fpv_rate_bps: f64,
) -> SurveyEstimate {
    let image_count = schedule.events.len();
    SurveyEstimate {
        track_count: plan.tracks.len(),
        total_path_m: plan.total_path_m(),
        duration_s: plan.duration_s(),
        image_count,
        capture_interval_s: schedule.interval_s,
        data_volume_bits: image_count as f64 * image_size_bits,
        mean_capture_rate_bps: image_size_bits / schedule.interval_s,
        fpv_rate_bps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{footprint, footprint_contains, GeoPoint};

    fn frame() -> LocalFrame {
        LocalFrame::new(GeoPoint::new(49.4, 7.75).unwrap())
    }

    fn square(side: f64) -> FieldPolygon {
        FieldPolygon::rectangle(LocalPoint::ORIGIN, side, side).unwrap()
    }

    fn params(spacing: f64) -> SurveyParams {
        SurveyParams {
            track_spacing_m: spacing,
            ..SurveyParams::default()
        }
    }

    #[test]
    fn hectare_square_gives_26_tracks() {
        let plan = plan_coverage(frame(), &square(100.0), &params(3.93)).unwrap();
        assert_eq!(plan.tracks.len(), 26);
        for t in &plan.tracks {
            assert!((t.length_m() - 100.0).abs() < 1e-9);
        }
        for w in plan.tracks.windows(2) {
            let gap = (w[1].start.east_m - w[0].start.east_m).abs();
            assert!((gap - 3.93).abs() < 1e-9);
            assert!((w[0].heading_deg - w[1].heading_deg).abs() == 180.0);
        }
    }

    #[test]
    fn wide_spacing_gives_single_track() {
        let plan = plan_coverage(frame(), &square(10.0), &params(3.5)).unwrap();
        assert_eq!(plan.tracks.len(), 3);
        let plan = plan_coverage(frame(), &square(3.0), &params(3.0)).unwrap();
        assert_eq!(plan.tracks.len(), 1);
        assert!((plan.tracks[0].start.east_m - 1.5).abs() < 1e-12);
    }

    #[test]
    fn reversed_sweep_preserves_length() {
        let field = FieldPolygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(80.0, 5.0),
            LocalPoint::new(70.0, 60.0),
            LocalPoint::new(10.0, 45.0),
        ])
        .unwrap();
        let mut p = params(4.0);
        p.sweep_heading_deg = 30.0;
        let a = plan_coverage(frame(), &field, &p).unwrap();
        p.sweep_heading_deg = 210.0;
        let b = plan_coverage(frame(), &field, &p).unwrap();
        assert!((a.track_length_m() - b.track_length_m()).abs() < 1e-6);
        assert!((a.tracks[0].heading_deg - 30.0).abs() < 1e-9);
        assert!((b.tracks[0].heading_deg - 210.0).abs() < 1e-9);
    }

    #[test]
    fn concave_field_splits_tracks() {
        // U shape open to the north
        let field = FieldPolygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(30.0, 0.0),
            LocalPoint::new(30.0, 30.0),
            LocalPoint::new(20.0, 30.0),
            LocalPoint::new(20.0, 10.0),
            LocalPoint::new(10.0, 10.0),
            LocalPoint::new(10.0, 30.0),
            LocalPoint::new(0.0, 30.0),
        ])
        .unwrap();
        let mut p = params(3.0);
        p.sweep_heading_deg = 90.0; // tracks run east-west
        let plan = plan_coverage(frame(), &field, &p).unwrap();
        let split_lines = plan
            .tracks
            .windows(2)
            .filter(|w| w[0].line_index == w[1].line_index)
            .count();
        assert!(split_lines > 0);
        for t in &plan.tracks {
            let mid = t.start.add(&t.end).scale(0.5);
            assert!(field.contains(&mid));
        }
    }

    #[test]
    fn degenerate_and_invalid_polygons() {
        let tiny = square(2.0);
        assert!(matches!(
            plan_coverage(frame(), &tiny, &params(3.93)),
            Err(MissionError::DegeneratePolygon { .. })
        ));
        let collinear = FieldPolygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(1.0, 0.0),
            LocalPoint::new(2.0, 0.0),
        ]);
        assert!(collinear.is_err());
        let bowtie = FieldPolygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(10.0, 10.0),
            LocalPoint::new(10.0, 0.0),
            LocalPoint::new(0.0, 10.0),
        ]);
        assert!(matches!(bowtie, Err(MissionError::InvalidPolygon(_))));
        assert!(plan_coverage(frame(), &square(10.0), &params(0.0)).is_err());
    }

    #[test]
    fn clockwise_input_normalised() {
        let cw = FieldPolygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(0.0, 10.0),
            LocalPoint::new(10.0, 10.0),
            LocalPoint::new(10.0, 0.0),
        ])
        .unwrap();
        assert!((cw.area_m2() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn default_camera_interval_is_820ms() {
        let plan = plan_coverage(frame(), &square(100.0), &params(3.93)).unwrap();
        let sched = capture_schedule(&plan, &CameraModel::default(), 0.1).unwrap();
        assert!((sched.stride_m - 2.46).abs() < 1e-12);
        assert!((sched.interval_s - 0.82).abs() < 1e-12);
        let on_first = sched.events.iter().filter(|e| e.track_index == 0).count();
        // floor(100 / 2.46) + 1 regular captures plus the closing one at 100 m
        assert_eq!(on_first, 42);
        assert_eq!(sched.events.len(), 26 * 42);
        assert_eq!(sched.events[0].time_s, 0.0);
    }

    #[test]
    fn zero_overlap_stride_is_footprint() {
        let plan = plan_coverage(frame(), &square(20.0), &params(3.93)).unwrap();
        let cam = CameraModel::default();
        let sched = capture_schedule(&plan, &cam, 0.0).unwrap();
        assert!((sched.stride_m - cam.footprint_length_m(10.0)).abs() < 1e-12);
        assert!(capture_schedule(&plan, &cam, 1.0).is_err());
        assert!(capture_schedule(&plan, &cam, -0.1).is_err());
    }

    #[test]
    fn estimate_reproduces_capture_rate() {
        let plan = plan_coverage(frame(), &square(100.0), &params(3.93)).unwrap();
        let sched = capture_schedule(&plan, &CameraModel::default(), 0.1).unwrap();
        let est = survey_estimate(&plan, &sched, 192e6, 6e6);
        assert!((est.mean_capture_rate_bps / 1e6 - 234.146).abs() < 1e-3);
        // 2600 m of tracks + 25 crossings of 3.93 m at 3 m/s, plus 25 turns of 3 s
        let expected = (2600.0 + 25.0 * 3.93) / 3.0 + 75.0;
        assert!((est.duration_s - expected).abs() < 1e-9);
        assert_eq!(est.data_volume_bits, 192e6 * est.image_count as f64);
    }

    #[test]
    fn empty_schedule_has_zero_volume() {
        let plan = plan_coverage(frame(), &square(20.0), &params(3.93)).unwrap();
        let mut sched = capture_schedule(&plan, &CameraModel::default(), 0.1).unwrap();
        sched.events.clear();
        let est = survey_estimate(&plan, &sched, 192e6, 6e6);
        assert_eq!(est.data_volume_bits, 0.0);
        assert_eq!(est.image_count, 0);
    }

    #[test]
    fn captures_spaced_by_stride() {
        let plan = plan_coverage(frame(), &square(100.0), &params(3.93)).unwrap();
        let cam = CameraModel::default();
        let sched = capture_schedule(&plan, &cam, 0.1).unwrap();
        let first: Vec<_> = sched.events.iter().filter(|e| e.track_index == 0).collect();
        let pts: Vec<_> = first
            .iter()
            .map(|e| plan.frame.to_local(e.pose.position).unwrap())
            .collect();
        for w in pts.windows(2).take(pts.len() - 2) {
            assert!((w[0].distance(&w[1]) - 2.46).abs() < 1e-6);
        }
        let n = pts.len();
        assert!(pts[n - 2].distance(&pts[n - 1]) < 2.46);
        assert!((pts[n - 1].distance(&plan.tracks[0].end)).abs() < 1e-6);
        // exact multiple: no closing capture
        let plan = plan_coverage(frame(), &square(24.6), &params(3.93)).unwrap();
        let sched = capture_schedule(&plan, &cam, 0.1).unwrap();
        assert_eq!(sched.events.iter().filter(|e| e.track_index == 0).count(), 11);
    }

    #[test]
    fn timestamps_strictly_increase() {
        let plan = plan_coverage(frame(), &square(60.0), &params(3.93)).unwrap();
        let sched = capture_schedule(&plan, &CameraModel::default(), 0.1).unwrap();
        for w in sched.events.windows(2) {
            assert!(w[1].time_s > w[0].time_s);
        }
        let last = sched.events.last().unwrap();
        assert!(last.time_s <= plan.duration_s() + 1e-9);
    }

    #[test]
    fn translation_invariant_track_length() {
        let f = square(73.0);
        let a = plan_coverage(frame(), &f, &params(3.93)).unwrap();
        let b = plan_coverage(frame(), &f.translated(LocalPoint::new(412.5, -97.25)), &params(3.93)).unwrap();
        assert!((a.track_length_m() - b.track_length_m()).abs() < 1e-6);
    }

    #[test]
    fn footprints_cover_field() {
        // Monte-Carlo union-of-footprints check at spacing = width * (1 - overlap)
        use rand::{Rng, SeedableRng};
        let cam = CameraModel::default();
        let spacing = cam.footprint_width_m(10.0) * 0.9;
        let field = FieldPolygon::new(vec![
            LocalPoint::new(0.0, 0.0),
            LocalPoint::new(60.0, 4.0),
            LocalPoint::new(55.0, 50.0),
            LocalPoint::new(-5.0, 40.0),
        ])
        .unwrap();
        let mut p = params(spacing);
        p.sweep_heading_deg = 15.0;
        let plan = plan_coverage(frame(), &field, &p).unwrap();
        let sched = capture_schedule(&plan, &cam, 0.1).unwrap();
        let quads: Vec<_> = sched
            .events
            .iter()
            .map(|e| footprint(&plan.frame, &e.pose, &cam).unwrap())
            .collect();
        let (lo, hi) = field.bounds();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (mut inside, mut covered) = (0, 0);
        while inside < 20_000 {
            let q = LocalPoint::new(
                rng.random_range(lo.east_m..hi.east_m),
                rng.random_range(lo.north_m..hi.north_m),
            );
            if !field.contains(&q) {
                continue;
            }
            inside += 1;
            if quads.iter().any(|f| footprint_contains(f, &q)) {
                covered += 1;
            }
        }
        let frac = covered as f64 / inside as f64;
        assert!(frac >= 0.99, "coverage {frac}");
    }
}
