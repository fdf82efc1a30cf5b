//! Ground truth, detector outcome model and detection post-processing.
//!
//! The aerial detector is not simulated at pixel level. A plant whose centre
//! falls inside a capture footprint is detected with a fixed probability and
//! yields a box around its projected pixel position, perturbed by position
//! and size noise. False positives are scattered uniformly per image.

use crate::geo::{ground_to_pixel, CameraModel, GeoError, LocalFrame, LocalPoint, PixelCoord};
use crate::mission::{CaptureSchedule, FieldPolygon};
use crate::rng::{self, SimRng};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Smallest plant (and false-positive) diameter the generators produce.
pub const MIN_DIAMETER_M: f64 = 0.02;

const STREAM_DETECT: u64 = 0xD7EC;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("box {box_id} references unknown image {image_id}")]
    UnknownImageId { box_id: u32, image_id: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed target file: {0}")]
    Parse(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub id: u32,
    pub position: LocalPoint,
    pub diameter_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub plants: Vec<Plant>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantModel {
    pub density_per_ha: f64,
    pub diameter_mean_m: f64,
    pub diameter_sigma_m: f64,
    /// Exact number of plants; replaces the Poisson draw when set.
    pub count: Option<u32>,
}

impl Default for PlantModel {
    fn default() -> Self {
        Self {
            density_per_ha: 100.0,
            diameter_mean_m: 0.1,
            diameter_sigma_m: 0.03,
            count: None,
        }
    }
}

impl PlantModel {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.density_per_ha >= 0.0 && self.density_per_ha.is_finite()) {
            return Err(FieldError::InvalidParameter("density_per_ha must be >= 0".into()));
        }
        if !(self.diameter_mean_m > 0.0 && self.diameter_mean_m.is_finite()) {
            return Err(FieldError::InvalidParameter("diameter_mean_m must be positive".into()));
        }
        if !(self.diameter_sigma_m >= 0.0 && self.diameter_sigma_m.is_finite()) {
            return Err(FieldError::InvalidParameter("diameter_sigma_m must be >= 0".into()));
        }
        Ok(())
    }
}

fn poisson(rng: &mut SimRng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // Poisson::new only fails for non-positive or non-finite means
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Poisson(density x area) plants, uniform in the polygon, discs not overlapping.
/// A plant that finds no free spot after 10 000 tries is dropped.
pub fn generate_field(
    seed: u64,
    polygon: &FieldPolygon,
    model: &PlantModel,
) -> Result<GroundTruth, FieldError> {
    model.validate()?;
    let mut rng = rng::stream(seed, 0xF1E1D);
    let area_ha = polygon.area_m2() / 10_000.0;
    let count = match model.count {
        Some(n) => u64::from(n),
        None => poisson(&mut rng, model.density_per_ha * area_ha),
    };
    let (lo, hi) = polygon.bounds();
    let mut plants: Vec<Plant> = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let diameter = rng::truncated_normal(
            &mut rng,
            model.diameter_mean_m,
            model.diameter_sigma_m,
            MIN_DIAMETER_M,
        );
        for _ in 0..10_000 {
            let p = LocalPoint::new(
                rng.random_range(lo.east_m..=hi.east_m),
                rng.random_range(lo.north_m..=hi.north_m),
            );
            if !polygon.contains(&p) {
                continue;
            }
            let clear = plants
                .iter()
                .all(|q| q.position.distance(&p) >= (q.diameter_m + diameter) / 2.0);
            if clear {
                plants.push(Plant {
                    id: plants.len() as u32,
                    position: p,
                    diameter_m: diameter,
                });
                break;
            }
        }
    }
    Ok(GroundTruth { plants })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub detection_prob: f64,
    pub false_positives_per_image: f64,
    pub position_noise_sigma_m: f64,
    /// Relative sigma applied to box side lengths.
    pub bbox_size_noise: f64,
    pub fp_diameter_mean_m: f64,
    pub fp_diameter_sigma_m: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            detection_prob: 0.9,
            false_positives_per_image: 0.05,
            position_noise_sigma_m: 0.03,
            bbox_size_noise: 0.1,
            fp_diameter_mean_m: 0.1,
            fp_diameter_sigma_m: 0.03,
        }
    }
}

impl DetectorModel {
    /// Noise-free detector with full recall and no false positives.
    pub fn perfect() -> Self {
        Self {
            detection_prob: 1.0,
            false_positives_per_image: 0.0,
            position_noise_sigma_m: 0.0,
            bbox_size_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(FieldError::InvalidParameter("detection_prob must be in [0, 1]".into()));
        }
        for (v, name) in [
            (self.false_positives_per_image, "false_positives_per_image"),
            (self.position_noise_sigma_m, "position_noise_sigma_m"),
            (self.bbox_size_noise, "bbox_size_noise"),
            (self.fp_diameter_sigma_m, "fp_diameter_sigma_m"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FieldError::InvalidParameter(format!("{name} must be >= 0")));
            }
        }
        if !(self.fp_diameter_mean_m > 0.0 && self.fp_diameter_mean_m.is_finite()) {
            return Err(FieldError::InvalidParameter("fp_diameter_mean_m must be positive".into()));
        }
        Ok(())
    }
}

/// Detector output box. Extents may overhang the frame; the centre never does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub id: u32,
    pub image_id: u32,
    pub center_px: PixelCoord,
    pub width_px: f64,
    pub height_px: f64,
    pub score: f64,
    /// Ground sample distance of the source image.
    pub gsd_m_per_px: f64,
    /// Ground-truth label, `None` for a false positive. Simulation metadata only.
    pub plant_id: Option<u32>,
}

impl BBox {
    pub fn ground_area_m2(&self) -> f64 {
        self.width_px * self.height_px * self.gsd_m_per_px * self.gsd_m_per_px
    }

    pub fn ground_max_side_m(&self) -> f64 {
        self.width_px.max(self.height_px) * self.gsd_m_per_px
    }

    pub fn ground_diameter_m(&self) -> f64 {
        (self.width_px + self.height_px) / 2.0 * self.gsd_m_per_px
    }
}

pub fn simulate_detections(
    truth: &GroundTruth,
    schedule: &CaptureSchedule,
    frame: &LocalFrame,
    cam: &CameraModel,
    detector: &DetectorModel,
    seed: u64,
) -> Result<Vec<BBox>, FieldError> {
    detector.validate()?;
    let per_image: Result<Vec<Vec<BBox>>, FieldError> = schedule
        .events
        .par_iter()
        .map(|ev| {
            let mut rng = rng::substream(seed, STREAM_DETECT, ev.image_id as u64);
            let gsd = cam.gsd_at(ev.pose.altitude_agl_m);
            let mut out = Vec::new();
            for plant in &truth.plants {
                let px = ground_to_pixel(frame, &ev.pose, cam, plant.position)?;
                if !cam.contains(&px) {
                    continue;
                }
                // fixed draw order per visible plant keeps streams aligned
                let hit = rng.random::<f64>() < detector.detection_prob;
                let dx = rng::gaussian(&mut rng, detector.position_noise_sigma_m) / gsd;
                let dy = rng::gaussian(&mut rng, detector.position_noise_sigma_m) / gsd;
                let sw = rng::gaussian(&mut rng, detector.bbox_size_noise);
                let sh = rng::gaussian(&mut rng, detector.bbox_size_noise);
                let score = rng.random_range(0.5..1.0);
                if !hit {
                    continue;
                }
                let center = PixelCoord::new(px.x + dx, px.y + dy);
                if !cam.contains(&center) {
                    continue;
                }
                let side = plant.diameter_m / gsd;
                out.push(BBox {
                    id: 0,
                    image_id: ev.image_id,
                    center_px: center,
                    width_px: (side * (1.0 + sw)).max(1.0),
                    height_px: (side * (1.0 + sh)).max(1.0),
                    score,
                    gsd_m_per_px: gsd,
                    plant_id: Some(plant.id),
                });
            }
            let fp_count = poisson(&mut rng, detector.false_positives_per_image);
            for _ in 0..fp_count {
                let center = PixelCoord::new(
                    rng.random_range(0.0..cam.width_px as f64),
                    rng.random_range(0.0..cam.height_px as f64),
                );
                let d = rng::truncated_normal(
                    &mut rng,
                    detector.fp_diameter_mean_m,
                    detector.fp_diameter_sigma_m,
                    MIN_DIAMETER_M,
                );
                let sw = rng::gaussian(&mut rng, detector.bbox_size_noise);
                let sh = rng::gaussian(&mut rng, detector.bbox_size_noise);
                let side = d / gsd;
                out.push(BBox {
                    id: 0,
                    image_id: ev.image_id,
                    center_px: center,
                    width_px: (side * (1.0 + sw)).max(1.0),
                    height_px: (side * (1.0 + sh)).max(1.0),
                    score: rng.random_range(0.3..0.9),
                    gsd_m_per_px: gsd,
                    plant_id: None,
                });
            }
            Ok(out)
        })
        .collect();
    let mut boxes: Vec<BBox> = per_image?.into_iter().flatten().collect();
    for (i, b) in boxes.iter_mut().enumerate() {
        b.id = i as u32;
    }
    Ok(boxes)
}

/// Indices of plants whose centre lies inside at least one capture footprint.
pub fn visible_plants(
    truth: &GroundTruth,
    schedule: &CaptureSchedule,
    frame: &LocalFrame,
    cam: &CameraModel,
) -> Result<Vec<bool>, FieldError> {
    let mut seen = vec![false; truth.plants.len()];
    for ev in &schedule.events {
        for (i, plant) in truth.plants.iter().enumerate() {
            if !seen[i] && cam.contains(&ground_to_pixel(frame, &ev.pose, cam, plant.position)?) {
                seen[i] = true;
            }
        }
    }
    Ok(seen)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    pub min_area_m2: f64,
    /// Minimum ground area divided by the longer ground side.
    pub min_area_to_length_m: f64,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            min_area_m2: 0.005,
            min_area_to_length_m: 0.04,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.min_area_m2 >= 0.0 && self.min_area_to_length_m >= 0.0) {
            return Err(FieldError::InvalidParameter("filter thresholds must be >= 0".into()));
        }
        Ok(())
    }

    pub fn accepts(&self, b: &BBox) -> bool {
        let area = b.ground_area_m2();
        area >= self.min_area_m2 && area / b.ground_max_side_m() >= self.min_area_to_length_m
    }
}

pub fn filter_boxes(boxes: &[BBox], thresholds: &FilterThresholds) -> Vec<BBox> {
    boxes.iter().filter(|b| thresholds.accepts(b)).copied().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: u32,
    pub position: LocalPoint,
    /// Mean ground size of the supporting boxes.
    pub diameter_m: f64,
    pub support: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetList {
    pub targets: Vec<Target>,
}

impl TargetList {
    pub fn positions(&self) -> Vec<LocalPoint> {
        self.targets.iter().map(|t| t.position).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("east,north,support_count\n");
        for t in &self.targets {
            let _ = writeln!(s, "{},{},{}", t.position.east_m, t.position.north_m, t.support.len());
        }
        s
    }

    /// Reads `east,north[,support_count]` rows; a non-numeric first row is a header.
    pub fn from_csv(text: &str) -> Result<TargetList, FieldError> {
        let mut targets = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let east = cols.first().and_then(|c| c.parse::<f64>().ok());
            let north = cols.get(1).and_then(|c| c.parse::<f64>().ok());
            match (east, north) {
                (Some(e), Some(n)) if e.is_finite() && n.is_finite() => targets.push(Target {
                    id: targets.len() as u32,
                    position: LocalPoint::new(e, n),
                    diameter_m: 0.0,
                    support: Vec::new(),
                }),
                _ if lineno == 0 => continue,
                _ => {
                    return Err(FieldError::Parse(format!(
                        "line {}: expected east,north",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(TargetList { targets })
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes the root, independent of call order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); self.parent.len()];
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root[r].push(i);
        }
        by_root.into_iter().filter(|g| !g.is_empty()).collect()
    }
}

/// Union all point pairs closer than `radius` (inclusive), using a grid hash.
fn link_within(points: &[LocalPoint], radius: f64, set: &mut DisjointSet) {
    let cell = radius.max(1e-6);
    let key = |p: &LocalPoint| ((p.east_m / cell).floor() as i64, (p.north_m / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    for (i, p) in points.iter().enumerate() {
        let (cx, cy) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = grid.get(&(cx + dx, cy + dy)) {
                    for &j in bucket {
                        if j > i && p.distance(&points[j]) <= radius {
                            set.union(i, j);
                        }
                    }
                }
            }
        }
    }
}

fn centroid(points: &[LocalPoint], members: &[usize]) -> LocalPoint {
    let k = members.len() as f64;
    let (mut e, mut n) = (0.0, 0.0);
    for &m in members {
        e += points[m].east_m;
        n += points[m].north_m;
    }
    LocalPoint::new(e / k, n / k)
}

/// Project box midpoints to the ground and merge duplicates.
///
/// Boxes are linked when their ground midpoints are within `merge_radius`
/// (single linkage); clusters whose centroids still fall within the radius
/// are merged until none do. The result does not depend on input order.
pub fn georef_and_merge(
    boxes: &[BBox],
    schedule: &CaptureSchedule,
    frame: &LocalFrame,
    cam: &CameraModel,
    merge_radius_m: f64,
) -> Result<TargetList, FieldError> {
    if !(merge_radius_m >= 0.0 && merge_radius_m.is_finite()) {
        return Err(FieldError::InvalidParameter("merge_radius_m must be >= 0".into()));
    }
    let mut sorted: Vec<&BBox> = boxes.iter().collect();
    sorted.sort_by_key(|b| b.id);
    let mut ground = Vec::with_capacity(sorted.len());
    for b in &sorted {
        let ev = schedule.get(b.image_id).ok_or(FieldError::UnknownImageId {
            box_id: b.id,
            image_id: b.image_id,
        })?;
        ground.push(frame.pixel_to_ground(&ev.pose, cam, b.center_px)?);
    }

    let mut set = DisjointSet::new(ground.len());
    link_within(&ground, merge_radius_m, &mut set);
    let mut clusters = set.groups();
    loop {
        let centroids: Vec<LocalPoint> = clusters.iter().map(|c| centroid(&ground, c)).collect();
        let mut cset = DisjointSet::new(clusters.len());
        link_within(&centroids, merge_radius_m, &mut cset);
        let next: Vec<Vec<usize>> = cset
            .groups()
            .iter()
            .map(|g| {
                let mut members: Vec<usize> = g.iter().flat_map(|&c| clusters[c].iter().copied()).collect();
                members.sort_unstable();
                members
            })
            .collect();
        let merged = next.len() < clusters.len();
        clusters = next;
        if !merged {
            break;
        }
    }
    clusters.sort_by_key(|c| c[0]);

    let targets = clusters
        .iter()
        .enumerate()
        .map(|(i, members)| Target {
            id: i as u32,
            position: centroid(&ground, members),
            diameter_m: members.iter().map(|&m| sorted[m].ground_diameter_m()).sum::<f64>()
                / members.len() as f64,
            support: members.iter().map(|&m| sorted[m].id).collect(),
        })
        .collect();
    Ok(TargetList { targets })
}
