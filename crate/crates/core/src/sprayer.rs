//! Sprayer robot: boom geometry, valve timing, herbicide accounting and the
//! drive along the route.
//!
//! Lateral offsets are measured to the right of the direction of travel.
//! Nozzle 0 is the leftmost one.

use crate::geo::{heading_of, heading_unit, right_unit, LocalPoint};
use crate::rng::{self, SimRng};
use crate::route::Tour;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Highest speed the robot sprays at.
pub const MAX_SPRAY_SPEED_MPS: f64 = 0.5;

const STREAM_VERIFY: u64 = 0x5B7A;
const TANK_EPS_ML: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SprayError {
    #[error("invalid sprayer configuration: {0}")]
    InvalidConfig(String),
    #[error("plant at lateral offset {offset_m} m is outside the boom")]
    PlantOutsideBoom { offset_m: f64 },
    #[error("plant {plant_id} starts {along_m} m before the pass")]
    NegativeTime { plant_id: u32, along_m: f64 },
    #[error("tank is empty at mission start")]
    EmptyTankAtStart,
    #[error("tour does not match the target list: {0}")]
    TourMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoomConfig {
    pub nozzle_count: usize,
    pub working_width_m: f64,
    pub nozzle_spray_width_m: f64,
    /// Nominal overlap of neighbouring fans; informational.
    pub nozzle_overlap_m: f64,
    pub working_height_m: f64,
    pub flow_ml_per_s: f64,
    pub pressure_bar: f64,
    pub lead_m: f64,
    pub lag_m: f64,
    pub valve_latency_s: f64,
}

impl Default for BoomConfig {
    fn default() -> Self {
        Self {
            nozzle_count: 16,
            working_width_m: 1.8,
            nozzle_spray_width_m: 0.15,
            nozzle_overlap_m: 0.01,
            working_height_m: 0.25,
            flow_ml_per_s: 15.0,
            pressure_bar: 3.0,
            lead_m: 0.02,
            lag_m: 0.02,
            valve_latency_s: 0.0,
        }
    }
}

impl BoomConfig {
    fn check_geometry(&self) -> Result<(), SprayError> {
        if self.nozzle_count == 0 {
            return Err(SprayError::InvalidConfig("nozzle_count must be >= 1".into()));
        }
        for (v, name) in [
            (self.working_width_m, "working_width_m"),
            (self.nozzle_spray_width_m, "nozzle_spray_width_m"),
            (self.working_height_m, "working_height_m"),
            (self.flow_ml_per_s, "flow_ml_per_s"),
            (self.pressure_bar, "pressure_bar"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SprayError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        for (v, name) in [
            (self.nozzle_overlap_m, "nozzle_overlap_m"),
            (self.lead_m, "lead_m"),
            (self.lag_m, "lag_m"),
            (self.valve_latency_s, "valve_latency_s"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SprayError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Full check for a buildable boom: 6, 11 or 16 nozzles.
    pub fn validate(&self) -> Result<(), SprayError> {
        self.check_geometry()?;
        if ![6, 11, 16].contains(&self.nozzle_count) {
            return Err(SprayError::InvalidConfig(format!(
                "nozzle_count must be 6, 11 or 16, got {}",
                self.nozzle_count
            )));
        }
        Ok(())
    }

    pub fn pitch_m(&self) -> f64 {
        self.working_width_m / self.nozzle_count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NozzleInterval {
    pub id: usize,
    pub center_m: f64,
    pub lo_m: f64,
    pub hi_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeometryWarning {
    /// Fans narrower than the pitch leave uncovered strips this wide.
    InconsistentGeometry { gap_m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoomLayout {
    pub pitch_m: f64,
    pub nozzles: Vec<NozzleInterval>,
    pub warning: Option<GeometryWarning>,
}

impl BoomLayout {
    pub fn half_width_m(&self) -> f64 {
        self.pitch_m * self.nozzles.len() as f64 / 2.0
    }

    /// Nozzle whose centre is closest to `offset_m`; lower id on ties.
    pub fn nearest_nozzle(&self, offset_m: f64) -> &NozzleInterval {
        self.nozzles
            .iter()
            .min_by(|a, b| {
                (a.center_m - offset_m)
                    .abs()
                    .total_cmp(&(b.center_m - offset_m).abs())
                    .then(a.id.cmp(&b.id))
            })
            .expect("layout has at least one nozzle")
    }
}

pub fn boom_layout(cfg: &BoomConfig) -> Result<BoomLayout, SprayError> {
    cfg.check_geometry()?;
    let n = cfg.nozzle_count;
    let pitch = cfg.pitch_m();
    let half = cfg.nozzle_spray_width_m / 2.0;
    let nozzles = (0..n)
        .map(|i| {
            let center = (i as f64 - (n as f64 - 1.0) / 2.0) * pitch;
            NozzleInterval {
                id: i,
                center_m: center,
                lo_m: center - half,
                hi_m: center + half,
            }
        })
        .collect();
    let warning = (n > 1 && cfg.nozzle_spray_width_m < pitch).then_some(GeometryWarning::InconsistentGeometry {
        gap_m: pitch - cfg.nozzle_spray_width_m,
    });
    Ok(BoomLayout {
        pitch_m: pitch,
        nozzles,
        warning,
    })
}

/// Nozzles whose fan overlaps the plant's lateral extent by a positive length.
pub fn assign_nozzles(layout: &BoomLayout, offset_m: f64, diameter_m: f64) -> Result<Vec<usize>, SprayError> {
    let (lo, hi) = (offset_m - diameter_m / 2.0, offset_m + diameter_m / 2.0);
    let ids: Vec<usize> = layout
        .nozzles
        .iter()
        .filter(|nz| nz.lo_m < hi && nz.hi_m > lo)
        .map(|nz| nz.id)
        .collect();
    if ids.is_empty() || !offset_m.is_finite() {
        return Err(SprayError::PlantOutsideBoom { offset_m });
    }
    Ok(ids)
}

/// Plant in pass coordinates: `along_m` from the pass start, `across_m` to the right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassPlant {
    pub plant_id: u32,
    pub along_m: f64,
    pub across_m: f64,
    pub diameter_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValveEvent {
    pub nozzle_id: usize,
    pub t_open_s: f64,
    pub t_close_s: f64,
    pub plant_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValveSchedule {
    pub events: Vec<ValveEvent>,
}

impl ValveSchedule {
    /// Merges overlapping or touching windows of the same nozzle.
    pub fn coalesce(events: Vec<ValveEvent>) -> ValveSchedule {
        let mut events = events;
        events.sort_by(|a, b| a.nozzle_id.cmp(&b.nozzle_id).then(a.t_open_s.total_cmp(&b.t_open_s)));
        let mut out: Vec<ValveEvent> = Vec::with_capacity(events.len());
        for ev in events {
            match out.last_mut() {
                Some(last) if last.nozzle_id == ev.nozzle_id && ev.t_open_s <= last.t_close_s => {
                    last.t_close_s = last.t_close_s.max(ev.t_close_s);
                    for id in ev.plant_ids {
                        if !last.plant_ids.contains(&id) {
                            last.plant_ids.push(id);
                        }
                    }
                }
                _ => out.push(ev),
            }
        }
        out.sort_by(|a, b| a.t_open_s.total_cmp(&b.t_open_s).then(a.nozzle_id.cmp(&b.nozzle_id)));
        ValveSchedule { events: out }
    }

    pub fn open_time_s(&self, nozzle_id: usize) -> f64 {
        self.events
            .iter()
            .filter(|e| e.nozzle_id == nozzle_id)
            .map(|e| e.t_close_s - e.t_open_s)
            .sum()
    }

    pub fn shifted(mut self, dt_s: f64) -> ValveSchedule {
        for e in &mut self.events {
            e.t_open_s += dt_s;
            e.t_close_s += dt_s;
        }
        self
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("nozzle_id,t_open,t_close,plant_id\n");
        for e in &self.events {
            let ids: Vec<String> = e.plant_ids.iter().map(u32::to_string).collect();
            let _ = writeln!(s, "{},{},{},{}", e.nozzle_id, e.t_open_s, e.t_close_s, ids.join(";"));
        }
        s
    }
}

/// Valve windows for one straight pass, in seconds from the pass start.
pub fn schedule_spray(
    layout: &BoomLayout,
    plants: &[PassPlant],
    speed_mps: f64,
    cfg: &BoomConfig,
) -> Result<ValveSchedule, SprayError> {
    if !(speed_mps > 0.0 && speed_mps.is_finite()) {
        return Err(SprayError::InvalidConfig("speed must be positive".into()));
    }
    let mut raw = Vec::new();
    for p in plants {
        let leading = p.along_m - p.diameter_m / 2.0;
        let trailing = p.along_m + p.diameter_m / 2.0;
        if leading - cfg.lead_m < 0.0 {
            return Err(SprayError::NegativeTime {
                plant_id: p.plant_id,
                along_m: leading - cfg.lead_m,
            });
        }
        let t_open = (leading - cfg.lead_m) / speed_mps - cfg.valve_latency_s;
        let t_close = (trailing + cfg.lag_m) / speed_mps - cfg.valve_latency_s;
        for nozzle_id in assign_nozzles(layout, p.across_m, p.diameter_m)? {
            raw.push(ValveEvent {
                nozzle_id,
                t_open_s: t_open,
                t_close_s: t_close,
                plant_ids: vec![p.plant_id],
            });
        }
    }
    Ok(ValveSchedule::coalesce(raw))
}

/// Herbicide released by a schedule, in litres.
pub fn volume_used(schedule: &ValveSchedule, cfg: &BoomConfig) -> f64 {
    let open: f64 = schedule.events.iter().map(|e| e.t_close_s - e.t_open_s).sum();
    open * cfg.flow_ml_per_s / 1000.0
}

/// Fastest pass speed that still delivers `required_dose_ml` through one nozzle.
pub fn max_speed_for_dose(required_dose_ml: f64, plant_diameter_m: f64, cfg: &BoomConfig) -> Result<f64, SprayError> {
    if !(required_dose_ml > 0.0) {
        return Err(SprayError::InvalidConfig("dose must be positive".into()));
    }
    let v = cfg.flow_ml_per_s * (plant_diameter_m + cfg.lead_m + cfg.lag_m) / required_dose_ml;
    Ok(v.min(MAX_SPRAY_SPEED_MPS))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub transit_speed_mps: f64,
    pub approach_speed_mps: f64,
    pub spray_speed_mps: f64,
    /// Distance before a pass within which the robot slows down.
    pub slow_zone_m: f64,
    /// Minimum half-length of the straight spray pass.
    pub pass_half_length_m: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            transit_speed_mps: 2.0,
            approach_speed_mps: 0.5,
            spray_speed_mps: 0.5,
            slow_zone_m: 2.0,
            pass_half_length_m: 0.25,
        }
    }
}

/// Close-range verification outcome model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyModel {
    /// Probability that a real plant is confirmed.
    pub hit_prob: f64,
    /// Probability that a target with no plant is sprayed anyway.
    pub false_spray_prob: f64,
    /// Lateral re-localisation noise.
    pub lateral_sigma_m: f64,
}

impl Default for VerifyModel {
    fn default() -> Self {
        Self {
            hit_prob: 0.95,
            false_spray_prob: 0.05,
            lateral_sigma_m: 0.02,
        }
    }
}

impl VerifyModel {
    pub fn perfect() -> Self {
        Self {
            hit_prob: 1.0,
            false_spray_prob: 0.0,
            lateral_sigma_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprayerConfig {
    pub boom: BoomConfig,
    pub motion: MotionConfig,
    pub verify: VerifyModel,
    pub tank_l: f64,
}

impl Default for SprayerConfig {
    fn default() -> Self {
        Self {
            boom: BoomConfig::default(),
            motion: MotionConfig::default(),
            verify: VerifyModel::default(),
            tank_l: 24.0,
        }
    }
}

impl SprayerConfig {
    pub fn validate(&self) -> Result<(), SprayError> {
        self.boom.validate()?;
        let m = &self.motion;
        for (v, name) in [
            (m.transit_speed_mps, "transit_speed_mps"),
            (m.approach_speed_mps, "approach_speed_mps"),
            (m.spray_speed_mps, "spray_speed_mps"),
            (m.pass_half_length_m, "pass_half_length_m"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SprayError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(m.slow_zone_m >= 0.0 && m.slow_zone_m.is_finite()) {
            return Err(SprayError::InvalidConfig("slow_zone_m must be >= 0".into()));
        }
        let v = &self.verify;
        if !(0.0..=1.0).contains(&v.hit_prob) || !(0.0..=1.0).contains(&v.false_spray_prob) {
            return Err(SprayError::InvalidConfig("verification probabilities must be in [0, 1]".into()));
        }
        if !(v.lateral_sigma_m >= 0.0 && v.lateral_sigma_m.is_finite()) {
            return Err(SprayError::InvalidConfig("lateral_sigma_m must be >= 0".into()));
        }
        if !(self.tank_l >= 0.0 && self.tank_l.is_finite()) {
            return Err(SprayError::InvalidConfig("tank_l must be >= 0".into()));
        }
        Ok(())
    }
}

/// The plant actually present at a target, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActualPlant {
    pub plant_id: u32,
    pub position: LocalPoint,
    pub diameter_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprayTarget {
    pub id: u32,
    /// Position the robot navigates to.
    pub position: LocalPoint,
    pub diameter_m: f64,
    pub actual: Option<ActualPlant>,
}

impl SprayTarget {
    /// Target taken at face value: a plant sits exactly where it was reported.
    pub fn trusted(id: u32, position: LocalPoint, diameter_m: f64) -> Self {
        Self {
            id,
            position,
            diameter_m,
            actual: Some(ActualPlant {
                plant_id: id,
                position,
                diameter_m,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SegmentMode {
    Transit,
    Approach,
    SprayPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub mode: SegmentMode,
    pub from: LocalPoint,
    pub to: LocalPoint,
    pub speed_mps: f64,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub target_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotTimeline {
    pub segments: Vec<Segment>,
}

impl RobotTimeline {
    pub fn distance_m(&self) -> f64 {
        self.segments.iter().map(|s| s.from.distance(&s.to)).sum()
    }

    pub fn end_time_s(&self) -> Option<f64> {
        self.segments.last().map(|s| s.t_end_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOutcome {
    Sprayed,
    /// A target without a plant was sprayed.
    FalseSpray,
    /// A target without a plant was correctly left alone.
    Rejected,
    MissedByVerification,
    MissedByTank,
    OutsideBoom,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprayReport {
    pub tank_initial_l: f64,
    pub volume_used_l: f64,
    pub tank_remaining_l: f64,
    pub plants_sprayed: usize,
    pub plants_missed: usize,
    pub missed_by_verification: usize,
    pub missed_by_tank: usize,
    pub missed_outside_boom: usize,
    pub missed_by_abort: usize,
    pub false_sprays: usize,
    pub rejected_false_targets: usize,
    /// Sprayed plants whose true extent lies inside the sprayed area.
    pub plants_fully_covered: usize,
    pub nozzle_activations: usize,
    pub per_nozzle_volume_ml: Vec<f64>,
    pub mission_start_s: f64,
    pub mission_end_s: f64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionResult {
    pub timeline: RobotTimeline,
    pub valves: ValveSchedule,
    pub report: SprayReport,
    /// Outcome per target index.
    pub outcomes: Vec<TargetOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MissionOptions {
    pub start_time_s: f64,
    /// Operator stop: the robot halts at this absolute time.
    pub abort_at_s: Option<f64>,
}

struct Drive {
    segments: Vec<Segment>,
    at: LocalPoint,
    t: f64,
    abort_at: Option<f64>,
    halted: bool,
}

impl Drive {
    /// Appends a straight segment, cut short at the abort time. Returns false
    /// once the robot has halted.
    fn go(&mut self, mode: SegmentMode, to: LocalPoint, speed: f64, target_id: Option<u32>) -> bool {
        if self.halted {
            return false;
        }
        let len = self.at.distance(&to);
        if len == 0.0 {
            return true;
        }
        let mut t_end = self.t + len / speed;
        let mut end = to;
        if let Some(abort) = self.abort_at {
            if t_end > abort {
                let frac = ((abort - self.t) / (t_end - self.t)).clamp(0.0, 1.0);
                end = self.at.add(&to.sub(&self.at).scale(frac));
                t_end = abort.max(self.t);
                self.halted = true;
            }
        }
        if t_end > self.t {
            self.segments.push(Segment {
                mode,
                from: self.at,
                to: end,
                speed_mps: speed,
                t_start_s: self.t,
                t_end_s: t_end,
                target_id,
            });
        }
        self.at = end;
        self.t = t_end;
        !self.halted
    }

    /// Leg towards `to` at transit speed, slowing down for the last stretch.
    fn approach(&mut self, to: LocalPoint, m: &MotionConfig, target_id: Option<u32>) -> bool {
        let len = self.at.distance(&to);
        if len > m.slow_zone_m {
            let dir = to.sub(&self.at).scale(1.0 / len);
            let slow_from = self.at.add(&dir.scale(len - m.slow_zone_m));
            if !self.go(SegmentMode::Transit, slow_from, m.transit_speed_mps, target_id) {
                return false;
            }
        }
        self.go(SegmentMode::Approach, to, m.approach_speed_mps, target_id)
    }
}

/// Drives the tour, verifies each target at close range and sprays confirmed
/// plants. Each target gets a straight pass along the incoming direction,
/// offset so the plant runs under the nozzle centre nearest the robot axis.
pub fn plan_robot_mission(
    tour: &Tour,
    targets: &[SprayTarget],
    cfg: &SprayerConfig,
    seed: u64,
    opts: &MissionOptions,
) -> Result<MissionResult, SprayError> {
    cfg.validate()?;
    if !(cfg.tank_l > 0.0) {
        return Err(SprayError::EmptyTankAtStart);
    }
    if !tour.is_permutation_of(targets.len()) {
        return Err(SprayError::TourMismatch(format!(
            "order of {} entries for {} targets",
            tour.order.len(),
            targets.len()
        )));
    }
    let layout = boom_layout(&cfg.boom)?;
    let aim = layout.nearest_nozzle(0.0).center_m;
    let m = &cfg.motion;
    let tank_ml = cfg.tank_l * 1000.0;
    let mut used_ml = 0.0;
    let mut tank_dry = false;
    let mut last_close = vec![f64::NEG_INFINITY; layout.nozzles.len()];
    let mut raw_events: Vec<ValveEvent> = Vec::new();
    let mut outcomes = vec![TargetOutcome::Aborted; targets.len()];
    let mut fully_covered = 0;
    let mut drive = Drive {
        segments: Vec::new(),
        at: tour.start,
        t: opts.start_time_s,
        abort_at: opts.abort_at_s,
        halted: false,
    };
    let mut heading = 0.0;

    for &idx in &tour.order {
        let target = &targets[idx];
        // fixed draw order: decision, then lateral noise
        let mut r: SimRng = rng::substream(seed, STREAM_VERIFY, u64::from(target.id));
        let u: f64 = r.random();
        let noise = rng::gaussian(&mut r, cfg.verify.lateral_sigma_m);

        let to_target = target.position.sub(&drive.at);
        if to_target.norm() > 1e-9 {
            heading = heading_of(&to_target);
        }
        let fwd = heading_unit(heading);
        let right = right_unit(heading);
        let half = m.pass_half_length_m.max(target.diameter_m / 2.0 + cfg.boom.lead_m.max(cfg.boom.lag_m));
        let axis = target.position.sub(&right.scale(aim));
        let pass_start = axis.sub(&fwd.scale(half));
        let pass_end = axis.add(&fwd.scale(half));

        if !drive.approach(pass_start, m, Some(target.id)) {
            break;
        }
        let t_pass = drive.t;
        if !drive.go(SegmentMode::SprayPass, pass_end, m.spray_speed_mps, Some(target.id)) {
            break;
        }

        // what the close-range camera reports, if it fires at all
        let observed = match target.actual {
            Some(p) if u < cfg.verify.hit_prob => Some((p.position.add(&right.scale(noise)), p.diameter_m, true)),
            Some(_) => None,
            None if u < cfg.verify.false_spray_prob => Some((target.position, target.diameter_m, false)),
            None => None,
        };
        let Some((pos, diameter, real)) = observed else {
            outcomes[idx] = if target.actual.is_some() {
                TargetOutcome::MissedByVerification
            } else {
                TargetOutcome::Rejected
            };
            continue;
        };
        let rel = pos.sub(&pass_start);
        let plant = PassPlant {
            plant_id: target.id,
            along_m: rel.dot(&fwd),
            across_m: rel.dot(&right),
            diameter_m: diameter,
        };
        let windows = match schedule_spray(&layout, &[plant], m.spray_speed_mps, &cfg.boom) {
            Ok(s) => s.shifted(t_pass),
            Err(SprayError::PlantOutsideBoom { .. }) => {
                outcomes[idx] = if real {
                    TargetOutcome::OutsideBoom
                } else {
                    TargetOutcome::Rejected
                };
                continue;
            }
            Err(e) => return Err(e),
        };
        let need_ml: f64 = windows
            .events
            .iter()
            .map(|e| (e.t_close_s - e.t_open_s.max(last_close[e.nozzle_id])).max(0.0))
            .sum::<f64>()
            * cfg.boom.flow_ml_per_s;
        if tank_dry || used_ml + need_ml > tank_ml + TANK_EPS_ML {
            tank_dry = true;
            outcomes[idx] = if real {
                TargetOutcome::MissedByTank
            } else {
                TargetOutcome::Rejected
            };
            continue;
        }
        used_ml += need_ml;
        for e in &windows.events {
            last_close[e.nozzle_id] = last_close[e.nozzle_id].max(e.t_close_s);
        }
        if real {
            outcomes[idx] = TargetOutcome::Sprayed;
            if let Some(p) = target.actual {
                if covers(&layout, &windows, &p, &pass_start, &fwd, &right, t_pass, cfg) {
                    fully_covered += 1;
                }
            }
        } else {
            outcomes[idx] = TargetOutcome::FalseSpray;
        }
        raw_events.extend(windows.events);
    }
    if tour.return_to_start {
        drive.approach(tour.start, m, None);
    }

    let valves = ValveSchedule::coalesce(raw_events);
    let volume_used_l = volume_used(&valves, &cfg.boom);
    let per_nozzle_volume_ml = (0..layout.nozzles.len())
        .map(|i| valves.open_time_s(i) * cfg.boom.flow_ml_per_s)
        .collect();
    let count = |o: TargetOutcome| outcomes.iter().filter(|&&x| x == o).count();
    let is_real = |i: usize| targets[i].actual.is_some();
    let missed_by_abort = (0..targets.len())
        .filter(|&i| outcomes[i] == TargetOutcome::Aborted && is_real(i))
        .count();
    let rejected_unvisited = (0..targets.len())
        .filter(|&i| outcomes[i] == TargetOutcome::Aborted && !is_real(i))
        .count();
    let report = SprayReport {
        tank_initial_l: cfg.tank_l,
        volume_used_l,
        tank_remaining_l: cfg.tank_l - volume_used_l,
        plants_sprayed: count(TargetOutcome::Sprayed),
        plants_missed: count(TargetOutcome::MissedByVerification)
            + count(TargetOutcome::MissedByTank)
            + count(TargetOutcome::OutsideBoom)
            + missed_by_abort,
        missed_by_verification: count(TargetOutcome::MissedByVerification),
        missed_by_tank: count(TargetOutcome::MissedByTank),
        missed_outside_boom: count(TargetOutcome::OutsideBoom),
        missed_by_abort,
        false_sprays: count(TargetOutcome::FalseSpray),
        rejected_false_targets: count(TargetOutcome::Rejected) + rejected_unvisited,
        plants_fully_covered: fully_covered,
        nozzle_activations: valves.events.len(),
        per_nozzle_volume_ml,
        mission_start_s: opts.start_time_s,
        mission_end_s: drive.t,
        distance_m: drive.segments.iter().map(|s| s.from.distance(&s.to)).sum(),
    };
    Ok(MissionResult {
        timeline: RobotTimeline {
            segments: drive.segments,
        },
        valves,
        report,
        outcomes,
    })
}

/// Whether the windows cover the true plant disc plus lead and lag along
/// track and its full width across track.
#[allow(clippy::too_many_arguments)]
fn covers(
    layout: &BoomLayout,
    windows: &ValveSchedule,
    actual: &ActualPlant,
    pass_start: &LocalPoint,
    fwd: &LocalPoint,
    right: &LocalPoint,
    t_pass: f64,
    cfg: &SprayerConfig,
) -> bool {
    let rel = actual.position.sub(pass_start);
    let along = rel.dot(fwd);
    let across = rel.dot(right);
    let r = actual.diameter_m / 2.0;
    let v = cfg.motion.spray_speed_mps;
    let latency = cfg.boom.valve_latency_s;
    // every nozzle used must have been open over the whole along-track span
    let along_ok = windows.events.iter().all(|e| {
        let start = (e.t_open_s - t_pass + latency) * v;
        let end = (e.t_close_s - t_pass + latency) * v;
        start <= along - r - cfg.boom.lead_m + 1e-9 && end >= along + r + cfg.boom.lag_m - 1e-9
    });
    let mut spans: Vec<(f64, f64)> = windows
        .events
        .iter()
        .map(|e| (layout.nozzles[e.nozzle_id].lo_m, layout.nozzles[e.nozzle_id].hi_m))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut reach = across - r;
    for (lo, hi) in spans {
        if lo <= reach + 1e-12 {
            reach = reach.max(hi);
        }
    }
    along_ok && reach >= across + r - 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::route::nearest_neighbor;
    use proptest::prelude::*;

    fn single_nozzle_boom() -> BoomConfig {
        BoomConfig {
            nozzle_spray_width_m: 1.8 / 16.0,
            ..BoomConfig::default()
        }
    }

    #[test]
    fn layout_16_nozzles() {
        let l = boom_layout(&BoomConfig::default()).unwrap();
        assert!((l.pitch_m - 0.1125).abs() < 1e-15);
        assert!((l.nozzles[0].center_m + 0.84375).abs() < 1e-12);
        assert!((l.nozzles[15].center_m - 0.84375).abs() < 1e-12);
        assert!(l.warning.is_none());
    }

    #[test]
    fn layout_6_and_1() {
        let cfg = BoomConfig {
            nozzle_count: 6,
            working_width_m: 0.55,
            ..BoomConfig::default()
        };
        let l = boom_layout(&cfg).unwrap();
        assert!((l.pitch_m - 0.091_666_666_666).abs() < 1e-9);
        let one = boom_layout(&BoomConfig {
            nozzle_count: 1,
            ..BoomConfig::default()
        })
        .unwrap();
        assert_eq!(one.nozzles.len(), 1);
        assert_eq!(one.nozzles[0].center_m, 0.0);
        assert!((one.nozzles[0].hi_m - 0.075).abs() < 1e-15);
        assert!(BoomConfig { nozzle_count: 1, ..BoomConfig::default() }.validate().is_err());
    }

    #[test]
    fn narrow_fans_warn() {
        let l = boom_layout(&BoomConfig {
            nozzle_spray_width_m: 0.1,
            ..BoomConfig::default()
        })
        .unwrap();
        match l.warning {
            Some(GeometryWarning::InconsistentGeometry { gap_m }) => assert!((gap_m - 0.0125).abs() < 1e-12),
            None => panic!("expected a warning"),
        }
    }

    #[test]
    fn nozzle_assignment() {
        let l = boom_layout(&BoomConfig::default()).unwrap();
        // 100 mm plant on nozzle 8 also reaches the fans of 7 and 9
        let c = l.nozzles[8].center_m;
        assert_eq!(assign_nozzles(&l, c, 0.1).unwrap(), vec![7, 8, 9]);
        // small plant in the overlap of 7 and 8
        assert_eq!(assign_nozzles(&l, 0.0, 0.02).unwrap(), vec![7, 8]);
        assert!(matches!(assign_nozzles(&l, 5.0, 0.1), Err(SprayError::PlantOutsideBoom { .. })));
        let narrow = boom_layout(&single_nozzle_boom()).unwrap();
        assert_eq!(assign_nozzles(&narrow, narrow.nozzles[8].center_m, 0.1).unwrap(), vec![8]);
    }

    #[test]
    fn window_and_dose() {
        let cfg = single_nozzle_boom();
        let l = boom_layout(&cfg).unwrap();
        let p = PassPlant {
            plant_id: 1,
            along_m: 0.25,
            across_m: l.nozzles[8].center_m,
            diameter_m: 0.1,
        };
        let s = schedule_spray(&l, &[p], 0.5, &cfg).unwrap();
        assert_eq!(s.events.len(), 1);
        let e = &s.events[0];
        assert!((e.t_close_s - e.t_open_s - 0.28).abs() < 1e-12);
        assert!((e.t_open_s - 0.36).abs() < 1e-12);
        assert!((volume_used(&s, &cfg) * 1000.0 - 4.2).abs() < 1e-9);
        assert_eq!((24_000.0 / 4.2f64).floor(), 5714.0);
        assert!(schedule_spray(&l, &[], 0.5, &cfg).unwrap().events.is_empty());
        assert_eq!(volume_used(&ValveSchedule::default(), &cfg), 0.0);
    }

    #[test]
    fn windows_coalesce() {
        let cfg = single_nozzle_boom();
        let l = boom_layout(&cfg).unwrap();
        let c = l.nozzles[3].center_m;
        let plants = [
            PassPlant { plant_id: 1, along_m: 0.2, across_m: c, diameter_m: 0.1 },
            PassPlant { plant_id: 2, along_m: 0.23, across_m: c, diameter_m: 0.1 },
        ];
        let s = schedule_spray(&l, &plants, 0.5, &cfg).unwrap();
        assert_eq!(s.events.len(), 1);
        assert_eq!(s.events[0].plant_ids, vec![1, 2]);
        assert!((s.events[0].t_close_s - s.events[0].t_open_s - 0.34).abs() < 1e-12);
        assert!(s.to_csv().ends_with("1;2\n"));
    }

    #[test]
    fn plant_behind_pass_start() {
        let cfg = BoomConfig::default();
        let l = boom_layout(&cfg).unwrap();
        let p = PassPlant { plant_id: 4, along_m: 0.05, across_m: 0.0, diameter_m: 0.1 };
        assert!(matches!(schedule_spray(&l, &[p], 0.5, &cfg), Err(SprayError::NegativeTime { plant_id: 4, .. })));
    }

    #[test]
    fn dose_speed() {
        let cfg = BoomConfig::default();
        assert!((max_speed_for_dose(4.2, 0.1, &cfg).unwrap() - 0.5).abs() < 1e-12);
        assert!((max_speed_for_dose(8.4, 0.1, &cfg).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(max_speed_for_dose(1e-6, 0.1, &cfg).unwrap(), 0.5);
        assert!(max_speed_for_dose(0.0, 0.1, &cfg).is_err());
    }

    fn line_targets(n: usize) -> Vec<SprayTarget> {
        (0..n)
            .map(|i| SprayTarget::trusted(i as u32, LocalPoint::new(10.0 * (i + 1) as f64, 0.0), 0.1))
            .collect()
    }

    fn centred_cfg() -> SprayerConfig {
        // odd count puts a nozzle on the robot axis
        SprayerConfig {
            boom: BoomConfig {
                nozzle_count: 11,
                nozzle_spray_width_m: 1.8 / 11.0,
                ..BoomConfig::default()
            },
            verify: VerifyModel::perfect(),
            ..SprayerConfig::default()
        }
    }

    #[test]
    fn three_collinear_targets_timeline() {
        let targets = line_targets(3);
        let pos: Vec<LocalPoint> = targets.iter().map(|t| t.position).collect();
        let tour = nearest_neighbor(LocalPoint::ORIGIN, &pos, false);
        let res = plan_robot_mission(&tour, &targets, &centred_cfg(), 1, &MissionOptions::default()).unwrap();
        // 9.75 m to the first pass: 7.75 m at 2 m/s, 2 m at 0.5 m/s, then 0.5 m pass
        // 9.5 m between later passes: 7.5 m at 2 m/s, 2 m at 0.5 m/s, then 0.5 m pass
        let expected = (3.875 + 4.0 + 1.0) + 2.0 * (3.75 + 4.0 + 1.0);
        assert!((res.report.mission_end_s - expected).abs() < 1e-9);
        assert_eq!(res.report.plants_sprayed, 3);
        assert_eq!(res.report.plants_missed, 0);
        assert_eq!(res.report.plants_fully_covered, 3);
        assert!((res.report.volume_used_l - 3.0 * 0.0042).abs() < 1e-12);
        let first = &res.valves.events[0];
        assert!((first.t_open_s - (7.875 + 0.36)).abs() < 1e-9);
        for w in res.timeline.segments.windows(2) {
            assert_eq!(w[0].t_end_s, w[1].t_start_s);
        }
        let modes: Vec<SegmentMode> = res.timeline.segments.iter().map(|s| s.mode).collect();
        assert_eq!(&modes[..3], &[SegmentMode::Transit, SegmentMode::Approach, SegmentMode::SprayPass]);
    }

    #[test]
    fn miss_all_sprays_nothing() {
        let targets = line_targets(3);
        let pos: Vec<LocalPoint> = targets.iter().map(|t| t.position).collect();
        let tour = nearest_neighbor(LocalPoint::ORIGIN, &pos, false);
        let mut cfg = centred_cfg();
        cfg.verify.hit_prob = 0.0;
        let res = plan_robot_mission(&tour, &targets, &cfg, 1, &MissionOptions::default()).unwrap();
        assert_eq!(res.report.plants_sprayed, 0);
        assert_eq!(res.report.missed_by_verification, 3);
        assert_eq!(res.report.volume_used_l, 0.0);
    }

    #[test]
    fn tank_for_two_plants() {
        let targets = line_targets(3);
        let pos: Vec<LocalPoint> = targets.iter().map(|t| t.position).collect();
        let tour = nearest_neighbor(LocalPoint::ORIGIN, &pos, false);
        let mut cfg = centred_cfg();
        cfg.tank_l = 2.0 * 0.0042;
        let res = plan_robot_mission(&tour, &targets, &cfg, 1, &MissionOptions::default()).unwrap();
        assert_eq!(res.report.plants_sprayed, 2);
        assert_eq!(res.report.missed_by_tank, 1);
        let r = &res.report;
        assert!((r.volume_used_l + r.tank_remaining_l - r.tank_initial_l).abs() < 1e-12);
        cfg.tank_l = 0.0;
        assert_eq!(
            plan_robot_mission(&tour, &targets, &cfg, 1, &MissionOptions::default()),
            Err(SprayError::EmptyTankAtStart)
        );
    }

    #[test]
    fn abort_stops_the_robot() {
        let targets = line_targets(3);
        let pos: Vec<LocalPoint> = targets.iter().map(|t| t.position).collect();
        let tour = nearest_neighbor(LocalPoint::ORIGIN, &pos, false);
        let opts = MissionOptions { start_time_s: 100.0, abort_at_s: Some(110.0) };
        let res = plan_robot_mission(&tour, &targets, &centred_cfg(), 1, &opts).unwrap();
        assert_eq!(res.report.plants_sprayed, 1);
        assert_eq!(res.report.missed_by_abort, 2);
        assert_eq!(res.report.mission_end_s, 110.0);
        assert_eq!(res.timeline.end_time_s(), Some(110.0));
    }

    #[test]
    fn false_targets_and_default_boom() {
        let mut targets = line_targets(4);
        targets[1].actual = None;
        let pos: Vec<LocalPoint> = targets.iter().map(|t| t.position).collect();
        let tour = nearest_neighbor(LocalPoint::ORIGIN, &pos, true);
        let cfg = SprayerConfig {
            verify: VerifyModel { false_spray_prob: 1.0, ..VerifyModel::perfect() },
            ..SprayerConfig::default()
        };
        let res = plan_robot_mission(&tour, &targets, &cfg, 3, &MissionOptions::default()).unwrap();
        assert_eq!(res.report.false_sprays, 1);
        assert_eq!(res.report.plants_sprayed, 3);
        // 150 mm fans at 112.5 mm pitch: a 100 mm plant on a nozzle reaches both neighbours
        assert_eq!(res.report.nozzle_activations, 12);
        let last = res.timeline.segments.last().unwrap();
        assert_eq!(last.to, LocalPoint::ORIGIN);
        let total: f64 = res.report.per_nozzle_volume_ml.iter().sum();
        assert!((total / 1000.0 - res.report.volume_used_l).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn coalescing_removes_only_overlap(
            w in prop::collection::vec((0usize..4, 0.0..10.0f64, 0.01..2.0f64), 0..30),
        ) {
            let raw: Vec<ValveEvent> = w
                .iter()
                .enumerate()
                .map(|(i, &(n, t, d))| ValveEvent { nozzle_id: n, t_open_s: t, t_close_s: t + d, plant_ids: vec![i as u32] })
                .collect();
            let raw_total: f64 = raw.iter().map(|e| e.t_close_s - e.t_open_s).sum();
            let once = ValveSchedule::coalesce(raw);
            let twice = ValveSchedule::coalesce(once.events.clone());
            prop_assert_eq!(&once, &twice);
            let total: f64 = once.events.iter().map(|e| e.t_close_s - e.t_open_s).sum();
            prop_assert!(total <= raw_total + 1e-9);
            for n in 0..4 {
                let mut ev: Vec<&ValveEvent> = once.events.iter().filter(|e| e.nozzle_id == n).collect();
                ev.sort_by(|a, b| a.t_open_s.total_cmp(&b.t_open_s));
                for p in ev.windows(2) {
                    prop_assert!(p[0].t_close_s < p[1].t_open_s);
                }
            }
        }

        #[test]
        fn doubling_speed_halves_volume(
            along in 0.2..2.0f64, across in -0.8..0.8f64, d in 0.02..0.3f64, v in 0.05..0.5f64,
        ) {
            let cfg = BoomConfig::default();
            let l = boom_layout(&cfg).unwrap();
            let p = PassPlant { plant_id: 0, along_m: along, across_m: across, diameter_m: d };
            let slow = volume_used(&schedule_spray(&l, &[p], v, &cfg).unwrap(), &cfg);
            let fast = volume_used(&schedule_spray(&l, &[p], 2.0 * v, &cfg).unwrap(), &cfg);
            prop_assert!((slow - 2.0 * fast).abs() < 1e-12);
        }

        #[test]
        fn mission_conserves_volume_and_covers_plants(
            pts in prop::collection::vec((-30.0..30.0f64, -30.0..30.0f64, 0.02..0.25f64), 0..15),
            seed in any::<u64>(), tank in 0.001..0.2f64, hit in 0.0..1.0f64,
        ) {
            let targets: Vec<SprayTarget> = pts
                .iter()
                .enumerate()
                .map(|(i, &(e, n, d))| SprayTarget::trusted(i as u32, LocalPoint::new(e, n), d))
                .collect();
            let pos: Vec<LocalPoint> = targets.iter().map(|t| t.position).collect();
            let tour = nearest_neighbor(LocalPoint::ORIGIN, &pos, false);
            let cfg = SprayerConfig {
                tank_l: tank,
                verify: VerifyModel { hit_prob: hit, false_spray_prob: 0.0, lateral_sigma_m: 0.0 },
                ..SprayerConfig::default()
            };
            let res = plan_robot_mission(&tour, &targets, &cfg, seed, &MissionOptions::default()).unwrap();
            let r = &res.report;
            prop_assert!((r.volume_used_l + r.tank_remaining_l - r.tank_initial_l).abs() < 1e-9);
            prop_assert!(r.tank_remaining_l >= -1e-9);
            prop_assert_eq!(r.plants_sprayed + r.plants_missed, targets.len());
            prop_assert_eq!(r.plants_fully_covered, r.plants_sprayed);
            for w in res.timeline.segments.windows(2) {
                prop_assert_eq!(w[0].t_end_s, w[1].t_start_s);
            }
            for s in &res.timeline.segments {
                let expected = match s.mode {
                    SegmentMode::Transit => 2.0,
                    _ => 0.5,
                };
                prop_assert_eq!(s.speed_mps, expected);
            }
        }
    }
}
