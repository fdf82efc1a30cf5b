//! End-to-end scenario runs on one simulated clock.
//!
//! A run records everything it does as timestamped events; the report is
//! rebuilt from that log alone.

use crate::field::{
    filter_boxes, generate_field, georef_and_merge, simulate_detections, visible_plants, BBox, DetectorModel,
    FilterThresholds, GroundTruth, PlantModel, TargetList,
};
use crate::geo::{CameraModel, GeoPoint, LocalFrame, LocalPoint, MAX_LOCAL_RANGE_M};
use crate::mission::{capture_schedule, plan_coverage, survey_estimate, FieldPolygon, SurveyEstimate, SurveyParams};
use crate::netsim::{self, LinkPreset, LinkSummary, TrafficAssumptions, TrafficSource};
use crate::rng::derive_seed;
use crate::route::{brute_force_optimal, improve, nearest_neighbor, RouteConfig, Tour, BRUTE_FORCE_MAX};
use crate::sprayer::{
    plan_robot_mission, ActualPlant, MissionOptions, MissionResult, SegmentMode, SprayReport, SprayTarget,
    SprayerConfig, TargetOutcome,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

const SEED_FIELD: u64 = 1;
const SEED_DETECT: u64 = 2;
const SEED_VERIFY: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validation,
    Survey,
    Field,
    Detection,
    Merge,
    Route,
    Spray,
    Network,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Validation => "validation",
            Stage::Survey => "survey",
            Stage::Field => "field",
            Stage::Detection => "detection",
            Stage::Merge => "merge",
            Stage::Route => "route",
            Stage::Spray => "spray",
            Stage::Network => "network",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("{stage} stage: {message}")]
    Stage { stage: Stage, message: String },
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}

impl EngineError {
    /// Whether the input was rejected before anything ran.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            EngineError::UnknownParameter(_)
                | EngineError::Stage {
                    stage: Stage::Validation,
                    ..
                }
        )
    }
}

fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> EngineError {
    move |e| EngineError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub origin: GeoPoint,
    pub field_polygon_m: FieldPolygon,
    pub plants: PlantModel,
    pub camera: CameraModel,
    pub survey: SurveyParams,
    pub capture_overlap: f64,
    pub detector: DetectorModel,
    pub filter: FilterThresholds,
    pub merge_radius_m: f64,
    pub routing: RouteConfig,
    /// Defaults to the first field vertex.
    pub robot_start_m: Option<LocalPoint>,
    pub sprayer: SprayerConfig,
    pub network_preset: String,
    pub traffic: TrafficAssumptions,
    pub link_tick_s: f64,
    /// Time between the end of the survey and the route reaching the robot.
    pub edge_delay_s: f64,
    /// Operator stop, in scenario time.
    pub abort_at_s: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            origin: GeoPoint {
                lat_deg: 49.4247,
                lon_deg: 7.7531,
            },
            field_polygon_m: FieldPolygon::rectangle(LocalPoint::ORIGIN, 100.0, 100.0)
                .expect("square field is valid"),
            plants: PlantModel::default(),
            camera: CameraModel::default(),
            survey: SurveyParams::default(),
            capture_overlap: 0.1,
            detector: DetectorModel::default(),
            filter: FilterThresholds::default(),
            merge_radius_m: 0.15,
            routing: RouteConfig::default(),
            robot_start_m: None,
            sprayer: SprayerConfig::default(),
            network_preset: "private-5g-sa".into(),
            traffic: TrafficAssumptions::default(),
            link_tick_s: 0.01,
            edge_delay_s: 0.0,
            abort_at_s: None,
        }
    }
}

impl Scenario {
    pub fn robot_start(&self) -> LocalPoint {
        self.robot_start_m.unwrap_or(self.field_polygon_m.vertices()[0])
    }

    /// Checks every sub-configuration; nothing is computed on failure.
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = at::<String>(Stage::Validation);
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.origin.validate().map_err(at(Stage::Validation))?;
        self.plants.validate().map_err(at(Stage::Validation))?;
        self.camera.validate().map_err(at(Stage::Validation))?;
        self.survey.validate().map_err(at(Stage::Validation))?;
        let spacing = self.survey.track_spacing_m;
        let area = self.field_polygon_m.area_m2();
        if area < spacing * spacing {
            return Err(bad(format!("field area {area} m² is below spacing² {} m²", spacing * spacing)));
        }
        let (lo, hi) = self.field_polygon_m.bounds();
        let start = self.robot_start();
        for p in [lo, hi, start] {
            if !p.is_finite() || p.east_m.abs() >= MAX_LOCAL_RANGE_M || p.north_m.abs() >= MAX_LOCAL_RANGE_M {
                return Err(bad(format!("point ({}, {}) is outside the local frame", p.east_m, p.north_m)));
            }
        }
        if !(0.0..1.0).contains(&self.capture_overlap) {
            return Err(bad("capture_overlap must be in [0, 1)".into()));
        }
        self.detector.validate().map_err(at(Stage::Validation))?;
        self.filter.validate().map_err(at(Stage::Validation))?;
        if !(self.merge_radius_m >= 0.0 && self.merge_radius_m.is_finite()) {
            return Err(bad("merge_radius_m must be >= 0".into()));
        }
        self.routing.validate().map_err(at(Stage::Validation))?;
        self.sprayer.validate().map_err(at(Stage::Validation))?;
        if !(self.sprayer.tank_l > 0.0) {
            return Err(bad("sprayer.tank_l must be positive".into()));
        }
        netsim::preset(&self.network_preset).map_err(at(Stage::Validation))?;
        self.traffic.validate().map_err(at(Stage::Validation))?;
        if !(self.link_tick_s > 0.0 && self.link_tick_s <= netsim::MAX_TICK_S) {
            return Err(bad(format!("link_tick_s must be in (0, {}]", netsim::MAX_TICK_S)));
        }
        if !(self.edge_delay_s >= 0.0 && self.edge_delay_s.is_finite()) {
            return Err(bad("edge_delay_s must be >= 0".into()));
        }
        if let Some(t) = self.abort_at_s {
            if !t.is_finite() {
                return Err(bad("abort_at_s must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_s: f64,
    pub entity: String,
    pub kind: String,
    pub payload: Value,
}

impl Event {
    fn new(t_s: f64, entity: &str, kind: &str, payload: Value) -> Self {
        Self {
            t_s,
            entity: entity.into(),
            kind: kind.into(),
            payload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionStats {
    pub ground_truth_plants: usize,
    pub visible_plants: usize,
    pub images: usize,
    pub boxes: StageCounts,
    pub filtered: StageCounts,
    pub targets: StageCounts,
    /// Extra targets on a plant that already has one.
    pub duplicate_targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSummary {
    pub target_count: usize,
    pub start: LocalPoint,
    pub return_to_start: bool,
    pub nn_length_m: f64,
    pub improved_length_m: f64,
    /// Exhaustive optimum, for small instances only.
    pub oracle_length_m: Option<f64>,
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub preset: LinkPreset,
    pub duration_s: f64,
    pub tick_s: f64,
    pub uplink: LinkSummary,
    pub downlink: LinkSummary,
    pub uplink_feasible: bool,
    pub downlink_feasible: bool,
    pub verdict: String,
    pub assumptions: TrafficAssumptions,
    pub sources: Vec<TrafficSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantOutcome {
    Sprayed,
    OutsideCoverage,
    MissedByDetection,
    MissedByVerification,
    MissedByTank,
    MissedOutsideBoom,
    MissedByAbort,
}

/// Where every ground-truth plant ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Reconciliation {
    pub plants: usize,
    pub sprayed: usize,
    pub outside_coverage: usize,
    pub missed_by_detection: usize,
    pub missed_by_verification: usize,
    pub missed_by_tank: usize,
    pub missed_outside_boom: usize,
    pub missed_by_abort: usize,
}

impl Reconciliation {
    pub fn balances(&self) -> bool {
        self.plants
            == self.sprayed
                + self.outside_coverage
                + self.missed_by_detection
                + self.missed_by_verification
                + self.missed_by_tank
                + self.missed_outside_boom
                + self.missed_by_abort
    }

    fn add(&mut self, o: PlantOutcome) {
        self.plants += 1;
        match o {
            PlantOutcome::Sprayed => self.sprayed += 1,
            PlantOutcome::OutsideCoverage => self.outside_coverage += 1,
            PlantOutcome::MissedByDetection => self.missed_by_detection += 1,
            PlantOutcome::MissedByVerification => self.missed_by_verification += 1,
            PlantOutcome::MissedByTank => self.missed_by_tank += 1,
            PlantOutcome::MissedOutsideBoom => self.missed_outside_boom += 1,
            PlantOutcome::MissedByAbort => self.missed_by_abort += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub schema_version: u32,
    pub seed: u64,
    pub survey: SurveyEstimate,
    pub detection: DetectionStats,
    pub route: RouteSummary,
    pub mission_start_s: f64,
    pub mission_duration_s: f64,
    pub spray: SprayReport,
    pub network: NetworkSummary,
    pub reconciliation: Reconciliation,
    /// Last event on the simulated clock.
    pub end_to_end_s: f64,
    pub event_count: usize,
}

impl ScenarioReport {
    pub const CSV_HEADER: &'static str = "label,seed,plants,visible,targets,sprayed,outside_coverage,\
missed_by_detection,missed_by_verification,missed_by_tank,missed_outside_boom,missed_by_abort,\
false_sprays,volume_used_l,nn_length_m,improved_length_m,survey_duration_s,mission_duration_s,\
end_to_end_s,uplink_utilization,uplink_saturated";

    pub fn csv_row(&self, label: &str) -> String {
        let r = &self.reconciliation;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            label.replace(',', ";"),
            self.seed,
            r.plants,
            self.detection.visible_plants,
            self.route.target_count,
            r.sprayed,
            r.outside_coverage,
            r.missed_by_detection,
            r.missed_by_verification,
            r.missed_by_tank,
            r.missed_outside_boom,
            r.missed_by_abort,
            self.spray.false_sprays,
            self.spray.volume_used_l,
            self.route.nn_length_m,
            self.route.improved_length_m,
            self.survey.duration_s,
            self.mission_duration_s,
            self.end_to_end_s,
            self.network.uplink.mean_utilization,
            self.network.uplink.saturated,
        )
    }
}

/// Intermediate products, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub truth: GroundTruth,
    pub boxes: Vec<BBox>,
    pub targets: TargetList,
    pub tour: Tour,
    pub mission: MissionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub report: ScenarioReport,
    pub events: Vec<Event>,
    pub artifacts: Artifacts,
}

pub fn events_to_jsonl(events: &[Event]) -> String {
    let mut s = String::new();
    for e in events {
        let _ = writeln!(s, "{}", serde_json::to_string(e).expect("events serialize"));
    }
    s
}

fn counts(boxes: &[BBox], visible: &[bool]) -> StageCounts {
    let mut hit = vec![false; visible.len()];
    let mut c = StageCounts::default();
    for b in boxes {
        match b.plant_id {
            Some(p) => {
                c.tp += 1;
                hit[p as usize] = true;
            }
            None => c.fp += 1,
        }
    }
    c.fn_ = visible.iter().zip(&hit).filter(|(v, h)| **v && !**h).count();
    c
}

/// Plant each target stands for: the plant most of its boxes came from, if
/// the target is also that plant's best-supported target.
fn match_targets(targets: &TargetList, boxes: &[BBox], plant_count: usize) -> Vec<Option<u32>> {
    let label: BTreeMap<u32, Option<u32>> = boxes.iter().map(|b| (b.id, b.plant_id)).collect();
    let majority: Vec<Option<(u32, usize)>> = targets
        .targets
        .iter()
        .map(|t| {
            let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
            for id in &t.support {
                if let Some(Some(p)) = label.get(id) {
                    *votes.entry(*p).or_default() += 1;
                }
            }
            // most votes, lowest plant id on ties
            votes.into_iter().fold(None, |best, (p, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((p, n)),
            })
        })
        .collect();
    let mut owner: Vec<Option<(usize, usize)>> = vec![None; plant_count];
    for (ti, m) in majority.iter().enumerate() {
        if let Some((p, n)) = *m {
            let slot = &mut owner[p as usize];
            if slot.is_none_or(|(_, bn)| n > bn) {
                *slot = Some((ti, n));
            }
        }
    }
    majority
        .iter()
        .enumerate()
        .map(|(ti, m)| m.and_then(|(p, _)| (owner[p as usize].map(|o| o.0) == Some(ti)).then_some(p)))
        .collect()
}

pub fn run_scenario(sc: &Scenario) -> Result<RunOutput, EngineError> {
    sc.validate()?;
    let mut events = vec![Event::new(
        0.0,
        "scenario",
        "start",
        json!({"seed": sc.seed, "schema_version": SCHEMA_VERSION}),
    )];

    // survey
    let frame = LocalFrame::new(sc.origin);
    let plan = plan_coverage(frame, &sc.field_polygon_m, &sc.survey).map_err(at(Stage::Survey))?;
    let schedule = capture_schedule(&plan, &sc.camera, sc.capture_overlap).map_err(at(Stage::Survey))?;
    let estimate = survey_estimate(&plan, &schedule, sc.traffic.image_size_bits, sc.traffic.fpv_rate_bps);
    let survey_end = estimate.duration_s;
    events.push(Event::new(
        0.0,
        "uav",
        "survey_start",
        json!({"tracks": plan.tracks.len(), "images_planned": schedule.events.len()}),
    ));

    // field and aerial detection
    let truth = generate_field(derive_seed(sc.seed, SEED_FIELD), &sc.field_polygon_m, &sc.plants)
        .map_err(at(Stage::Field))?;
    let visible = visible_plants(&truth, &schedule, &frame, &sc.camera).map_err(at(Stage::Detection))?;
    let boxes = simulate_detections(
        &truth,
        &schedule,
        &frame,
        &sc.camera,
        &sc.detector,
        derive_seed(sc.seed, SEED_DETECT),
    )
    .map_err(at(Stage::Detection))?;
    let kept = filter_boxes(&boxes, &sc.filter);
    let mut per_image = vec![(0usize, 0usize); schedule.events.len()];
    for b in &boxes {
        per_image[b.image_id as usize].0 += 1;
    }
    for b in &kept {
        per_image[b.image_id as usize].1 += 1;
    }
    for (ev, (n, k)) in schedule.events.iter().zip(&per_image) {
        events.push(Event::new(
            ev.time_s,
            "uav",
            "capture",
            json!({"image_id": ev.image_id, "track_index": ev.track_index, "boxes": n, "boxes_kept": k}),
        ));
    }
    events.push(Event::new(survey_end, "uav", "survey_complete", to_value(&estimate)));

    let targets = georef_and_merge(&kept, &schedule, &frame, &sc.camera, sc.merge_radius_m).map_err(at(Stage::Merge))?;
    let matched = match_targets(&targets, &kept, truth.plants.len());
    let assigned = matched.iter().filter(|m| m.is_some()).count();
    let with_majority: usize = targets
        .targets
        .iter()
        .filter(|t| t.support.iter().any(|id| kept.iter().any(|b| b.id == *id && b.plant_id.is_some())))
        .count();
    let mut target_hit = vec![false; truth.plants.len()];
    for p in matched.iter().flatten() {
        target_hit[*p as usize] = true;
    }
    let detection = DetectionStats {
        ground_truth_plants: truth.plants.len(),
        visible_plants: visible.iter().filter(|v| **v).count(),
        images: schedule.events.len(),
        boxes: counts(&boxes, &visible),
        filtered: counts(&kept, &visible),
        targets: StageCounts {
            tp: assigned,
            fp: targets.targets.len() - assigned,
            fn_: visible.iter().zip(&target_hit).filter(|(v, h)| **v && !**h).count(),
        },
        duplicate_targets: with_majority - assigned,
    };
    events.push(Event::new(survey_end, "edge", "detection_summary", to_value(&detection)));

    // routing
    let route_ready = survey_end + sc.edge_delay_s;
    let start = sc.robot_start();
    let positions = targets.positions();
    let nn = nearest_neighbor(start, &positions, sc.routing.return_to_start);
    let tour = improve(&nn, &positions, &sc.routing).map_err(at(Stage::Route))?;
    let oracle = if positions.len() <= BRUTE_FORCE_MAX {
        Some(
            brute_force_optimal(start, &positions, sc.routing.return_to_start)
                .map_err(at(Stage::Route))?
                .length_m,
        )
    } else {
        None
    };
    let route = RouteSummary {
        target_count: positions.len(),
        start,
        return_to_start: sc.routing.return_to_start,
        nn_length_m: nn.length_m,
        improved_length_m: tour.length_m,
        oracle_length_m: oracle,
        order: tour.order.clone(),
    };
    events.push(Event::new(route_ready, "edge", "route_ready", to_value(&route)));

    // spraying
    let spray_targets: Vec<SprayTarget> = targets
        .targets
        .iter()
        .zip(&matched)
        .map(|(t, m)| SprayTarget {
            id: t.id,
            position: t.position,
            diameter_m: t.diameter_m,
            actual: m.map(|p| {
                let plant = &truth.plants[p as usize];
                ActualPlant {
                    plant_id: plant.id,
                    position: plant.position,
                    diameter_m: plant.diameter_m,
                }
            }),
        })
        .collect();
    let opts = MissionOptions {
        start_time_s: route_ready,
        abort_at_s: sc.abort_at_s,
    };
    let mission = plan_robot_mission(&tour, &spray_targets, &sc.sprayer, derive_seed(sc.seed, SEED_VERIFY), &opts)
        .map_err(at(Stage::Spray))?;
    let mission_end = mission.report.mission_end_s;
    for s in &mission.timeline.segments {
        events.push(Event::new(s.t_start_s, "robot", "segment", to_value(s)));
    }
    for v in &mission.valves.events {
        events.push(Event::new(v.t_open_s, "robot", "valve", to_value(v)));
    }
    let pass_end = |target_id: u32| {
        mission
            .timeline
            .segments
            .iter()
            .find(|s| s.mode == SegmentMode::SprayPass && s.target_id == Some(target_id))
            .map_or(mission_end, |s| s.t_end_s)
    };
    for (t, o) in spray_targets.iter().zip(&mission.outcomes) {
        events.push(Event::new(
            pass_end(t.id),
            "robot",
            "target",
            json!({"target_id": t.id, "plant_id": t.actual.map(|a| a.plant_id), "outcome": o}),
        ));
    }
    events.push(Event::new(mission_end, "robot", "mission_complete", to_value(&mission.report)));

    // plant outcomes
    let mut plant_target: Vec<Option<usize>> = vec![None; truth.plants.len()];
    for (ti, m) in matched.iter().enumerate() {
        if let Some(p) = m {
            plant_target[*p as usize] = Some(ti);
        }
    }
    for (i, plant) in truth.plants.iter().enumerate() {
        let (t, outcome) = match plant_target[i] {
            Some(ti) => {
                let o = match mission.outcomes[ti] {
                    TargetOutcome::Sprayed => PlantOutcome::Sprayed,
                    TargetOutcome::MissedByTank => PlantOutcome::MissedByTank,
                    TargetOutcome::OutsideBoom => PlantOutcome::MissedOutsideBoom,
                    TargetOutcome::Aborted => PlantOutcome::MissedByAbort,
                    TargetOutcome::MissedByVerification | TargetOutcome::FalseSpray | TargetOutcome::Rejected => {
                        PlantOutcome::MissedByVerification
                    }
                };
                (pass_end(targets.targets[ti].id), o)
            }
            None if visible[i] => (survey_end, PlantOutcome::MissedByDetection),
            None => (survey_end, PlantOutcome::OutsideCoverage),
        };
        events.push(Event::new(t, "plant", "outcome", json!({"plant_id": plant.id, "outcome": outcome})));
    }

    // network load while the UAV and robot stream concurrently
    let preset = netsim::preset(&sc.network_preset).map_err(at(Stage::Network))?;
    let sources = sc.traffic.sources(schedule.interval_s);
    let duration = survey_end.max(1.0);
    let verdict = netsim::check_presets(std::slice::from_ref(&preset), &sources, duration, sc.link_tick_s)
        .map_err(at(Stage::Network))?
        .remove(0);
    let network = NetworkSummary {
        verdict: verdict.verdict().to_string(),
        preset,
        duration_s: duration,
        tick_s: sc.link_tick_s,
        uplink: verdict.uplink,
        downlink: verdict.downlink,
        uplink_feasible: verdict.uplink_feasible,
        downlink_feasible: verdict.downlink_feasible,
        assumptions: sc.traffic,
        sources,
    };
    events.push(Event::new(survey_end, "network", "link", to_value(&network)));

    events.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    let end = events.last().map_or(0.0, |e| e.t_s);
    events.push(Event::new(end, "scenario", "end", json!({})));

    let report = derive_report(&events).map_err(at(Stage::Validation))?;
    Ok(RunOutput {
        report,
        events,
        artifacts: Artifacts {
            truth,
            boxes,
            targets,
            tour,
            mission,
        },
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Rebuilds the report from an event log.
pub fn derive_report(events: &[Event]) -> Result<ScenarioReport, String> {
    fn one<T: for<'de> Deserialize<'de>>(events: &[Event], entity: &str, kind: &str) -> Result<(f64, T), String> {
        let e = events
            .iter()
            .find(|e| e.entity == entity && e.kind == kind)
            .ok_or_else(|| format!("event log has no {entity}/{kind} event"))?;
        let v = serde_json::from_value(e.payload.clone()).map_err(|err| format!("{entity}/{kind}: {err}"))?;
        Ok((e.t_s, v))
    }
    #[derive(Deserialize)]
    struct Start {
        seed: u64,
        schema_version: u32,
    }
    #[derive(Deserialize)]
    struct Outcome {
        outcome: PlantOutcome,
    }
    let (_, start): (f64, Start) = one(events, "scenario", "start")?;
    let (_, survey): (f64, SurveyEstimate) = one(events, "uav", "survey_complete")?;
    let (_, detection): (f64, DetectionStats) = one(events, "edge", "detection_summary")?;
    let (route_t, route): (f64, RouteSummary) = one(events, "edge", "route_ready")?;
    let (_, spray): (f64, SprayReport) = one(events, "robot", "mission_complete")?;
    let (_, network): (f64, NetworkSummary) = one(events, "network", "link")?;
    let mut reconciliation = Reconciliation::default();
    for e in events.iter().filter(|e| e.entity == "plant" && e.kind == "outcome") {
        let o: Outcome = serde_json::from_value(e.payload.clone()).map_err(|err| err.to_string())?;
        reconciliation.add(o.outcome);
    }
    Ok(ScenarioReport {
        schema_version: start.schema_version,
        seed: start.seed,
        survey,
        detection,
        route,
        mission_start_s: route_t,
        mission_duration_s: spray.mission_end_s - route_t,
        spray,
        network,
        reconciliation,
        end_to_end_s: events.iter().map(|e| e.t_s).fold(0.0, f64::max),
        event_count: events.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: Value,
    pub report: ScenarioReport,
}

/// Copies of `base` with the scalar at dotted `path` set to each value.
pub fn sweep_scenarios(base: &Scenario, path: &str, values: &[Value]) -> Result<Vec<Scenario>, EngineError> {
    let root = serde_json::to_value(base).map_err(at(Stage::Validation))?;
    let keys: Vec<&str> = path.split('.').collect();
    let mut probe = &root;
    for k in &keys {
        probe = probe
            .as_object()
            .and_then(|o| o.get(*k))
            .ok_or_else(|| EngineError::UnknownParameter(path.to_string()))?;
    }
    if probe.is_object() || probe.is_array() {
        return Err(EngineError::UnknownParameter(format!("{path} is not a scalar")));
    }
    values
        .iter()
        .map(|v| {
            let mut doc = root.clone();
            let mut slot = &mut doc;
            for k in &keys {
                slot = slot.get_mut(*k).expect("path checked above");
            }
            *slot = v.clone();
            let sc: Scenario = serde_json::from_value(doc).map_err(|e| EngineError::Stage {
                stage: Stage::Validation,
                message: format!("{path} = {v}: {e}"),
            })?;
            sc.validate()?;
            Ok(sc)
        })
        .collect()
}

/// One run per value, sharing the base seed. `jobs` bounds parallelism.
pub fn sweep(base: &Scenario, path: &str, values: &[Value], jobs: usize) -> Result<Vec<SweepEntry>, EngineError> {
    let scenarios = sweep_scenarios(base, path, values)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(at(Stage::Validation))?;
    pool.install(|| {
        scenarios
            .par_iter()
            .zip(values.par_iter())
            .map(|(sc, v)| {
                Ok(SweepEntry {
                    value: v.clone(),
                    report: run_scenario(sc)?.report,
                })
            })
            .collect()
    })
}
