//! Cellular link budget as a fluid queue.
//!
//! Each tick the link serves at most `capacity x tick` bits; whatever is
//! offered beyond that waits in a FIFO backlog. Latency figures are round
//! trip times, one way is half.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub const MAX_TICK_S: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown network preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPreset {
    pub name: String,
    pub downlink_mbps: f64,
    pub uplink_mbps: f64,
    /// Round-trip time.
    pub latency_ms: f64,
}

impl LinkPreset {
    fn new(name: &str, down: f64, up: f64, latency_ms: f64) -> Self {
        Self {
            name: name.to_string(),
            downlink_mbps: down,
            uplink_mbps: up,
            latency_ms,
        }
    }

    pub fn one_way_latency_s(&self) -> f64 {
        self.latency_ms / 2000.0
    }

    pub fn rtt_s(&self) -> f64 {
        self.latency_ms / 1000.0
    }

    pub fn capacity_bps(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Up => self.uplink_mbps * 1e6,
            Direction::Down => self.downlink_mbps * 1e6,
        }
    }
}

/// The three measured networks and the expected symmetric upgrade of the
/// private one.
pub fn presets() -> Vec<LinkPreset> {
    vec![
        LinkPreset::new("private-5g-sa", 700.0, 300.0, 10.0),
        LinkPreset::new("public-4g", 90.0, 18.0, 25.0),
        LinkPreset::new("public-5g-nsa", 240.0, 110.0, 20.0),
        LinkPreset::new("future-5g-sa", 500.0, 500.0, 10.0),
    ]
}

pub fn preset(name: &str) -> Result<LinkPreset, NetError> {
    presets()
        .into_iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| NetError::UnknownPreset(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pattern {
    Constant { rate_bps: f64 },
    /// `bits` arrive at once at `phase_s + k * period_s`.
    Burst { bits: f64, period_s: f64, phase_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSource {
    pub name: String,
    pub direction: Direction,
    pub pattern: Pattern,
}

impl TrafficSource {
    pub fn constant(name: &str, direction: Direction, rate_bps: f64) -> Self {
        Self {
            name: name.to_string(),
            direction,
            pattern: Pattern::Constant { rate_bps },
        }
    }

    pub fn mean_rate_bps(&self) -> f64 {
        match self.pattern {
            Pattern::Constant { rate_bps } => rate_bps,
            Pattern::Burst { bits, period_s, .. } => bits / period_s,
        }
    }

    fn validate(&self) -> Result<(), NetError> {
        let ok = match self.pattern {
            Pattern::Constant { rate_bps } => rate_bps >= 0.0 && rate_bps.is_finite(),
            Pattern::Burst { bits, period_s, phase_s } => {
                bits >= 0.0 && bits.is_finite() && period_s > 0.0 && period_s.is_finite() && phase_s >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(NetError::InvalidParameter(format!("source {:?} has invalid rates", self.name)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickSample {
    pub t_s: f64,
    pub offered_bps: f64,
    pub served_bps: f64,
    pub backlog_bits: f64,
    pub queue_delay_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub capacity_bps: f64,
    pub mean_offered_bps: f64,
    pub mean_utilization: f64,
    pub peak_backlog_bits: f64,
    pub final_backlog_bits: f64,
    pub max_queue_delay_s: f64,
    /// Least-squares growth rate of the backlog.
    pub backlog_slope_bps: f64,
    /// Longest stretch with a non-empty backlog.
    pub longest_backlog_s: f64,
    /// Backlog stayed non-empty for at least one second.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTrace {
    pub preset: String,
    pub direction: Direction,
    pub tick_s: f64,
    pub samples: Vec<TickSample>,
    pub summary: LinkSummary,
}

impl LinkTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,offered,served,backlog,delay\n");
        for x in &self.samples {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                x.t_s, x.offered_bps, x.served_bps, x.backlog_bits, x.queue_delay_s
            );
        }
        s
    }
}

pub fn simulate_link(
    preset: &LinkPreset,
    direction: Direction,
    sources: &[TrafficSource],
    duration_s: f64,
    tick_s: f64,
) -> Result<LinkTrace, NetError> {
    if !(tick_s > 0.0 && tick_s <= MAX_TICK_S) {
        return Err(NetError::InvalidParameter(format!("tick_s must be in (0, {MAX_TICK_S}], got {tick_s}")));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(NetError::InvalidParameter("duration_s must be positive".into()));
    }
    for s in sources {
        s.validate()?;
    }
    let cap = preset.capacity_bps(direction);
    if !(cap > 0.0) {
        return Err(NetError::InvalidParameter(format!("preset {} has no capacity", preset.name)));
    }
    let ticks = (duration_s / tick_s - 1e-9).ceil().max(1.0) as usize;
    let active: Vec<&TrafficSource> = sources.iter().filter(|s| s.direction == direction).collect();
    let mut next_burst: Vec<u64> = vec![0; active.len()];
    let per_tick = cap * tick_s;
    let mut backlog = 0.0f64;
    let mut samples = Vec::with_capacity(ticks);
    for k in 0..ticks {
        let t0 = k as f64 * tick_s;
        let t1 = (k + 1) as f64 * tick_s;
        let mut offered = 0.0;
        for (src, nb) in active.iter().zip(next_burst.iter_mut()) {
            match src.pattern {
                Pattern::Constant { rate_bps } => offered += rate_bps * tick_s,
                Pattern::Burst { bits, period_s, phase_s } => {
                    while phase_s + *nb as f64 * period_s < t1 {
                        offered += bits;
                        *nb += 1;
                    }
                }
            }
        }
        let served = (offered + backlog).min(per_tick);
        backlog = (offered + backlog - served).max(0.0);
        samples.push(TickSample {
            t_s: t0,
            offered_bps: offered / tick_s,
            served_bps: served / tick_s,
            backlog_bits: backlog,
            queue_delay_s: backlog / cap,
        });
    }
    let summary = summarize(&samples, cap, tick_s);
    Ok(LinkTrace {
        preset: preset.name.clone(),
        direction,
        tick_s,
        samples,
        summary,
    })
}

fn summarize(samples: &[TickSample], cap: f64, tick_s: f64) -> LinkSummary {
    let n = samples.len() as f64;
    let offered: f64 = samples.iter().map(|s| s.offered_bps).sum::<f64>() / n;
    let served: f64 = samples.iter().map(|s| s.served_bps).sum::<f64>() / n;
    let peak = samples.iter().map(|s| s.backlog_bits).fold(0.0, f64::max);
    let mut run = 0usize;
    let mut longest = 0usize;
    for s in samples {
        run = if s.backlog_bits > 0.0 { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    let longest_s = longest as f64 * tick_s;
    // sample k reports the backlog at the end of its tick
    let ts: Vec<f64> = (1..=samples.len()).map(|k| k as f64 * tick_s).collect();
    let t_mean = ts.iter().sum::<f64>() / n;
    let b_mean = samples.iter().map(|s| s.backlog_bits).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, s) in ts.iter().zip(samples) {
        sxy += (t - t_mean) * (s.backlog_bits - b_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    LinkSummary {
        capacity_bps: cap,
        mean_offered_bps: offered,
        mean_utilization: served / cap,
        peak_backlog_bits: peak,
        final_backlog_bits: samples.last().map_or(0.0, |s| s.backlog_bits),
        max_queue_delay_s: peak / cap,
        backlog_slope_bps: if sxx > 0.0 { sxy / sxx } else { 0.0 },
        longest_backlog_s: longest_s,
        saturated: peak > 0.0 && longest_s >= 1.0 - 1e-9,
    }
}

/// Traffic produced by one surveying UAV and one sprayer robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficAssumptions {
    pub image_size_bits: f64,
    /// Send images as bursts instead of their mean rate.
    pub image_bursts: bool,
    pub fpv_rate_bps: f64,
    /// Close-range camera streams sent to the edge server.
    pub robot_stream_count: usize,
    pub robot_stream_rate_bps: f64,
    /// Route and commands towards the vehicles.
    pub downlink_control_bps: f64,
}

impl Default for TrafficAssumptions {
    fn default() -> Self {
        Self {
            image_size_bits: 192e6,
            image_bursts: false,
            fpv_rate_bps: 6e6,
            robot_stream_count: 3,
            robot_stream_rate_bps: 25e6,
            downlink_control_bps: 1e6,
        }
    }
}

impl TrafficAssumptions {
    pub fn validate(&self) -> Result<(), NetError> {
        for (v, name) in [
            (self.image_size_bits, "image_size_bits"),
            (self.fpv_rate_bps, "fpv_rate_bps"),
            (self.robot_stream_rate_bps, "robot_stream_rate_bps"),
            (self.downlink_control_bps, "downlink_control_bps"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NetError::InvalidParameter(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn sources(&self, capture_interval_s: f64) -> Vec<TrafficSource> {
        let image = if self.image_bursts {
            Pattern::Burst {
                bits: self.image_size_bits,
                period_s: capture_interval_s,
                phase_s: 0.0,
            }
        } else {
            Pattern::Constant {
                rate_bps: self.image_size_bits / capture_interval_s,
            }
        };
        let mut out = vec![
            TrafficSource {
                name: "uav-images".into(),
                direction: Direction::Up,
                pattern: image,
            },
            TrafficSource::constant("uav-fpv", Direction::Up, self.fpv_rate_bps),
        ];
        for i in 0..self.robot_stream_count {
            out.push(TrafficSource::constant(
                &format!("robot-camera-{i}"),
                Direction::Up,
                self.robot_stream_rate_bps,
            ));
        }
        if self.downlink_control_bps > 0.0 {
            out.push(TrafficSource::constant("control", Direction::Down, self.downlink_control_bps));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetVerdict {
    pub preset: LinkPreset,
    pub uplink: LinkSummary,
    pub downlink: LinkSummary,
    pub uplink_feasible: bool,
    pub downlink_feasible: bool,
}

impl PresetVerdict {
    pub fn verdict(&self) -> &'static str {
        match (self.uplink_feasible, self.downlink_feasible) {
            (true, true) => "feasible",
            (false, true) => "uplink infeasible",
            (true, false) => "downlink infeasible",
            (false, false) => "uplink and downlink infeasible",
        }
    }
}

/// A direction is feasible when its mean load fits and the queue never
/// saturates.
pub fn check_presets(
    presets: &[LinkPreset],
    sources: &[TrafficSource],
    duration_s: f64,
    tick_s: f64,
) -> Result<Vec<PresetVerdict>, NetError> {
    presets
        .iter()
        .map(|p| {
            let up = simulate_link(p, Direction::Up, sources, duration_s, tick_s)?.summary;
            let down = simulate_link(p, Direction::Down, sources, duration_s, tick_s)?.summary;
            let fits = |s: &LinkSummary| !s.saturated && s.mean_offered_bps <= s.capacity_bps;
            Ok(PresetVerdict {
                preset: p.clone(),
                uplink_feasible: fits(&up),
                downlink_feasible: fits(&down),
                uplink: up,
                downlink: down,
            })
        })
        .collect()
}

/// Time left to open the valves when close-range frames are processed
/// remotely. Negative means the robot would pass the plant first.
pub fn offload_slack(
    camera_lookahead_m: f64,
    speed_mps: f64,
    rtt_s: f64,
    inference_s: f64,
    lead_m: f64,
) -> Result<f64, NetError> {
    if !(speed_mps > 0.0) {
        return Err(NetError::InvalidParameter("speed must be positive".into()));
    }
    Ok((camera_lookahead_m - lead_m) / speed_mps - rtt_s - inference_s)
}
