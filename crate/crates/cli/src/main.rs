//! fieldspray command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use fieldspray::engine::{self, events_to_jsonl, run_scenario, Scenario, ScenarioReport, SCHEMA_VERSION};
use fieldspray::field::{
    filter_boxes, generate_field, georef_and_merge, simulate_detections, TargetList,
};
use fieldspray::geo::{LocalFrame, LocalPoint};
use fieldspray::mission::{capture_schedule, plan_coverage, survey_estimate, SurveyEstimate};
use fieldspray::netsim::{self, Direction};
use fieldspray::rng::derive_seed;
use fieldspray::route::{brute_force_optimal, improve, nearest_neighbor, RouteConfig, BRUTE_FORCE_MAX};
use fieldspray::sprayer::{plan_robot_mission, MissionOptions, SprayTarget};
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fieldspray", version, about = "UAV survey, weed targeting and spot-spray mission simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Boustrophedon tracks, capture schedule and survey estimate.
    PlanSurvey {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Also write tracks and capture events as JSON lines.
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
    /// Synthetic ground-truth plants.
    GenField(ScenarioArgs),
    /// Simulated detection, filtering and merging into a target list.
    Detect {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Also write the targets as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Order targets with nearest neighbour and the improver.
    OptimizeRoute {
        /// Target list as CSV (east,north[,support_count]) or JSON.
        #[arg(long)]
        targets: PathBuf,
        /// Routing and start position come from this scenario when given.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Start position as "east,north" in metres.
        #[arg(long, allow_hyphen_values = true)]
        start: Option<String>,
        #[arg(long, value_enum, default_value_t = Heuristic::Both)]
        heuristic: Heuristic,
        #[arg(long)]
        return_to_start: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Robot timeline, valve schedule and spray report for a target list.
    SprayPlan {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long)]
        targets: PathBuf,
        /// Also write the valve schedule as CSV.
        #[arg(long)]
        valves_csv: Option<PathBuf>,
    },
    /// Feasibility of the scenario traffic on each network preset.
    Netcheck {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Preset name, or "all".
        #[arg(long, default_value = "all")]
        preset: String,
        #[arg(long, default_value_t = 60.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 0.01)]
        tick_s: f64,
        /// Write the uplink trace of a single preset as CSV.
        #[arg(long)]
        trace_csv: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline run.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json, report.csv, events.jsonl, targets.csv and valves.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// One full run per value of a scenario parameter.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Dotted path of a scalar field, e.g. plants.density_per_ha.
        #[arg(long)]
        param: String,
        /// JSON array, or comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarise a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
}

#[derive(clap::Args)]
struct ScenarioArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Heuristic {
    Nn,
    Lk,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
    Json,
}

enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

type Res<T> = Result<T, Failure>;

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Invalid(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn engine_err(e: engine::EngineError) -> Failure {
    if e.is_validation() {
        invalid(e)
    } else {
        runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Res<Scenario> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(invalid)?;
    let mut sc: Scenario = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(invalid)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    sc.validate().map_err(engine_err)?;
    Ok(sc)
}

fn envelope<T: Serialize>(command: &str, seed: u64, config: &impl Serialize, result: &T) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": seed,
        "effective_config": config,
        "result": result,
    })
}

fn write_text(path: &Path, text: &str) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(runtime)?;
    }
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn emit(out: Option<&Path>, doc: &Value) -> Res<()> {
    let text = serde_json::to_string_pretty(doc).map_err(runtime)? + "\n";
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_targets(path: &Path) -> Res<TargetList> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(invalid)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if !is_json {
        return TargetList::from_csv(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(invalid);
    }
    let v: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(invalid)?;
    // accept a bare list or the output of `detect`
    let v = v.get("result").cloned().unwrap_or(v);
    let v = v.get("target_list").cloned().unwrap_or(v);
    serde_json::from_value(v)
        .with_context(|| format!("{} is not a target list", path.display()))
        .map_err(invalid)
}

fn parse_point(s: &str) -> Res<LocalPoint> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: Vec<f64> = parts.iter().filter_map(|p| p.parse().ok()).collect();
    match nums[..] {
        [e, n] if parts.len() == 2 && e.is_finite() && n.is_finite() => Ok(LocalPoint::new(e, n)),
        _ => Err(invalid(anyhow!("expected \"east,north\", got {s:?}"))),
    }
}

fn parse_values(s: &str) -> Res<Vec<Value>> {
    let t = s.trim();
    if t.starts_with('[') {
        return serde_json::from_str(t).context("parsing --values").map_err(invalid);
    }
    Ok(t.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| serde_json::from_str(x).unwrap_or_else(|_| Value::String(x.to_string())))
        .collect())
}

fn run(cmd: Command) -> Res<()> {
    match cmd {
        Command::PlanSurvey { common: a, jsonl } => {
            let sc = load_scenario(&a.scenario, a.seed)?;
            let frame = LocalFrame::new(sc.origin);
            let plan = plan_coverage(frame, &sc.field_polygon_m, &sc.survey).map_err(runtime)?;
            let schedule = capture_schedule(&plan, &sc.camera, sc.capture_overlap).map_err(runtime)?;
            let estimate = survey_estimate(&plan, &schedule, sc.traffic.image_size_bits, sc.traffic.fpv_rate_bps);
            if let Some(p) = jsonl {
                let mut lines = json!({"kind": "config", "seed": sc.seed, "effective_config": sc}).to_string() + "\n";
                for (i, t) in plan.tracks.iter().enumerate() {
                    lines += &(json!({"kind": "track", "index": i, "track": t}).to_string() + "\n");
                }
                for e in &schedule.events {
                    lines += &(json!({"kind": "capture", "event": e}).to_string() + "\n");
                }
                write_text(&p, &lines)?;
            }
            let table = estimate_table(&estimate);
            if a.out.is_some() {
                print!("{table}");
            } else {
                eprint!("{table}");
            }
            let result = json!({"estimate": estimate, "plan": plan, "captures": schedule});
            emit(a.out.as_deref(), &envelope("plan-survey", sc.seed, &sc, &result))
        }
        Command::GenField(a) => {
            let sc = load_scenario(&a.scenario, a.seed)?;
            let truth = generate_field(derive_seed(sc.seed, 1), &sc.field_polygon_m, &sc.plants).map_err(runtime)?;
            emit(a.out.as_deref(), &envelope("gen-field", sc.seed, &sc, &truth))
        }
        Command::Detect { common: a, csv } => {
            let sc = load_scenario(&a.scenario, a.seed)?;
            let frame = LocalFrame::new(sc.origin);
            let plan = plan_coverage(frame, &sc.field_polygon_m, &sc.survey).map_err(runtime)?;
            let schedule = capture_schedule(&plan, &sc.camera, sc.capture_overlap).map_err(runtime)?;
            let truth = generate_field(derive_seed(sc.seed, 1), &sc.field_polygon_m, &sc.plants).map_err(runtime)?;
            let boxes = simulate_detections(&truth, &schedule, &frame, &sc.camera, &sc.detector, derive_seed(sc.seed, 2))
                .map_err(runtime)?;
            let kept = filter_boxes(&boxes, &sc.filter);
            let targets =
                georef_and_merge(&kept, &schedule, &frame, &sc.camera, sc.merge_radius_m).map_err(runtime)?;
            if let Some(p) = csv {
                write_text(&p, &targets.to_csv())?;
            }
            let result = json!({
                "images": schedule.events.len(),
                "boxes": boxes.len(),
                "boxes_kept": kept.len(),
                "target_list": targets,
            });
            emit(a.out.as_deref(), &envelope("detect", sc.seed, &sc, &result))
        }
        Command::OptimizeRoute {
            targets,
            scenario,
            start,
            heuristic,
            return_to_start,
            seed,
            out,
        } => {
            let sc = match &scenario {
                Some(p) => Some(load_scenario(p, seed)?),
                None => None,
            };
            let mut cfg = sc.as_ref().map_or(RouteConfig::default(), |s| s.routing);
            cfg.return_to_start |= return_to_start;
            let start = match (&start, &sc) {
                (Some(s), _) => parse_point(s)?,
                (None, Some(s)) => s.robot_start(),
                (None, None) => LocalPoint::ORIGIN,
            };
            let list = load_targets(&targets)?;
            let pos = list.positions();
            let nn = nearest_neighbor(start, &pos, cfg.return_to_start);
            let mut result = json!({"start": start, "target_count": pos.len()});
            if matches!(heuristic, Heuristic::Nn | Heuristic::Both) {
                result["nn"] = json!(nn);
                result["nn_length_m"] = json!(nn.length_m);
            }
            if matches!(heuristic, Heuristic::Lk | Heuristic::Both) {
                let imp = improve(&nn, &pos, &cfg).map_err(runtime)?;
                result["improved_length_m"] = json!(imp.length_m);
                result["improved"] = json!(imp);
            }
            if pos.len() <= BRUTE_FORCE_MAX {
                let opt = brute_force_optimal(start, &pos, cfg.return_to_start).map_err(runtime)?;
                result["oracle_length_m"] = json!(opt.length_m);
            }
            let config = json!({"routing": cfg, "start": start, "targets": targets, "heuristic": heuristic_name(heuristic)});
            let seed = sc.as_ref().map_or(seed.unwrap_or(0), |s| s.seed);
            emit(out.as_deref(), &envelope("optimize-route", seed, &config, &result))
        }
        Command::SprayPlan {
            common: a,
            targets,
            valves_csv,
        } => {
            let sc = load_scenario(&a.scenario, a.seed)?;
            let list = load_targets(&targets)?;
            let spray_targets: Vec<SprayTarget> = list
                .targets
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let d = if t.diameter_m > 0.0 { t.diameter_m } else { sc.plants.diameter_mean_m };
                    SprayTarget::trusted(i as u32, t.position, d)
                })
                .collect();
            let pos = list.positions();
            let nn = nearest_neighbor(sc.robot_start(), &pos, sc.routing.return_to_start);
            let tour = improve(&nn, &pos, &sc.routing).map_err(runtime)?;
            let opts = MissionOptions {
                start_time_s: 0.0,
                abort_at_s: sc.abort_at_s,
            };
            let mission =
                plan_robot_mission(&tour, &spray_targets, &sc.sprayer, derive_seed(sc.seed, 3), &opts).map_err(runtime)?;
            if let Some(p) = valves_csv {
                write_text(&p, &mission.valves.to_csv())?;
            }
            let result = json!({"tour": tour, "mission": mission});
            emit(a.out.as_deref(), &envelope("spray-plan", sc.seed, &sc, &result))
        }
        Command::Netcheck {
            scenario,
            preset,
            duration_s,
            tick_s,
            trace_csv,
            seed,
            out,
        } => {
            let sc = match &scenario {
                Some(p) => load_scenario(p, seed)?,
                None => Scenario {
                    seed: seed.unwrap_or(0),
                    ..Scenario::default()
                },
            };
            let chosen = if preset.eq_ignore_ascii_case("all") {
                netsim::presets()
            } else {
                vec![netsim::preset(&preset).map_err(invalid)?]
            };
            if trace_csv.is_some() && chosen.len() != 1 {
                return Err(invalid(anyhow!("--trace-csv needs a single --preset")));
            }
            let frame = LocalFrame::new(sc.origin);
            let plan = plan_coverage(frame, &sc.field_polygon_m, &sc.survey).map_err(runtime)?;
            let schedule = capture_schedule(&plan, &sc.camera, sc.capture_overlap).map_err(runtime)?;
            let sources = sc.traffic.sources(schedule.interval_s);
            let verdicts = netsim::check_presets(&chosen, &sources, duration_s, tick_s).map_err(invalid)?;
            for v in &verdicts {
                eprintln!(
                    "{}: {} (uplink offered {:.1} of {:.0} Mbit/s, downlink offered {:.1} of {:.0} Mbit/s)",
                    v.preset.name,
                    v.verdict(),
                    v.uplink.mean_offered_bps / 1e6,
                    v.preset.uplink_mbps,
                    v.downlink.mean_offered_bps / 1e6,
                    v.preset.downlink_mbps,
                );
            }
            if let Some(p) = trace_csv {
                let tr = netsim::simulate_link(&chosen[0], Direction::Up, &sources, duration_s, tick_s).map_err(invalid)?;
                write_text(&p, &tr.to_csv())?;
            }
            let rows: Vec<Value> = verdicts
                .iter()
                .map(|v| json!({"verdict": v.verdict(), "detail": v}))
                .collect();
            let config = json!({
                "traffic": sc.traffic,
                "sources": sources,
                "capture_interval_s": schedule.interval_s,
                "duration_s": duration_s,
                "tick_s": tick_s,
                "latency_interpretation": "round-trip",
            });
            emit(out.as_deref(), &envelope("netcheck", sc.seed, &config, &rows))
        }
        Command::Simulate { scenario, seed, out_dir } => {
            let sc = load_scenario(&scenario, seed)?;
            let run = run_scenario(&sc).map_err(engine_err)?;
            let doc = envelope("simulate", sc.seed, &sc, &run.report);
            write_text(&out_dir.join("report.json"), &(serde_json::to_string_pretty(&doc).map_err(runtime)? + "\n"))?;
            let csv = format!("{}\n{}\n", ScenarioReport::CSV_HEADER, run.report.csv_row("run"));
            write_text(&out_dir.join("report.csv"), &csv)?;
            let header = json!({"t_s": 0.0, "entity": "scenario", "kind": "config", "payload": {"seed": sc.seed, "effective_config": sc}});
            let events = format!("{}\n{}", header, events_to_jsonl(&run.events));
            write_text(&out_dir.join("events.jsonl"), &events)?;
            write_text(&out_dir.join("targets.csv"), &run.artifacts.targets.to_csv())?;
            write_text(&out_dir.join("valves.csv"), &run.artifacts.mission.valves.to_csv())?;
            let r = &run.report.reconciliation;
            eprintln!(
                "seed {}: {} plants, {} sprayed, {} missed, {:.4} L used, {:.1} s end to end",
                sc.seed,
                r.plants,
                r.sprayed,
                r.plants - r.sprayed,
                run.report.spray.volume_used_l,
                run.report.end_to_end_s
            );
            Ok(())
        }
        Command::Sweep {
            scenario,
            param,
            values,
            seed,
            jobs,
            out_dir,
        } => {
            let sc = load_scenario(&scenario, seed)?;
            let values = parse_values(&values)?;
            let entries = engine::sweep(&sc, &param, &values, jobs).map_err(engine_err)?;
            let config = json!({"base": sc, "param": param, "values": values, "jobs": jobs});
            let doc = envelope("sweep", sc.seed, &config, &entries);
            write_text(&out_dir.join("sweep.json"), &(serde_json::to_string_pretty(&doc).map_err(runtime)? + "\n"))?;
            let mut csv = format!("{}\n", ScenarioReport::CSV_HEADER);
            for e in &entries {
                let label = match &e.value {
                    Value::String(s) => s.clone(),
                    v => v.to_string(),
                };
                csv.push_str(&e.report.csv_row(&format!("{param}={label}")));
                csv.push('\n');
            }
            write_text(&out_dir.join("sweep.csv"), &csv)
        }
        Command::Report { input, format } => {
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))
                .map_err(invalid)?;
            let v: Value = serde_json::from_str(&text).context("parsing report").map_err(invalid)?;
            let body = v.get("result").cloned().unwrap_or(v);
            let report: ScenarioReport = serde_json::from_value(body).context("not a scenario report").map_err(invalid)?;
            match format {
                ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&report).map_err(runtime)?),
                ReportFormat::Csv => print!("{}\n{}\n", ScenarioReport::CSV_HEADER, report.csv_row("report")),
                ReportFormat::Text => print!("{}", summary_text(&report)),
            }
            Ok(())
        }
    }
}

fn estimate_table(e: &SurveyEstimate) -> String {
    let mut s = String::new();
    s += &format!("tracks               {}\n", e.track_count);
    s += &format!("path                 {:.1} m\n", e.total_path_m);
    s += &format!("duration             {:.1} s ({:.1} min)\n", e.duration_s, e.duration_s / 60.0);
    s += &format!("images               {}\n", e.image_count);
    s += &format!("capture interval     {:.3} s\n", e.capture_interval_s);
    s += &format!("data volume          {:.1} Gbit\n", e.data_volume_bits / 1e9);
    s += &format!("capture rate         {:.1} Mbit/s\n", e.mean_capture_rate_bps / 1e6);
    s += &format!("fpv stream           {:.1} Mbit/s\n", e.fpv_rate_bps / 1e6);
    s
}

fn heuristic_name(h: Heuristic) -> &'static str {
    match h {
        Heuristic::Nn => "nn",
        Heuristic::Lk => "lk",
        Heuristic::Both => "both",
    }
}

fn summary_text(r: &ScenarioReport) -> String {
    let rc = &r.reconciliation;
    let mut s = String::new();
    s += &format!("seed                 {}\n", r.seed);
    s += &format!(
        "survey               {} tracks, {} images, {:.1} s, {:.1} Mbit/s capture rate\n",
        r.survey.track_count,
        r.survey.image_count,
        r.survey.duration_s,
        r.survey.mean_capture_rate_bps / 1e6
    );
    s += &format!(
        "detection            {} plants, {} visible, {} targets ({} duplicate)\n",
        r.detection.ground_truth_plants, r.detection.visible_plants, r.route.target_count, r.detection.duplicate_targets
    );
    s += &format!(
        "route                nn {:.2} m, improved {:.2} m{}\n",
        r.route.nn_length_m,
        r.route.improved_length_m,
        r.route.oracle_length_m.map_or(String::new(), |o| format!(", optimum {o:.2} m"))
    );
    s += &format!(
        "mission              starts {:.1} s, lasts {:.1} s\n",
        r.mission_start_s, r.mission_duration_s
    );
    s += &format!(
        "spray                {} sprayed, {} false sprays, {:.4} L used, {:.4} L left\n",
        r.spray.plants_sprayed, r.spray.false_sprays, r.spray.volume_used_l, r.spray.tank_remaining_l
    );
    s += &format!(
        "plants               sprayed {} | outside coverage {} | detection {} | verification {} | tank {} | boom {} | abort {}\n",
        rc.sprayed,
        rc.outside_coverage,
        rc.missed_by_detection,
        rc.missed_by_verification,
        rc.missed_by_tank,
        rc.missed_outside_boom,
        rc.missed_by_abort
    );
    s += &format!(
        "network              {}: {} (uplink utilisation {:.2})\n",
        r.network.preset.name, r.network.verdict, r.network.uplink.mean_utilization
    );
    s += &format!("end to end           {:.1} s\n", r.end_to_end_s);
    s
}
