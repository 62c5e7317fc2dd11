//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dexgrasp::energy::contact_map_posed;
use dexgrasp::hand::{HandModel, HandPose};
use dexgrasp::metrics::{mpe, MetricReport};
use dexgrasp::policy::{reward, RolloutState};
use dexgrasp::quality::{evaluate, QualityConfig};
use dexgrasp::record::{read_records, write_records, GraspMetrics, GraspRecord, Provenance};
use dexgrasp::scene::{ContactMap, Scene, DEFAULT_BETA};
use dexgrasp::so3::So3Grid;
use dexgrasp::synthesis::{synthesize, tta_refine};
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::config::{RunConfig, SceneConfig};
use crate::{Command, Common};

/// Worker count for the run pool; unset or 0 lets the pool pick.
pub const THREADS_ENV: &str = "DEXGRASP_THREADS";

pub enum Outcome {
    Ok,
    ValidationFailed,
}

pub struct NamedScene {
    pub scene: Scene,
    pub object_id: String,
    pub scale: f64,
}

pub fn load_scene(spec: &str, cfg: &SceneConfig) -> Result<NamedScene> {
    let named = |scene, id: &str| NamedScene { scene, object_id: id.to_string(), scale: cfg.scale };
    match spec {
        "sphere" => Ok(named(Scene::sphere(cfg.sphere_radius, cfg.points)?, "sphere")),
        "box" => Ok(named(Scene::cuboid(Vector3::repeat(cfg.box_half_extent), cfg.points)?, "box")),
        path => {
            let p = Path::new(path);
            if !p.is_file() {
                bail!("scene '{path}' is neither `sphere`, `box` nor an existing PLY file");
            }
            let (scene, meta) = Scene::read_ply(p).with_context(|| format!("cannot load scene cloud {path}"))?;
            let object_id = if meta.object_id.is_empty() {
                p.file_stem().map_or_else(|| path.to_string(), |s| s.to_string_lossy().into_owned())
            } else {
                meta.object_id
            };
            Ok(NamedScene { scene, object_id, scale: meta.scale.unwrap_or(cfg.scale) })
        }
    }
}

fn pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got '{v}'"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().context("cannot start the worker pool")
}

fn load_records(path: &Path, cfg: &RunConfig) -> Result<Vec<GraspRecord>> {
    read_records(path, cfg.scene.strict_scales)
        .with_context(|| format!("cannot read grasp records from {}", path.display()))
}

fn save_records(path: &Path, records: &[GraspRecord]) -> Result<()> {
    write_records(path, records).with_context(|| format!("cannot write records to {}", path.display()))
}

fn save_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Text outputs start with a comment line carrying the config hash.
fn hash_line(hash: &str) -> String {
    format!("# config_hash={hash}\n")
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => save_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn poses_for_scene(records: &[GraspRecord], scene: &NamedScene) -> Result<Vec<HandPose>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.object_id != scene.object_id {
                bail!(
                    "record {} is for object '{}' but --scene loads '{}'; pass the matching scene",
                    i + 1,
                    r.object_id,
                    scene.object_id
                );
            }
            Ok(r.hand_pose.to_pose()?)
        })
        .collect()
}

fn annotate(metrics: &mut GraspMetrics, scene: &Scene, model: &HandModel, pose: &HandPose, q: &QualityConfig) -> Result<()> {
    let r = evaluate(scene, model, pose, q)?;
    metrics.q1 = Some(r.q1);
    metrics.object_penetration = Some(r.penetration);
    metrics.table_penetration = Some(r.table_penetration);
    metrics.gravity_resistant = Some(r.stable);
    metrics.valid = Some(r.penetration <= q.max_valid_penetration && r.stable);
    Ok(())
}

/// Evaluates every record in parallel, keeping input order, and restamps
/// the provenance with the current config hash.
fn annotate_all(
    records: &mut [GraspRecord],
    poses: &[HandPose],
    scene: &Scene,
    model: &HandModel,
    cfg: &RunConfig,
    hash: &str,
) -> Result<()> {
    pool()?.install(|| {
        records.par_iter_mut().zip(poses).enumerate().try_for_each(|(i, (r, p))| {
            annotate(&mut r.metrics, scene, model, p, &cfg.quality).with_context(|| format!("record {}", i + 1))?;
            r.provenance.config_hash = hash.to_string();
            Ok(())
        })
    })
}

pub fn run(command: Command) -> Result<Outcome> {
    let config = |c: &Common| RunConfig::load(c.config.as_deref());
    match command {
        Command::Grid { level, out, common } => {
            let cfg = config(&common)?;
            let grid = So3Grid::new(level)?;
            save_text(&out, &(hash_line(&cfg.hash()) + &grid.to_csv()))?;
        }
        Command::Synth { scenes, seeds, rng, out, trajectories, common } => {
            let cfg = config(&common)?;
            synth(&cfg, &scenes, seeds, rng.unwrap_or(cfg.optimizer.seed), &out, trajectories.as_deref())?;
        }
        Command::Refine { records, target, scene, out, common } => {
            let cfg = config(&common)?;
            refine(&cfg, &records, &target, &scene.scene, &out)?;
        }
        Command::Eval { records, scene, out, common } => {
            let cfg = config(&common)?;
            let model = cfg.hand_model()?;
            let scene = load_scene(&scene.scene, &cfg.scene)?;
            let mut recs = load_records(&records, &cfg)?;
            let poses = poses_for_scene(&recs, &scene)?;
            annotate_all(&mut recs, &poses, &scene.scene, &model, &cfg, &cfg.hash())?;
            save_records(&out, &recs)?;
        }
        Command::Validate { records, scene, out, common } => {
            let cfg = config(&common)?;
            let model = cfg.hand_model()?;
            let scene = load_scene(&scene.scene, &cfg.scene)?;
            let mut recs = load_records(&records, &cfg)?;
            let poses = poses_for_scene(&recs, &scene)?;
            annotate_all(&mut recs, &poses, &scene.scene, &model, &cfg, &cfg.hash())?;
            let mut failed = 0;
            for (i, r) in recs.iter().enumerate() {
                let m = &r.metrics;
                if m.valid == Some(true) {
                    continue;
                }
                failed += 1;
                let pen = m.object_penetration.unwrap_or(0.0);
                let mut why = Vec::new();
                if pen > cfg.quality.max_valid_penetration {
                    why.push(format!(
                        "penetration {:.3} mm exceeds {:.3} mm",
                        1e3 * pen,
                        1e3 * cfg.quality.max_valid_penetration
                    ));
                }
                if m.gravity_resistant != Some(true) {
                    why.push("does not resist gravity in all six directions".to_string());
                }
                eprintln!("record {} (seed {}): {}", i + 1, r.provenance.seed, why.join("; "));
            }
            println!("{} of {} records passed", recs.len() - failed, recs.len());
            if let Some(out) = out {
                save_records(&out, &recs)?;
            }
            if failed > 0 {
                return Ok(Outcome::ValidationFailed);
            }
        }
        Command::Metrics { records, goals, out, common } => {
            let cfg = config(&common)?;
            let text = metrics_table(&cfg, &records, goals.as_deref())?;
            emit(out.as_ref(), &text)?;
        }
        Command::Reward { rollout, out, common } => {
            let cfg = config(&common)?;
            let text = reward_table(&cfg, &rollout)?;
            emit(out.as_ref(), &text)?;
        }
    }
    Ok(Outcome::Ok)
}

fn synth(cfg: &RunConfig, scenes: &[String], seeds: u64, base: u64, out: &Path, trajectories: Option<&Path>) -> Result<()> {
    let model = cfg.hand_model()?;
    let scenes = scenes.iter().map(|s| load_scene(s, &cfg.scene)).collect::<Result<Vec<_>>>()?;
    let hash = cfg.hash();
    if let Some(dir) = trajectories {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create trajectory directory {}", dir.display()))?;
    }
    let jobs: Vec<(usize, u64)> =
        (0..scenes.len()).flat_map(|s| (0..seeds).map(move |i| (s, base.wrapping_add(i)))).collect();
    let records = pool()?.install(|| {
        jobs.par_iter()
            .map(|&(si, seed)| {
                let s = &scenes[si];
                let mut opt = cfg.optimizer;
                opt.seed = seed;
                let res = synthesize(&s.scene, &model, &cfg.synthesis, &opt)
                    .with_context(|| format!("synthesis on '{}' with seed {seed} failed", s.object_id))?;
                let provenance = Provenance { seed, config_hash: hash.clone() };
                let mut rec = GraspRecord::new(&s.object_id, s.scale, s.scene.object_pose(), &res.pose, provenance);
                rec.metrics.energy = Some(res.report.total);
                annotate(&mut rec.metrics, &s.scene, &model, &res.pose, &cfg.quality)?;
                if let Some(dir) = trajectories {
                    let path = dir.join(format!("{si}_{}_{seed}.csv", s.object_id));
                    save_text(&path, &(hash_line(&hash) + &res.trajectory.to_csv()))?;
                }
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    save_records(out, &records)
}

/// Target maps for `n` records: a shared contact-map JSON, or the maps of
/// the grasps in a record file (one shared or one per record).
fn load_targets(path: &Path, scene: &Scene, model: &HandModel, cfg: &RunConfig, n: usize) -> Result<Vec<ContactMap>> {
    let is_records = path.extension().is_some_and(|e| e == "jsonl");
    let maps = if is_records {
        let recs = load_records(path, cfg)?;
        if recs.len() != 1 && recs.len() != n {
            bail!(
                "target file {} holds {} grasps; expected 1 (shared) or {n} (one per record)",
                path.display(),
                recs.len()
            );
        }
        recs.iter()
            .map(|r| Ok(contact_map_posed(scene.points(), &model.pose(&r.hand_pose.to_pose()?)?, DEFAULT_BETA)?))
            .collect::<Result<Vec<_>>>()?
    } else {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read target map {}", path.display()))?;
        let map: ContactMap = serde_json::from_str(&text)
            .with_context(|| format!("target map {} must be JSON of the form {{\"heat\": [...]}}", path.display()))?;
        vec![ContactMap::new(map.heat)?]
    };
    if let Some(m) = maps.iter().find(|m| m.len() != scene.len()) {
        bail!("target map has {} values but the scene has {} points; build it on the same scene", m.len(), scene.len());
    }
    Ok(if maps.len() == 1 { vec![maps[0].clone(); n] } else { maps })
}

fn refine(cfg: &RunConfig, records: &Path, target: &Path, scene: &str, out: &Path) -> Result<()> {
    let model = cfg.hand_model()?;
    let scene = load_scene(scene, &cfg.scene)?;
    let mut recs = load_records(records, cfg)?;
    let poses = poses_for_scene(&recs, &scene)?;
    let targets = load_targets(target, &scene.scene, &model, cfg, recs.len())?;
    let hash = cfg.hash();
    pool()?.install(|| {
        recs.par_iter_mut().zip(poses.par_iter().zip(&targets)).enumerate().try_for_each(|(i, (r, (p, t)))| {
            let (pose, traj) = tta_refine(&scene.scene, &model, p, t, &cfg.tta, &cfg.refine)
                .with_context(|| format!("refinement of record {} failed", i + 1))?;
            r.hand_pose = (&pose).into();
            r.metrics.energy = traj.energies.last().copied();
            r.provenance.config_hash = hash.clone();
            annotate(&mut r.metrics, &scene.scene, &model, &pose, &cfg.quality)
        })
    })?;
    save_records(out, &recs)
}

fn metrics_table(cfg: &RunConfig, records: &Path, goals: Option<&Path>) -> Result<String> {
    let model = cfg.hand_model()?;
    let recs = load_records(records, cfg)?;
    if recs.is_empty() {
        bail!("{} holds no records to aggregate", records.display());
    }
    let goals = goals.map(|g| load_records(g, cfg)).transpose()?;
    if let Some(g) = &goals {
        if g.len() != recs.len() {
            bail!("{} goal records for {} grasps; goals pair with records line by line", g.len(), recs.len());
        }
    }
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in recs.iter().enumerate() {
        match groups.iter_mut().find(|(id, _)| *id == r.object_id) {
            Some((_, g)) => g.push(i),
            None => groups.push((r.object_id.clone(), vec![i])),
        }
    }
    if groups.len() > 1 {
        groups.push(("all".to_string(), (0..recs.len()).collect()));
    }
    let mut text = hash_line(&cfg.hash());
    let _ = writeln!(text, "object_id,{},mpe_mean_cm", MetricReport::CSV_HEADER);
    for (id, idx) in &groups {
        let poses = idx.iter().map(|&i| recs[i].hand_pose.to_pose()).collect::<dexgrasp::Result<Vec<_>>>()?;
        let column = |f: fn(&GraspMetrics) -> Option<f64>| -> Vec<f64> {
            idx.iter().map(|&i| f(&recs[i].metrics)).collect::<Option<Vec<_>>>().unwrap_or_default()
        };
        let report = MetricReport::compute(&model, &poses, &column(|m| m.q1), &column(|m| m.object_penetration))?;
        let mpe_mean = match &goals {
            Some(g) => {
                let total = idx
                    .iter()
                    .zip(&poses)
                    .map(|(&i, p)| mpe(&model, p, &g[i].hand_pose.to_pose()?))
                    .sum::<dexgrasp::Result<f64>>()?;
                format!("{}", total / idx.len() as f64)
            }
            None => "NA".to_string(),
        };
        let _ = writeln!(text, "{id},{},{mpe_mean}", report.csv_row());
    }
    Ok(text)
}

fn reward_table(cfg: &RunConfig, rollout: &Path) -> Result<String> {
    let log = std::fs::read_to_string(rollout).with_context(|| format!("cannot read rollout log {}", rollout.display()))?;
    let mut text = hash_line(&cfg.hash());
    text.push_str("step,goal,reach,lift,move,flag,rotation_error,total\n");
    let states = log.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    for (step, (i, line)) in states.enumerate() {
        let state: RolloutState = serde_json::from_str(line)
            .with_context(|| format!("{} line {}: not a rollout state", rollout.display(), i + 1))?;
        let r = reward(&state, &cfg.reward).with_context(|| format!("{} line {}", rollout.display(), i + 1))?;
        let _ = writeln!(
            text,
            "{step},{},{},{},{},{},{},{}",
            r.goal, r.reach, r.lift, r.move_, r.flag, r.rotation_error, r.total
        );
    }
    Ok(text)
}
