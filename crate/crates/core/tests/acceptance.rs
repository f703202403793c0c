//! Acceptance criteria, one line each. Criteria 6 and 7 train nine agents
//! for 100k steps each and only run when `PCRL_ACCEPTANCE_FULL=1`; their
//! runs are cached under `PCRL_ACCEPTANCE_DIR` (default
//! `target/acceptance-runs`).

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng as _;

use pcrl::autodiff::{Tape, Tensor};
use pcrl::env::{self, EnvConfig, Modality, Observation};
use pcrl::geometry::{back_project, Projection, Raster};
use pcrl::harness::{grad_check_suite, load_agent, probe_robustness, run_variant, RunConfig};
use pcrl::nn::{InputShape, NetSpec, Networks};
use pcrl::rng::{seeded, stream, Stream};
use pcrl::sac::{
    net_spec, obs_tensor, soft_update, stack_observations, train, Agent, AgentConfig, Augmentation, DrqSpec,
    ReplayBuffer, SacHyper, Transition, UpdateMetrics, UpdateRngs,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let lines = match grad_check_suite(1) {
        Ok(l) => l,
        Err(e) => return Outcome::Fail(format!("suite error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let worst_op = lines
        .iter()
        .filter(|l| l.threshold == 1e-5)
        .map(|l| l.max_rel_error)
        .fold(0.0, f64::max);
    let worst_loss = lines
        .iter()
        .filter(|l| l.threshold == 1e-4)
        .map(|l| l.max_rel_error)
        .fold(0.0, f64::max);
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
    verdict(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} checks, worst op {worst_op:.2e} (< 1e-5), worst composed loss {worst_loss:.2e} (< 1e-4), {secs:.1} s, failing: {failed:?}",
            lines.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    let spec = net_spec(&EnvConfig::default(), &AgentConfig::default());
    let InputShape::Points { points, channels } = spec.input else { unreachable!() };
    let nets = Networks::<f32>::new(&spec, 1).expect("networks");
    let embed = |rows: &[f32], n: usize| -> Vec<u32> {
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::new(&[1, n, channels], rows.to_vec()).unwrap(), false);
        let e = nets.encoder.forward(&mut tape, &nets.encoder_params, x).unwrap();
        tape.value(e).iter().map(|v| v.to_bits()).collect()
    };
    let mut rng = seeded(2);
    let (mut perm_ok, mut dup_ok) = (0, 0);
    let trials = 1000;
    for _ in 0..trials {
        let n = rng.random_range(1..=points);
        let rows: Vec<[f32; 16]> = (0..n)
            .map(|_| {
                let mut r = [0f32; 16];
                for (k, v) in r.iter_mut().take(channels).enumerate() {
                    *v = if k < 3 { rng.random_range(-12.0..12.0) } else { rng.random_range(0.0..1.0) };
                }
                r
            })
            .collect();
        let flat = |rs: &[[f32; 16]]| rs.iter().flat_map(|r| r[..channels].to_vec()).collect::<Vec<f32>>();
        let base = embed(&flat(&rows), n);
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        perm_ok += usize::from(embed(&flat(&shuffled), n) == base);
        let mut dup = rows.clone();
        for _ in 0..rng.random_range(1..=n) {
            let i = rng.random_range(0..n);
            dup.push(rows[i]);
        }
        dup.shuffle(&mut rng);
        dup_ok += usize::from(embed(&flat(&dup), dup.len()) == base);
    }
    verdict(
        perm_ok == trials && dup_ok == trials,
        format!("{perm_ok}/{trials} permutations and {dup_ok}/{trials} duplications bitwise invariant"),
    )
}

fn criterion_3() -> Outcome {
    let cfg = EnvConfig::default();
    let cam = &cfg.camera;
    let mut rng = seeded(3);
    let mut worst_px: f64 = 0.0;
    for _ in 0..10_000 {
        let (u, v) = (rng.random_range(0.0..cfg.image_width as f64), rng.random_range(0.0..cfg.image_height as f64));
        let z = rng.random_range(0.5..80.0);
        match cam.project_point(&cam.unproject(u, v, z)) {
            Projection::Visible { u: u2, v: v2, .. } => worst_px = worst_px.max((u2 - u).hypot(v2 - v)),
            Projection::Behind => worst_px = f64::INFINITY,
        }
    }
    let mut worst_surface: f64 = 0.0;
    let mut points = 0usize;
    for _ in 0..500 {
        let state = env::sample_state(&cfg, &mut rng).unwrap();
        let Observation::Cloud(c) = env::observe(&state, &cfg, &mut rng).unwrap() else { unreachable!() };
        for p in c.coords() {
            let p = Vector3::from(*p);
            let d0 = ((p - Vector3::from(state.x0)).norm() - state.r0).abs();
            let d1 = ((p - Vector3::from(state.x1)).norm() - state.r1).abs();
            worst_surface = worst_surface.max(d0.min(d1));
            points += 1;
        }
    }
    // A lone rendered pixel must come back where it was drawn.
    let mut depth = Raster::new(cfg.image_height, cfg.image_width, 1);
    depth.at_mut(10, 20)[0] = 25.0;
    let rgb = Raster::new(cfg.image_height, cfg.image_width, 3);
    let pc = back_project(&depth, &rgb, cam).unwrap();
    let lone_ok = pc.len() == 1
        && matches!(cam.project_point(&Vector3::from(pc.coords()[0])),
            Projection::Visible { u, v, .. } if (u - 20.0).abs() < 1e-6 && (v - 10.0).abs() < 1e-6);
    verdict(
        worst_px < 1e-6 && worst_surface < 1e-3 && lone_ok,
        format!("max pixel error {worst_px:.2e} over 1e4 pixels (< 1e-6); max surface distance {worst_surface:.2e} over {points} points (< 1e-3)"),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let env_cfg = EnvConfig::default();
    let mut cfg = AgentConfig::default();
    // Every sample of a single-transition buffer is the same transition, so
    // the batch mean equals the single-sample loss for any batch size.
    cfg.hyper.batch_size = 1;
    let mut rng = seeded(4);
    let (_, obs) = env::reset(&env_cfg, &mut rng).unwrap();
    let obs = stack_observations(&[&obs]).unwrap();
    let action = vec![3.0, -7.5, 1.25];
    let mut buf = ReplayBuffer::new(1).unwrap();
    buf.push(Transition {
        obs: obs.clone(),
        action: action.clone(),
        reward: 1.0,
        next_obs: obs.clone(),
        done: true,
    });
    let mut agent: Agent<f32> = Agent::new(&net_spec(&env_cfg, &cfg), cfg.hyper.clone(), 4).unwrap();
    let mut rngs = UpdateRngs::from_seed(4);
    for step in 1..=2000 {
        agent.sac_update(&buf, step, &mut rngs).unwrap();
    }
    let x: Tensor<f32> = obs_tensor(&[&obs], agent.input, Augmentation::Identity, &mut rng).unwrap();
    let a = Tensor::from_f64(&[1, 3], &action).unwrap();
    let q = agent.min_q(&x, &a).unwrap()[0];
    let secs = t.elapsed().as_secs_f64();
    verdict(
        (q - 1.0).abs() <= 1e-2 && secs < 60.0,
        format!("min-Q after 2000 updates = {q:.6} (target 1 ± 1e-2), {secs:.1} s"),
    )
}

fn mixed_buffer(n: usize, budget: usize, seed: u64) -> ReplayBuffer {
    let env_cfg = EnvConfig {
        point_budget: budget,
        ..EnvConfig::default()
    };
    let mut rng = seeded(seed);
    let mut buf = ReplayBuffer::new(n).unwrap();
    for i in 0..n {
        let (state, obs) = env::reset(&env_cfg, &mut rng).unwrap();
        let a = [0, 1, 2].map(|_| rng.random_range(-15.0..15.0));
        let res = env::step(&state, a, &env_cfg, &mut rng).unwrap();
        buf.push(Transition {
            obs: stack_observations(&[&obs]).unwrap(),
            action: a.to_vec(),
            reward: res.reward,
            next_obs: stack_observations(&[&res.next_observation]).unwrap(),
            // Half the stored transitions bootstrap so the target path runs.
            done: i % 2 == 0,
        });
    }
    buf
}

fn metric_bits(m: &UpdateMetrics) -> [u64; 5] {
    let o = |v: Option<f64>| v.map_or(u64::MAX, f64::to_bits);
    [m.critic_loss.to_bits(), o(m.actor_loss), o(m.alpha_loss), m.alpha.to_bits(), m.mean_q.to_bits()]
}

fn criterion_5() -> Outcome {
    let spec = NetSpec {
        input: InputShape::Points { points: 32, channels: 7 },
        point_widths: vec![16, 32],
        embed_dim: 32,
        hidden: vec![64, 64],
        action_dim: 3,
        action_scale: 15.0,
    };
    let hyper = SacHyper {
        batch_size: 16,
        ..SacHyper::default()
    };
    let drq = DrqSpec {
        k: 1,
        m: 1,
        augmentation: Augmentation::Identity,
    };
    let mut mismatches = 0;
    let mut compared = 0;
    for seed in [1u64, 2, 3] {
        let buf = mixed_buffer(64, 32, seed);
        let mut a: Agent<f32> = Agent::new(&spec, hyper.clone(), seed).unwrap();
        let mut b: Agent<f32> = Agent::new(&spec, hyper.clone(), seed).unwrap();
        let (mut ra, mut rb) = (UpdateRngs::from_seed(seed), UpdateRngs::from_seed(seed));
        for step in 1..=500 {
            let ma = a.sac_update(&buf, step, &mut ra).unwrap();
            let mb = b.drq_update(&buf, &drq, step, &mut rb).unwrap();
            compared += 1;
            mismatches += usize::from(metric_bits(&ma) != metric_bits(&mb));
        }
        if a.checkpoint().unwrap().encode() != b.checkpoint().unwrap().encode() {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{compared} update steps over 3 seeds, {mismatches} metric or parameter mismatches"),
    )
}

fn criterion_8() -> Outcome {
    let hyper = SacHyper::default();
    let store = |v: f64| {
        let mut s = pcrl::autodiff::ParamStore::new();
        s.insert("encoder.w", Tensor::scalar(v)).unwrap();
        s.insert("critic.q1.0.weight", Tensor::scalar(v)).unwrap();
        s
    };
    let mut target = store(0.0);
    soft_update(&store(1.0), &mut target, hyper.tau_backbone, hyper.tau_heads).unwrap();
    let b = target.by_name("encoder.w").unwrap().data()[0];
    let h = target.by_name("critic.q1.0.weight").unwrap().data()[0];
    verdict(
        b == 0.05 && h == 0.01,
        format!("backbone target 0 → {b} (τ = 0.05), head target 0 → {h} (τ = 0.01)"),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_pcrl");
    let mut identical = Vec::new();
    for m in Modality::ALL {
        let cfg = dir.path().join(format!("{m}.cfg"));
        std::fs::write(
            &cfg,
            format!(
                "env.modality = {m}\nenv.image_height = 32\nenv.image_width = 32\nenv.point_budget = 64\n\
                 agent.algorithm = drq\nagent.augmentation = {}\nagent.hidden = 64,64\nagent.batch_size = 16\n\
                 agent.warmup_steps = 20\nrun.total_steps = 60\nrun.eval_interval = 30\nrun.log_interval = 10\n\
                 run.eval_episodes = 5\nrun.checkpoint_interval = 0\n",
                if m.is_image() { "pixel_shift:4" } else { "shift:0.15" }
            ),
        )
        .unwrap();
        let run = |tag: &str| -> Vec<u8> {
            let out = dir.path().join(format!("{m}_{tag}"));
            let st = std::process::Command::new(bin)
                .args(["train", cfg.to_str().unwrap(), "--seed", "11", "--out", out.to_str().unwrap()])
                .output()
                .unwrap();
            assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
            std::fs::read(out.join("metrics.csv")).unwrap()
        };
        let (a, b) = (run("a"), run("b"));
        identical.push((m, a == b && !a.is_empty()));
    }
    verdict(
        identical.iter().all(|(_, ok)| *ok),
        format!("rerun metrics byte-identical per modality: {identical:?}"),
    )
}

const FULL_VAR: &str = "PCRL_ACCEPTANCE_FULL";
const SEEDS: [u64; 3] = [1, 2, 3];

fn full_enabled() -> bool {
    std::env::var(FULL_VAR).is_ok_and(|v| v == "1")
}

fn runs_dir() -> PathBuf {
    std::env::var_os("PCRL_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance-runs"))
}

/// Desk-scale configuration: every hyperparameter at its default, which are
/// the motivating-example values.
fn desk_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.agent.algorithm = pcrl::sac::Algorithm::Sac;
    cfg.run.out_dir = Some(dir.to_path_buf());
    cfg.finalize().unwrap();
    cfg
}

/// Trains (or reuses) every (modality, seed) run; returns the final
/// evaluation return per run.
fn desk_scale_runs(dir: &Path) -> Vec<(Modality, u64, f64)> {
    let base = desk_config(dir);
    let mut out = Vec::new();
    for m in Modality::ALL {
        for seed in SEEDS {
            let cfg = run_variant(&base, m, seed).unwrap();
            let run_dir = cfg.run.out_dir.clone().unwrap();
            let ckpt = run_dir.join(format!("ckpt_{}.pcrl", cfg.run.total_steps));
            if !ckpt.exists() {
                train(&cfg.env, &cfg.agent, &cfg.run).unwrap();
            }
            let csv = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
            let last_eval = csv
                .lines()
                .skip(1)
                .filter_map(|l| l.rsplit(',').next().and_then(|v| v.parse::<f64>().ok()))
                .last()
                .unwrap();
            out.push((m, seed, last_eval));
        }
    }
    out
}

fn mean_of(runs: &[(Modality, u64, f64)], m: Modality) -> f64 {
    let v: Vec<f64> = runs.iter().filter(|r| r.0 == m).map(|r| r.2).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

const INFEASIBLE: &str = "nine 100k-step runs at full network width take roughly 3.6 h (point cloud) to 130 h (image) each on one CPU core; set PCRL_ACCEPTANCE_FULL=1 to run";

fn criterion_6() -> Outcome {
    if !full_enabled() {
        return Outcome::Skipped(INFEASIBLE.into());
    }
    let runs = desk_scale_runs(&runs_dir());
    let (pc, rgbd, rgb) = (
        mean_of(&runs, Modality::PointCloud),
        mean_of(&runs, Modality::Rgbd),
        mean_of(&runs, Modality::Rgb),
    );
    verdict(
        pc > rgbd && pc > rgb && pc >= -1.5,
        format!("mean final eval return: pointcloud {pc:.3}, rgbd {rgbd:.3}, rgb {rgb:.3} (need pointcloud > both and ≥ -1.5)"),
    )
}

fn criterion_7() -> Outcome {
    if !full_enabled() {
        return Outcome::Skipped(format!("needs the trained agents of criterion 6; {INFEASIBLE}"));
    }
    let dir = runs_dir();
    desk_scale_runs(&dir);
    let base = desk_config(&dir);
    let mean_dq = |m: Modality, magnitude: f64| -> f64 {
        let mut total = 0.0;
        for seed in SEEDS {
            let cfg = run_variant(&base, m, seed).unwrap();
            let ckpt = cfg.run.out_dir.as_ref().unwrap().join(format!("ckpt_{}.pcrl", cfg.run.total_steps));
            let agent = load_agent(&cfg, ckpt).unwrap();
            let mut rng = stream(seed, Stream::Probe);
            total += probe_robustness(&agent, &cfg, &[magnitude], 256, &mut rng).unwrap().rows[0].mean;
        }
        total / SEEDS.len() as f64
    };
    let pc = mean_dq(Modality::PointCloud, 0.2);
    let rgb = mean_dq(Modality::Rgb, 8.0);
    let rgbd = mean_dq(Modality::Rgbd, 8.0);
    verdict(
        pc < rgb && pc < rgbd,
        format!("mean |ΔQ/Q|: pointcloud at 0.2 = {pc:.4}, rgb at 8 px = {rgb:.4}, rgbd at 8 px = {rgbd:.4}"),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", criterion_1),
        (2, "PointNet invariances", criterion_2),
        (3, "geometry round trip", criterion_3),
        (4, "SAC fixed point", criterion_4),
        (5, "DrQ degeneracy", criterion_5),
        (6, "modality ordering at desk scale", criterion_6),
        (7, "value robustness ordering", criterion_7),
        (8, "soft-update arithmetic", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        let label = format!("criterion {n} ({name})");
        if !filter.is_empty() && !filter.iter().any(|a| label.contains(a.as_str())) {
            continue;
        }
        match f() {
            Outcome::Pass(d) => println!("{label}: PASS - {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("{label}: FAIL - {d}");
            }
            Outcome::Skipped(d) => println!("{label}: SKIPPED - {d}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
