use super::*;
use crate::autodiff::Tape;
use crate::env::{Modality, Observation};
use crate::error::Error;
use crate::nn::Encoder;
use crate::rng::seeded;
use crate::sac::{build_agent, train, Agent, FrameStack};

fn small(modality: Modality) -> RunConfig {
    let text = format!(
        "env.modality = {modality}\nenv.point_budget = 32\nenv.image_height = 24\nenv.image_width = 24\n\
         agent.point_widths = 8,16\nagent.embed_dim = 16\nagent.hidden = 32,32\nagent.batch_size = 8\n\
         agent.warmup_steps = 10\nagent.buffer_capacity = 64\nrun.total_steps = 20\nrun.eval_interval = 10\n\
         run.log_interval = 5\nrun.eval_episodes = 3\nrun.checkpoint_interval = 0\n"
    );
    parse_config(&text).unwrap()
}

fn agent_for(cfg: &RunConfig) -> Agent<f32> {
    build_agent(&cfg.env, &cfg.agent, 3).unwrap()
}

#[test]
fn zero_magnitude_changes_nothing() {
    for m in Modality::ALL {
        let cfg = small(m);
        let report = probe_robustness(&agent_for(&cfg), &cfg, &[0.0, 0.2, 1.0], 10, &mut seeded(1)).unwrap();
        assert_eq!(report.rows[0].mean, 0.0, "{m}");
        assert_eq!(report.rows[0].std, 0.0);
        let mags: Vec<f64> = report.rows.iter().map(|r| r.magnitude).collect();
        assert_eq!(mags, vec![0.0, 0.2, 1.0]);
        assert!(report.rows.iter().all(|r| r.mean >= 0.0));
        assert_eq!(report.modality, m.to_string());
    }
}

#[test]
fn probe_rejects_bad_requests() {
    let cfg = small(Modality::PointCloud);
    let ag = agent_for(&cfg);
    assert!(matches!(probe_robustness(&ag, &cfg, &[], 4, &mut seeded(1)), Err(Error::Input(_))));
    assert!(matches!(probe_robustness(&ag, &cfg, &[0.3, 0.1], 4, &mut seeded(1)), Err(Error::Input(_))));
    let other = small(Modality::Rgb);
    assert!(matches!(probe_robustness(&ag, &other, &[0.1], 4, &mut seeded(1)), Err(Error::Config(_))));
}

#[test]
fn robustness_csv_layout() {
    let cfg = small(Modality::PointCloud);
    let report = probe_robustness(&agent_for(&cfg), &cfg, &[0.0, 0.5], 4, &mut seeded(2)).unwrap();
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], ROBUSTNESS_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("pointcloud,0,0,0,4"));
}

/// Per-point features from one-point clouds, then a first-index argmax scan.
fn brute_force_flags(agent: &Agent<f32>, rows: &[f32], n: usize) -> Vec<bool> {
    let Encoder::PointNet(net) = &agent.nets.encoder else { unreachable!() };
    let c = net.input_width;
    let mut tape = Tape::new();
    let x = tape.constant(&[n, 1, c], rows.to_vec()).unwrap();
    let (feat, _) = net.pooled(&mut tape, &agent.nets.encoder_params, x).unwrap();
    let feat = tape.value(feat);
    let w = net.pooled_width();
    let mut flags = vec![false; n];
    for d in 0..w {
        let mut best = 0;
        for i in 1..n {
            if feat[i * w + d] > feat[best * w + d] {
                best = i;
            }
        }
        flags[best] = true;
    }
    flags
}

#[test]
fn contribution_flags_match_brute_force() {
    let cfg = small(Modality::PointCloud);
    let ag = agent_for(&cfg);
    let rows = contrib_report(&ag, &cfg, 6, &mut seeded(4)).unwrap();
    assert_eq!(rows.len(), 6);
    let mut rng = seeded(4);
    let mut fs = FrameStack::new(1).unwrap();
    for r in &rows {
        assert!(r.contributing_fraction > 0.0 && r.contributing_fraction <= 1.0);
        assert!(r.contributing_fraction <= 16.0 / 32.0);
        assert!((r.sphere0_fraction + r.sphere1_fraction - 1.0).abs() < 1e-12);
        let (_, obs) = crate::env::reset(&cfg.env, &mut rng).unwrap();
        let Observation::Cloud(cloud) = fs.reset(obs).unwrap() else { unreachable!() };
        assert_eq!(r.flags, brute_force_flags(&ag, &cloud.rows::<f32>(), cloud.len()));
    }
    let csv = contrib_csv(&rows);
    assert_eq!(csv.lines().next(), Some(CONTRIB_HEADER));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn contributions_need_point_clouds() {
    let cfg = small(Modality::Rgbd);
    let ag = agent_for(&cfg);
    assert!(matches!(contrib_report(&ag, &cfg, 2, &mut seeded(1)), Err(Error::Config(_))));
}

#[test]
fn single_run_comparison_matches_standalone_training() {
    let base = small(Modality::PointCloud);
    let rows = compare_modalities(&base, &[Modality::PointCloud], &[7], &mut |_, _, _| {}).unwrap();
    let cfg = run_variant(&base, Modality::PointCloud, 7).unwrap();
    let solo = train(&cfg.env, &cfg.agent, &cfg.run).unwrap();
    let evals: Vec<(u64, u64)> = solo
        .rows
        .iter()
        .filter_map(|r| r.eval_return.map(|e| (r.step, e.to_bits())))
        .collect();
    assert_eq!(rows.iter().map(|r| (r.step, r.eval_return.to_bits())).collect::<Vec<_>>(), evals);
}

#[test]
fn comparison_row_count_is_total_evaluations() {
    let base = small(Modality::PointCloud);
    let rows = compare_modalities(&base, &[Modality::PointCloud, Modality::Rgb], &[1, 2], &mut |_, _, _| {}).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    let csv = compare_csv(&rows);
    assert_eq!(csv.lines().next(), Some(COMPARE_HEADER));
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn pixel_correspondence_is_positive_and_small() {
    let cfg = parse_config("").unwrap();
    let c = pixel_correspondence(&cfg, 1, 4, &mut seeded(5)).unwrap();
    assert!(c.pixels > 0);
    let [dx, dy, dz] = c.mean_abs_delta;
    assert!(dx > 0.0 && dx < 1.0 && dz > 0.0 && dz < 1.0, "{c:?}");
    assert!(dy >= 0.0);
}

#[test]
fn gradient_suite_passes() {
    let lines = grad_check_suite(1).unwrap();
    assert!(lines.iter().any(|l| l.name == "critic_loss.cnn"));
    for l in &lines {
        assert!(l.passed(), "{}: {}", l.name, l.max_rel_error);
    }
}
