use std::path::Path;
use std::process::{Command, Output};

fn pcrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcrl")).args(args).output().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        format!(
            "# tiny run\nenv.point_budget = 32\nagent.point_widths = 8,16\nagent.embed_dim = 16\n\
             agent.hidden = 32,32\nagent.batch_size = 8\nagent.warmup_steps = 10\nrun.total_steps = 20\n\
             run.eval_interval = 10\nrun.log_interval = 5\nrun.eval_episodes = 2\n{extra}"
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_is_a_runtime_error_naming_the_file() {
    let o = pcrl(&["train", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.cfg"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(pcrl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pcrl(&["train", "x.cfg", "--no-such-flag"]).status.code(), Some(1));
    let o = pcrl(&["probe", "a.cfg", "b.pcrl", "--magnitudes", ""]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
    assert_eq!(pcrl(&["probe", "a.cfg", "b.pcrl"]).status.code(), Some(1));
    assert_eq!(pcrl(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_values_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "agent.gamma = yes\n");
    let o = pcrl(&["train", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 12"), "{}", stderr(&o));
}

#[test]
fn grad_check_passes() {
    let o = pcrl(&["grad-check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("matmul") && out.contains("critic_loss.pointnet"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn train_then_evaluate_probe_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let o = pcrl(&["train", &cfg, "--seed", "4", "--out", run_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,episode_return,critic_loss,actor_loss,alpha_loss,alpha,mean_q,eval_return\n"));
    assert_eq!(metrics.lines().count(), 5);
    let ckpt = run.join("ckpt_20.pcrl");
    let ckpt_s = ckpt.to_str().unwrap();

    let o = pcrl(&["eval", &cfg, ckpt_s, "--episodes", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("episodes,eval_return\n3,"));

    let o = pcrl(&["probe", &cfg, ckpt_s, "--magnitudes", "0,0.1,0.4", "--samples", "8"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1], "pointcloud,0,0,0,8");

    let o = pcrl(&["probe", &cfg, ckpt_s, "--magnitudes", "1", "--set", "env.modality=rgb"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("configuration"), "{}", stderr(&o));

    let o = pcrl(&["contrib", &cfg, ckpt_s, "--episodes", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 4);
}

#[test]
fn overrides_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("render");
    let o = pcrl(&["render", &cfg, "--out", out.to_str().unwrap(), "--episodes", "2", "--set", "env.image_width=40"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ppm = std::fs::read_to_string(out.join("obs_1_rgb.ppm")).unwrap();
    assert!(ppm.starts_with("P3\n40 84\n255\n"));
    assert!(out.join("obs_0_cloud.txt").exists());
    assert_eq!(pcrl(&["render", &cfg, "--set", "env.nope=1"]).status.code(), Some(2));
}

#[test]
fn compare_writes_one_row_per_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "env.image_height = 24\nenv.image_width = 24\n");
    let o = pcrl(&["compare", &cfg, "--modalities", "pointcloud,rgb", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("step,modality,seed,eval_return\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}
