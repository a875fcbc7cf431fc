use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_beliefnet");

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("BELIEFNET_THREADS").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, agents: &str) {
    let text = format!(
        "theta = 0.6\n\n[network]\nkind = \"barabasi_albert\"\nn = 12\nm = 2\nseed = 3\n\n\
         [agents]\n{agents}\n\n[sim]\nhorizon = 6\nreplicates = 3000\nseed = 11\n"
    );
    std::fs::write(dir.join("run.toml"), text).unwrap();
}

const UNIFORM: &str = "mode = \"uniform_variance\"\nlow = 0.009\nhigh = 0.18\nseed = 5";

#[test]
fn generate_writes_loadable_network() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--kind", "ba", "--n", "30", "--m", "3", "--seed", "9", "--out", "net.txt"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("agents=30 mean_out_degree="));
    let net = beliefnet::network::load_network(dir.path().join("net.txt")).unwrap();
    assert_eq!(net.n(), 30);

    let out = run(&["generate", "--kind", "ring", "--n", "6", "--k", "2", "--out", "ring.txt"], dir.path());
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).trim(), "agents=6 mean_out_degree=4");

    let out = run(&["generate", "--kind", "ba", "--n", "3", "--m", "5", "--out", "bad.txt"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_analyze_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), UNIFORM);
    let out = run(&["simulate", "run.toml", "--histogram", "0,3", "--record-trajectories"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    for f in ["moments.csv", "metadata.txt", "histogram.csv", "trajectories.csv"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let moments = std::fs::read_to_string(out_dir.join("moments.csv")).unwrap();
    assert_eq!(moments.lines().count(), 1 + 7 * 12);
    let traj = std::fs::read_to_string(out_dir.join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 3000 * 7 * 12);

    assert_eq!(code(&run(&["analyze", "run.toml"], dir.path())), 0);
    let out = run(&["compare", "out/moments.csv", "out/analytic.csv", "--report", "report.txt"], dir.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).starts_with("cells=84 "));
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(report.lines().count(), 85);

    // an impossible floor turns the same data into a comparison failure
    let out = run(&["compare", "out/moments.csv", "out/analytic.csv", "--floor", "1.0"], dir.path());
    assert_eq!(code(&out), 4);
    // arguments swapped
    let out = run(&["compare", "out/analytic.csv", "out/moments.csv"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_flags_a_wrong_state() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), UNIFORM);
    assert_eq!(code(&run(&["simulate", "run.toml"], dir.path())), 0);
    let shifted = std::fs::read_to_string(dir.path().join("run.toml")).unwrap().replace("theta = 0.6", "theta = 0.7");
    std::fs::write(dir.path().join("shifted.toml"), shifted).unwrap();
    assert_eq!(code(&run(&["analyze", "shifted.toml", "--out-dir", "alt"], dir.path())), 0);
    let out = run(&["compare", "out/moments.csv", "alt/analytic.csv"], dir.path());
    assert_eq!(code(&out), 4);
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "mode = \"homogeneous\"\na = 0.01\nb = 1.0\nr = 1.0");
    let mut files = Vec::new();
    for (threads, sub) in [("1", "t1"), ("4", "t4"), ("4", "t4b")] {
        let out = run(&["simulate", "run.toml", "--threads", threads, "--out-dir", sub], dir.path());
        assert_eq!(code(&out), 0);
        files.push(std::fs::read(dir.path().join(sub).join("moments.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[1], files[2]);

    let out = Command::new(BIN)
        .args(["simulate", "run.toml", "--out-dir", "env"])
        .current_dir(dir.path())
        .env("BELIEFNET_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(dir.path().join("env/moments.csv")).unwrap(), files[0]);
}

#[test]
fn config_errors_exit_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "mode = \"homogeneous\"\na = 1.0\nb = 1.0");
    assert_eq!(code(&run(&["simulate", "run.toml"], dir.path())), 2);
    assert_eq!(code(&run(&["simulate", "missing.toml"], dir.path())), 2);
    assert_eq!(code(&run(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&run(&["--help"], dir.path())), 0);

    write_config(dir.path(), UNIFORM);
    let out = Command::new(BIN)
        .args(["simulate", "run.toml"])
        .current_dir(dir.path())
        .env("BELIEFNET_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn fit_cost_and_reward() {
    let dir = tempfile::tempdir().unwrap();
    let mut cost = String::from("cost,variance,count\n");
    for v in [0.01f64, 0.02, 0.04, 0.08, 0.16] {
        cost.push_str(&format!("{:e},{v},30\n", 2.0 * v.powf(-0.5)));
    }
    std::fs::write(dir.path().join("cost.csv"), cost).unwrap();
    let out = run(&["fit", "cost.csv", "--mode", "cost"], dir.path());
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{key}="))).unwrap();
        line[key.len() + 1..].parse().unwrap()
    };
    assert!((value("a") - 2.0).abs() < 1e-9 * 2.0);
    assert!((value("b") - 0.5).abs() < 1e-9 * 0.5);

    std::fs::write(dir.path().join("train.csv"), "reward,variance\n1,0.05\n2,0.02\n").unwrap();
    std::fs::write(dir.path().join("test.csv"), "reward,variance\n1,0.04\n2,0.025\n").unwrap();
    let out = run(&["fit", "train.csv", "--mode", "reward", "--a", "2", "--b", "0.5", "--test", "test.csv"], dir.path());
    assert_eq!(code(&out), 0);
    let last = stdout(&out).lines().last().unwrap().to_string();
    // |0.05 - 0.04| / 0.04 and |0.02 - 0.025| / 0.025
    let err: f64 = last.strip_prefix("mean_rel_err=").unwrap().parse().unwrap();
    assert!((err - 0.225).abs() < 1e-12);

    assert_eq!(code(&run(&["fit", "train.csv", "--mode", "reward"], dir.path())), 2);
    std::fs::write(dir.path().join("flat.csv"), "cost,variance,count\n1,0.1,5\n2,0.1,5\n").unwrap();
    assert_eq!(code(&run(&["fit", "flat.csv", "--mode", "cost"], dir.path())), 3);
}
