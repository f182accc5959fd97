use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use quadmix::export::{read_export, ExportRecord};
use quadmix::gait::GaitType;
use quadmix::reward::{select_reference_gait, SwitchCriteria};

const TINY: &str = r#"
[sac]
steps_per_epoch = 100
episode_steps = 50
batch = 16
actor_hidden = [16]
critic_hidden = [16]
warmup_steps = 50

[criteria]
episodes_per_candidate = 1

[criteria.cma]
population = 6

[criteria.schedule]
epochs_per_generation = 1

[estimator]
episodes = 4
epochs = 2
hidden = [16]
batch = 64
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_quadmix"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn quadmix")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn invalid_flags_print_usage() {
    let out = run(&["train-expert", "--task", "moonwalk"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("possible values"));
    let out = run(&["--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[sac]\nlearning_rate = 0.1\n").unwrap();
    let out = run(&["--config", s(&p), "train-expert", "--task", "trot", "--epochs", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn zero_epoch_expert_writes_initialized_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "--out",
        s(dir.path()),
        "train-expert",
        "--task",
        "trot",
        "--epochs",
        "0",
    ]);
    let ckpt = dir.path().join("experts/trot.ckpt");
    assert!(ckpt.exists());
    let manifest = std::fs::read_to_string(dir.path().join("experts/manifest.toml")).unwrap();
    assert!(manifest.contains("gait = \"trot\""));
    let curve = std::fs::read_to_string(dir.path().join("curves/expert_trot.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

fn full_pipeline(out: &Path, cfg: &Path, seed: &str) {
    let common = ["--config", s(cfg), "--out", s(out), "--seed", seed];
    for task in ["recovery", "trot", "pace", "bound", "gallop"] {
        ok(&[&common[..], &["train-expert", "--task", task, "--epochs", "1"]].concat());
    }
    ok(&[&common[..], &["train-gating", "--epochs", "1"]].concat());
    ok(&[&common[..], &["optimize-criteria", "--generations", "3"]].concat());
    ok(&[&common[..], &["train-estimator"]].concat());
    ok(&[&common[..], &["evaluate", "--mode", "composite", "--episodes", "2"]].concat());
    ok(&[
        &common[..],
        &[
            "evaluate",
            "--mode",
            "manual-switch",
            "--episodes",
            "2",
            "--x1",
            "0.5",
            "--x2",
            "3",
        ],
    ]
    .concat());
    let traj = out.join("export.jsonl");
    ok(&[
        &common[..],
        &["export", "--trajectory", s(&traj), "--episodes", "2", "--goal", "3,-2"],
    ]
    .concat());
}

#[test]
fn pipeline_is_bit_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    full_pipeline(&a, &cfg, "11");
    full_pipeline(&b, &cfg, "11");
    full_pipeline(&c, &cfg, "12");
    let (ta, tb, tc) = (tree(&a), tree(&b), tree(&c));
    assert!(ta.len() >= 20, "{:?}", ta.iter().map(|t| &t.0).collect::<Vec<_>>());
    assert_eq!(ta.len(), tb.len());
    for ((pa, ba), (pb, bb)) in ta.iter().zip(&tb) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs between identical runs", pa.display());
    }
    assert!(ta.iter().zip(&tc).any(|(x, y)| x.1 != y.1));

    let history = std::fs::read_to_string(a.join("criteria/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(a.join("criteria/best.toml").exists());
    assert!(a.join("experts/gating.ckpt").exists());
    assert!(a.join("estimator/estimator.ckpt").exists());
    assert_eq!(read_export(a.join("export.jsonl")).unwrap().len(), 100);
}

/// Every logged action of the manual-switch baseline comes from the expert
/// the thresholds select for the state it was computed from.
#[test]
fn manual_switch_follows_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for task in ["recovery", "trot", "pace", "bound", "gallop"] {
        ok(&["--out", s(out), "train-expert", "--task", task, "--epochs", "0"]);
    }
    let criteria = SwitchCriteria::new(1.5, 4.0).unwrap();
    ok(&[
        "--out",
        s(out),
        "evaluate",
        "--mode",
        "manual-switch",
        "--episodes",
        "4",
        "--x1",
        "1.5",
        "--x2",
        "4",
    ]);
    let records = read_export(out.join("eval/manual_switch.jsonl")).unwrap();
    assert_eq!(records.len(), 4 * 250);
    let active = |r: &ExportRecord| GaitType::ALL[r.expert_weights.iter().position(|w| *w == 1.0).unwrap()];
    let mut seen = std::collections::HashSet::new();
    for ep in records.chunks(250) {
        for w in ep.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            let d = ((cur.goal[0] - prev.base_pos[0]).powi(2) + (cur.goal[1] - prev.base_pos[1]).powi(2)).sqrt();
            let want = if prev.body_contact {
                GaitType::Recovery
            } else {
                select_reference_gait(d, &criteria).unwrap()
            };
            assert_eq!(active(cur), want, "t={} d={d}", cur.t);
            seen.insert(want);
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval/manual_switch_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["episodes"].as_array().unwrap().len(), 4);
    assert!(!seen.is_empty());
}

#[test]
fn hold_export_has_250_lines_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        ok(&[
            "--seed",
            "3",
            "export",
            "--mode",
            "hold",
            "--episodes",
            "3",
            "--trajectory",
            s(p),
        ]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 750);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let records = read_export(&a).unwrap();
    for ep in records.chunks(250) {
        assert_eq!(ep[0].t, 0.04);
        assert!((ep[249].t - 10.0).abs() < 1e-9);
    }
    let empty = dir.path().join("empty.jsonl");
    ok(&["export", "--mode", "hold", "--episodes", "0", "--trajectory", s(&empty)]);
    assert_eq!(std::fs::metadata(&empty).unwrap().len(), 0);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_server(extra: &[&str]) -> (Server, String) {
    let mut child = bin()
        .args(["serve", "--port", "0", "--mode", "hold"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_string();
    (Server(child), addr)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_steering_round_trip() {
    use futures_util::{SinkExt, StreamExt};
    use tokio_tungstenite::tungstenite::Message;

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("telemetry.jsonl");
    let assets = dir.path().join("ui");
    std::fs::create_dir_all(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<html>steer</html>").unwrap();
    let (_server, addr) = start_server(&["--log", s(&log), "--assets", s(&assets)]);
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws"))
        .await
        .unwrap();

    async fn next_frame(
        ws: &mut (impl futures_util::Stream<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin),
    ) -> serde_json::Value {
        loop {
            match ws.next().await.unwrap().unwrap() {
                Message::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
                _ => continue,
            }
        }
    }

    let mut prev = next_frame(&mut ws).await;
    for _ in 0..10 {
        let f = next_frame(&mut ws).await;
        assert_eq!(f["v"], 1);
        let dt = f["t"].as_f64().unwrap() - prev["t"].as_f64().unwrap();
        assert!((dt - 0.04).abs() < 1e-9, "dt {dt}");
        let sum: f64 = f["expert_weights"]
            .as_array()
            .unwrap()
            .iter()
            .map(|w| w.as_f64().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-6);
        prev = f;
    }

    for junk in [
        "not json",
        r#"{"v":9,"reset":{}}"#,
        r#"{"set_goal":[4,0]}"#,
        r#"{"fly":true}"#,
    ] {
        ws.send(Message::Text(junk.into())).await.unwrap();
    }
    ws.send(Message::Text(r#"{"v":1,"set_goal":[1,0]}"#.into()))
        .await
        .unwrap();
    let mut acked = None;
    for _ in 0..100 {
        let f = next_frame(&mut ws).await;
        if f["goal_command"] == serde_json::json!([1.0, 0.0]) {
            acked = Some(f);
            break;
        }
    }
    let f = acked.expect("goal acknowledged");
    assert_eq!(f["ref_gait"], "gallop");
    assert!((f["goal_offset"][0].as_f64().unwrap() - 15.0).abs() < 0.2);

    ws.send(Message::Text(r#"{"set_goal":[0,0]}"#.into())).await.unwrap();
    loop {
        let f = next_frame(&mut ws).await;
        if f["goal_command"] == serde_json::json!([0.0, 0.0]) {
            assert_eq!(f["ref_gait"], "trot");
            break;
        }
    }

    ws.send(Message::Text(r#"{"push":[0,60,0]}"#.into())).await.unwrap();
    let mut pushed = false;
    for _ in 0..25 {
        let f = next_frame(&mut ws).await;
        if f["true_velocity"][1].as_f64().unwrap().abs() > 0.5 {
            pushed = true;
            break;
        }
    }
    assert!(pushed, "push had no visible effect");

    ws.send(Message::Text(r#"{"reset":{}}"#.into())).await.unwrap();
    loop {
        let f = next_frame(&mut ws).await;
        if f["resets"].as_u64().unwrap() >= 1 {
            break;
        }
    }
    ws.close(None).await.unwrap();

    let page = tokio::task::spawn_blocking(move || {
        use std::io::{Read, Write};
        let mut conn = std::net::TcpStream::connect(&addr).unwrap();
        conn.write_all(b"GET / HTTP/1.0\r\nHost: x\r\n\r\n").unwrap();
        let mut body = String::new();
        conn.read_to_string(&mut body).unwrap();
        body
    })
    .await
    .unwrap();
    assert!(page.contains("steer"), "{page}");
    let logged = std::fs::read_to_string(&log).unwrap();
    assert!(logged.lines().count() >= 10);
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let first = ok(&["--config", s(&cfg), "--seed", "5", "show-config"]).stdout;
    let again = dir.path().join("again.toml");
    std::fs::write(&again, &first).unwrap();
    let second = ok(&["--config", s(&again), "show-config"]).stdout;
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("seed = 5\n"));
    assert!(text.contains("steps_per_epoch = 100"));
}
