use std::process::Command;

fn dosebo() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dosebo"))
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let status = dosebo()
            .args(["simulate", "--scenario", "scenario1", "--design", "P2", "--m", "5", "--seed", "7", "--threads", "2", "--out"])
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.path().join(out).join("metrics.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("scenario,design,stratum,iteration,metric,value,mc_se\n"));
    assert!(text.contains("scenario1,P2,0,20,dose_units,"));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 7);
    assert_eq!(manifest["replicates"], 5);
    assert_eq!(manifest["failures"], serde_json::json!([]));
}

#[test]
fn unknown_scenario_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dosebo()
        .args(["simulate", "--scenario", "scenario9", "--design", "P2", "--m", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}

#[test]
fn config_errors_point_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[[design]]\nname = \"P2\"\npersonalized = true\nreplication = \"two\"\n").unwrap();
    let out = dosebo()
        .args(["simulate", "--scenario", "scenario1", "--design", "P2", "--m", "1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("replication"), "{err}");
}

#[test]
fn custom_config_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/configs/default.toml")).unwrap();
    text.push_str("\n[[design]]\nname = \"P1-tiny\"\npersonalized = true\nreplication = 1\nmax_patients = 6\n");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, text).unwrap();
    let status = dosebo()
        .args(["simulate", "--scenario", "scenario2", "--design", "P1-tiny", "--m", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(dir.path().join("o/metrics.csv")).unwrap();
    assert!(csv.contains("scenario2,P1-tiny,all,3,sample_size,6.0,0.0\n"), "{csv}");
}

#[test]
fn serve_reads_port_and_state_dir_from_env() {
    use std::io::{Read, Write};
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = dosebo()
        .arg("serve")
        .env("DOSEBO_PORT", port.to_string())
        .env("DOSEBO_STATE_DIR", dir.path().join("state"))
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let mut reply = String::new();
    for _ in 0..100 {
        if let Ok(mut s) = std::net::TcpStream::connect(("127.0.0.1", port)) {
            s.write_all(b"GET /v1/trials HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
            s.read_to_string(&mut reply).unwrap();
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.ends_with("[]"), "{reply}");
    assert!(dir.path().join("state").is_dir());
}
