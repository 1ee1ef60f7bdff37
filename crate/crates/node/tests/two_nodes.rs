mod common;

use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use common::Api;
use subjektiv_core::patterns::case;
use subjektiv_core::pdl;
use subjektiv_node::cluster::{run_case_on_nodes, split_model};

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

struct Proc(Child);

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn spawn(dir: &Path, company: &str, bus: u16, http: u16, peer: (&str, u16)) -> Proc {
    let cfg = dir.join(format!("{company}.conf"));
    std::fs::write(
        &cfg,
        format!(
            "company = {company}\nlisten = 127.0.0.1:{bus}\nhttp = 127.0.0.1:{http}\n\
             peer = {}@127.0.0.1:{}\nstore = {}\nclock = virtual\n",
            peer.0,
            peer.1,
            dir.join(company).display()
        ),
    )
    .unwrap();
    let child = Command::new(env!("CARGO_BIN_EXE_subjektiv"))
        .args(["serve", "--config", cfg.to_str().unwrap()])
        .env("RUST_LOG", "off")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    Proc(child)
}

fn wait_healthy(url: &str) {
    let client = reqwest::blocking::Client::new();
    let deadline = Instant::now() + Duration::from_secs(20);
    while Instant::now() < deadline {
        if client
            .get(format!("{url}/health"))
            .send()
            .is_ok_and(|r| r.status().is_success())
        {
            return;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    panic!("{url} never became healthy");
}

#[test]
fn two_processes_run_a_case_and_answer_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (bus_a, bus_b, http_a, http_b) = (free_port(), free_port(), free_port(), free_port());
    let _a = spawn(dir.path(), "a", bus_a, http_a, ("b", bus_b));
    let _b = spawn(dir.path(), "b", bus_b, http_b, ("a", bus_a));
    let urls = vec![
        format!("http://127.0.0.1:{http_a}"),
        format!("http://127.0.0.1:{http_b}"),
    ];
    for u in &urls {
        wait_healthy(u);
    }

    let c = case("send_receive").unwrap();
    let model = split_model(&c.model, "a", "b");
    let source = pdl::serialize(&model);
    for u in &urls {
        let (status, body) = Api::new(u.clone()).post_text("/processes", &source);
        assert!(status.is_success(), "{body}");
    }

    let report = run_case_on_nodes(&c, &urls, &model).unwrap();
    assert!(report.passed(), "{}", report.line());

    let cli = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_subjektiv"))
            .args(args)
            .output()
            .unwrap()
    };
    let started = cli(&[
        "start",
        &model.name,
        "--on",
        &urls[0],
        "--starter",
        "Customer=1",
    ]);
    assert_eq!(
        started.status.code(),
        Some(0),
        "{} {}",
        String::from_utf8_lossy(&started.stdout),
        String::from_utf8_lossy(&started.stderr)
    );
    let instance: serde_json::Value = serde_json::from_slice(&started.stdout).unwrap();
    let id = instance["instance"].as_str().unwrap();

    let listed = cli(&["tasks", "list", "--on", &urls[0], "--instance", id]);
    assert_eq!(listed.status.code(), Some(0));
    let tasks: serde_json::Value = serde_json::from_slice(&listed.stdout).unwrap();
    let tasks = tasks.as_array().unwrap();
    assert!(!tasks.is_empty());

    let task = tasks[0]["id"].as_str().unwrap();
    let bad = cli(&[
        "tasks",
        "complete",
        task,
        "--on",
        &urls[0],
        "--choice",
        "{\"branch\":\"nope\"}",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}
