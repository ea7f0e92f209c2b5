#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use soundmark_core::manifest::write_manifest;
use soundmark_core::{AudioClipRef, CurationRecord};
use soundmark_gateway::{Behavior, Fixture, MockServer};

pub const PINNED: &str = "2025-06-01T00:00:00Z";

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_soundmark"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn soundmark")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn clip_id(i: usize) -> String {
    format!("clip-{i:05}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    BothEmpty,
    Agree,
    Disagree,
}

/// `n_bypass` both-empty clips, then `n_agree` identical pairs, then
/// `n_disagree` pairs with nothing in common.
pub fn kinds(n_bypass: usize, n_agree: usize, n_disagree: usize) -> Vec<Kind> {
    let mut out = vec![Kind::BothEmpty; n_bypass];
    out.extend(vec![Kind::Agree; n_agree]);
    out.extend(vec![Kind::Disagree; n_disagree]);
    out
}

pub fn fixture_for(kinds: &[Kind]) -> Fixture {
    let mut f = Fixture::default();
    for (i, kind) in kinds.iter().enumerate() {
        let id = clip_id(i);
        let (a, b) = match kind {
            Kind::BothEmpty => (Behavior::empty(), Behavior::empty()),
            Kind::Agree => (
                Behavior::text(format!("台北車站 第{i}號 出口")),
                Behavior::text(format!("台北車站，第{i}號出口。")),
            ),
            Kind::Disagree => (
                Behavior::text("甲乙丙丁戊己庚辛"),
                Behavior::text("night market"),
            ),
        };
        f.engine("asr-a").clips.insert(id.clone(), a);
        f.engine("asr-b").clips.insert(id, b);
    }
    f
}

/// Script `clips` so that engine A never answers in time.
pub fn inject_timeouts(f: &mut Fixture, clips: &[usize]) {
    for &i in clips {
        f.engine("asr-a")
            .clips
            .insert(clip_id(i), Behavior::text("too late").delayed(2_000));
    }
}

pub fn raw_manifest(dir: &Path, n: usize) -> PathBuf {
    let records: Vec<_> = (0..n)
        .map(|i| {
            let id = clip_id(i);
            CurationRecord::unprocessed(AudioClipRef::new(
                &id,
                format!("s3://corpus/{id}.wav"),
                12.5,
                "synthetic",
            ))
        })
        .collect();
    let path = dir.join("raw.jsonl");
    write_manifest(&path, &records).unwrap();
    path
}

pub fn config_toml(server: &MockServer, workers: usize) -> String {
    format!(
        r#"workers = {workers}
pinned_timestamp = "{PINNED}"
progress_every = 0

[[engines]]
engine_id = "asr-a"
endpoint_url = "{a}"
timeout_ms = 500
max_retries = 1
backoff_base_ms = 10

[[engines]]
engine_id = "asr-b"
endpoint_url = "{b}"
timeout_ms = 500
max_retries = 1
backoff_base_ms = 10

[teacher]
engine_id = "teacher"
endpoint_url = "{t}"
timeout_ms = 5000

[router]
tau = 0.6

[scorer]
kind = "reference"
seed = 11
"#,
        a = server.engine_url("asr-a"),
        b = server.engine_url("asr-b"),
        t = server.teacher_url(),
    )
}

pub fn write_config(dir: &Path, name: &str, server: &MockServer, workers: usize) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, config_toml(server, workers)).unwrap();
    path
}

/// Multi-threaded runtime hosting a mock server while the binary runs.
pub fn serve(fixture: Fixture) -> (tokio::runtime::Runtime, MockServer) {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let server = rt.block_on(MockServer::start(fixture)).unwrap();
    (rt, server)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
