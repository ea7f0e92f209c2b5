//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soundmark_core::arbiter::{
    ac_ppl, arbitrate, AcousticContext, ArbitrationOutcome, ReferenceScorer, Scorer,
};
use soundmark_core::manifest::{read_manifest, MalformedPolicy};
use soundmark_core::similarity::{consistency_score, edit_distance};
use soundmark_core::stats::{default_taus, label_distribution, tau_sweep, Accounting};
use soundmark_core::vgc::{route, RouterConfig};
use soundmark_core::{
    AudioClipRef, Candidate, CandidateSet, CurationRecord, LabelTag, RouteDecision, ServiceError,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("similarity oracle", similarity_oracle),
        ("routing truth table and sweep", routing),
        ("AC-PPL numerics", ppl_numerics),
        ("arbitration oracle", arbitration_oracle),
        ("end-to-end synthetic corpus", end_to_end),
        ("label distribution and retention", distribution),
        ("determinism across runs and workers", determinism),
        ("fault isolation", fault_isolation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// --- helpers ---

fn candidate(engine: &str, text: &str) -> Candidate {
    Candidate {
        engine_id: engine.into(),
        raw_text: text.into(),
        normalized_text: text.into(),
    }
}

fn dp_levenshtein(a: &[char], b: &[char]) -> usize {
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in m[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = m[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            m[i][j] = sub.min(m[i - 1][j] + 1).min(m[i][j - 1] + 1);
        }
    }
    m[a.len()][b.len()]
}

fn random_string(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| match rng.gen_range(0..4) {
            0 => rng.gen_range('a'..='e'),
            1 => rng.gen_range('\u{4e00}'..='\u{4e08}'),
            2 => char::from_u32(rng.gen_range(0x20..0x2_0000)).unwrap_or('x'),
            _ => ['台', '北', '，', ' '][rng.gen_range(0..4)],
        })
        .collect()
}

/// ReferenceScorer that counts calls.
struct CountingScorer {
    inner: ReferenceScorer,
    calls: AtomicUsize,
}

#[async_trait::async_trait]
impl Scorer for CountingScorer {
    fn backend_id(&self) -> &str {
        "counting"
    }

    async fn score(&self, text: &str, ctx: &AcousticContext) -> Result<Vec<f64>, ServiceError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.inner.logprobs(text, &ctx.context_token))
    }
}

fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .build()
        .unwrap()
        .block_on(f)
}

// --- criteria ---

fn similarity_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let started = Instant::now();
    for i in 0..1000 {
        let a = random_string(&mut rng, 32);
        let b = random_string(&mut rng, 32);
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        let d = dp_levenshtein(&ca, &cb);
        ensure!(
            edit_distance(&a, &b) == d,
            "pair {i}: distance {} vs oracle {d}",
            edit_distance(&a, &b)
        );
        let max = ca.len().max(cb.len());
        let expected = match (ca.is_empty(), cb.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => (max - d) as f64 / max as f64,
        };
        ensure!(
            consistency_score(&a, &b) == expected,
            "pair {i}: score mismatch"
        );
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("1000 pairs exact in {elapsed:?}"))
}

fn routing() -> Outcome {
    let cfg = RouterConfig::default();
    let cells = [
        ("both-empty", "", "", RouteDecision::BypassSoundmark),
        (
            "one-empty",
            "abcde",
            "",
            RouteDecision::Pruned { score: 0.0 },
        ),
        (
            "S<tau",
            "abcde",
            "abxyz",
            RouteDecision::Pruned { score: 0.4 },
        ),
        (
            "S=tau",
            "abcde",
            "abcxy",
            RouteDecision::Pass { score: 0.6 },
        ),
        (
            "S>tau",
            "abcde",
            "abcde",
            RouteDecision::Pass { score: 1.0 },
        ),
    ];
    for (name, a, b, want) in cells {
        let set = CandidateSet::new("c", vec![candidate("a", a), candidate("b", b)]);
        let got = route(&set, &cfg).map_err(|e| e.to_string())?;
        ensure!(got == want, "{name}: got {got:?}, want {want:?}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs: Vec<_> = (0..500)
        .map(|i| {
            let a = random_string(&mut rng, 8);
            let mut b = a.clone();
            if rng.gen_bool(0.7) {
                b = random_string(&mut rng, 8);
            }
            CandidateSet::new(
                format!("p{i}"),
                vec![candidate("a", &a), candidate("b", &b)],
            )
        })
        .collect();
    let rows = tau_sweep(&pairs, &default_taus(), true).map_err(|e| e.to_string())?;
    ensure!(
        rows.windows(2).all(|w| w[1].pass <= w[0].pass),
        "pass counts increase somewhere"
    );
    let passes: Vec<_> = rows.iter().map(|r| r.pass).collect();
    Ok(format!("5/5 cells; sweep pass counts {passes:?}"))
}

fn ppl_numerics() -> Outcome {
    let rel = |got: f64, want: f64| ((got - want) / want).abs();
    let one = ac_ppl(&[0.0]).map_err(|e| e.to_string())?;
    ensure!(rel(one, 1.0) <= 1e-12, "ac_ppl([0]) = {one}");
    let half = 0.5f64.ln();
    let two = ac_ppl(&[half; 3]).map_err(|e| e.to_string())?;
    ensure!(rel(two, 2.0) <= 1e-12, "ac_ppl([ln .5]x3) = {two}");
    // e^2 from its Taylor series, independent of exp().
    let mut term = 1.0f64;
    let mut e2 = 1.0f64;
    for k in 1..40 {
        term *= 2.0 / k as f64;
        e2 += term;
    }
    let got = ac_ppl(&[-1.0, -2.0, -3.0]).map_err(|e| e.to_string())?;
    ensure!(
        rel(got, e2) <= 1e-12,
        "ac_ppl([-1,-2,-3]) = {got}, series {e2}"
    );
    Ok(format!("e^2 = {got:.12}"))
}

fn arbitration_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let reference = ReferenceScorer::new(99);
    block_on(async {
        for fixture in 0..200 {
            let n = rng.gen_range(3..=8);
            let mut cands: Vec<Candidate> = (0..n)
                .map(|i| {
                    let text = if rng.gen_bool(0.15) {
                        String::new()
                    } else {
                        random_string(&mut rng, 12)
                    };
                    let text = if text.is_empty() && rng.gen_bool(0.5) {
                        "x".into()
                    } else {
                        text
                    };
                    candidate(&format!("e{i}"), &text)
                })
                .collect();
            if cands.iter().all(|c| c.normalized_text.is_empty()) {
                cands[0] = candidate("e0", "fallback");
            }
            let set = CandidateSet::new(format!("f{fixture}"), cands.clone());
            let ctx = AcousticContext::for_clip(&format!("s3://f{fixture}.wav"));
            // Exhaustive minimum, first index on ties.
            let mut best: Option<(usize, f64)> = None;
            for (i, c) in cands
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.normalized_text.is_empty())
            {
                let ppl = ac_ppl(&reference.logprobs(&c.raw_text, &ctx.context_token)).unwrap();
                if best.is_none_or(|(_, b)| ppl < b) {
                    best = Some((i, ppl));
                }
            }
            let (want, _) = best.unwrap();
            match arbitrate(&set, &ctx, &reference)
                .await
                .map_err(|e| e.to_string())?
            {
                ArbitrationOutcome::Selected(c) => {
                    ensure!(
                        c.engine_id == cands[want].engine_id,
                        "fixture {fixture}: picked {} not e{want}",
                        c.engine_id
                    )
                }
                ArbitrationOutcome::PureAudioBypass => {
                    return Err(format!("fixture {fixture}: unexpected bypass"))
                }
            }
        }

        let tie = CandidateSet::new(
            "t",
            vec![
                candidate("first", "同一句話"),
                candidate("second", "同一句話"),
            ],
        );
        let ctx = AcousticContext::for_clip("s3://t.wav");
        match arbitrate(&tie, &ctx, &reference)
            .await
            .map_err(|e| e.to_string())?
        {
            ArbitrationOutcome::Selected(c) => {
                ensure!(c.engine_id == "first", "tie went to {}", c.engine_id)
            }
            other => return Err(format!("tie: {other:?}")),
        }

        let counting = CountingScorer {
            inner: ReferenceScorer::new(1),
            calls: AtomicUsize::new(0),
        };
        let empty = CandidateSet::new(
            "e",
            vec![candidate("a", ""), candidate("b", ""), candidate("c", "")],
        );
        let outcome = arbitrate(&empty, &ctx, &counting)
            .await
            .map_err(|e| e.to_string())?;
        ensure!(
            outcome == ArbitrationOutcome::PureAudioBypass,
            "all-empty gave {outcome:?}"
        );
        let calls = counting.calls.load(Ordering::SeqCst);
        ensure!(calls == 0, "all-empty made {calls} scorer calls");
        Ok(
            "200 fixtures match exhaustive min; tie to first engine; bypass with 0 calls"
                .to_owned(),
        )
    })
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (_rt, server) = serve(fixture_for(&kinds(100, 700, 200)));
    let cfg = write_config(dir.path(), "c.toml", &server, 16);
    let input = raw_manifest(dir.path(), 1000);
    let out_path = dir.path().join("curated.jsonl");
    let started = Instant::now();
    let out = run(&[
        "--config",
        p(&cfg),
        "curate",
        "--in",
        p(&input),
        "--out",
        p(&out_path),
    ]);
    let elapsed = started.elapsed();
    ensure!(
        code(&out) == 0,
        "exit {}: {}",
        code(&out),
        String::from_utf8_lossy(&out.stderr)
    );
    let report = stdout(&out);
    ensure!(
        report.contains("raw: 1000\nbypass: 100\npass: 700\npruned: 200\nerrored: 0\n"),
        "report was:\n{report}"
    );
    let (records, _) =
        read_manifest(&out_path, MalformedPolicy::Abort).map_err(|e| e.to_string())?;
    ensure!(records.len() == 1000, "{} records", records.len());
    let leaks = records
        .iter()
        .filter(|r| {
            r.route.is_some_and(|d| d.is_pruned()) && (r.caption.is_some() || !r.pairs.is_empty())
        })
        .count();
    ensure!(leaks == 0, "{leaks} pruned clips carry captions or pairs");
    let teacher_calls: u64 = (800..1000)
        .map(|i| server.hits(&format!("teacher/generate/{}", clip_id(i))))
        .sum();
    ensure!(
        teacher_calls == 0,
        "pruned clips reached the teacher {teacher_calls} times"
    );
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{{100, 700, 200}} in {elapsed:.2?} at 16 workers"))
}

fn distribution() -> Outcome {
    let published: [(LabelTag, u64, &str); 9] = [
        (LabelTag::Conversation, 464, "46.4"),
        (LabelTag::Entertainment, 171, "17.1"),
        (LabelTag::Education, 165, "16.5"),
        (LabelTag::Music, 124, "12.4"),
        (LabelTag::Others, 27, "2.7"),
        (LabelTag::Announcement, 20, "2.0"),
        (LabelTag::Media, 14, "1.4"),
        (LabelTag::Emergency, 8, "0.8"),
        (LabelTag::Cultural, 7, "0.7"),
    ];
    // Pack the multiset into multi-label records.
    let mut pools: Vec<(LabelTag, u64)> = published.iter().map(|(t, n, _)| (*t, *n)).collect();
    let mut records = Vec::new();
    while pools.iter().any(|(_, n)| *n > 0) {
        let id = format!("r{:05}", records.len());
        let mut r = CurationRecord::unprocessed(AudioClipRef::new(&id, "u", 30.0, "t"));
        for (tag, n) in pools.iter_mut().filter(|(_, n)| *n > 0).take(2) {
            r.labels.insert(*tag);
            *n -= 1;
        }
        records.push(r);
    }
    let report = label_distribution(&records).map_err(|e| e.to_string())?;
    let shown: Vec<String> = published
        .iter()
        .map(|(t, _, _)| format!("{:.1}", report.percent(*t)))
        .collect();
    let want: Vec<&str> = published.iter().map(|(_, _, s)| *s).collect();
    ensure!(shown == want, "got {shown:?}");
    let acc = Accounting::from_counts(522_572, 456_832, 522_572 - 456_832, 0.0);
    ensure!(
        (acc.retention - 0.8742).abs() <= 1e-4,
        "retention {}",
        acc.retention
    );
    Ok(format!(
        "{} over {} assignments; retention {:.4}",
        shown.join("/"),
        report.total_assignments,
        acc.retention
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (_rt, server) = serve(fixture_for(&kinds(100, 700, 200)));
    let input = raw_manifest(dir.path(), 1000);
    let mut outputs = Vec::new();
    for (run_no, workers) in [16, 16, 4, 1].into_iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{run_no}.toml"), &server, workers);
        let out_path = dir.path().join(format!("run{run_no}.jsonl"));
        let out = run(&[
            "--config",
            p(&cfg),
            "curate",
            "--in",
            p(&input),
            "--out",
            p(&out_path),
        ]);
        ensure!(code(&out) == 0, "run {run_no} exit {}", code(&out));
        outputs.push(fs::read(&out_path).unwrap());
    }
    for (i, bytes) in outputs.iter().enumerate().skip(1) {
        ensure!(*bytes == outputs[0], "run {i} differs from run 0");
    }
    Ok(format!(
        "4 runs (workers 16,16,4,1) byte-identical, {} bytes",
        outputs[0].len()
    ))
}

fn fault_isolation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let kinds = kinds(100, 700, 200);
    let input = raw_manifest(dir.path(), 1000);

    let (clean_rt, clean_server) = serve(fixture_for(&kinds));
    let cfg = write_config(dir.path(), "clean.toml", &clean_server, 16);
    let clean_path = dir.path().join("clean.jsonl");
    let out = run(&[
        "--config",
        p(&cfg),
        "curate",
        "--in",
        p(&input),
        "--out",
        p(&clean_path),
    ]);
    ensure!(code(&out) == 0, "clean run exit {}", code(&out));
    drop(clean_server);
    drop(clean_rt);

    let faulty: Vec<usize> = (0..1000).filter(|i| i % 20 == 7).collect();
    let mut fixture = fixture_for(&kinds);
    inject_timeouts(&mut fixture, &faulty);
    let (_rt, server) = serve(fixture);
    let cfg = write_config(dir.path(), "faulty.toml", &server, 16);
    let faulty_path = dir.path().join("faulty.jsonl");
    let out = run(&[
        "--config",
        p(&cfg),
        "curate",
        "--in",
        p(&input),
        "--out",
        p(&faulty_path),
    ]);
    ensure!(code(&out) == 2, "exit {} (want 2)", code(&out));

    let report = stdout(&out);
    let listed: BTreeSet<String> = report
        .lines()
        .filter_map(|l| l.strip_prefix("error: "))
        .map(|l| l.split_whitespace().next().unwrap().to_owned())
        .collect();
    let expected: BTreeSet<String> = faulty.iter().map(|&i| clip_id(i)).collect();
    ensure!(
        listed == expected,
        "listed {} errored clips, expected {}",
        listed.len(),
        expected.len()
    );
    ensure!(
        report.contains(&format!("errored: {}\n", faulty.len())),
        "report:\n{report}"
    );

    let clean = fs::read_to_string(&clean_path).unwrap();
    let faulty_text = fs::read_to_string(&faulty_path).unwrap();
    let (clean_lines, faulty_lines): (Vec<_>, Vec<_>) =
        (clean.lines().collect(), faulty_text.lines().collect());
    ensure!(
        clean_lines.len() == faulty_lines.len(),
        "line counts differ"
    );
    let mut same = 0;
    for (i, (c, f)) in clean_lines.iter().zip(&faulty_lines).enumerate() {
        if expected.contains(&clip_id(i)) {
            ensure!(
                f.contains("\"route\":null"),
                "errored clip {} has a route",
                clip_id(i)
            );
        } else {
            ensure!(
                c == f,
                "clip {} differs from the fault-free run",
                clip_id(i)
            );
            same += 1;
        }
    }
    Ok(format!(
        "exit 2, {} errored clips listed, {same} others identical",
        listed.len()
    ))
}
