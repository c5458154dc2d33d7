//! Acceptance criteria for the primary components, one line each.
//!
//! Runs without the libtest harness so the PASS/FAIL lines always show.

use std::collections::{BTreeSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use relkit_core::lang::{format_feature, normalize_feature, parse_feature, Clause, ClauseKind, FeatureFile, Scenario, Tag};
use relkit_core::lifecycle::{
    allowed_transitions, is_allowed, validate_history, CaseResult, CaseState, Configuration, LifecycleError, Role,
    TestCase, TransitionRequest, UiMode,
};
use relkit_core::netsim::{InstanceSpec, Latency, NetSim};
use relkit_core::orchestrator::{builtin_registry, run_scenario, run_suite, RunConfig, RunMode, ScenarioStatus};
use relkit_core::session::{
    classify_release, create_session, AssignStrategy, Change, ChangeKind, Phase, ReleaseKind, ReleaseScope,
    SessionError, TestPlan,
};
use relkit_store::{replay_recover, NewSession, OpenMode, Store, StoreError};
use serde_json::{json, Value};
use tower::ServiceExt;

const GOLDEN: &str = include_str!("../../core/tests/fixtures/three_nodes.feature");

type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("Golden scenario run", golden_run),
        ("Golden scenario negative variant", negative_variant),
        ("Visibility oracle equivalence", visibility_oracle),
        ("Lifecycle table exhaustion", lifecycle_table),
        ("Narrative replay", narrative_replay),
        ("Suite partitioning", suite_partitioning),
        ("Phase constraints", phase_constraints),
        ("Release classification", release_classification),
        ("Crash-consistent store", crash_consistent_store),
        ("Parser properties", parser_properties),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("PASS  {name} ({ms} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({ms} ms): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn relkit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relkit"))
}

fn golden_run() -> Outcome {
    let started = Instant::now();
    let file = parse_feature(GOLDEN, "three_nodes.feature").map_err(|e| e.to_string())?;
    ensure!(file.scenarios.len() == 1, "expected one scenario");
    let result = run_scenario(&file.scenarios[0], &builtin_registry(), &RunConfig::default());
    let wall = started.elapsed();
    ensure!(matches!(result.status, ScenarioStatus::Passed { .. }), "status {:?}", result.status);
    ensure!(result.virtual_ms <= 20_000, "virtual time {} ms", result.virtual_ms);
    ensure!(wall < Duration::from_secs(5), "wall time {wall:?}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three_nodes.feature");
    std::fs::write(&path, GOLDEN).unwrap();
    let out = relkit().arg("run").arg(&path).output().unwrap();
    ensure!(out.status.success(), "relkit run exited {:?}", out.status.code());
    Ok(())
}

fn negative_variant() -> Outcome {
    let text = GOLDEN.replace("NodeA->NodeC [autoStart], NodeB->NodeC [autoStart]", "NodeA->NodeC [autoStart]");
    ensure!(text != GOLDEN, "fixture did not contain the connection clause");
    let expected_line = text.lines().position(|l| l.contains("visible network of \"NodeB\"")).unwrap() + 1;
    let file = parse_feature(&text, "negative.feature").map_err(|e| e.to_string())?;
    let result = run_scenario(&file.scenarios[0], &builtin_registry(), &RunConfig::default());
    let ScenarioStatus::Failed { span, clause, expected, actual, .. } = &result.status else {
        return Err(format!("status {:?}", result.status));
    };
    ensure!(span.line == expected_line, "failed at line {} not {expected_line}", span.line);
    ensure!(clause.contains("visible network of \"NodeB\""), "failing clause `{clause}`");
    ensure!(expected == "{NodeB, NodeC}" && actual == "{NodeB}", "expected {expected} actual {actual}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("negative.feature");
    std::fs::write(&path, &text).unwrap();
    let out = relkit().arg("run").arg(&path).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    ensure!(out.status.code() == Some(1), "relkit run exited {:?}", out.status.code());
    ensure!(stdout.contains(&format!("negative.feature:{expected_line}:")), "line missing from output:\n{stdout}");
    Ok(())
}

/// Nodes reachable from `start` through relay nodes form a spine; the
/// visible set is the spine plus every direct neighbour of it.
fn spine_oracle(n: usize, adj: &[u32], relay: u32, start: usize) -> u32 {
    let mut spine = 1u32 << start;
    loop {
        let mut grown = spine;
        for i in 0..n {
            if spine & (1 << i) != 0 && (i == start || relay & (1 << i) != 0) {
                grown |= adj[i] & (relay | (1 << start));
            }
        }
        if grown == spine {
            break;
        }
        spine = grown;
    }
    let mut visible = spine;
    for i in 0..n {
        if spine & (1 << i) != 0 && (i == start || relay & (1 << i) != 0) {
            visible |= adj[i];
        }
    }
    visible
}

fn visibility_oracle() -> Outcome {
    let started = Instant::now();
    let name = |i: usize| format!("N{i}");
    let mut cases = 0u32;
    for n in 1..=4usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for edges in 0u32..(1 << pairs.len()) {
            let mut adj = vec![0u32; n];
            let mut specs: Vec<InstanceSpec> = (0..n).map(|i| InstanceSpec::new(name(i))).collect();
            for (k, &(a, b)) in pairs.iter().enumerate() {
                if edges & (1 << k) != 0 {
                    adj[a] |= 1 << b;
                    adj[b] |= 1 << a;
                    // alternate the declared direction; links are undirected
                    let (src, dst) = if k % 2 == 0 { (a, b) } else { (b, a) };
                    specs[src] = specs[src].clone().connect_to(&name(dst), true);
                }
            }
            for relay in 0u32..(1 << n) {
                let specs = specs.iter().enumerate().map(|(i, s)| s.clone().with_relay(relay & (1 << i) != 0)).collect();
                let mut sim = NetSim::provision(specs, Latency::default()).map_err(|e| e.to_string())?;
                sim.start_all();
                sim.advance(10_000);
                for start in 0..n {
                    let got = sim.visible_network(&name(start)).map_err(|e| e.to_string())?;
                    let mask = spine_oracle(n, &adj, relay, start);
                    let want: BTreeSet<String> = (0..n).filter(|i| mask & (1 << i) != 0).map(name).collect();
                    ensure!(got == want, "n={n} edges={edges:b} relay={relay:b} start={start}: {got:?} vs {want:?}");
                }
                cases += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(cases == 1098, "{cases} topologies");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(())
}

/// Allowed edges as documented: (from, to, roles) with T/D/M role letters.
const TABLE: &[(&str, &str, &str)] = &[
    ("Untested", "Passed", "T"),
    ("Untested", "Passed with Remarks", "T"),
    ("Untested", "Not applicable", "T"),
    ("Untested", "Failed", "T"),
    ("Untested", "Failed & Blocked", "T"),
    ("Untested", "Blocked", "DM"),
    ("Untested", "Won't test", "M"),
    ("Retest", "Passed", "T"),
    ("Retest", "Passed with Remarks", "T"),
    ("Retest", "Not applicable", "T"),
    ("Retest", "Failed", "T"),
    ("Retest", "Failed & Blocked", "T"),
    ("Failed", "Waiting for new build", "DM"),
    ("Failed", "Failed & Postponed", "M"),
    ("Failed & Blocked", "Waiting for new build", "DM"),
    ("Failed & Blocked", "Failed & Postponed", "M"),
    ("Blocked", "Retest", "DM"),
    ("Waiting for new build", "Retest", "DM"),
];

const FINAL: [&str; 5] = ["Passed", "Won't test", "Failed & Postponed", "Passed with Remarks", "Not applicable"];

fn role_letter(role: Role) -> char {
    match role {
        Role::Tester => 'T',
        Role::Developer => 'D',
        Role::TestManager => 'M',
    }
}

fn lifecycle_table() -> Outcome {
    let mut attempts = 0;
    for from in CaseState::ALL {
        for to in CaseState::ALL {
            for role in Role::ALL {
                let documented = TABLE
                    .iter()
                    .any(|&(f, t, r)| f == from.label() && t == to.label() && r.contains(role_letter(role)));
                ensure!(is_allowed(from, to, role) == documented, "{from} -> {to} as {role}");
                attempts += 1;
            }
        }
    }
    ensure!(attempts == 363, "{attempts} attempts");
    ensure!(CaseState::ALL.len() == 11, "state count");
    for s in CaseState::ALL {
        let absorbing = Role::ALL.iter().all(|&r| allowed_transitions(s, r).is_empty());
        ensure!(FINAL.contains(&s.label()) == absorbing, "{s}: final={} absorbing={absorbing}", s.is_final());
        ensure!(s.is_final() == FINAL.contains(&s.label()), "{s} finality");

        let mut seen = BTreeSet::from([s]);
        let mut queue = VecDeque::from([s]);
        let mut reaches_final = false;
        while let Some(x) = queue.pop_front() {
            reaches_final |= FINAL.contains(&x.label());
            for r in Role::ALL {
                for y in allowed_transitions(x, r) {
                    if seen.insert(y) {
                        queue.push_back(y);
                    }
                }
            }
        }
        ensure!(reaches_final, "{s} cannot reach a final state");
    }
    Ok(())
}

fn narrative_replay() -> Outcome {
    for third in [Role::Developer, Role::TestManager] {
        let cfg = Configuration::new("Windows 11", "default", "17", UiMode::Gui);
        let mut r = CaseResult::new("s1-1", "TC1", cfg);
        let at = |m| Utc.with_ymd_and_hms(2026, 5, 4, 9, m, 0).unwrap();
        let req = |from, to, role, issue: Option<&str>| TransitionRequest {
            expected_from: from,
            to,
            role,
            actor: format!("{role}"),
            note: None,
            issue_ref: issue.map(str::to_owned),
        };
        let missing = r.transition(&req(CaseState::Untested, CaseState::Failed, Role::Tester, None), at(0));
        ensure!(matches!(missing, Err(LifecycleError::MissingIssueRef { .. })), "omitted issue ref: {missing:?}");
        ensure!(r.state == CaseState::Untested && r.history.is_empty(), "rejected hop changed the result");
        let walk = [
            (CaseState::Untested, CaseState::Failed, Role::Tester, Some("#1234")),
            (CaseState::Failed, CaseState::WaitingForNewBuild, Role::Developer, None),
            (CaseState::WaitingForNewBuild, CaseState::Retest, third, None),
            (CaseState::Retest, CaseState::Passed, Role::Tester, None),
        ];
        for (i, (from, to, role, issue)) in walk.into_iter().enumerate() {
            r.transition(&req(from, to, role, issue), at(i as u32 + 1)).map_err(|e| format!("hop {i}: {e}"))?;
        }
        ensure!(r.state == CaseState::Passed, "ended in {}", r.state);
        ensure!(r.issue_ref.as_deref() == Some("#1234"), "issue ref {:?}", r.issue_ref);
        ensure!(validate_history(&r.history) == Ok(CaseState::Passed), "history does not validate");
    }
    Ok(())
}

fn generated_suite(slow: &[bool], tagged: &[bool]) -> FeatureFile {
    let mut text = String::new();
    for (i, (&s, &t)) in slow.iter().zip(tagged).enumerate() {
        if s {
            text.push_str("@Slow ");
        }
        if t {
            text.push_str("@Network");
        }
        text.push_str(&format!(
            "\nScenario: s{i}\nGiven instances \"A{i}, B{i}\" using the default build\nAnd configured network connections \"A{i}->B{i} [autoStart]\"\nWhen starting all instances\nThen all auto-start network connections should be ready within 20 seconds\n\n"
        ));
    }
    parse_feature(&text, "generated.feature").unwrap()
}

fn executed(report: &relkit_core::orchestrator::RunReport) -> BTreeSet<String> {
    report.results.iter().filter(|r| r.executed()).map(|r| r.title.clone()).collect()
}

fn suite_partitioning() -> Outcome {
    let registry = builtin_registry();
    let mut runner = TestRunner::new(Config { cases: 3, failure_persistence: None, ..Config::default() });
    let flags = (prop::collection::vec(any::<bool>(), 200), prop::collection::vec(any::<bool>(), 200));
    runner
        .run(&flags, |(slow, tagged)| {
            let files = [generated_suite(&slow, &tagged)];
            let standard = run_suite(&files, None, &registry, &RunConfig { parallelism: 4, ..RunConfig::default() });
            let full =
                run_suite(&files, None, &registry, &RunConfig { mode: RunMode::Full, parallelism: 4, ..RunConfig::default() });
            prop_assert_eq!(standard.results.len(), 200);
            for (r, &s) in standard.results.iter().zip(&slow) {
                prop_assert!(!(s && r.executed()), "slow scenario {} ran in standard mode", r.title);
                prop_assert_eq!(r.executed(), !s);
            }
            prop_assert!(full.results.iter().all(|r| r.executed()));
            prop_assert!(executed(&standard).is_subset(&executed(&full)));
            prop_assert!(standard.succeeded() && full.succeeded());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn configs(oses: usize) -> Vec<Configuration> {
    (0..oses).map(|i| Configuration::new(&format!("OS {i}"), "default", "17", UiMode::Gui)).collect()
}

fn cases(basic: &[bool]) -> Vec<TestCase> {
    basic
        .iter()
        .enumerate()
        .map(|(i, &b)| TestCase { id: format!("TC{i}"), title: format!("case {i}"), area: String::new(), feature: None, basic: b })
        .collect()
}

fn people(n: usize) -> BTreeSet<String> {
    (0..n).map(|i| format!("tester{i}")).collect()
}

fn phase_constraints() -> Outcome {
    let open = |phase, basic: &[bool], oses, testers| {
        create_session("s", phase, TestPlan::matrix("p", cases(basic), &configs(oses)), people(testers), Utc::now())
    };
    let rejected = |r: Result<_, SessionError>| matches!(r, Err(SessionError::PhaseConstraintViolation(_)));
    ensure!(rejected(open(Phase::Pretesting, &[true], 3, 1)), "Pretesting with three OS labels accepted");
    ensure!(rejected(open(Phase::Pretesting, &[true], 1, 3)), "Pretesting with three testers accepted");
    ensure!(open(Phase::Pretesting, &[true, false], 2, 2).is_ok(), "Pretesting at the limits rejected");
    ensure!(rejected(open(Phase::FinalTesting, &[true, false, true], 1, 2)), "FinalTesting with a non-basic case accepted");
    ensure!(open(Phase::FinalTesting, &[true, true], 2, 2).is_ok(), "FinalTesting with basic cases rejected");
    let wide = open(Phase::ReleaseTesting, &[true, false], 12, 4).map_err(|e| e.to_string())?;
    ensure!(!wide.warnings.is_empty(), "no warning for twelve configurations");
    ensure!(wide.results.len() == 24, "{} results", wide.results.len());
    let ten = open(Phase::ReleaseTesting, &[true], 10, 4).map_err(|e| e.to_string())?;
    ensure!(ten.warnings.is_empty(), "ten configurations warned: {:?}", ten.warnings);
    Ok(())
}

const KINDS: [ChangeKind; 5] =
    [ChangeKind::Bugfix, ChangeKind::InternalChange, ChangeKind::NewFeature, ChangeKind::UxChange, ChangeKind::BreakingChange];

fn scope(kinds: &[ChangeKind]) -> ReleaseScope {
    ReleaseScope { changes: kinds.iter().map(|&kind| Change { kind, description: String::new() }).collect() }
}

fn rank(kind: ReleaseKind) -> u8 {
    match kind {
        ReleaseKind::Maintenance => 0,
        ReleaseKind::Minor => 1,
        ReleaseKind::Major => 2,
    }
}

fn release_classification() -> Outcome {
    use ChangeKind::*;
    let examples = [
        (vec![Bugfix, InternalChange], ReleaseKind::Maintenance),
        (vec![NewFeature, UxChange, Bugfix], ReleaseKind::Minor),
        (vec![BreakingChange, NewFeature], ReleaseKind::Major),
    ];
    for (kinds, want) in examples {
        let got = classify_release(&scope(&kinds)).map_err(|e| e.to_string())?;
        ensure!(got == want, "{kinds:?} classified {got:?}, want {want:?}");
    }
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let gen = (prop::collection::vec(prop::sample::select(KINDS.to_vec()), 1..15), prop::sample::select(KINDS.to_vec()));
    runner
        .run(&gen, |(kinds, extra)| {
            let before = classify_release(&scope(&kinds)).unwrap();
            let mut more = kinds.clone();
            more.push(extra);
            let after = classify_release(&scope(&more)).unwrap();
            prop_assert!(rank(after) >= rank(before));
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("changes.json");
    std::fs::write(&path, r#"[{"kind":"Bugfix"},{"kind":"UxChange","description":"new toolbar"}]"#).unwrap();
    let out = relkit().args(["release", "classify", "--changes"]).arg(&path).output().unwrap();
    ensure!(String::from_utf8_lossy(&out.stdout).trim() == "Minor", "CLI printed {:?}", out.stdout);
    Ok(())
}

fn crash_consistent_store() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.log");
    let mut live = vec![relkit_store::Snapshot::default()];
    {
        let store = Store::open(&path, OpenMode::Strict).map_err(|e| e.to_string())?;
        let mut record = |store: &Store| live.push(store.snapshot());
        for k in 0..4 {
            store
                .create_session(NewSession {
                    id: None,
                    phase: Phase::ReleaseTesting,
                    plan: TestPlan::matrix("plan", cases(&[true, false, true]), &configs(2)),
                    testers: people(2),
                    planned_days: Some(20),
                })
                .map_err(|e| e.to_string())?;
            record(&store);
            let sid = format!("s{}", k + 1);
            store.assign(&sid, AssignStrategy::default()).map_err(|e| e.to_string())?;
            record(&store);
            for i in 1..=6 {
                let req = TransitionRequest {
                    expected_from: CaseState::Untested,
                    to: if i % 3 == 0 { CaseState::Failed } else { CaseState::Passed },
                    role: Role::Tester,
                    actor: "tester0".into(),
                    note: None,
                    issue_ref: Some(format!("#{i}")),
                };
                store.transition(&format!("{sid}-{i}"), &req).map_err(|e| e.to_string())?;
                record(&store);
                if req.to == CaseState::Failed {
                    let postpone = TransitionRequest {
                        expected_from: CaseState::Failed,
                        to: CaseState::FailedAndPostponed,
                        role: Role::TestManager,
                        actor: "lead".into(),
                        note: Some("next release".into()),
                        issue_ref: None,
                    };
                    store.transition(&format!("{sid}-{i}"), &postpone).map_err(|e| e.to_string())?;
                    record(&store);
                }
            }
            store.close_session(&sid).map_err(|e| e.to_string())?;
            record(&store);
        }
    }
    let bytes = std::fs::read(&path).unwrap();
    let ends: Vec<usize> = bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i + 1).collect();
    ensure!(ends.len() + 1 == live.len(), "{} lines for {} snapshots", ends.len(), live.len());

    let mut boundaries = 0;
    let mut start = 0;
    let cut_path = dir.path().join("cut.log");
    for &end in &ends {
        for cut in [start, start + 1, (start + end) / 2, end - 1] {
            std::fs::write(&cut_path, &bytes[..cut]).unwrap();
            let complete = ends.iter().filter(|&&e| e <= cut).count();
            let recovered = replay_recover(&cut_path).map_err(|e| e.to_string())?;
            ensure!(recovered.snapshot == live[complete], "cut at byte {cut} is not the {complete}-event prefix");
            if cut > start {
                let strict = relkit_store::replay(&cut_path);
                ensure!(
                    matches!(strict, Err(StoreError::CorruptLog { seq, .. }) if seq as usize == complete + 1),
                    "strict replay of torn line: {strict:?}"
                );
            }
            boundaries += 1;
        }
        start = end;
    }
    ensure!(boundaries >= 100, "{boundaries} boundaries");

    read_your_writes_over_api(&dir.path().join("api.log"))
}

fn read_your_writes_over_api(path: &std::path::Path) -> Outcome {
    let store = Arc::new(Store::open(path, OpenMode::Strict).map_err(|e| e.to_string())?);
    let app = relkit_store::http::router(store);
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async move {
        let call = |method: &str, uri: String, body: Option<Value>| {
            let app = app.clone();
            let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
            let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
            async move {
                let resp = app.oneshot(req).await.unwrap();
                let status = resp.status();
                let bytes = resp.into_body().collect().await.unwrap().to_bytes();
                (status, serde_json::from_slice::<Value>(&bytes).unwrap_or(Value::Null))
            }
        };
        let (s, _) = call(
            "POST",
            "/sessions".into(),
            Some(json!({
                "phase": "ReleaseTesting",
                "plan": {"name": "rc", "cases": [
                    {"id": "TC1", "title": "a", "area": "", "feature": null, "basic": true},
                    {"id": "TC2", "title": "b", "area": "", "feature": null, "basic": true}
                ]},
                "configurations": [{"os": "Windows 11", "desktop_env": "default", "jre": "17", "ui_mode": "Gui"}],
                "testers": ["ana"]
            })),
        )
        .await;
        ensure!(s == StatusCode::CREATED, "create session: {s}");
        let hops = [
            ("s1-1", "Untested", "Failed", "Tester"),
            ("s1-1", "Failed", "Waiting for new build", "Developer"),
            ("s1-1", "Waiting for new build", "Retest", "TestManager"),
            ("s1-1", "Retest", "Passed", "Tester"),
            ("s1-2", "Untested", "Blocked", "Developer"),
        ];
        for (id, from, to, role) in hops {
            let body = json!({"expected_from": from, "to": to, "role": role, "actor": "ana", "issue_ref": "#9"});
            let (s, ack) = call("POST", format!("/results/{id}/transition"), Some(body)).await;
            ensure!(s == StatusCode::OK, "{from} -> {to}: {s} {ack}");
            let (_, seen) = call("GET", format!("/results/{id}"), None).await;
            ensure!(seen["state"] == to, "read after {to} saw {}", seen["state"]);
            let (_, p) = call("GET", "/sessions/s1/progress".into(), None).await;
            ensure!(p["by_state"][to].as_u64().unwrap_or(0) >= 1, "progress misses {to}: {p}");
        }
        let body = json!({"expected_from": "Untested", "to": "Passed", "role": "Tester", "actor": "ana"});
        let (s, _) = call("POST", "/results/s1-2/transition".into(), Some(body)).await;
        ensure!(s == StatusCode::CONFLICT, "stale write answered {s}");
        Ok(())
    })
}

const KEYWORDS: [ClauseKind; 4] = [ClauseKind::Given, ClauseKind::When, ClauseKind::Then, ClauseKind::And];

/// (tags, title, clauses) triples; the first clause of a scenario is never `And`.
fn scenarios() -> impl Strategy<Value = Vec<(Vec<String>, String, Vec<(usize, String)>)>> {
    let text = "[A-Za-z][A-Za-z0-9 ,\"\\[\\]>-]{0,30}[A-Za-z0-9\"\\]]";
    let clauses = ((0usize..3, text), prop::collection::vec((0usize..4, text), 0..6)).prop_map(|(first, rest)| {
        let mut v = vec![first];
        v.extend(rest);
        v
    });
    prop::collection::vec(
        (prop::collection::vec("[A-Za-z][A-Za-z0-9_]{0,8}", 0..3), "[A-Za-z][A-Za-z0-9 ()]{0,20}[a-z0-9)]", clauses),
        0..4,
    )
}

fn render(parts: &[(Vec<String>, String, Vec<(usize, String)>)], noisy: bool) -> (FeatureFile, String) {
    let mut text = String::new();
    let mut taken = BTreeSet::new();
    let mut out = Vec::new();
    for (k, (tags, title, clauses)) in parts.iter().enumerate() {
        let title = format!("{title} {k}");
        if !taken.insert(title.clone()) {
            continue;
        }
        if noisy {
            text.push_str("# comment\n\n");
        }
        if !tags.is_empty() {
            let line: Vec<String> = tags.iter().map(|t| format!("@{t}")).collect();
            text.push_str(&line.join(if noisy { "  " } else { " " }));
            text.push('\n');
        }
        text.push_str(&format!("Scenario: {title}\n"));
        let mut parsed = Vec::new();
        for (kind, body) in clauses {
            let kind = KEYWORDS[*kind];
            let indent = if noisy { "    " } else { "" };
            text.push_str(&format!("{indent}{} {body}\n", kind.keyword()));
            parsed.push(Clause { kind, text: body.clone(), span: Default::default() });
        }
        text.push('\n');
        let tags = tags.iter().map(|t| Tag::new(t).unwrap()).collect();
        out.push(Scenario { tags, title, clauses: parsed });
    }
    (FeatureFile { path: "gen.feature".into(), scenarios: out }, text)
}

fn round_trip(text: &str) -> Outcome {
    let parsed = parse_feature(text, "p.feature").map_err(|e| e.to_string())?;
    let formatted = format_feature(&parsed);
    let reparsed = parse_feature(&formatted, "p.feature").map_err(|e| e.to_string())?;
    ensure!(reparsed == normalize_feature(parsed.clone()), "parse(format(f)) != normalize(f)");
    ensure!(format_feature(&reparsed) == formatted, "format is not idempotent");
    let once = normalize_feature(parsed);
    ensure!(normalize_feature(once.clone()) == once, "normalization is not idempotent");
    Ok(())
}

fn parser_properties() -> Outcome {
    round_trip(GOLDEN)?;
    round_trip(&GOLDEN.replace('\n', "\r\n"))?;
    let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
    let files = std::cell::Cell::new(0);
    runner
        .run(&(scenarios(), any::<bool>()), |(parts, noisy)| {
            let (ast, text) = render(&parts, noisy);
            let parsed = parse_feature(&text, "gen.feature").map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
            prop_assert_eq!(&parsed, &ast);
            round_trip(&text).map_err(TestCaseError::fail)?;
            files.set(files.get() + 1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    ensure!(files.get() >= 500, "{} generated files", files.get());
    Ok(())
}
