use std::fs;
use std::sync::Arc;

use serde_json::{json, Value};
use sumkit::harness::{
    aggregate_human_eval, read_scores, serve, shuffled_tasks, AnnotationConfig, AnnotationService,
    SampleCandidate, SampleItem,
};

const SYSTEMS: [&str; 2] = ["urT5-base-secret", "kmeans-mbert-secret"];

fn sample() -> Vec<SampleItem> {
    (0..3)
        .map(|i| SampleItem {
            summary_id: format!("bbc-{i}"),
            reference: format!("حکومت نے نئی پالیسی کا اعلان کیا {i}۔"),
            candidates: SYSTEMS
                .iter()
                .map(|s| SampleCandidate {
                    system: s.to_string(),
                    text: format!("خلاصہ {i} از نظام"),
                })
                .collect(),
        })
        .collect()
}

struct Server {
    base: String,
    agent: ureq::Agent,
}

impl Server {
    fn start(config: AnnotationConfig) -> Self {
        let service = Arc::new(AnnotationService::new(config).unwrap());
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                serve(listener, service).await.unwrap();
            });
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Server {
            base: format!("http://{}", rx.recv().unwrap()),
            agent,
        }
    }

    fn get(&self, path: &str) -> (u16, String) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
    }

    fn post(&self, body: &str) -> (u16, String) {
        let mut r = self
            .agent
            .post(&format!("{}/api/scores", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_to_string().unwrap())
    }
}

fn assert_blind(body: &str) {
    for s in SYSTEMS {
        assert!(!body.contains(s), "response leaks {s}: {body}");
    }
}

fn config(dir: &tempfile::TempDir, assets: Option<std::path::PathBuf>) -> AnnotationConfig {
    AnnotationConfig {
        sample: sample(),
        session_seed: 42,
        scores_path: dir.path().join("scores.jsonl"),
        assets_dir: assets,
    }
}

#[test]
fn scripted_session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(config(&dir, None));

    let (code, body) = srv.get("/api/tasks?annotator=ayesha");
    assert_eq!(code, 200);
    assert_blind(&body);
    let tasks: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(tasks["total"], 6);
    assert_eq!(tasks["done"], 0);
    let tasks = tasks["tasks"].as_array().unwrap().clone();

    // hand-picked ratings, in task order
    let ratings = [(4, 5), (5, 5), (3, 2), (0, 1), (5, 4), (2, 3)];
    for (t, (a, c)) in tasks.iter().zip(ratings) {
        let body = json!({
            "annotator": "ayesha",
            "summary_id": t["summary_id"],
            "token": t["token"],
            "accuracy": a,
            "coherence": c,
        });
        let (code, resp) = srv.post(&body.to_string());
        assert_eq!(code, 200, "{resp}");
        assert_blind(&resp);
        assert_eq!(serde_json::from_str::<Value>(&resp).unwrap()["status"], "ok");
    }

    // double submit of the first task
    let first = json!({
        "annotator": "ayesha",
        "summary_id": tasks[0]["summary_id"],
        "token": tasks[0]["token"],
        "accuracy": 1,
        "coherence": 1,
    });
    let (code, resp) = srv.post(&first.to_string());
    assert_eq!(code, 409);
    assert_blind(&resp);

    let log = fs::read_to_string(dir.path().join("scores.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let scores = read_scores(log.as_bytes()).unwrap();
    assert!(scores.iter().all(|s| s.annotator == "ayesha" && SYSTEMS.contains(&s.system.as_str())));

    // each log line resolves back to the task it was submitted for
    for (t, (a, c)) in tasks.iter().zip(ratings) {
        let s = scores
            .iter()
            .find(|s| s.summary_id == t["summary_id"] && s.accuracy == a && s.coherence == c)
            .unwrap();
        let expected_text = &t["candidate"];
        let item = sample().into_iter().find(|i| i.summary_id == s.summary_id).unwrap();
        assert!(item.candidates.iter().any(|x| x.system == s.system && x.text == *expected_text));
    }

    let report = aggregate_human_eval(&scores, &[]).unwrap();
    assert_eq!(report.per_summary.len(), 6);
    let total_acc: f64 = report.per_summary.iter().map(|s| s.mean_accuracy).sum();
    assert_eq!(total_acc, [4, 5, 3, 0, 5, 2].iter().sum::<u8>() as f64);
    let grand: f64 = report.per_system.iter().map(|s| s.mean_coherence * 3.0).sum();
    assert_eq!(grand, [5, 5, 2, 1, 4, 3].iter().sum::<u8>() as f64);

    let (code, body) = srv.get("/api/tasks?annotator=ayesha");
    assert_eq!(code, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["done"], 6);

    let (code, body) = srv.get("/api/progress?annotator=ayesha");
    assert_eq!(code, 200);
    assert_blind(&body);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["scores"], 6);
    assert_eq!(v["annotator"]["done"], 6);
    assert_eq!(v["tasks_per_annotator"], 6);
}

#[test]
fn malformed_posts_get_field_errors() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(config(&dir, None));
    let (_, body) = srv.get("/api/tasks?annotator=u");
    let v: Value = serde_json::from_str(&body).unwrap();
    let t = &v["tasks"][0];

    let (code, resp) = srv.post(
        &json!({"annotator": "u", "summary_id": t["summary_id"], "token": t["token"], "accuracy": 9, "coherence": 2})
            .to_string(),
    );
    assert_eq!(code, 400);
    let r: Value = serde_json::from_str(&resp).unwrap();
    assert!(r["errors"]["accuracy"].is_string());
    assert!(r["errors"].get("coherence").is_none());

    let (code, resp) = srv.post(
        &json!({"annotator": "u", "summary_id": t["summary_id"], "token": "nope", "accuracy": 1, "coherence": -1})
            .to_string(),
    );
    assert_eq!(code, 400);
    let r: Value = serde_json::from_str(&resp).unwrap();
    assert!(r["errors"]["token"].is_string());
    assert!(r["errors"]["coherence"].is_string());
    assert_blind(&resp);

    // a token of another summary must not be accepted
    let other = v["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|x| x["summary_id"] != t["summary_id"])
        .unwrap();
    let (code, resp) = srv.post(
        &json!({"annotator": "u", "summary_id": t["summary_id"], "token": other["token"], "accuracy": 1, "coherence": 1})
            .to_string(),
    );
    assert_eq!(code, 400);
    assert_blind(&resp);

    assert_eq!(srv.post("not json").0, 400);
    assert_eq!(srv.post("[1,2]").0, 400);
    assert_eq!(srv.get("/api/tasks").0, 400);
    assert_eq!(fs::read_to_string(dir.path().join("scores.jsonl")).unwrap(), "");
}

#[test]
fn shuffles_are_per_annotator_and_stable() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(config(&dir, None));
    let order = |who: &str| -> Vec<String> {
        let (_, body) = srv.get(&format!("/api/tasks?annotator={who}"));
        let v: Value = serde_json::from_str(&body).unwrap();
        v["tasks"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["token"].as_str().unwrap().to_string())
            .collect()
    };
    let a1 = order("ali");
    assert_eq!(a1, order("ali"));
    let b = order("sara");
    assert_ne!(a1, b);
    let (mut x, mut y) = (a1.clone(), b.clone());
    x.sort();
    y.sort();
    assert_eq!(x, y);

    // replaying the seeded shuffle gives the served order
    let s = sample();
    let replay: Vec<String> = shuffled_tasks(&s, "ali", 42)
        .into_iter()
        .map(|(i, c)| sumkit::harness::blind_token(42, &s[i].summary_id, &s[i].candidates[c].system))
        .collect();
    assert_eq!(replay, a1);
}

#[test]
fn concurrent_posts_each_append_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Arc::new(Server::start(config(&dir, None)));
    let annotators: Vec<String> = (0..8).map(|i| format!("a{i}")).collect();
    let handles: Vec<_> = annotators
        .iter()
        .cloned()
        .map(|who| {
            let srv = srv.clone();
            std::thread::spawn(move || {
                let (_, body) = srv.get(&format!("/api/tasks?annotator={who}"));
                let v: Value = serde_json::from_str(&body).unwrap();
                let mut codes = Vec::new();
                for t in v["tasks"].as_array().unwrap() {
                    let b = json!({"annotator": who, "summary_id": t["summary_id"], "token": t["token"], "accuracy": 3, "coherence": 3});
                    codes.push(srv.post(&b.to_string()).0);
                    codes.push(srv.post(&b.to_string()).0);
                }
                codes
            })
        })
        .collect();
    let codes: Vec<u16> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    assert_eq!(codes.iter().filter(|&&c| c == 200).count(), 48);
    assert_eq!(codes.iter().filter(|&&c| c == 409).count(), 48);
    let log = fs::read_to_string(dir.path().join("scores.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 48);
    assert_eq!(read_scores(log.as_bytes()).unwrap().len(), 48);
}

#[test]
fn serves_static_assets() {
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("dist");
    fs::create_dir(&assets).unwrap();
    fs::write(assets.join("index.html"), "<html>ui</html>").unwrap();
    let srv = Server::start(config(&dir, Some(assets)));
    let (code, body) = srv.get("/index.html");
    assert_eq!(code, 200);
    assert_eq!(body, "<html>ui</html>");
    assert_eq!(srv.get("/").1, "<html>ui</html>");
    assert_eq!(srv.get("/missing.js").0, 404);
}
