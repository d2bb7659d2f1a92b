use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use flim_cli::render::decode_png;
use flim_cli::service::{router, AppState};
use flim_core::archlab::ArchSession;
use flim_core::flim::forward_prefix;
use flim_core::volcore::slice_extract;
use flim_core::{Dataset, Label, Marker, MarkerSet, SvmParams, Volume, VoxelCoord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

const DIMS: [usize; 3] = [16, 14, 12];

fn volume(abnormal: bool, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(DIMS, [1.0; 3], 1, |x, y, z, _| {
        let d2 = (x as f64 - 8.0).powi(2) + (y as f64 - 7.0).powi(2) + (z as f64 - 6.0).powi(2);
        let lesion = if abnormal && d2 < 12.0 { 300.0 } else { 0.0 };
        100.0 + lesion + rng.random_range(-10.0..10.0)
    })
    .unwrap()
}

fn dataset() -> Dataset {
    let mut entries = Vec::new();
    for i in 0..5 {
        entries.push((format!("n{i}"), Some(Label::Normal), vec![volume(false, i)]));
        entries.push((format!("a{i}"), Some(Label::Abnormal), vec![volume(true, 50 + i)]));
    }
    entries.push(("flat".to_string(), None, vec![Volume::filled(DIMS, [1.0; 3], 1, 7.0).unwrap()]));
    Dataset::from_memory(entries).unwrap()
}

fn markers_for(id: &str) -> MarkerSet {
    let lesion: Vec<VoxelCoord> = (6..11).flat_map(|x| (5..10).map(move |y| VoxelCoord::new(x, y, 6))).collect();
    let clean: Vec<VoxelCoord> = (0..4).flat_map(|x| (0..4).map(move |y| VoxelCoord::new(x, y, 1))).collect();
    MarkerSet {
        volume_id: id.into(),
        markers: vec![Marker { label: Label::Normal, voxels: clean }, Marker { label: Label::Abnormal, voxels: lesion }],
    }
}

fn state(dir: &Path) -> Arc<AppState> {
    let data = dataset();
    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let session = ArchSession::new(&data, ids(&["a0", "a1"]), ids(&["a2", "n0"]), ids(&["a3", "a4", "n1", "n2", "n3"]), SvmParams::default()).unwrap();
    AppState::new(data, session, dir.join("markers"), dir.join("session.json")).unwrap()
}

async fn start(state: Arc<AppState>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    format!("http://{addr}")
}

const SPEC: &str = r#"{"n_kernels":2,"patch":{"size":[3,3,3],"dilation":1},"pool_size":2,"pool_stride":2,"kmeans_k":2}"#;

async fn put_markers(client: &Client, base: &str, set: &MarkerSet) -> StatusCode {
    client.put(format!("{base}/volumes/{}/markers", set.volume_id)).json(set).send().await.unwrap().status()
}

async fn post_spec(client: &Client, url: String, body: &str) -> reqwest::Response {
    client.post(url).header("content-type", "application/json").body(body.to_string()).send().await.unwrap()
}

fn window(x: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    ((x - lo) / (hi - lo) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[tokio::test(flavor = "multi_thread")]
async fn lists_volumes_with_dims_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path())).await;
    let client = Client::new();
    let first: Value = client.get(format!("{base}/volumes")).send().await.unwrap().json().await.unwrap();
    let second: Value = client.get(format!("{base}/volumes")).send().await.unwrap().json().await.unwrap();
    assert_eq!(first, second);
    let list = first.as_array().unwrap();
    assert_eq!(list.len(), 11);
    for v in list {
        assert_eq!(v["dims"], json!(DIMS));
    }
    let flat = list.iter().find(|v| v["id"] == "flat").unwrap();
    assert!(flat.get("label").is_none());
    assert_eq!(list.iter().find(|v| v["id"] == "a3").unwrap()["label"], "abnormal");
}

#[tokio::test(flavor = "multi_thread")]
async fn slices_follow_the_window_formula() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path())).await;
    let client = Client::new();

    let png = client.get(format!("{base}/volumes/flat/slice?axis=2&index=3&window_lo=0&window_hi=14")).send().await.unwrap();
    assert_eq!(png.headers()["content-type"], "image/png");
    let (w, h, pixels) = decode_png(&png.bytes().await.unwrap()).unwrap();
    assert_eq!((w, h), (DIMS[0], DIMS[1]));
    assert!(pixels.iter().all(|&p| p == 128));

    let v = volume(true, 52);
    for (axis, index, lo, hi) in [(0, 8, 90.0, 300.0), (1, 0, 50.0, 420.0), (2, 11, 100.0, 110.0)] {
        let url = format!("{base}/volumes/a2/slice?axis={axis}&index={index}&window_lo={lo}&window_hi={hi}");
        let (w, h, pixels) = decode_png(&client.get(url).send().await.unwrap().bytes().await.unwrap()).unwrap();
        let want = slice_extract(&v, axis, index, 0).unwrap();
        assert_eq!((w, h), (want.width, want.height));
        let expected: Vec<u8> = want.data.iter().map(|&x| window(x, lo, hi)).collect();
        assert_eq!(pixels, expected);
    }

    let bad = client.get(format!("{base}/volumes/a2/slice?axis=2&index={}", DIMS[2])).send().await.unwrap();
    assert_eq!(bad.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let body: Value = bad.json().await.unwrap();
    assert!(body["error"].is_string() && body["message"].is_string());
    let missing = client.get(format!("{base}/volumes/nope/slice?axis=0&index=0")).send().await.unwrap();
    assert_eq!(missing.status(), StatusCode::NOT_FOUND);
    let no_axis = client.get(format!("{base}/volumes/a2/slice?index=0")).send().await.unwrap();
    assert_eq!(no_axis.status(), StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread")]
async fn markers_round_trip_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path())).await;
    let client = Client::new();
    let set = markers_for("a0");
    assert_eq!(put_markers(&client, &base, &set).await, StatusCode::NO_CONTENT);
    let got = client.get(format!("{base}/volumes/a0/markers")).send().await.unwrap().bytes().await.unwrap();
    assert_eq!(got.as_ref(), serde_json::to_vec(&set).unwrap().as_slice());
    let on_disk = MarkerSet::load(dir.path().join("markers/a0.markers.json")).unwrap();
    assert_eq!(on_disk, set);

    let negative = json!({"volume_id": "a0", "markers": [{"label": "normal", "voxels": [[-1, 0, 0]]}]});
    let r = client.put(format!("{base}/volumes/a0/markers")).json(&negative).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let outside = json!({"volume_id": "a0", "markers": [{"label": "normal", "voxels": [[0, DIMS[1], 0]]}]});
    let r = client.put(format!("{base}/volumes/a0/markers")).json(&outside).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let bad_label = json!({"volume_id": "a0", "markers": [{"label": "maybe", "voxels": [[0, 0, 0]]}]});
    let r = client.put(format!("{base}/volumes/a0/markers")).json(&bad_label).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let r = client.put(format!("{base}/volumes/a1/markers")).json(&set).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let r = client.put(format!("{base}/volumes/zzz/markers")).json(&markers_for("zzz")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);

    let after: MarkerSet = client.get(format!("{base}/volumes/a0/markers")).send().await.unwrap().json().await.unwrap();
    assert_eq!(after, set);
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_marker_writes_never_mix() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path())).await;
    let client = Client::new();
    let a = markers_for("n4");
    let mut b = markers_for("n4");
    b.markers.reverse();
    b.markers[0].voxels.truncate(3);
    let allowed = [serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap()];

    let mut tasks = Vec::new();
    for i in 0..40 {
        let (client, base) = (client.clone(), base.clone());
        let set = if i % 2 == 0 { a.clone() } else { b.clone() };
        tasks.push(tokio::spawn(async move {
            assert_eq!(put_markers(&client, &base, &set).await, StatusCode::NO_CONTENT);
            client.get(format!("{base}/volumes/n4/markers")).send().await.unwrap().bytes().await.unwrap()
        }));
    }
    for t in tasks {
        let seen = t.await.unwrap();
        assert!(allowed.iter().any(|s| s.as_slice() == seen.as_ref()));
    }
    let last = client.get(format!("{base}/volumes/n4/markers")).send().await.unwrap().bytes().await.unwrap();
    let on_disk = std::fs::read(dir.path().join("markers/n4.markers.json")).unwrap();
    let disk_set: MarkerSet = serde_json::from_slice(&on_disk).unwrap();
    assert_eq!(serde_json::to_vec(&disk_set).unwrap().as_slice(), last.as_ref());
}

#[tokio::test(flavor = "multi_thread")]
async fn layer_workflow_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let st = state(dir.path());
    let base = start(Arc::clone(&st)).await;
    let client = Client::new();

    let r = post_spec(&client, format!("{base}/session/layers"), SPEC).await;
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json::<Value>().await.unwrap()["error"], "missing_markers");
    for id in ["a0", "a1"] {
        assert_eq!(put_markers(&client, &base, &markers_for(id)).await, StatusCode::NO_CONTENT);
    }

    let even = SPEC.replace("[3,3,3]", "[4,3,3]");
    let r = post_spec(&client, format!("{base}/session/layers"), &even).await;
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let r = post_spec(&client, format!("{base}/session/layers/accept"), SPEC).await;
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json::<Value>().await.unwrap()["error"], "spec_not_evaluated");

    {
        let _busy = st.try_begin_training().unwrap();
        let r = post_spec(&client, format!("{base}/session/layers"), SPEC).await;
        assert_eq!(r.status(), StatusCode::CONFLICT);
        let r = post_spec(&client, format!("{base}/session/layers/accept"), SPEC).await;
        assert_eq!(r.status(), StatusCode::CONFLICT);
    }

    let r = post_spec(&client, format!("{base}/session/layers"), SPEC).await;
    assert_eq!(r.status(), StatusCode::OK);
    let report: Value = r.json().await.unwrap();
    assert!(report["accuracy"].is_number() && report["kappa"].is_number() && report["confusion"].is_array());
    let status: Value = client.get(format!("{base}/session/status")).send().await.unwrap().json().await.unwrap();
    assert_eq!(status["status"], "ready");
    assert_eq!(status["report"], report);

    let r = post_spec(&client, format!("{base}/session/layers/accept"), SPEC).await;
    assert_eq!(r.status(), StatusCode::NO_CONTENT);
    let session: Value = client.get(format!("{base}/session")).send().await.unwrap().json().await.unwrap();
    assert_eq!(session["depth"], 1);
    assert_eq!(session["history"].as_array().unwrap().len(), 1);

    let r = post_spec(&client, format!("{base}/session/layers?async=true"), SPEC).await;
    assert_eq!(r.status(), StatusCode::ACCEPTED);
    let mut done = None;
    for _ in 0..600 {
        let s: Value = client.get(format!("{base}/session/status")).send().await.unwrap().json().await.unwrap();
        if s["status"] != "training" {
            done = Some(s);
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let done = done.expect("async job finished");
    assert_eq!(done["status"], "ready");
    assert!(done["report"]["accuracy"].is_number());

    let before: Value = client.get(format!("{base}/session")).send().await.unwrap().json().await.unwrap();
    let restarted = start(state(dir.path())).await;
    let after: Value = client.get(format!("{restarted}/session")).send().await.unwrap().json().await.unwrap();
    assert_eq!(after["depth"], before["depth"]);
    assert_eq!(after["accepted"], before["accepted"]);
    assert_eq!(after["history"], before["history"]);
    let m: MarkerSet = client.get(format!("{restarted}/volumes/a1/markers")).send().await.unwrap().json().await.unwrap();
    assert_eq!(m, markers_for("a1"));
}

#[tokio::test(flavor = "multi_thread")]
async fn activation_slices_match_forward_pass() {
    let dir = tempfile::tempdir().unwrap();
    let base = start(state(dir.path())).await;
    let client = Client::new();
    for id in ["a0", "a1"] {
        put_markers(&client, &base, &markers_for(id)).await;
    }
    let r = client.get(format!("{base}/volumes/a2/activations/1/0/slice?axis=2&index=0")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    post_spec(&client, format!("{base}/session/layers"), SPEC).await;
    assert_eq!(post_spec(&client, format!("{base}/session/layers/accept"), SPEC).await.status(), StatusCode::NO_CONTENT);

    let mut replay = ArchSession::load(dir.path().join("session.json")).unwrap();
    let data = dataset();
    let markers = [("a0", markers_for("a0")), ("a1", markers_for("a1"))].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    replay.rebuild(&data, &markers).unwrap();

    for id in ["a2", "flat"] {
        let act = forward_prefix(replay.layers(), &data.volume(id).unwrap()).unwrap();
        for kernel in 0..2 {
            let ch = act.channel(kernel).unwrap();
            let (_, max) = ch.min_max();
            let want = slice_extract(&ch, 2, 3, 0).unwrap();
            let url = format!("{base}/volumes/{id}/activations/1/{kernel}/slice?axis=2&index=3");
            let (w, h, pixels) = decode_png(&client.get(url).send().await.unwrap().bytes().await.unwrap()).unwrap();
            assert_eq!((w, h), (want.width, want.height));
            let expected: Vec<u8> = want.data.iter().map(|&x| window(x, 0.0, max)).collect();
            assert_eq!(pixels, expected);
            if max == 0.0 {
                assert!(pixels.iter().all(|&p| p == 0));
            }
        }
    }

    let r = client.get(format!("{base}/volumes/a2/activations/1/2/slice?axis=2&index=0")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let r = client.get(format!("{base}/volumes/a2/activations/2/0/slice?axis=2&index=0")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let r = client.get(format!("{base}/volumes/a2/activations/0/0/slice?axis=2&index=0")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
}
