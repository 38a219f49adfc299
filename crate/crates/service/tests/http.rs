use std::collections::BTreeMap;

use missa_client::Client;
use missa_core::api::{CreateSession, SessionView};
use missa_core::corpus::{build_vocabulary, SlotLexicon};
use missa_core::decode::DecodeConfig;
use missa_core::model::{Checkpoint, ModelConfig, TrainingMode};
use missa_core::pipeline::{ModelSet, Variant};
use missa_core::session::{ChatConfig, Ratings};
use missa_core::synth::scripted_corpus;
use missa_service::{start, AppState, ServiceConfig};
use reqwest::StatusCode;

fn models(hidden: usize) -> ModelSet {
    let corpus = scripted_corpus(4, 1);
    let config = ModelConfig {
        layers: 1,
        heads: 2,
        hidden,
        ffn: 2 * hidden,
        context: 512,
        ..Default::default()
    };
    let mut set = ModelSet::default();
    for mode in [TrainingMode::Missa, TrainingMode::MissaCon, TrainingMode::Vanilla] {
        let vocab = build_vocabulary(&corpus, 1, mode.encode_options().delexicalize).unwrap();
        set.insert(Checkpoint::initialize(config.clone(), mode, vocab, corpus.taxonomy.clone(), 1).unwrap());
    }
    set
}

async fn server(dir: &std::path::Path, hidden: usize) -> (Client, tokio::task::JoinHandle<std::io::Result<()>>) {
    let config = ServiceConfig {
        chat: ChatConfig {
            decode: DecodeConfig {
                max_tokens: 12,
                max_sentences: 2,
                ..Default::default()
            },
            ..Default::default()
        },
        persona: SlotLexicon::antiscam_persona(),
        ui_dir: None,
    };
    let state = AppState::new(models(hidden), config, dir).await.unwrap();
    let (addr, task) = start("127.0.0.1:0".parse().unwrap(), state).await.unwrap();
    (Client::new(format!("http://{addr}")), task)
}

fn create(variant: Variant, seed: u64) -> CreateSession {
    CreateSession {
        task: None,
        variant,
        seed: Some(seed),
        blind: false,
        lexicon: None,
    }
}

/// Views with timing removed, for comparing runs.
fn normalized(mut v: SessionView) -> SessionView {
    for m in &mut v.transcript {
        if let Some(t) = m.trace.as_mut() {
            t.elapsed_ms = 0;
        }
    }
    v.id.clear();
    v
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn session_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let (client, _task) = server(dir.path(), 16).await;

    let variants = client.variants().await.unwrap();
    assert_eq!(variants.task, "antiscam");
    assert_eq!(variants.variants.len(), 5);

    let s = client.create_session(&create(Variant::Missa, 5)).await.unwrap();
    assert_eq!(s.lexicon.get("card_num"), Some("5110-xxxx-xxxx-8166"));
    let other = client.create_session(&create(Variant::Missa, 5)).await.unwrap();
    assert_ne!(s.id, other.id);

    let early = client.rate(&s.id, Ratings { fluency: 4, coherence: 4, engagement: 4 }).await;
    assert_eq!(early.unwrap_err().status(), Some(StatusCode::UNPROCESSABLE_ENTITY));

    let reply = client.post_message(&s.id, "Can I have your card number?").await.unwrap();
    let trace = &reply.trace;
    assert!(trace.candidates.len() >= 5);
    assert!(trace.selected < trace.candidates.len());
    assert_eq!(reply.reply, trace.candidates[trace.selected].text());
    let verdict = trace.filter.as_ref().unwrap();
    assert_eq!(verdict.verdicts.len(), trace.candidates.len());
    assert!(!verdict.verdicts[0].is_empty());
    if !verdict.fallback {
        assert!(verdict.verdicts[trace.selected].iter().all(|v| v.passed()));
    }

    let view = client.session(&s.id).await.unwrap();
    assert_eq!(view.transcript.len(), 2);
    assert_eq!(view.stats.length, 2);
    assert_eq!(view.transcript[1].text, reply.reply);
    assert!(client.session(&other.id).await.unwrap().transcript.is_empty());

    let empty = client.post_message(&s.id, "  ").await.unwrap_err();
    assert_eq!(empty.status(), Some(StatusCode::UNPROCESSABLE_ENTITY));
    let missing = client.post_message("nope", "hi").await.unwrap_err();
    assert_eq!(missing.status(), Some(StatusCode::NOT_FOUND));
    assert_eq!(client.session("nope").await.unwrap_err().status(), Some(StatusCode::NOT_FOUND));

    let bad = client.rate(&s.id, Ratings { fluency: 6, coherence: 4, engagement: 4 }).await;
    assert_eq!(bad.unwrap_err().status(), Some(StatusCode::UNPROCESSABLE_ENTITY));
    let rated = client.rate(&s.id, Ratings { fluency: 5, coherence: 4, engagement: 3 }).await.unwrap();
    assert_eq!(rated.ratings, Ratings { fluency: 5, coherence: 4, engagement: 3 });
    assert_eq!(rated.stats, view.stats);
    assert_eq!(rated.aggregate.rated, 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unknown_variant_and_task_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (client, _task) = server(dir.path(), 16).await;
    let err = client
        .create_session(&CreateSession {
            task: Some("persuasion".into()),
            ..create(Variant::Missa, 1)
        })
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::UNPROCESSABLE_ENTITY));

    let raw = reqwest::Client::new()
        .post(format!("{}/sessions", client.base()))
        .json(&serde_json::json!({"variant": "gpt"}))
        .send()
        .await
        .unwrap();
    assert!(raw.status().is_client_error());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn aggregate_reflects_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let (client, _task) = server(dir.path(), 16).await;
    for (seed, r) in [(1, 4), (2, 3), (3, 5)] {
        let s = client.create_session(&create(Variant::MissaSel, seed)).await.unwrap();
        client.post_message(&s.id, "hello.").await.unwrap();
        client.rate(&s.id, Ratings { fluency: r, coherence: r, engagement: r }).await.unwrap();
    }
    let agg = client.aggregate().await.unwrap();
    let sel = &agg["missa-sel"];
    assert_eq!(sel.rated, 3);
    assert_eq!((sel.fluency, sel.coherence, sel.engagement), (Some(4.0), Some(4.0), Some(4.0)));
    assert_eq!(sel.length, Some(2.0));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn restart_preserves_sessions_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (client, task) = server(dir.path(), 16).await;
    let a = client.create_session(&create(Variant::Hybrid, 11)).await.unwrap();
    let b = client.create_session(&create(Variant::Vanilla, 12)).await.unwrap();
    for text in ["Hi, who is this?", "What is your address?"] {
        client.post_message(&a.id, text).await.unwrap();
        client.post_message(&b.id, text).await.unwrap();
    }
    client.rate(&a.id, Ratings { fluency: 2, coherence: 3, engagement: 4 }).await.unwrap();
    let before: BTreeMap<String, SessionView> = [
        (a.id.clone(), client.session(&a.id).await.unwrap()),
        (b.id.clone(), client.session(&b.id).await.unwrap()),
    ]
    .into();
    let agg_before = client.aggregate().await.unwrap();
    task.abort();

    let (client, _task) = server(dir.path(), 16).await;
    for (id, view) in &before {
        assert_eq!(&client.session(id).await.unwrap(), view);
    }
    assert_eq!(client.aggregate().await.unwrap(), agg_before);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn interleaved_sessions_match_serial_execution() {
    let texts = ["Hello there.", "Can I have your phone number?", "Thanks!"];
    let serial_dir = tempfile::tempdir().unwrap();
    let (serial, _t1) = server(serial_dir.path(), 16).await;
    let mut expected = Vec::new();
    for seed in [21, 22] {
        let s = serial.create_session(&create(Variant::Missa, seed)).await.unwrap();
        for t in texts {
            serial.post_message(&s.id, t).await.unwrap();
        }
        expected.push(normalized(serial.session(&s.id).await.unwrap()));
    }

    let dir = tempfile::tempdir().unwrap();
    let (client, _t2) = server(dir.path(), 16).await;
    let a = client.create_session(&create(Variant::Missa, 21)).await.unwrap();
    let b = client.create_session(&create(Variant::Missa, 22)).await.unwrap();
    for t in texts {
        let (ra, rb) = tokio::join!(client.post_message(&a.id, t), client.post_message(&b.id, t));
        ra.unwrap();
        rb.unwrap();
    }
    let got = vec![
        normalized(client.session(&a.id).await.unwrap()),
        normalized(client.session(&b.id).await.unwrap()),
    ];
    assert_eq!(got, expected);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_to_one_session_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let (client, _task) = server(dir.path(), 96).await;
    let s = client.create_session(&create(Variant::Missa, 3)).await.unwrap();
    let posts = (0..8).map(|_| {
        let c = client.clone();
        let id = s.id.clone();
        tokio::spawn(async move { c.post_message(&id, "What is your name?").await })
    });
    let mut ok = 0;
    let mut conflicts = 0;
    for p in posts.collect::<Vec<_>>() {
        match p.await.unwrap() {
            Ok(_) => ok += 1,
            Err(e) if e.status() == Some(StatusCode::CONFLICT) => conflicts += 1,
            Err(e) => panic!("unexpected error {e}"),
        }
    }
    assert!(ok >= 1 && conflicts >= 1, "ok {ok}, conflicts {conflicts}");
    let view = client.session(&s.id).await.unwrap();
    assert_eq!(view.transcript.len(), 2 * ok);
    for pair in view.transcript.chunks(2) {
        assert_ne!(pair[0].speaker, pair[1].speaker);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn root_serves_a_page() {
    let dir = tempfile::tempdir().unwrap();
    let (client, _task) = server(dir.path(), 16).await;
    let resp = reqwest::get(format!("{}/", client.base())).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.text().await.unwrap().contains("<!doctype html>"));
}
