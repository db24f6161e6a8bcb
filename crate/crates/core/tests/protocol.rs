use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capref::backends::mock::{self, lexicon, MockCheckpoint, Scene};
use capref::backends::server::{MockOptions, MockServer};
use capref::backends::wire::{CaptionRequest, CaptionResponse, WireImage};
use capref::backends::{client::REQUEST_ID_HEADER, Backend, BackendError, BackendKind, CheckpointRef};
use capref::corpus::write_canonical;
use capref::{CaptionRecord, Dataset, ImageRef, Origin, Split};

fn images(n: u64) -> Vec<ImageRef> {
    (0..n)
        .map(|i| ImageRef {
            id: format!("{i:05}"),
            uri: mock::image_uri(i),
            dataset: "probe".into(),
        })
        .collect()
}

fn clean_checkpoint() -> CheckpointRef {
    let mut b = Dataset::builder("clean", Split::Train);
    for img in images(10) {
        let text = Scene::of(mock::image_index(&img.uri)).caption("de");
        let id = img.id.clone();
        b.add_image(img).unwrap();
        b.add_caption(CaptionRecord::new(id, text, "de", Origin::Human))
            .unwrap();
    }
    let ck = mock::train(None, &b.build(), 1);
    CheckpointRef {
        id: ck.id,
        parent: None,
        trained_on: "clean".into(),
        epochs: 1,
    }
}

fn backend(server: &MockServer, kind: BackendKind, max_batch: usize) -> Backend {
    let mut ep = server.endpoint(kind);
    ep.max_batch = max_batch;
    ep.backoff_ms = 1;
    Backend::new(ep).unwrap()
}

#[test]
fn seven_images_in_batches_of_three_take_three_requests() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let captioner = backend(&server, BackendKind::Captioner, 3);
    let out = captioner
        .caption_batch(&clean_checkpoint(), &images(7), 0, "de")
        .unwrap();
    assert_eq!(out.len(), 7);
    assert_eq!(server.requests("caption"), 3);
    for (rec, img) in out.iter().zip(images(7)) {
        assert_eq!(rec.image_id, img.id);
        assert_eq!(rec.origin, Origin::Model);
    }
}

#[test]
fn transient_failures_are_retried_without_duplicate_work() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let translator = backend(&server, BackendKind::Translator, 16);
    server.fail_next(2);
    let out = translator
        .translate_batch("de", "en", &["ein hund".to_owned(), "eine katze".to_owned()])
        .unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(server.requests("translate"), 3);
    assert_eq!(server.executed(), 1);
    assert_eq!(translator.requests_sent(), 3);
}

#[test]
fn retries_give_up_after_the_limit() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let translator = backend(&server, BackendKind::Translator, 16);
    server.fail_next(100);
    let err = translator
        .translate_batch("de", "en", &["ein hund".to_owned()])
        .unwrap_err();
    assert!(matches!(err, BackendError::Protocol { status: 503, .. }), "{err}");
    assert_eq!(server.requests("translate"), 4);
    assert!(!err.is_user_error());
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let captioner = backend(&server, BackendKind::Captioner, 4);
    let bogus = CheckpointRef {
        id: "not-a-checkpoint".into(),
        parent: None,
        trained_on: String::new(),
        epochs: 1,
    };
    let err = captioner.caption_batch(&bogus, &images(2), 0, "de").unwrap_err();
    assert!(
        matches!(err, BackendError::Protocol { status: 400, ref ids, .. } if ids.len() == 2),
        "{err}"
    );
    assert_eq!(server.requests("caption"), 1);
}

#[test]
fn repeated_request_id_is_answered_from_the_replay_cache() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let req = CaptionRequest {
        checkpoint: clean_checkpoint().id,
        seed: 4,
        images: images(3)
            .into_iter()
            .map(|i| WireImage { id: i.id, uri: i.uri })
            .collect(),
    };
    let send = || -> CaptionResponse {
        ureq::post(&format!("{}/v1/caption", server.url()))
            .header(REQUEST_ID_HEADER, "0d7f3c1e-2a4b-4c5d-8e9f-000000000001")
            .send_json(&req)
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap()
    };
    let (a, b) = (send(), send());
    assert_eq!(a, b);
    assert_eq!(server.requests("caption"), 2);
    assert_eq!(server.executed(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let mut ep = server.endpoint(BackendKind::Translator);
    drop(server);
    ep.max_retries = 0;
    let err = Backend::new(ep)
        .unwrap()
        .translate_batch("de", "en", &["x".to_owned()])
        .unwrap_err();
    assert!(matches!(err, BackendError::Transport { .. }), "{err}");
}

#[test]
fn wrong_language_pair_is_a_precondition() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let err = backend(&server, BackendKind::Translator, 4)
        .translate_batch("de", "de", &["x".to_owned()])
        .unwrap_err();
    assert!(err.is_user_error());
    assert_eq!(server.requests("translate"), 0);
}

/// Tokens corrupted independently with probability `rate`, restricted to
/// words the lexicon knows a corrupted form for.
fn corrupted_dataset(rate: f64, images: u64, seed: u64) -> Dataset {
    let lex = lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Dataset::builder("corrupted", Split::Train);
    for n in 0..images {
        let id = format!("{n:05}");
        b.add_image(ImageRef {
            id: id.clone(),
            uri: mock::image_uri(n),
            dataset: "corrupted".into(),
        })
        .unwrap();
        let words: Vec<String> = Scene::of(n).caption("de").split(' ').map(str::to_owned).collect();
        let corruptible = words.iter().filter(|w| lex.corrupt(w).is_some()).count();
        let p = (rate * words.len() as f64 / corruptible as f64).min(1.0);
        let text: Vec<&str> = words
            .iter()
            .map(|w| match lex.corrupt(w) {
                Some(bad) if rng.random_bool(p) => bad,
                _ => w.as_str(),
            })
            .collect();
        b.add_caption(CaptionRecord::new(id, text.join(" "), "de", Origin::Model))
            .unwrap();
    }
    b.build()
}

#[test]
fn trainer_measures_the_corruption_rate_of_its_data() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let trainer = backend(&server, BackendKind::Trainer, 8);
    let dir = tempfile::tempdir().unwrap();

    let dataset = corrupted_dataset(0.3, 400, 9);
    let (manifest, path) = write_canonical(&dataset, dir.path(), "corrupted").unwrap();
    let ck = trainer
        .train(&path.display().to_string(), &manifest, None, 1, 0)
        .unwrap();
    let parsed = MockCheckpoint::parse(&ck.id).unwrap();
    assert!((parsed.corruption - 0.3).abs() <= 0.02, "{}", parsed.corruption);
    assert_eq!(parsed.seen, 400);
    assert_eq!(ck.trained_on, manifest.content_digest);

    let clean = corrupted_dataset(0.0, 50, 9);
    let (manifest, path) = write_canonical(&clean, dir.path(), "clean").unwrap();
    let ck = trainer
        .train(&path.display().to_string(), &manifest, None, 2, 0)
        .unwrap();
    let parsed = MockCheckpoint::parse(&ck.id).unwrap();
    assert_eq!(parsed.corruption, 0.0);
    assert_eq!(parsed.seen, 100);
}

#[test]
fn training_on_a_missing_manifest_fails_the_job() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let trainer = backend(&server, BackendKind::Trainer, 8);
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = write_canonical(&corrupted_dataset(0.0, 3, 1), dir.path(), "x").unwrap();
    let err = trainer
        .train("/nonexistent/manifest.json", &manifest, None, 1, 0)
        .unwrap_err();
    assert!(matches!(err, BackendError::TrainFailed(_)), "{err}");
}
