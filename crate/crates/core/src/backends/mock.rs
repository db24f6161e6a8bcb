//! A deterministic toy world behind the mock servers.
//!
//! Every image `mock://img/<n>` shows one scene drawn from a small grammar.
//! German and English share a word-by-word bijective lexicon, and each
//! German content word has one corrupted spelling that lies outside the
//! lexicon. A checkpoint's error rate falls with the amount of training data
//! it has seen and rises with the corruption it was trained on.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use crate::corpus::{self, CaptionRecord, Dataset, ImageRef, Origin, Split};
use crate::digest::{sha256_parts, stable_u64, stable_unit};

/// Data scale at which an uncorrupted checkpoint errs on half its content words.
pub const MOCK_LAMBDA: f64 = 1000.0;
pub const EMBED_DIM: usize = 16;
const ID_PREFIX: &str = "mock1";
const URI_PREFIX: &str = "mock://img/";
const GOLDEN: f64 = 0.618_033_988_749_894_8;
const ROOT2: f64 = std::f64::consts::SQRT_2 - 1.0;

// (german, english, corrupted german)
const ADJECTIVES: [(&str, &str, &str); 8] = [
    ("kleiner", "small", "kleiher"),
    ("großer", "big", "grosar"),
    ("roter", "red", "rotar"),
    ("blauer", "blue", "blaure"),
    ("alter", "old", "alther"),
    ("junger", "young", "jumger"),
    ("grüner", "green", "grüher"),
    ("schwarzer", "black", "schwazer"),
];
const SUBJECTS: [(&str, &str, &str); 10] = [
    ("mann", "man", "mamn"),
    ("frau", "woman", "fraw"),
    ("hund", "dog", "hunt"),
    ("katze", "cat", "kaze"),
    ("kind", "child", "kint"),
    ("junge", "boy", "jumge"),
    ("mädchen", "girl", "mädhen"),
    ("pferd", "horse", "pfert"),
    ("vogel", "bird", "vogle"),
    ("radfahrer", "cyclist", "radfarer"),
];
const VERBS: [(&str, &str, &str); 8] = [
    ("läuft", "runs", "läuf"),
    ("sitzt", "sits", "sizt"),
    ("springt", "jumps", "sprinkt"),
    ("spielt", "plays", "spilt"),
    ("steht", "stands", "stet"),
    ("schläft", "sleeps", "schläf"),
    ("liest", "reads", "lisst"),
    ("isst", "eats", "ist"),
];
const SETTINGS: [(&str, &str, &str); 8] = [
    ("park", "park", "parc"),
    ("straße", "street", "strase"),
    ("strand", "beach", "strant"),
    ("wiese", "meadow", "wisse"),
    ("küche", "kitchen", "küke"),
    ("garten", "garden", "gartn"),
    ("schnee", "snow", "schne"),
    ("wald", "forest", "walt"),
];
const PREPOSITIONS: [(&str, &str); 4] = [("in", "in"), ("auf", "on"), ("neben", "beside"), ("vor", "before")];
const ARTICLES: [(&str, &str); 2] = [("ein", "a"), ("die", "the")];

pub struct Lexicon {
    de_en: HashMap<&'static str, &'static str>,
    en_de: HashMap<&'static str, &'static str>,
    corrupt_of: HashMap<&'static str, &'static str>,
    /// corrupted German form -> English canonical word
    restore: HashMap<&'static str, &'static str>,
}

impl Lexicon {
    fn build() -> Self {
        let mut lex = Lexicon {
            de_en: HashMap::new(),
            en_de: HashMap::new(),
            corrupt_of: HashMap::new(),
            restore: HashMap::new(),
        };
        for table in [&ADJECTIVES[..], &SUBJECTS[..], &VERBS[..], &SETTINGS[..]] {
            for &(de, en, bad) in table {
                lex.de_en.insert(de, en);
                lex.en_de.insert(en, de);
                lex.corrupt_of.insert(de, bad);
                lex.restore.insert(bad, en);
            }
        }
        for &(de, en) in PREPOSITIONS.iter().chain(&ARTICLES) {
            lex.de_en.insert(de, en);
            lex.en_de.insert(en, de);
        }
        lex
    }

    pub fn is_corrupt(&self, token: &str) -> bool {
        self.restore.contains_key(token)
    }

    pub fn corrupt(&self, de: &str) -> Option<&'static str> {
        self.corrupt_of.get(de).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.de_en.contains_key(token) || self.en_de.contains_key(token)
    }
}

pub fn lexicon() -> &'static Lexicon {
    static LEX: OnceLock<Lexicon> = OnceLock::new();
    LEX.get_or_init(Lexicon::build)
}

/// Word-by-word translation. Unknown tokens and unsupported language pairs
/// pass through unchanged.
pub fn translate(text: &str, src: &str, tgt: &str) -> String {
    let lex = lexicon();
    let table = match (primary(src), primary(tgt)) {
        ("de", "en") => &lex.de_en,
        ("en", "de") => &lex.en_de,
        _ => return text.to_owned(),
    };
    text.split_whitespace()
        .map(|t| table.get(t).copied().unwrap_or(t))
        .collect::<Vec<_>>()
        .join(" ")
}

fn primary(lang: &str) -> &str {
    lang.split('-').next().unwrap_or(lang)
}

/// Restores corrupted tokens to their English form and leaves everything
/// else alone. An empty caption yields the image's English scene caption.
pub fn reformulate(caption: &str, image_uri: &str) -> String {
    if caption.trim().is_empty() {
        return Scene::of(image_index(image_uri)).caption("en");
    }
    let lex = lexicon();
    caption
        .split_whitespace()
        .map(|t| lex.restore.get(t).copied().unwrap_or(t))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn image_uri(n: u64) -> String {
    format!("{URI_PREFIX}{n}")
}

/// Numeric index of a mock image; other URIs are hashed.
pub fn image_index(uri: &str) -> u64 {
    uri.strip_prefix(URI_PREFIX)
        .and_then(|n| n.parse().ok())
        .unwrap_or_else(|| stable_u64(["uri", uri]) >> 16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scene {
    adjective: usize,
    subject: usize,
    verb: usize,
    preposition: usize,
    setting: usize,
}

impl Scene {
    pub fn of(index: u64) -> Scene {
        let mut h = stable_u64(["scene".as_bytes(), &index.to_le_bytes()]);
        let mut pick = |n: usize| {
            let v = (h % n as u64) as usize;
            h /= n as u64;
            v
        };
        Scene {
            adjective: pick(ADJECTIVES.len()),
            subject: pick(SUBJECTS.len()),
            verb: pick(VERBS.len()),
            preposition: pick(PREPOSITIONS.len()),
            setting: pick(SETTINGS.len()),
        }
    }

    fn words(&self, german: bool) -> [&'static str; 7] {
        let pick = |(de, en, _): (&'static str, &'static str, &'static str)| if german { de } else { en };
        let pick2 = |(de, en): (&'static str, &'static str)| if german { de } else { en };
        [
            pick2(ARTICLES[0]),
            pick(ADJECTIVES[self.adjective]),
            pick(SUBJECTS[self.subject]),
            pick(VERBS[self.verb]),
            pick2(PREPOSITIONS[self.preposition]),
            pick2(ARTICLES[1]),
            pick(SETTINGS[self.setting]),
        ]
    }

    /// Full seven-token caption in `de` or `en`.
    pub fn caption(&self, language: &str) -> String {
        self.words(primary(language) == "de").join(" ")
    }

    /// Paraphrases: full, without adjective, without location, bare.
    pub fn variants(&self, language: &str) -> [String; 4] {
        let w = self.words(primary(language) == "de");
        [
            w.join(" "),
            [w[0], w[2], w[3], w[4], w[5], w[6]].join(" "),
            w[..4].join(" "),
            [w[0], w[2], w[3]].join(" "),
        ]
    }
}

// positions of adjective, subject, verb and setting in a caption
const CONTENT_SLOTS: [usize; 4] = [1, 2, 3, 6];

/// Checkpoint state, recoverable from the checkpoint id alone.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCheckpoint {
    /// Corruption rate of the training data, compounded along the lineage.
    pub corruption: f64,
    /// Images times epochs over the whole lineage.
    pub seen: u64,
    pub id: String,
}

impl MockCheckpoint {
    fn make(corruption: f64, seen: u64, salt: &str) -> Self {
        let corruption = (corruption * 1e6).round() / 1e6;
        let hash = &sha256_parts([salt])[..12];
        MockCheckpoint {
            id: format!("{ID_PREFIX}-c{corruption:.6}-s{seen}-{hash}"),
            corruption,
            seen,
        }
    }

    pub fn parse(id: &str) -> Option<Self> {
        let rest = id.strip_prefix(ID_PREFIX)?.strip_prefix('-')?;
        let mut parts = rest.split('-');
        let corruption: f64 = parts.next()?.strip_prefix('c')?.parse().ok()?;
        let seen: u64 = parts.next()?.strip_prefix('s')?.parse().ok()?;
        parts.next()?;
        Some(MockCheckpoint {
            corruption,
            seen,
            id: id.to_owned(),
        })
    }

    /// Per-content-word error probability of the captioner.
    pub fn error_rate(&self, lambda: f64) -> f64 {
        let data_term = lambda / (lambda + self.seen as f64);
        1.0 - (1.0 - self.corruption) * (1.0 - data_term)
    }
}

/// Fraction of whitespace tokens that are corrupted forms.
pub fn corruption_rate(dataset: &Dataset) -> f64 {
    let lex = lexicon();
    let (mut bad, mut total) = (0usize, 0usize);
    for record in dataset.captions() {
        for token in record.text.split_whitespace() {
            total += 1;
            bad += usize::from(lex.is_corrupt(token));
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

pub fn train(parent: Option<&MockCheckpoint>, dataset: &Dataset, epochs: u32) -> MockCheckpoint {
    let fresh = corruption_rate(dataset);
    let (inherited, seen) = parent.map_or((0.0, 0), |p| (p.corruption, p.seen));
    let corruption = 1.0 - (1.0 - inherited) * (1.0 - fresh);
    let salt = format!(
        "{}|{}|{}",
        parent.map_or("", |p| p.id.as_str()),
        dataset.content_digest(),
        epochs
    );
    MockCheckpoint::make(corruption, seen + dataset.image_count() as u64 * epochs as u64, &salt)
}

/// German caption for one image. Content word `j` is corrupted when
/// `frac(u + (j+1) * golden) < p`, with `u` spread over images by a
/// low-discrepancy sequence offset by the seed; the corrupted set grows
/// monotonically with `p`.
pub fn caption(checkpoint: &MockCheckpoint, image_uri: &str, seed: u64, lambda: f64) -> String {
    let n = image_index(image_uri);
    let p = checkpoint.error_rate(lambda);
    let mut words = Scene::of(n).words(true);
    let u = (stable_unit(["caption-seed".as_bytes(), &seed.to_le_bytes()]) + n as f64 * ROOT2).fract();
    let lex = lexicon();
    for (j, &slot) in CONTENT_SLOTS.iter().enumerate() {
        if (u + (j + 1) as f64 * GOLDEN).fract() < p {
            words[slot] = lex.corrupt(words[slot]).expect("content word has a corrupted form");
        }
    }
    words.join(" ")
}

/// Hash embedding: the same token always maps to the same vector.
pub fn embed_token(token: &str) -> Vec<f64> {
    (0..EMBED_DIM)
        .map(|i| stable_unit(["embed".as_bytes(), token.as_bytes(), &(i as u64).to_le_bytes()]) * 2.0 - 1.0)
        .collect()
}

#[derive(Debug, Clone)]
pub struct ToyWorldOptions {
    pub base_images: u64,
    pub additional_images: u64,
    pub extension_images: u64,
    pub test_images: u64,
}

impl Default for ToyWorldOptions {
    fn default() -> Self {
        ToyWorldOptions {
            base_images: 1000,
            additional_images: 600,
            extension_images: 400,
            test_images: 500,
        }
    }
}

/// Manifest paths of a generated toy world.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub base: PathBuf,
    pub additional: PathBuf,
    pub extension: PathBuf,
    pub test: PathBuf,
}

fn toy_dataset(
    name: &str,
    split: Split,
    range: std::ops::Range<u64>,
    captions: impl Fn(u64, &Scene) -> Vec<(String, &'static str, Origin)>,
) -> corpus::Result<Dataset> {
    let mut b = Dataset::builder(name, split);
    for n in range {
        let id = format!("{n:05}");
        b.add_image(ImageRef {
            id: id.clone(),
            uri: image_uri(n),
            dataset: name.to_owned(),
        })?;
        for (text, lang, origin) in captions(n, &Scene::of(n)) {
            b.add_caption(CaptionRecord::new(&id, text, lang, origin))?;
        }
    }
    Ok(b.build())
}

fn ragged(n: u64, tag: &str, max: u64) -> usize {
    1 + (stable_u64([tag.as_bytes(), &n.to_le_bytes()]) % max) as usize
}

/// Base train (five German captions per image), additional (one to five
/// English human captions), image-only extension, and test (one to three
/// German references).
pub fn toy_world(opts: &ToyWorldOptions) -> corpus::Result<[Dataset; 4]> {
    let mut start = 0;
    let mut next = |len: u64| {
        let r = start..start + len;
        start += len;
        r
    };
    let base = toy_dataset("toy-base", Split::Train, next(opts.base_images), |_, s| {
        let v = s.variants("de");
        [0, 1, 2, 3, 0]
            .iter()
            .map(|&i| (v[i].clone(), "de", Origin::Human))
            .collect()
    })?;
    let additional = toy_dataset(
        "toy-additional",
        Split::Additional,
        next(opts.additional_images),
        |n, s| {
            let v = s.variants("en");
            (0..ragged(n, "additional", 5))
                .map(|i| (v[i % 4].clone(), "en", Origin::Human))
                .collect()
        },
    )?;
    let extension = toy_dataset(
        "toy-extension",
        Split::Additional,
        next(opts.extension_images),
        |_, _| Vec::new(),
    )?;
    let test = toy_dataset("toy-test", Split::Test, next(opts.test_images), |n, s| {
        let v = s.variants("de");
        (0..ragged(n, "test", 3))
            .map(|i| (v[i].clone(), "de", Origin::Human))
            .collect()
    })?;
    Ok([base, additional, extension, test])
}

/// Writes the toy world as canonical datasets under `dir`.
pub fn write_toy_world(dir: &Path, opts: &ToyWorldOptions) -> corpus::Result<ToyWorld> {
    let [base, additional, extension, test] = toy_world(opts)?;
    let write = |d: &Dataset| corpus::write_canonical(d, dir, d.name()).map(|(_, p)| p);
    Ok(ToyWorld {
        base: write(&base)?,
        additional: write(&additional)?,
        extension: write(&extension)?,
        test: write(&test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{levenshtein_words, tokenize};
    use std::collections::HashSet;

    #[test]
    fn corrupted_forms_are_outside_the_lexicon_and_distinct() {
        let lex = lexicon();
        let forms: HashSet<&str> = lex.restore.keys().copied().collect();
        assert_eq!(forms.len(), lex.corrupt_of.len());
        for f in forms {
            assert!(!lex.contains(f), "{f}");
        }
        assert_eq!(lex.de_en.len(), lex.en_de.len());
    }

    #[test]
    fn translation_round_trips() {
        for n in 0..50 {
            let de = Scene::of(n).caption("de");
            let en = translate(&de, "de", "en");
            assert_eq!(en, Scene::of(n).caption("en"));
            assert_eq!(translate(&en, "en", "de"), de);
        }
    }

    #[test]
    fn unknown_tokens_pass_through() {
        assert_eq!(translate("ein xylophon", "de", "en"), "a xylophon");
    }

    #[test]
    fn reformulator_restores_exactly_the_corruptions() {
        let clean = Scene::of(7).caption("en");
        assert_eq!(reformulate(&clean, &image_uri(7)), clean);
        let lex = lexicon();
        let de = Scene::of(7).words(true);
        let mut tokens: Vec<String> = Scene::of(7).words(false).iter().map(|s| s.to_string()).collect();
        tokens[2] = lex.corrupt(de[2]).unwrap().to_owned();
        tokens[6] = lex.corrupt(de[6]).unwrap().to_owned();
        let broken = tokens.join(" ");
        let fixed = reformulate(&broken, &image_uri(7));
        assert_eq!(fixed, clean);
        assert_eq!(levenshtein_words(&tokenize(&broken), &tokenize(&fixed)), 2);
    }

    #[test]
    fn empty_caption_gets_scene_caption() {
        let out = reformulate("", &image_uri(3));
        assert!(!out.is_empty());
        assert_eq!(out, Scene::of(3).caption("en"));
    }

    #[test]
    fn checkpoint_ids_round_trip() {
        let c = MockCheckpoint::make(0.25, 1200, "x");
        assert_eq!(MockCheckpoint::parse(&c.id), Some(c.clone()));
        assert!(MockCheckpoint::parse("other-model").is_none());
    }

    #[test]
    fn clean_training_data_has_zero_corruption() {
        let [base, ..] = toy_world(&ToyWorldOptions {
            base_images: 20,
            additional_images: 1,
            extension_images: 1,
            test_images: 1,
        })
        .unwrap();
        let ck = train(None, &base, 10);
        assert_eq!(ck.corruption, 0.0);
        assert_eq!(ck.seen, 200);
    }

    #[test]
    fn captions_are_deterministic_and_monotone_in_error_rate() {
        let good = MockCheckpoint::make(0.0, 100_000, "a");
        let bad = MockCheckpoint::make(0.5, 100, "b");
        let lex = lexicon();
        for n in 0..200 {
            let uri = image_uri(n);
            let g = caption(&good, &uri, 1, MOCK_LAMBDA);
            assert_eq!(g, caption(&good, &uri, 1, MOCK_LAMBDA));
            let b = caption(&bad, &uri, 1, MOCK_LAMBDA);
            for (x, y) in g.split_whitespace().zip(b.split_whitespace()) {
                if lex.is_corrupt(x) {
                    assert!(lex.is_corrupt(y));
                }
            }
        }
    }

    #[test]
    fn embeddings_are_stable_and_distinct() {
        assert_eq!(embed_token("hund"), embed_token("hund"));
        assert_ne!(embed_token("hund"), embed_token("katze"));
        assert_eq!(embed_token("x").len(), EMBED_DIM);
    }
}
