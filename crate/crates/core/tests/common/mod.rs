//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use capref::backends::mock::{write_toy_world, ToyWorldOptions};
use capref::backends::server::MockServer;
use capref::backends::BackendKind;
use capref::pipeline::ExperimentConfig;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub type Item = (String, Vec<String>, Vec<Vec<String>>);

const VOCAB: [&str; 14] = [
    "a", "the", "man", "dog", "red", "ball", "runs", "on", "grass", "two", "in", "park", "with", "small",
];

fn sentence(rng: &mut ChaCha8Rng) -> Vec<String> {
    let len = rng.random_range(3..=12);
    (0..len)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_owned())
        .collect()
}

/// Items whose candidate is a perturbed copy of one of its references, so
/// every n-gram order has matches.
pub fn synthetic_corpus(items: usize, seed: u64) -> Vec<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..items)
        .map(|i| {
            let refs: Vec<Vec<String>> = (0..rng.random_range(1..=5)).map(|_| sentence(&mut rng)).collect();
            let mut cand = refs[rng.random_range(0..refs.len())].clone();
            for _ in 0..rng.random_range(0..3) {
                let at = rng.random_range(0..cand.len());
                cand[at] = VOCAB[rng.random_range(0..VOCAB.len())].to_owned();
            }
            if rng.random_bool(0.3) {
                cand.push("today".into());
            }
            (format!("img{i:03}"), cand, refs)
        })
        .collect()
}

pub fn eval_set(items: &[Item]) -> capref::EvalSet {
    capref::EvalSet::from_texts(items.iter().map(|(id, c, rs)| {
        (
            id.clone(),
            c.join(" "),
            rs.iter().map(|r| r.join(" ")).collect::<Vec<_>>(),
        )
    }))
    .unwrap()
}

fn grams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| &tokens[i..i + n]).collect()
}

fn occurrences(list: &[&[String]], g: &[String]) -> usize {
    list.iter().filter(|x| **x == g).count()
}

/// Corpus BLEU-4 by explicit enumeration of every candidate n-gram.
pub fn bleu_oracle(items: &[Item]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (_, cand, refs) in items {
        c += cand.len();
        let mut best = refs[0].len();
        for rf in refs {
            let (d, bd) = (rf.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && rf.len() < best) {
                best = rf.len();
            }
        }
        r += best;
        for n in 1..=4 {
            let cg = grams(cand, n);
            total[n - 1] += cg.len();
            let mut done: Vec<&[String]> = Vec::new();
            for g in &cg {
                if done.contains(g) {
                    continue;
                }
                done.push(g);
                let max_ref = refs.iter().map(|rf| occurrences(&grams(rf, n), g)).max().unwrap();
                matched[n - 1] += occurrences(&cg, g).min(max_ref);
            }
        }
    }
    if matched.contains(&0) {
        return 0.0;
    }
    let log_mean: f64 = (0..4).map(|n| (matched[n] as f64 / total[n] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    100.0 * bp * log_mean.exp()
}

/// CIDEr-D with dense tf-idf vectors over an explicit vocabulary.
pub fn cider_oracle(items: &[Item]) -> f64 {
    let n_items = items.len() as f64;
    let mut total = 0.0;
    for n in 1..=4 {
        let mut vocab: Vec<Vec<String>> = Vec::new();
        for (_, cand, refs) in items {
            for t in std::iter::once(cand).chain(refs) {
                for g in grams(t, n) {
                    if !vocab.iter().any(|v| v == g) {
                        vocab.push(g.to_vec());
                    }
                }
            }
        }
        let idf: Vec<f64> = vocab
            .iter()
            .map(|g| {
                let df = items
                    .iter()
                    .filter(|(_, _, refs)| refs.iter().any(|rf| grams(rf, n).contains(&g.as_slice())))
                    .count();
                n_items.ln() - (df.max(1) as f64).ln()
            })
            .collect();
        let vector = |t: &[String]| -> Vec<f64> {
            let list = grams(t, n);
            vocab
                .iter()
                .zip(&idf)
                .map(|(g, w)| occurrences(&list, g) as f64 * w)
                .collect()
        };
        for (_, cand, refs) in items {
            let vc = vector(cand);
            let nc = vc.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut sum = 0.0;
            for rf in refs {
                let vr = vector(rf);
                let nr = vr.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nc == 0.0 || nr == 0.0 {
                    continue;
                }
                let dot: f64 = vc.iter().zip(&vr).map(|(a, b)| a.min(*b) * b).sum();
                let delta = cand.len() as f64 - rf.len() as f64;
                sum += (-(delta * delta) / 72.0).exp() * dot / (nc * nr);
            }
            total += 10.0 * sum / refs.len() as f64;
        }
    }
    total / 4.0 / n_items
}

/// Levenshtein straight from the recursive definition.
pub fn naive_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if a[0] == b[0] {
        return naive_levenshtein(&a[1..], &b[1..]);
    }
    1 + naive_levenshtein(&a[1..], b)
        .min(naive_levenshtein(a, &b[1..]))
        .min(naive_levenshtein(&a[1..], &b[1..]))
}

fn choose(m: u128, i: u128) -> u128 {
    (0..i).fold(1u128, |acc, j| acc * (m - j) / (j + 1))
}

/// Two-sided sign-test p-value from exact binomial sums.
pub fn sign_test_oracle(k: u64, m: u64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    let hi = k.max(m - k) as u128;
    let tail: u128 = (hi..=m as u128).map(|i| choose(m as u128, i)).sum();
    ((2 * tail) as f64 / (1u128 << m) as f64).min(1.0)
}

/// Fleiss' kappa with integer arithmetic up to a single division.
pub fn fleiss_oracle(table: &[Vec<usize>], r: usize) -> f64 {
    let n = table.len() as i128;
    let r = r as i128;
    let agree: i128 = table.iter().flatten().map(|&c| (c as i128) * (c as i128 - 1)).sum();
    let cats = table[0].len();
    let sq: i128 = (0..cats)
        .map(|j| table.iter().map(|row| row[j] as i128).sum::<i128>().pow(2))
        .sum();
    let d1 = n * r * (r - 1);
    let d2 = (n * r) * (n * r);
    (agree * d2 - sq * d1) as f64 / (d1 * (d2 - sq)) as f64
}

/// Cohen's kappa from a square confusion matrix, exact up to one division.
pub fn cohen_oracle(confusion: &[Vec<i128>]) -> f64 {
    let n: i128 = confusion.iter().flatten().sum();
    let diag: i128 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    let expected: i128 = (0..confusion.len())
        .map(|i| confusion[i].iter().sum::<i128>() * confusion.iter().map(|row| row[i]).sum::<i128>())
        .sum();
    (n * diag - expected) as f64 / (n * n - expected) as f64
}

/// Label sequences realising a confusion matrix.
pub fn labels_from_confusion(confusion: &[Vec<i128>]) -> (Vec<usize>, Vec<usize>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, row) in confusion.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            for _ in 0..count {
                a.push(i);
                b.push(j);
            }
        }
    }
    (a, b)
}

/// Toy world on disk plus a config wired to `server`.
pub fn toy_config(dir: &Path, server: &MockServer, seeds: Vec<u64>, sizes: Option<Vec<usize>>) -> ExperimentConfig {
    let world = write_toy_world(dir, &ToyWorldOptions::default()).unwrap();
    ExperimentConfig {
        target_language: "de".into(),
        base_dataset: world.base,
        additional_dataset: world.additional,
        extension_dataset: Some(world.extension),
        test_dataset: world.test,
        backends: [
            BackendKind::Captioner,
            BackendKind::Translator,
            BackendKind::Reformulator,
            BackendKind::Trainer,
        ]
        .iter()
        .map(|&k| server.endpoint(k))
        .collect(),
        base_epochs: 10,
        continue_epochs: 1,
        seeds,
        subset_sizes: sizes,
        variants: None,
        metrics: None,
        store: dir.join("store"),
        workers: 4,
    }
}
