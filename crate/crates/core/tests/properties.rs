mod common;

use std::sync::Arc;

use proptest::prelude::*;

use capref::analysis::{pair_stylized_to_original, reformulation_stats, token_overlap, LengthUnit, ReformulationPair};
use capref::annotate::{
    AnnotateOptions, AnnotationStore, ManualClock, Payload, Submission, SubmissionBody, TaskItem, TaskKind,
};
use capref::corpus::sample_subset;
use capref::humaneval::{cohen_kappa, fleiss_kappa, sign_test};
use capref::metrics::{bleu4, cider_d, edit_distance};
use capref::{CaptionRecord, Dataset, ImageRef, Origin, Split};

use common::{bleu_oracle, cider_oracle, eval_set, fleiss_oracle, naive_levenshtein, sign_test_oracle, Item};

const WORDS: [&str; 10] = ["a", "the", "dog", "cat", "red", "runs", "on", "grass", "two", "small"];

fn sentence(min: usize, max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(&WORDS[..]).prop_map(str::to_owned), min..=max)
}

fn corpus() -> impl Strategy<Value = Vec<Item>> {
    prop::collection::vec((sentence(1, 10), prop::collection::vec(sentence(1, 10), 1..4)), 2..8).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (c, rs))| (format!("img{i}"), c, rs))
            .collect()
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_agree_with_oracles(items in corpus()) {
        let set = eval_set(&items);
        prop_assert!(close(bleu4(&set).unwrap().score, bleu_oracle(&items)));
        prop_assert!(close(cider_d(&set).unwrap().score, cider_oracle(&items)));
    }

    #[test]
    fn metrics_ignore_item_and_reference_order(items in corpus(), rot in 0usize..8) {
        let set = eval_set(&items);
        let mut shuffled = items.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        for (_, _, refs) in &mut shuffled {
            refs.reverse();
        }
        let other = eval_set(&shuffled);
        prop_assert!(close(bleu4(&set).unwrap().score, bleu4(&other).unwrap().score));
        prop_assert!(close(cider_d(&set).unwrap().score, cider_d(&other).unwrap().score));
    }

    #[test]
    fn bleu_is_unchanged_by_duplicating_the_corpus(items in corpus()) {
        let mut doubled = items.clone();
        doubled.extend(items.iter().map(|(id, c, rs)| (format!("{id}-copy"), c.clone(), rs.clone())));
        prop_assert!(close(bleu4(&eval_set(&items)).unwrap().score, bleu4(&eval_set(&doubled)).unwrap().score));
    }

    #[test]
    fn levenshtein_is_a_metric(a in sentence(0, 7), b in sentence(0, 7), c in sentence(0, 7)) {
        let d = |x: &[String], y: &[String]| edit_distance(x, y);
        prop_assert_eq!(d(&a, &b), naive_levenshtein(&a, &b));
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
    }

    #[test]
    fn sign_test_is_symmetric_and_exact(a in 0u64..60, b in 0u64..60) {
        let p = sign_test(a, b);
        prop_assert_eq!(p, sign_test(b, a));
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(close(p, sign_test_oracle(a, a + b)));
        if a > b {
            prop_assert!(sign_test(a + 1, b) <= p);
        }
    }

    #[test]
    fn fleiss_ignores_item_and_category_order(
        rows in prop::collection::vec(prop::collection::vec(0usize..4, 3), 2..12),
        rot in 0usize..12,
    ) {
        // every item rated by 4 annotators over 3 categories
        let table: Vec<Vec<usize>> = rows
            .iter()
            .map(|r| {
                let mut counts = vec![0usize; 3];
                for &x in r.iter().chain(std::iter::once(&(r[0] % 3))) {
                    counts[x % 3] += 1;
                }
                counts
            })
            .collect();
        let total: Vec<usize> = (0..3).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        prop_assume!(total.iter().filter(|&&t| t > 0).count() > 1);

        let k = fleiss_kappa(&table, 4).unwrap();
        prop_assert!(close(k, fleiss_oracle(&table, 4)));
        let mut permuted = table.clone();
        permuted.rotate_left(rot % table.len());
        for row in &mut permuted {
            row.swap(0, 2);
        }
        prop_assert!(close(k, fleiss_kappa(&permuted, 4).unwrap()));
    }

    #[test]
    fn cohen_is_symmetric(pairs in prop::collection::vec((0u8..3, 0u8..3), 2..40)) {
        let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        if let (Ok(x), Ok(y)) = (cohen_kappa(&a, &b), cohen_kappa(&b, &a)) {
            prop_assert!(close(x, y));
            prop_assert!(x <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn reformulation_stats_are_unchanged_by_doubling(
        rows in prop::collection::vec((sentence(1, 8), sentence(1, 8), any::<bool>()), 1..10),
    ) {
        let pairs: Vec<ReformulationPair> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (a, b, same))| ReformulationPair {
                image_id: format!("p{i}"),
                original: a.join(" "),
                reformulated: if same { a.join(" ") } else { b.join(" ") },
                language: "en".into(),
            })
            .collect();
        let doubled: Vec<ReformulationPair> = pairs.iter().chain(&pairs).cloned().collect();
        for unit in [LengthUnit::Characters, LengthUnit::Words] {
            let one = reformulation_stats(&pairs, unit).unwrap();
            let two = reformulation_stats(&doubled, unit).unwrap();
            prop_assert_eq!(two.total, 2 * one.total);
            prop_assert_eq!(two.unchanged, 2 * one.unchanged);
            prop_assert!(close(one.unchanged_fraction, two.unchanged_fraction));
            prop_assert!(close(one.mean_edit_distance, two.mean_edit_distance));
            prop_assert!(close(one.mean_len_before, two.mean_len_before));
            prop_assert!(close(one.mean_len_after, two.mean_len_after));
        }
    }

    #[test]
    fn pairing_picks_the_first_maximal_overlap(
        stylized in sentence(1, 10),
        candidates in prop::collection::vec(sentence(1, 10), 1..6),
    ) {
        let stylized = stylized.join(" ");
        let texts: Vec<String> = candidates.iter().map(|c| c.join(" ")).collect();
        let i = pair_stylized_to_original(&stylized, &texts).unwrap();
        let overlaps: Vec<usize> = texts.iter().map(|t| token_overlap(&stylized, t)).collect();
        let best = *overlaps.iter().max().unwrap();
        prop_assert_eq!(overlaps[i], best);
        prop_assert!(overlaps[..i].iter().all(|&o| o < best));
        prop_assert!(best <= stylized.split(' ').count());
    }

    #[test]
    fn subsets_are_deterministic_and_nested(images in 1usize..40, small in 1usize..40, extra in 0usize..40, seed in any::<u64>()) {
        let small = small.min(images);
        let large = (small + extra).min(images);
        let mut b = Dataset::builder("pool", Split::Train);
        for i in 0..images {
            let id = format!("{i:03}");
            b.add_image(ImageRef { id: id.clone(), uri: format!("mock://image/{i}"), dataset: "pool".into() }).unwrap();
            b.add_caption(CaptionRecord::new(id, format!("caption {i}"), "en", Origin::Human)).unwrap();
        }
        let pool = b.build();
        let a = sample_subset(&pool, small, seed).unwrap();
        prop_assert_eq!(&a, &sample_subset(&pool, small, seed).unwrap());
        prop_assert_eq!(a.image_count(), small);
        prop_assert_eq!(a.caption_count(), small);
        let big = sample_subset(&pool, large, seed).unwrap();
        prop_assert!(a.images().iter().all(|img| big.image(&img.id).is_some()));
    }
}

#[derive(Debug, Clone)]
enum Op {
    Next(u8),
    Submit(u8),
    Advance,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            (0u8..3).prop_map(Op::Next),
            (0u8..3).prop_map(Op::Submit),
            Just(Op::Advance),
        ],
        1..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn annotation_counts_are_conserved(ops in ops(), tasks in 1usize..6, multiplicity in 1usize..3) {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(0));
        let opts = AnnotateOptions { lease_ms: 100, snapshot_every: 5 };
        let store = AnnotationStore::open_with_clock(dir.path(), opts, clock.clone()).unwrap();
        let items: Vec<TaskItem> = (0..tasks)
            .map(|i| TaskItem {
                id: format!("t{i}"),
                image_id: None,
                image_uri: format!("mock://image/{i}"),
                payload: Payload::Reformulation { caption: format!("caption {i}"), language: "en".into() },
            })
            .collect();
        store.create_tasks(TaskKind::Reformulation, &items, None, multiplicity).unwrap();

        let mut held: Vec<Option<(String, String)>> = vec![None; 3];
        let mut accepted = 0usize;
        for op in ops {
            match op {
                Op::Next(a) => {
                    if let Some(t) = store.next_task(&format!("ann{a}"), TaskKind::Reformulation).unwrap() {
                        held[a as usize] = Some((t.id, t.lease.unwrap().id));
                    }
                }
                Op::Submit(a) => {
                    if let Some((task_id, lease_id)) = held[a as usize].take() {
                        let s = Submission {
                            task_id,
                            annotator_id: format!("ann{a}"),
                            lease_id: Some(lease_id),
                            body: SubmissionBody::Reformulation { text: "edited".into() },
                        };
                        if let Ok(ack) = store.submit(&s) {
                            prop_assert!(!ack.replay);
                            accepted += 1;
                        }
                    }
                }
                Op::Advance => clock.advance(60),
            }
            let c = store.counts();
            prop_assert_eq!(c.open + c.assigned + c.done, c.created);
            prop_assert_eq!(c.submissions, accepted);
            prop_assert!(c.done * multiplicity <= accepted);
        }

        let before = (store.counts(), store.tasks(), store.submissions());
        drop(store);
        let reopened = AnnotationStore::open_with_clock(dir.path(), opts, clock).unwrap();
        prop_assert_eq!(before, (reopened.counts(), reopened.tasks(), reopened.submissions()));
    }
}
