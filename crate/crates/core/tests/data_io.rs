use proptest::prelude::*;
use shardgrad::data_io::synth::{synthetic_corpus, synthetic_digits, write_synthetic_mnist};
use shardgrad::data_io::{idx_paths, load_corpus, load_idx, write_idx, CharCorpus};
use shardgrad::tensor::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn idx_round_trip(
        rows in 1usize..6,
        cols in 1usize..6,
        raw in prop::collection::vec((any::<u8>(), 0u8..10), 0..20),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        let images: Vec<Vec<u8>> = raw.iter().map(|&(p, _)| vec![p; rows * cols]).collect();
        let labels: Vec<u8> = raw.iter().map(|&(_, l)| l).collect();
        write_idx(&img, &lab, &images, &labels, rows, cols).unwrap();
        let ds = load_idx(&img, &lab).unwrap();
        prop_assert_eq!(ds.len(), raw.len());
        let examples = ds.examples();
        for ((x, y), &(p, l)) in examples.iter().zip(&raw) {
            prop_assert_eq!(x.len(), rows * cols);
            prop_assert!(x.iter().all(|&v| (v - p as f64 / 255.0).abs() < 1e-12));
            prop_assert_eq!(y.iter().position(|&v| v == 1.0), Some(l as usize));
        }
    }

    #[test]
    fn corpus_round_trip(text in "[a-zA-Z ,.\n]{2,200}") {
        let corpus = CharCorpus::from_text(&text).unwrap();
        let decoded = corpus.decode(corpus.stream()).unwrap();
        prop_assert_eq!(&decoded, &text);
        let seqs = corpus.sequences(7, None).unwrap();
        let active: usize = seqs.iter().map(|s| s.mask.active_count()).sum();
        prop_assert_eq!(active, text.chars().count() - 1);
    }
}

#[test]
fn synthetic_mnist_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_mnist(dir.path(), 30, 10, 4).unwrap();
    let [a, b, c, d] = idx_paths(dir.path());
    let train = load_idx(&a, &b).unwrap();
    let test = load_idx(&c, &d).unwrap();
    assert_eq!((train.len(), test.len()), (30, 10));
    let (images, labels) = synthetic_digits(30, &mut Rng::new(4));
    assert_eq!(images.len(), labels.len());
}

#[test]
fn corpus_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("play.txt");
    let text = synthetic_corpus(2_000, &mut Rng::new(9));
    std::fs::write(&path, &text).unwrap();
    let corpus = load_corpus(&path).unwrap();
    assert_eq!(corpus.text(), text);
    assert!(corpus.vocab_size() > 10);
    assert!(load_corpus(&dir.path().join("missing.txt")).is_err());
}
