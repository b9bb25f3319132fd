use std::time::Instant;

use proptest::prelude::*;
use sparselda::synth::{generate_split, SynthConfig};
use sparselda::*;

fn fixture() -> (Corpus, HeldoutSet) {
    let cfg = SynthConfig { seed: 12, topic_eta: 0.005, ..SynthConfig::new(600, 2_000, 10, 120.0) };
    let (train, held) = generate_split(&cfg, 60).unwrap();
    (train, HeldoutSet::from_corpus(&held))
}

fn trained(iterations: usize) -> (ModelState<f32>, TrainConfig, HeldoutSet) {
    let (corpus, held) = fixture();
    let cfg = TrainConfig { seed: 3, iterations, ..TrainConfig::new(10) };
    let state = train::<f32>(&corpus, &cfg, None, &mut NullSink).unwrap();
    (state, cfg, held)
}

#[test]
fn burn_in_length_barely_moves_the_estimate() {
    let (state, cfg, held) = trained(30);
    let ll = |burn_in| {
        let eval = EvalConfig { burn_in, seed: 1 };
        heldout_ll(state.word_topic_prob(), cfg.alpha, &held, &eval).unwrap().per_token_ll
    };
    let (short, long) = (ll(20), ll(40));
    assert!((short - long).abs() < 0.01, "20 sweeps {short}, 40 sweeps {long}");
}

#[test]
fn heldout_ll_improves_during_training() {
    let (corpus, held) = fixture();
    let cfg = TrainConfig { seed: 8, iterations: 20, eval_every: 1, ..TrainConfig::new(10) };
    let mut records = Vec::new();
    train::<f32>(&corpus, &cfg, Some(&held), &mut records).unwrap();
    let curve: Vec<f64> = records.iter().map(|r| r.heldout_ll.unwrap()).collect();
    assert_eq!(curve.len(), 20);
    // Single steps may dip by sampling noise; the trend may not.
    for w in curve.windows(2) {
        assert!(w[1] > w[0] - 0.02, "{curve:?}");
    }
    assert!(curve[19] > curve[0] + 0.1, "{curve:?}");
}

#[test]
fn checkpoint_round_trip_preserves_ll() {
    let (state, cfg, held) = trained(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    state.checkpoint().unwrap().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();

    let eval = EvalConfig { burn_in: 20, seed: 2 };
    let before = heldout_ll(state.word_topic_prob(), cfg.alpha, &held, &eval).unwrap();
    let after = heldout_ll(&loaded.probabilities::<f32>().unwrap(), loaded.alpha, &held, &eval).unwrap();
    assert!((before.per_token_ll - after.per_token_ll).abs() <= 1e-9);

    let resumed = ModelState::<f32>::from_checkpoint(&loaded, &cfg).unwrap();
    assert_eq!(resumed.iteration(), 5);
    assert_eq!(resumed.assignments().unwrap(), state.assignments().unwrap());
}

#[test]
fn reported_throughput_matches_wall_clock() {
    let cfg = SynthConfig { seed: 4, ..SynthConfig::new(4_000, 5_000, 20, 100.0) };
    let corpus = sparselda::synth::generate(&cfg).unwrap().corpus;
    let tcfg = TrainConfig { seed: 1, ..TrainConfig::new(20) };
    let mut state = ModelState::<f32>::initialize(&corpus, &tcfg).unwrap();
    state.run_iteration(&tcfg).unwrap();
    let start = Instant::now();
    let stats = state.run_iteration(&tcfg).unwrap();
    let wall = corpus.num_tokens() as f64 / start.elapsed().as_secs_f64() / 1e6;
    let reported = stats.throughput().unwrap();
    assert!((reported - wall).abs() <= 0.01 * wall, "reported {reported}, wall clock {wall}");
}

#[test]
fn trained_topics_recover_planted_structure() {
    let (state, _, _) = trained(40);
    let ranked = sparselda::eval::top_words(state.word_topic_prob(), 5).unwrap();
    assert_eq!(ranked.len(), 10);
    // Sparse planted topics give peaked learned topics.
    let peaked = ranked.iter().filter(|words| words[0].1 > 0.01).count();
    assert!(peaked >= 8, "{peaked} of 10 topics are peaked");
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (1usize..12, 1usize..15).prop_flat_map(|(d, v)| {
        prop::collection::vec((0..d as u32, 0..v as u32), 1..150)
            .prop_map(move |pairs| Corpus::from_pairs(d, v, pairs).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn layout_never_changes_the_chain(
        corpus in corpus_strategy(),
        k in 1usize..9,
        chunks in 1usize..6,
        workers in 1usize..4,
        seed in any::<u64>(),
    ) {
        let base = TrainConfig { seed, iterations: 3, ..TrainConfig::new(k) };
        let chunks = chunks.min(corpus.num_docs());
        let other = TrainConfig { num_chunks: ChunkCount::Fixed(chunks), num_workers: workers, ..base.clone() };
        let a = train::<f32>(&corpus, &base, None, &mut NullSink).unwrap();
        let b = train::<f32>(&corpus, &other, None, &mut NullSink).unwrap();
        prop_assert_eq!(a.assignments().unwrap(), b.assignments().unwrap());
        prop_assert_eq!(a.word_topic().total(), corpus.num_tokens() as u64);
        prop_assert_eq!(a.word_topic(), b.word_topic());
    }
}
