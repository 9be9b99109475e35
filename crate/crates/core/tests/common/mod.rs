#![allow(dead_code)]

use mad::data::datagen::{
    build_flight_ontology, build_restaurant_ontology, generate_corpus, FlightConfig, Grammar, RestaurantConfig,
    SplitSizes, Task,
};
use mad::data::ontology::{Corpus, DialogueAct, Ontology, Session, Slot, Turn};
use mad::data::vocab::Vocabulary;
use mad::model::{Ablation, Model, ModelConfig};
use mad::train::TrainConfig;

pub fn restaurant(train: usize, dev: usize, test: usize, seed: u64) -> (Ontology, Corpus) {
    let ont = build_restaurant_ontology(&RestaurantConfig::default()).unwrap();
    let c = generate_corpus(&ont, Grammar::Restaurant(Task::Issue), SplitSizes { train, dev, test }, seed).unwrap();
    (ont, c)
}

pub fn flight(cities: usize, train: usize, dev: usize, test: usize, seed: u64) -> (Ontology, Corpus) {
    let ont = build_flight_ontology(&FlightConfig { cities, dates: 100 }).unwrap();
    let c = generate_corpus(&ont, Grammar::Flight, SplitSizes { train, dev, test }, seed).unwrap();
    (ont, c)
}

/// A configuration small enough for unit-speed training.
pub fn small_config(m: usize, n_e: usize, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.m = m;
    cfg.model.n_e = n_e;
    cfg.epochs = epochs;
    cfg.minibatch_size = 4;
    cfg
}

pub const WORDS: [&str; 12] = [
    "i", "want", "a", "shirt", "please", "hello", "what", "the", "it", "and", "thanks", "ok",
];

/// Two slots of two values, three act types and a vocabulary of exactly 20
/// entries (PAD and UNK included).
pub fn mini_ontology() -> (Ontology, Vocabulary) {
    let ont = Ontology::new(
        vec![
            Slot {
                name: "color".into(),
                values: vec!["red".into(), "blue".into()],
            },
            Slot {
                name: "size".into(),
                values: vec!["big".into(), "small".into()],
            },
        ],
        vec!["ask".into(), "inform".into(), "done".into()],
        None,
    )
    .unwrap();
    let tokens = ["color", "size", "red", "blue", "big", "small"]
        .into_iter()
        .chain(WORDS)
        .map(String::from);
    let vocab = Vocabulary::from_tokens(tokens);
    assert_eq!(vocab.len(), 20);
    (ont, vocab)
}

pub fn mini_session() -> Session {
    let act = |t: usize, vals: &[(usize, usize)]| {
        vals.iter()
            .fold(DialogueAct::bare(t, 2), |a, &(s, v)| a.with_value(s, v))
    };
    Session {
        id: "mini".into(),
        turns: vec![
            Turn {
                user: "hello i want a red shirt".into(),
                system_prev: String::new(),
                act: act(0, &[]),
            },
            Turn {
                user: "big please".into(),
                system_prev: "what size".into(),
                act: act(1, &[(0, 0), (1, 0)]),
            },
        ],
    }
}

pub fn mini_model(m: usize, n_e: usize, ablation: Ablation, seed: u64) -> Model<f64> {
    let (ont, vocab) = mini_ontology();
    let cfg = ModelConfig {
        m,
        n_e,
        ablation,
        ..ModelConfig::default()
    };
    Model::new(ont, vocab, cfg, seed).unwrap()
}
