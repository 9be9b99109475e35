//! Ontologies, corpora and vocabularies.

pub mod corpus;
pub mod datagen;
pub mod ontology;
pub mod vocab;

pub use corpus::{parse_corpus, read_corpus_dir, serialize_corpus, write_corpus_dir};
pub use datagen::{
    build_flight_ontology, build_restaurant_ontology, generate_corpus, verbalize, Domain, FlightConfig,
    Grammar, RestaurantConfig, SplitSizes, Task,
};
pub use ontology::{tokenize, Corpus, DialogueAct, Ontology, Session, Slot, Split, Turn, ASK_SLOT};
pub use vocab::Vocabulary;
