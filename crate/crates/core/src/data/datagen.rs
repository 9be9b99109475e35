//! Simulators for the restaurant (bAbI-style) and flight-booking domains.
//!
//! Both simulators draw a user goal, then alternate templated user
//! utterances with rule-based system acts. Every value the user mentions is
//! a single token copied verbatim into the utterance, which is what makes
//! string-match supervision of attention and update gates exact.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ontology::{Corpus, DialogueAct, Ontology, Session, Slot, Split, Turn, ASK_SLOT};
use crate::Error;

pub const RESTAURANT_ACTS: [&str; 10] = [
    "ask_cuisine",
    "ask_location",
    "ask_price",
    "ask_size",
    "api_call",
    "update_api_call",
    "acknowledge",
    "display_options",
    "give_info",
    "end",
];

pub const FLIGHT_ACTS: [&str; 5] = ["ask_dep_loc", "ask_arr_loc", "ask_dep_date", "offer", "end"];

const CUISINES: [&str; 10] = [
    "british",
    "french",
    "italian",
    "spanish",
    "indian",
    "japanese",
    "chinese",
    "korean",
    "vietnamese",
    "thai",
];
const LOCATIONS: [&str; 10] = [
    "london", "paris", "rome", "madrid", "bombay", "tokyo", "seoul", "hanoi", "berlin", "dublin",
];
const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];
const SIZES: [&str; 8] = ["two", "four", "six", "eight", "three", "five", "seven", "ten"];
const REQUESTABLES: [&str; 2] = ["address", "telephone"];
const CITIES: [&str; 48] = [
    "beijing", "shanghai", "guangzhou", "shenzhen", "chengdu", "hangzhou", "wuhan", "xian",
    "nanjing", "tianjin", "chongqing", "suzhou", "qingdao", "dalian", "xiamen", "kunming",
    "harbin", "changsha", "zhengzhou", "jinan", "shenyang", "fuzhou", "hefei", "nanning",
    "guiyang", "lanzhou", "urumqi", "lhasa", "haikou", "sanya", "taiyuan", "hohhot", "yinchuan",
    "xining", "nanchang", "wenzhou", "ningbo", "zhuhai", "guilin", "lijiang", "dunhuang",
    "yantai", "weihai", "luoyang", "datong", "baotou", "changchun", "yanji",
];

/// Value counts for the restaurant ontology.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RestaurantConfig {
    pub cuisines: usize,
    pub locations: usize,
    pub prices: usize,
    pub sizes: usize,
}

impl Default for RestaurantConfig {
    fn default() -> Self {
        RestaurantConfig {
            cuisines: 10,
            locations: 10,
            prices: 3,
            sizes: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlightConfig {
    pub cities: usize,
    pub dates: usize,
}

impl Default for FlightConfig {
    fn default() -> Self {
        FlightConfig {
            cities: 174,
            dates: 100,
        }
    }
}

/// Deterministic pronounceable filler word, injective in `n`.
fn synthetic_word(n: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut n = n;
    let mut s = String::new();
    for _ in 0..4 {
        let syl = n % (C.len() * V.len());
        n /= C.len() * V.len();
        s.push(C[syl / V.len()] as char);
        s.push(V[syl % V.len()] as char);
    }
    s
}

fn value_list(known: &[&str], count: usize, family: usize) -> Vec<String> {
    (0..count)
        .map(|i| match known.get(i) {
            Some(v) => (*v).to_string(),
            None => synthetic_word(family * 10_000 + i),
        })
        .collect()
}

pub fn build_restaurant_ontology(cfg: &RestaurantConfig) -> Result<Ontology, Error> {
    for (name, n) in [
        ("Cuisine", cfg.cuisines),
        ("Location", cfg.locations),
        ("Price", cfg.prices),
        ("Size", cfg.sizes),
    ] {
        if n == 0 {
            return Err(Error::Config(format!("{name} value count must be positive")));
        }
    }
    let slots = vec![
        Slot {
            name: "Cuisine".into(),
            values: value_list(&CUISINES, cfg.cuisines, 1),
        },
        Slot {
            name: "Location".into(),
            values: value_list(&LOCATIONS, cfg.locations, 2),
        },
        Slot {
            name: "Price".into(),
            values: value_list(&PRICES, cfg.prices, 3),
        },
        Slot {
            name: "Size".into(),
            values: value_list(&SIZES, cfg.sizes, 4),
        },
        Slot {
            name: ASK_SLOT.into(),
            values: REQUESTABLES.iter().map(|s| s.to_string()).collect(),
        },
    ];
    Ontology::new(
        slots,
        RESTAURANT_ACTS.iter().map(|s| s.to_string()).collect(),
        Some(ASK_SLOT),
    )
}

/// `count` distinct dates in MM.DD form, spread over the year.
fn date_values(count: usize) -> Vec<String> {
    const DAYS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let all: Vec<String> = DAYS
        .iter()
        .enumerate()
        .flat_map(|(m, &d)| (1..=d).map(move |day| format!("{:02}.{:02}", m + 1, day)))
        .collect();
    let step = (all.len() / count.max(1)).max(1);
    all.into_iter().step_by(step).take(count).collect()
}

pub fn build_flight_ontology(cfg: &FlightConfig) -> Result<Ontology, Error> {
    if cfg.cities < 2 {
        return Err(Error::Config("flight ontology needs at least 2 cities".into()));
    }
    if cfg.dates == 0 || cfg.dates > 365 {
        return Err(Error::Config("date count must be within 1..=365".into()));
    }
    let cities = value_list(&CITIES, cfg.cities, 5);
    let slots = vec![
        Slot {
            name: "Dep_city".into(),
            values: cities.clone(),
        },
        Slot {
            name: "Arr_city".into(),
            values: cities,
        },
        Slot {
            name: "Date".into(),
            values: date_values(cfg.dates),
        },
    ];
    Ontology::new(slots, FLIGHT_ACTS.iter().map(|s| s.to_string()).collect(), None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Restaurant,
    Flight,
}

impl Domain {
    pub fn parse(s: &str) -> Option<Domain> {
        match s {
            "restaurant" => Some(Domain::Restaurant),
            "flight" => Some(Domain::Flight),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Restaurant => "restaurant",
            Domain::Flight => "flight",
        }
    }
}

/// Restaurant task mode: issuing API calls, updating them, or both plus the
/// closing phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Issue,
    Update,
    Full,
}

impl Task {
    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "1" => Some(Task::Issue),
            "2" => Some(Task::Update),
            "full" => Some(Task::Full),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Issue => "1",
            Task::Update => "2",
            Task::Full => "full",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, s: Split) -> usize {
        match s {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }
}

/// Which simulator to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grammar {
    Restaurant(Task),
    Flight,
}

/// SplitMix64 finalizer; used to derive independent per-split seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates all three splits. A pure function of its arguments.
pub fn generate_corpus(
    ont: &Ontology,
    grammar: Grammar,
    sizes: SplitSizes,
    seed: u64,
) -> Result<Corpus, Error> {
    let mut corpus = Corpus::default();
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let n = sizes.get(split);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64 + 1));
        let sessions = (0..n)
            .map(|i| {
                let id = format!("{}-{:05}", split.name(), i);
                match grammar {
                    Grammar::Restaurant(task) => restaurant_session(ont, task, id, &mut rng),
                    Grammar::Flight => flight_session(ont, id, &mut rng),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        match split {
            Split::Train => corpus.train = sessions,
            Split::Dev => corpus.dev = sessions,
            Split::Test => corpus.test = sessions,
        }
    }
    Ok(corpus)
}

fn pick<'a, R: Rng>(rng: &mut R, options: &[&'a str]) -> &'a str {
    options.choose(rng).expect("template lists are non-empty")
}

fn fill(template: &str, value: &str) -> String {
    template.replace("{v}", value)
}

/// Builds the system utterance for an act. `template` selects among the
/// surface forms of the act type (wrapping).
pub fn verbalize(ont: &Ontology, act: &DialogueAct, template: usize) -> String {
    let name = ont.act_types()[act.act_type].as_str();
    let forms = system_templates(name);
    let t = forms[template % forms.len()];
    let values: Vec<&str> = act
        .slot_values()
        .map(|(s, v)| ont.slot(s).values[v].as_str())
        .collect();
    t.replace("{values}", &values.join(" "))
        .replace("{v}", values.first().copied().unwrap_or(""))
        .trim()
        .to_string()
}

fn system_templates(act: &str) -> &'static [&'static str] {
    match act {
        "ask_cuisine" => &[
            "any preference on a type of cuisine",
            "what kind of food would you like",
            "which cuisine do you prefer",
            "what type of cuisine are you looking for",
            "do you have a cuisine in mind",
        ],
        "ask_location" => &[
            "where should it be",
            "which city would you like",
            "what location do you prefer",
            "in which area should i look",
            "where would you like to eat",
        ],
        "ask_price" => &[
            "which price range are you looking for",
            "any price preference",
            "how much would you like to spend",
            "what budget do you have",
            "what price range do you want",
        ],
        "ask_size" => &[
            "how many people would be in your party",
            "for how many people",
            "how many guests",
            "what is the party size",
            "how many of you will there be",
        ],
        "api_call" => &[
            "api_call {values}",
            "looking up {values}",
            "query {values}",
            "searching {values}",
            "calling the api with {values}",
        ],
        "update_api_call" => &[
            "updated api_call {values}",
            "looking up again {values}",
            "new query {values}",
            "searching again {values}",
            "calling the api again with {values}",
        ],
        "acknowledge" => &["i'm on it", "ok", "sure", "got it", "alright", "certainly"],
        "display_options" => &[
            "what do you think of this option",
            "here is an option for you",
            "how about this restaurant",
            "i found this place for you",
            "would this one work",
        ],
        "give_info" => &[
            "here it is the {v}",
            "the {v} is on file",
            "sending you the {v}",
            "here is the {v} you asked for",
            "this is the {v}",
        ],
        "end" => &[
            "you're welcome",
            "enjoy your stay",
            "have a nice day",
            "glad i could help",
            "goodbye",
        ],
        "ask_dep_loc" => &[
            "where are you flying from",
            "which city do you depart from",
            "what is your departure city",
            "where will you leave from",
            "from which city",
        ],
        "ask_arr_loc" => &[
            "where are you flying to",
            "which city do you want to go to",
            "what is your destination",
            "where will you land",
            "to which city",
        ],
        "ask_dep_date" => &[
            "when do you want to leave",
            "what date do you fly",
            "which day is the departure",
            "when is your flight",
            "on which date",
        ],
        "offer" => &[
            "i found a flight {values}",
            "there is a ticket {values}",
            "how about this flight {values}",
            "booking option {values}",
            "the best flight is {values}",
        ],
        _ => &["{values}"],
    }
}

// Restaurant slot indices in the ontology.
const CUISINE: usize = 0;
const LOCATION: usize = 1;
const PRICE: usize = 2;
const SIZE: usize = 3;
const ASK: usize = 4;
/// Order in which missing slots are requested.
const ASK_ORDER: [usize; 4] = [CUISINE, LOCATION, SIZE, PRICE];

const GREETINGS: [&str; 6] = ["hi", "hello", "good morning", "hey there", "hello there", "good evening"];
const SILENCE: &str = "<SILENCE>";
const OPENERS: [&str; 6] = [
    "can you book a table",
    "i would like to book a table",
    "may i have a table",
    "can you make a restaurant reservation",
    "i'd like a table",
    "could you find me a restaurant",
];
const NEGATIONS: [&str; 5] = ["no", "no thanks", "nothing else", "no that is all", "no it is fine"];
const UPDATE_OPENERS: [&str; 5] = [
    "instead could it be",
    "actually i would prefer",
    "can you change it to",
    "i changed my mind",
    "actually make it",
];
const ACCEPTS: [&str; 5] = ["that looks great", "i love that", "let's do it", "it's perfect", "sounds good"];
const INFO_REQUESTS: [&str; 5] = [
    "may i have the {v} of the restaurant",
    "what is the {v}",
    "can you give me the {v}",
    "do you have its {v}",
    "please tell me the {v}",
];
const THANKS: [&str; 5] = ["thank you", "thanks", "thanks a lot", "that is all thank you", "great thanks"];

fn request_fragment(slot: usize) -> &'static [&'static str] {
    match slot {
        CUISINE => &["with {v} food", "with {v} cuisine", "serving {v} food"],
        LOCATION => &["in {v}", "somewhere in {v}", "located in {v}"],
        PRICE => &["in a {v} price range", "in the {v} price range", "at a {v} price"],
        _ => &["for {v} people", "for {v}", "for a party of {v}"],
    }
}

fn answer_templates(slot: usize) -> &'static [&'static str] {
    match slot {
        CUISINE => &[
            "{v}",
            "{v} food",
            "with {v} food",
            "i love {v} food",
            "{v} cuisine please",
            "i would like {v} food",
        ],
        LOCATION => &["{v}", "in {v}", "{v} please", "i would like it in {v}", "somewhere in {v}"],
        PRICE => &[
            "{v}",
            "{v} price range",
            "in a {v} price range",
            "i prefer {v}",
            "something {v} please",
        ],
        _ => &["{v}", "for {v} people", "we will be {v}", "{v} people please", "a table for {v}"],
    }
}

/// Accumulates turns while tracking the previous system utterance.
struct Dialogue<'o, R> {
    ont: &'o Ontology,
    rng: R,
    turns: Vec<Turn>,
    prev: String,
}

impl<R: Rng> Dialogue<'_, R> {
    fn act(&self, name: &str) -> DialogueAct {
        let idx = self.ont.act_index(name).expect("act type belongs to the grammar's ontology");
        DialogueAct::bare(idx, self.ont.num_slots())
    }

    fn push(&mut self, user: String, act: DialogueAct) {
        let template = self.rng.gen_range(0..5);
        let system = verbalize(self.ont, &act, template);
        let prev = std::mem::replace(&mut self.prev, system);
        self.turns.push(Turn {
            user,
            system_prev: prev,
            act,
        });
    }

    fn value(&self, slot: usize, v: usize) -> &str {
        &self.ont.slot(slot).values[v]
    }
}

fn restaurant_session<R: Rng>(ont: &Ontology, task: Task, id: String, rng: &mut R) -> Result<Session, Error> {
    if ont.num_slots() != 5 || ont.act_types().len() != RESTAURANT_ACTS.len() {
        return Err(Error::Config("restaurant grammar needs the restaurant ontology".into()));
    }
    let mut d = Dialogue {
        ont,
        rng: &mut *rng,
        turns: Vec::new(),
        prev: String::new(),
    };
    let goal: Vec<usize> = (0..4).map(|s| d.rng.gen_range(0..ont.num_values(s))).collect();
    let mut known = [false; 4];

    let greeting = pick(&mut d.rng, &GREETINGS).to_string();
    let ack = d.act("acknowledge");
    d.push(greeting, ack);

    // Opening request with a random subset of constraints (all of them in the
    // update-only task).
    let mut mentioned: Vec<usize> = (0..4)
        .filter(|_| task == Task::Update || d.rng.gen_bool(0.5))
        .collect();
    mentioned.shuffle(&mut d.rng);
    let mut request = pick(&mut d.rng, &OPENERS).to_string();
    for &s in &mentioned {
        let frag = pick(&mut d.rng, request_fragment(s));
        request.push(' ');
        request.push_str(&fill(frag, d.value(s, goal[s])));
        known[s] = true;
    }
    let mut user = request;

    // Ask for missing constraints in a fixed order.
    while let Some(s) = ASK_ORDER.iter().copied().find(|s| !known[*s]) {
        let name = ["ask_cuisine", "ask_location", "ask_price", "ask_size"][s];
        let act = d.act(name);
        d.push(user, act);
        let t = pick(&mut d.rng, answer_templates(s));
        let mut answer = fill(t, d.value(s, goal[s]));
        known[s] = true;
        // Occasionally volunteer one more missing constraint.
        let extra: Vec<usize> = (0..4).filter(|x| !known[*x]).collect();
        if !extra.is_empty() && d.rng.gen_bool(0.2) {
            let x = *extra.choose(&mut d.rng).unwrap();
            let frag = pick(&mut d.rng, request_fragment(x));
            answer.push(' ');
            answer.push_str(&fill(frag, d.value(x, goal[x])));
            known[x] = true;
        }
        user = answer;
    }
    let ack = d.act("acknowledge");
    d.push(user, ack);
    let call = api_act(&d, "api_call", &goal);
    d.push(SILENCE.to_string(), call);

    let mut goal = goal;
    if task != Task::Issue {
        // Update phase: one or two rounds of changed constraints.
        let rounds = if d.rng.gen_bool(0.3) { 2 } else { 1 };
        for _ in 0..rounds {
            let n_changes = if d.rng.gen_bool(0.3) { 2 } else { 1 };
            let mut slots: Vec<usize> = (0..4).filter(|s| ont.num_values(*s) > 1).collect();
            slots.shuffle(&mut d.rng);
            slots.truncate(n_changes);
            let mut frags = Vec::new();
            for &s in &slots {
                let mut v = d.rng.gen_range(0..ont.num_values(s) - 1);
                if v >= goal[s] {
                    v += 1;
                }
                goal[s] = v;
                frags.push(fill(pick(&mut d.rng, request_fragment(s)), d.value(s, v)));
            }
            let opener = pick(&mut d.rng, &UPDATE_OPENERS);
            let utterance = if frags.is_empty() {
                opener.to_string()
            } else {
                format!("{opener} {}", frags.join(" and "))
            };
            let ack = d.act("acknowledge");
            d.push(utterance, ack);
        }
        let no = pick(&mut d.rng, &NEGATIONS).to_string();
        let ack = d.act("acknowledge");
        d.push(no, ack);
        let call = api_act(&d, "update_api_call", &goal);
        d.push(SILENCE.to_string(), call);
    }

    if task == Task::Full {
        let display = d.act("display_options");
        d.push(SILENCE.to_string(), display);
        let accept = pick(&mut d.rng, &ACCEPTS).to_string();
        let ack = d.act("acknowledge");
        d.push(accept, ack);
        let mut asked: Vec<usize> = (0..REQUESTABLES.len()).filter(|_| d.rng.gen_bool(0.6)).collect();
        asked.shuffle(&mut d.rng);
        for r in asked {
            let text = fill(pick(&mut d.rng, &INFO_REQUESTS), d.value(ASK, r));
            let info = d.act("give_info").with_value(ASK, r);
            d.push(text, info);
        }
        let thanks = pick(&mut d.rng, &THANKS).to_string();
        let end = d.act("end");
        d.push(thanks, end);
    }

    Ok(Session { id, turns: d.turns })
}

fn api_act<R: Rng>(d: &Dialogue<'_, R>, name: &str, goal: &[usize]) -> DialogueAct {
    let mut act = d.act(name);
    for s in [CUISINE, LOCATION, PRICE, SIZE] {
        act = act.with_value(s, goal[s]);
    }
    act
}

const DEP: usize = 0;
const ARR: usize = 1;
const DATE: usize = 2;

const FLIGHT_OPENERS: [&str; 5] = [
    "i want to book a flight",
    "help me book a ticket",
    "i need a plane ticket",
    "book me a flight please",
    "i would like to fly",
];
const WITHHOLD: [&str; 5] = ["not sure yet", "let me think", "i don't know", "hmm", "wait a moment"];
const FLIGHT_CLOSE: [&str; 5] = ["ok thanks", "great", "book it", "perfect thank you", "that works"];

fn flight_fragment(slot: usize) -> &'static [&'static str] {
    match slot {
        DEP => &["from {v}", "leaving {v}", "departing {v}"],
        ARR => &["to {v}", "going to {v}", "arriving {v}"],
        _ => &["on {v}", "{v} please", "for {v}"],
    }
}

fn flight_session<R: Rng>(ont: &Ontology, id: String, rng: &mut R) -> Result<Session, Error> {
    if ont.num_slots() != 3 || ont.act_types().len() != FLIGHT_ACTS.len() {
        return Err(Error::Config("flight grammar needs the flight ontology".into()));
    }
    let mut d = Dialogue {
        ont,
        rng: &mut *rng,
        turns: Vec::new(),
        prev: String::new(),
    };
    let n_cities = ont.num_values(DEP);
    let dep = d.rng.gen_range(0..n_cities);
    let mut arr = d.rng.gen_range(0..n_cities - 1);
    if arr >= dep {
        arr += 1;
    }
    let date = d.rng.gen_range(0..ont.num_values(DATE));
    let goal = [dep, arr, date];
    let mut known = [false; 3];

    let mut user = pick(&mut d.rng, &FLIGHT_OPENERS).to_string();
    for s in [DEP, ARR, DATE] {
        if d.rng.gen_bool(0.25) {
            let frag = pick(&mut d.rng, flight_fragment(s));
            user.push(' ');
            user.push_str(&fill(frag, d.value(s, goal[s])));
            known[s] = true;
        }
    }

    // The system asks for missing slots in random order; a withheld answer
    // leads to another request.
    loop {
        let missing: Vec<usize> = (0..3).filter(|s| !known[*s]).collect();
        let Some(&s) = missing.choose(&mut d.rng) else { break };
        let act = d.act(["ask_dep_loc", "ask_arr_loc", "ask_dep_date"][s]);
        d.push(user, act);
        if d.rng.gen_bool(0.1) {
            user = pick(&mut d.rng, &WITHHOLD).to_string();
            continue;
        }
        let v = d.value(s, goal[s]).to_string();
        user = if d.rng.gen_bool(0.8) {
            v
        } else {
            fill(pick(&mut d.rng, flight_fragment(s)), &v)
        };
        known[s] = true;
    }
    let mut offer = d.act("offer");
    for s in [DEP, ARR, DATE] {
        offer = offer.with_value(s, goal[s]);
    }
    d.push(user, offer);
    let close = pick(&mut d.rng, &FLIGHT_CLOSE).to_string();
    let end = d.act("end");
    d.push(close, end);
    Ok(Session { id, turns: d.turns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ontology::tokenize;

    fn sizes(n: usize) -> SplitSizes {
        SplitSizes {
            train: n,
            dev: n,
            test: n,
        }
    }

    #[test]
    fn restaurant_defaults_match_table() {
        let o = build_restaurant_ontology(&RestaurantConfig::default()).unwrap();
        let counts: Vec<usize> = (0..o.num_slots()).map(|i| o.num_values(i)).collect();
        assert_eq!(counts, vec![10, 10, 3, 4, 2]);
        assert_eq!(o.num_act_types(), 10);
        assert_eq!(o.ask_slot(), Some(4));
        assert_eq!(o.slot(4).values, vec!["address", "telephone"]);
    }

    #[test]
    fn degenerate_price_slot_is_allowed() {
        let cfg = RestaurantConfig {
            prices: 1,
            ..Default::default()
        };
        let o = build_restaurant_ontology(&cfg).unwrap();
        assert_eq!(o.num_values(2), 1);
        let c = generate_corpus(&o, Grammar::Restaurant(Task::Full), sizes(5), 3).unwrap();
        assert_eq!(c.train.len(), 5);
    }

    #[test]
    fn zero_value_count_is_rejected() {
        let cfg = RestaurantConfig {
            sizes: 0,
            ..Default::default()
        };
        assert!(build_restaurant_ontology(&cfg).is_err());
    }

    #[test]
    fn ontology_hash_is_stable() {
        let a = build_restaurant_ontology(&RestaurantConfig::default()).unwrap().hash();
        let b = build_restaurant_ontology(&RestaurantConfig::default()).unwrap().hash();
        assert_eq!(a, b);
        let f = build_flight_ontology(&FlightConfig::default()).unwrap();
        assert_ne!(a, f.hash());
    }

    #[test]
    fn flight_defaults_share_city_list() {
        let o = build_flight_ontology(&FlightConfig::default()).unwrap();
        let counts: Vec<usize> = (0..3).map(|i| o.num_values(i)).collect();
        assert_eq!(counts, vec![174, 174, 100]);
        assert_eq!(o.num_act_types(), 5);
        assert_eq!(o.slot(0).values, o.slot(1).values);
        assert!(o.slot(2).values.iter().all(|d| d.len() == 5 && &d[2..3] == "."));
        assert!(build_flight_ontology(&FlightConfig { cities: 1, dates: 10 }).is_err());
        let min = build_flight_ontology(&FlightConfig { cities: 2, dates: 10 }).unwrap();
        assert_eq!(min.num_values(0), 2);
    }

    #[test]
    fn synthetic_words_are_distinct() {
        let words: std::collections::BTreeSet<String> = (0..5000).map(synthetic_word).collect();
        assert_eq!(words.len(), 5000);
    }

    #[test]
    fn generation_is_deterministic_and_ids_disjoint() {
        let o = build_restaurant_ontology(&RestaurantConfig::default()).unwrap();
        let a = generate_corpus(&o, Grammar::Restaurant(Task::Issue), sizes(20), 42).unwrap();
        let b = generate_corpus(&o, Grammar::Restaurant(Task::Issue), sizes(20), 42).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&o, Grammar::Restaurant(Task::Issue), sizes(20), 43).unwrap();
        assert_ne!(a, c);
        let mut ids: Vec<&str> = Split::ALL
            .iter()
            .flat_map(|s| a.split(*s).iter().map(|x| x.id.as_str()))
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 60);
    }

    #[test]
    fn task_one_sessions_end_with_api_call() {
        let o = build_restaurant_ontology(&RestaurantConfig::default()).unwrap();
        let c = generate_corpus(&o, Grammar::Restaurant(Task::Issue), sizes(50), 1).unwrap();
        let api = o.act_index("api_call").unwrap();
        for s in &c.train {
            let last = s.turns.last().unwrap();
            assert_eq!(last.act.act_type, api);
            assert_eq!(last.act.mask, vec![true, true, true, true, false]);
            assert!(s.turns[0].system_prev.is_empty());
        }
    }

    #[test]
    fn masked_values_are_visible_in_history() {
        let o = build_restaurant_ontology(&RestaurantConfig::default()).unwrap();
        let f = build_flight_ontology(&FlightConfig { cities: 50, dates: 100 }).unwrap();
        let cases = [
            (&o, Grammar::Restaurant(Task::Full)),
            (&o, Grammar::Restaurant(Task::Update)),
            (&f, Grammar::Flight),
        ];
        for (ont, g) in cases {
            let c = generate_corpus(ont, g, sizes(40), 9).unwrap();
            for s in &c.train {
                let mut seen: Vec<String> = Vec::new();
                for t in &s.turns {
                    seen.extend(tokenize(&t.user));
                    seen.extend(tokenize(&t.system_prev));
                    t.act.validate(ont).unwrap();
                    for (slot, v) in t.act.slot_values() {
                        assert!(seen.contains(&ont.slot(slot).values[v]), "{}", s.id);
                    }
                }
            }
        }
    }

    #[test]
    fn flight_sessions_respect_ask_bounds() {
        let f = build_flight_ontology(&FlightConfig { cities: 50, dates: 100 }).unwrap();
        let c = generate_corpus(&f, Grammar::Flight, sizes(200), 5).unwrap();
        let end = f.act_index("end").unwrap();
        let mut total_turns = 0;
        for s in &c.train {
            assert_eq!(s.turns.last().unwrap().act.act_type, end);
            total_turns += s.turns.len();
            for slot in 0..3 {
                let asks = s.turns.iter().filter(|t| t.act.act_type == slot).count();
                // A withheld answer follows an ask whose next user turn is not an answer.
                let withheld = s
                    .turns
                    .windows(2)
                    .filter(|w| w[0].act.act_type == slot && WITHHOLD.contains(&w[1].user.as_str()))
                    .count();
                assert!(asks <= withheld + 1);
            }
        }
        let mean = total_turns as f64 / c.train.len() as f64;
        assert!((4.0..6.5).contains(&mean), "mean turns {mean}");
    }
}
