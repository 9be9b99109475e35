use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use mad::data::corpus::{read_corpus_dir, read_ontology, read_split, write_corpus_dir};
use mad::data::datagen::{
    build_flight_ontology, build_restaurant_ontology, generate_corpus, Domain, FlightConfig, Grammar,
    RestaurantConfig, SplitSizes, Task,
};
use mad::data::ontology::Split;
use mad::eval::{city_probe_from, evaluate};
use mad::model::persist::{load_model, save_model};
use mad::model::Model;
use mad::serve::{ServingSession, TurnResult};
use mad::sweep::{sweep_external_memory, TSV_HEADER};
use mad::train::{init_model, read_config_file, train, TrainConfig};
use mad::Error;

#[derive(Parser)]
#[command(name = "mad", version, about = "Memory-augmented dialogue manager")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: ontology.json plus train/dev/test JSONL.
    Gen(GenArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Score a model on one split.
    Eval(EvalArgs),
    /// Converse with a model on the terminal.
    Interact(InteractArgs),
    /// Serve the inference API and, optionally, the inspector UI.
    Serve(ServeArgs),
    /// Train and test once per external memory size.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// restaurant or flight
    #[arg(long, default_value = "restaurant")]
    domain: String,
    /// Restaurant task: 1, 2 or full
    #[arg(long, default_value = "1")]
    task: String,
    #[arg(long, default_value_t = 1000)]
    train: usize,
    #[arg(long, default_value_t = 1000)]
    dev: usize,
    #[arg(long, default_value_t = 1000)]
    test: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of cities in the flight ontology
    #[arg(long, default_value_t = FlightConfig::default().cities)]
    cities: usize,
    /// Number of dates in the flight ontology
    #[arg(long, default_value_t = FlightConfig::default().dates)]
    dates: usize,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

/// Training options. Flags override the config file, which overrides the
/// built-in defaults.
#[derive(Args)]
struct TrainOpts {
    /// Flat key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Total epochs, pretraining included [default: 15]
    #[arg(long)]
    epochs: Option<usize>,
    /// Pretraining epochs [default: 2]
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    /// Switch off a component: sm, attn, em or rnn (repeatable)
    #[arg(long, value_parser = ["sm", "attn", "em", "rnn"])]
    ablation: Vec<String>,
    /// Any config key as key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainOpts {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = TrainConfig::default();
        if let Some(p) = &self.config {
            read_config_file(p, &mut cfg)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(e) = self.pretrain_epochs {
            cfg.pretrain_epochs = e;
        }
        for a in &self.ablation {
            cfg.model.ablation = cfg.model.ablation.with_flag(a)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory written by `gen`
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// Output model file
    #[arg(long, default_value = "model.madm")]
    model: PathBuf,
    /// Also write the epoch log as JSON lines to this file
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "model.madm")]
    model: PathBuf,
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// train, dev or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Print the report as JSON instead of name=value lines
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InteractArgs {
    #[arg(long, default_value = "model.madm")]
    model: PathBuf,
    /// Attention tokens shown per slot
    #[arg(long, default_value_t = 3)]
    top: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "model.madm")]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory with the built inspector UI, served under /
    #[arg(long)]
    ui: Option<PathBuf>,
    /// Idle session lifetime in seconds
    #[arg(long, default_value_t = 1800)]
    ttl: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// Inclusive range lo..hi or a comma-separated list of sizes
    #[arg(long, default_value = "3..9")]
    sizes: String,
    /// Print rows as JSON lines instead of a tab-separated table
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    opts: TrainOpts,
}

fn print_config(cfg: &TrainConfig) {
    for (k, v) in cfg.resolved() {
        eprintln!("config {k}={v}");
    }
}

fn parse_split(s: &str) -> Result<Split, Error> {
    Split::parse(s).ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
}

fn cmd_gen(a: &GenArgs) -> Result<(), Error> {
    let domain = Domain::parse(&a.domain).ok_or_else(|| Error::Config(format!("unknown domain {:?}", a.domain)))?;
    let (ont, grammar) = match domain {
        Domain::Restaurant => {
            let task = Task::parse(&a.task).ok_or_else(|| Error::Config(format!("unknown task {:?}", a.task)))?;
            (build_restaurant_ontology(&RestaurantConfig::default())?, Grammar::Restaurant(task))
        }
        Domain::Flight => (
            build_flight_ontology(&FlightConfig {
                cities: a.cities,
                dates: a.dates,
            })?,
            Grammar::Flight,
        ),
    };
    eprintln!("config domain={} task={} seed={}", domain.name(), a.task, a.seed);
    let sizes = SplitSizes {
        train: a.train,
        dev: a.dev,
        test: a.test,
    };
    let corpus = generate_corpus(&ont, grammar, sizes, a.seed)?;
    write_corpus_dir(&a.out, &ont, &corpus)?;
    println!(
        "wrote {} ({} train, {} dev, {} test sessions, ontology {})",
        a.out.display(),
        a.train,
        a.dev,
        a.test,
        ont.hash()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), Error> {
    let cfg = a.opts.resolve()?;
    print_config(&cfg);
    let (ont, corpus) = read_corpus_dir(&a.data)?;
    let model = init_model(&ont, &corpus.train, &cfg)?;
    let mut log_file = match &a.log {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut io_err = None;
    let out = train(model, &corpus.train, &corpus.dev, &cfg, |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        println!("{line}");
        if let (Some(f), None) = (log_file.as_mut(), io_err.as_ref()) {
            if let Err(e) = writeln!(f, "{line}") {
                io_err = Some(e);
            }
        }
    })?;
    if let (Some(e), Some(p)) = (io_err, &a.log) {
        return Err(Error::io(p, e));
    }
    save_model(&out.model, &a.model)?;
    let best = out.best_epoch.map_or("none".to_string(), |e| e.to_string());
    eprintln!("saved {} (best epoch {best})", a.model.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Error> {
    let split = parse_split(&a.split)?;
    let ont = read_ontology(&a.data)?;
    let model = load_model(&a.model, Some(&ont))?;
    let sessions = read_split(&a.data, &ont, split)?;
    let report = evaluate(&model, &sessions)?
        .with_provenance("model", a.model.display())
        .with_provenance("split", split.name())
        .with_provenance("architecture", model.config.ablation.label());
    eprintln!("config model={} split={}", a.model.display(), split.name());
    for (k, v) in model.config.to_kv() {
        eprintln!("config {k}={v}");
    }
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_flat());
        if let Ok(p) = city_probe_from(&ont, &report) {
            println!("probe.dep_city={:.4}", p.dep_city.accuracy);
            println!("probe.arr_city={:.4}", p.arr_city.accuracy);
        }
    }
    Ok(())
}

fn bar(x: f32, width: usize) -> String {
    let filled = ((x.clamp(0.0, 1.0) * width as f32).round() as usize).min(width);
    format!("{}{}", "#".repeat(filled), ".".repeat(width - filled))
}

fn render_turn(model: &Model<f32>, r: &TurnResult, top: usize) -> String {
    let ont = &model.ontology;
    let mut s = format!("system> {}\n  act: {}", r.predicted_act.text, r.predicted_act.act_type);
    for (k, v) in &r.predicted_act.slots {
        s += &format!(" {k}={v}");
    }
    s.push('\n');
    let width = ont.slots().iter().map(|x| x.name.len()).max().unwrap_or(0);
    for (i, slot) in ont.slots().iter().enumerate() {
        s += &format!("  {:<width$}", slot.name);
        if let Some(&b) = r.beta.get(i) {
            s += &format!(" beta {} {b:.3}", bar(b, 20));
        }
        if let Some(row) = r.alpha.get(i) {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            let toks: Vec<String> = idx
                .iter()
                .take(top)
                .map(|&k| format!("{}:{:.2}", r.tokens[k], row[k]))
                .collect();
            s += &format!("  attn {}", toks.join(" "));
        }
        s.push('\n');
    }
    s
}

fn cmd_interact(a: &InteractArgs) -> Result<(), Error> {
    let model = load_model(&a.model, None)?;
    eprintln!("config model={} architecture={}", a.model.display(), model.config.ablation.label());
    eprintln!("type an utterance per line; /reset starts over, /quit leaves");
    let mut session = ServingSession::new(&model);
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Error::io(Path::new("<stdin>"), e))?;
        match line.trim() {
            "/quit" => break,
            "/reset" => {
                session = ServingSession::new(&model);
                println!("(new session)");
                continue;
            }
            _ => {}
        }
        match session.submit(&model, &line) {
            Ok(r) => print!("{}", render_turn(&model, &r, a.top)),
            Err(Error::Data(msg)) => println!("({msg})"),
            Err(e) => return Err(e),
        }
        out.flush().map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    }
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<(), Error> {
    let model = load_model(&a.model, None)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Config(format!("bad address: {e}")))?;
    eprintln!("config model={} addr={addr} ttl={}", a.model.display(), a.ttl);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Config(format!("runtime: {e}")))?;
    rt.block_on(mad::serve::serve(model, addr, a.ui.clone(), Duration::from_secs(a.ttl)))
}

fn parse_sizes(s: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::Config(format!("bad sizes {s:?}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Error> {
    let cfg = a.opts.resolve()?;
    print_config(&cfg);
    let sizes = parse_sizes(&a.sizes)?;
    let (ont, corpus) = read_corpus_dir(&a.data)?;
    if !a.json {
        println!("{TSV_HEADER}");
    }
    sweep_external_memory(&ont, &corpus, &cfg, &sizes, |row| {
        if a.json {
            println!("{}", serde_json::to_string(row).expect("sweep row serializes"));
        } else {
            println!("{}", row.tsv());
        }
    })?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Interact(a) => cmd_interact(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
