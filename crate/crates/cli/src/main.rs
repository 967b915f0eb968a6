use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use treespec::corpus::{build_corpora, encode, load_corpus_dir, synthetic_corpora, tokenize, train_models, DomainCorpus};
use treespec::metrics::summarize;
use treespec::report::{emit_report, read_records, render_tables, summary_json, ReportFormat};
use treespec::runner::run_experiment_with;
use treespec::tree::{build_draft_tree, tree_attention_mask};
use treespec::verify::score_tree;
use treespec::GenerationConfig;

/// Tree-based speculative decoding with per-node acceptance analytics.
#[derive(Parser)]
#[command(name = "treespec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment and write records, summaries and tables.
    Run {
        #[command(flatten)]
        setup: Setup,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Report files to write.
        #[arg(long, value_delimiter = ',', default_values = ["csv", "json", "tables"])]
        format: Vec<Format>,
        /// Also write the trained draft and target models.
        #[arg(long)]
        save_models: bool,
    },
    /// Re-aggregate an existing record file into summary.json and tables.txt.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the analytics tables for a record file.
    Tables {
        #[arg(long)]
        records: PathBuf,
    },
    /// Run the randomized oracle cross-checks.
    Selftest {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Build, score and print one draft tree for a context.
    DumpTree {
        #[command(flatten)]
        setup: Setup,
        /// Context text, tokenized with the configured tokenizer.
        #[arg(long)]
        context: String,
    },
}

#[derive(Args)]
struct Setup {
    /// Corpus root with one subdirectory of text files per domain.
    #[arg(long, conflicts_with = "synthetic")]
    corpus_dir: Option<PathBuf>,
    /// Generate this many synthetic documents per bundled domain.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Flat key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set max_depth=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Tables,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
            Format::Tables => ReportFormat::Tables,
        }
    }
}

enum Failure {
    Input(String),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "input error: {m}"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<treespec::Error> for Failure {
    fn from(e: treespec::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

const DEFAULT_SYNTHETIC_DOCS: usize = 200;

impl Setup {
    fn config(&self) -> Result<GenerationConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
                GenerationConfig::from_toml_str(&text)?
            }
            None => GenerationConfig::default(),
        };
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Failure::Input(format!("--set expects KEY=VALUE, got {item:?}")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn corpora(&self, cfg: &GenerationConfig) -> Result<Vec<DomainCorpus>, Failure> {
        let raw = match &self.corpus_dir {
            Some(dir) => load_corpus_dir(dir)?,
            None => synthetic_corpora(self.synthetic.unwrap_or(DEFAULT_SYNTHETIC_DOCS), cfg.seed),
        };
        Ok(build_corpora(&raw, cfg.tokenizer)?)
    }
}

fn load_records(path: &Path) -> Result<Vec<treespec::NodeRecord>, Failure> {
    let file = std::fs::File::open(path).map_err(|e| io_failure(path, e))?;
    Ok(read_records(file)?)
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf, Failure> {
    std::fs::write(&path, contents).map_err(|e| io_failure(&path, e))?;
    Ok(path)
}

fn run(setup: &Setup, out: &Path, formats: &[Format], save_models: bool) -> Result<(), Failure> {
    let cfg = setup.config()?;
    let corpora = setup.corpora(&cfg)?;
    let (draft, target) = train_models(&corpora, cfg.draft_order, cfg.target_order, cfg.smoothing)?;
    let report = run_experiment_with(&cfg, &corpora, &draft, &target)?;
    let formats: Vec<ReportFormat> = formats.iter().map(|f| (*f).into()).collect();
    let mut written = emit_report(&report, out, &formats)?;
    if save_models {
        written.push(write(out.join("draft.ngram"), &draft.to_text())?);
        written.push(write(out.join("target.ngram"), &target.to_text())?);
    }
    let m = &report.metadata;
    println!(
        "{} domains, {} prompts, {} steps, {} records, {} early stops, |V| = {}",
        m.domains, m.prompts, m.steps, m.tree_nodes, m.early_stops, m.vocab_size
    );
    println!("config {}", m.config_hash);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn analyze(records: &Path, out: &Path) -> Result<(), Failure> {
    let records = load_records(records)?;
    let summaries = summarize(&records)?;
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let json = write(out.join("summary.json"), &summary_json(&summaries))?;
    let tables = write(out.join("tables.txt"), &render_tables(&records)?)?;
    println!("{} records in {} domains", records.len(), summaries.len());
    println!("wrote {}\nwrote {}", json.display(), tables.display());
    Ok(())
}

fn selftest(seed: u64) -> Result<(), Failure> {
    let results = treespec::selftest::run_all(seed);
    let failed = results.iter().filter(|r| !r.passed()).count();
    for r in &results {
        match &r.failure {
            None => println!("PASS  {} ({} cases)", r.name, r.cases),
            Some(msg) => println!("FAIL  {}: {msg}", r.name),
        }
    }
    if failed > 0 {
        return Err(Failure::Input(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}

fn dump_tree(setup: &Setup, context: &str) -> Result<(), Failure> {
    let cfg = setup.config()?;
    let corpora = setup.corpora(&cfg)?;
    let (draft, target) = train_models(&corpora, cfg.draft_order, cfg.target_order, cfg.smoothing)?;
    let vocab = draft.shared_vocab().clone();
    let ctx = encode(&tokenize(context, cfg.tokenizer), &vocab);
    let tree = build_draft_tree(&draft, &ctx, &cfg.tree_params())?;
    let scores = score_tree(&target, &ctx, &tree)?;
    let name = |t: treespec::TokenId| vocab.token(t).unwrap_or("?").to_string();

    print!("{}", tree.dump(name));
    println!("\nnode\tp_target\talpha\tentropy");
    for s in &scores.scores {
        println!("{}\t{:.6}\t{:.6}\t{:.6}", s.node.0, s.p_target, s.alpha, s.target_entropy);
    }
    println!("\nbonus token: {}", name(scores.bonus));
    println!("\nattention mask over tree rows (context columns omitted, all visible)");
    let mask = tree_attention_mask(&tree);
    for r in tree.context_len..mask.size() {
        let row: String = mask.row(r)[tree.context_len..]
            .iter()
            .map(|b| if *b { '1' } else { '.' })
            .collect();
        println!("{:>3} {row}", r - tree.context_len);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run { setup, out, format, save_models } => run(setup, out, format, *save_models),
        Command::Analyze { records, out } => analyze(records, out),
        Command::Tables { records } => load_records(records)
            .and_then(|r| Ok(render_tables(&r)?))
            .map(|t| print!("{t}")),
        Command::Selftest { seed } => selftest(*seed),
        Command::DumpTree { setup, context } => dump_tree(setup, context),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("treespec: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
