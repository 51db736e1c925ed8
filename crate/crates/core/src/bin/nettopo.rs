use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use nettopo::autonet::load_checkpoint;
use nettopo::estimators::ModelState;
use nettopo::harness::{
    cv_performance, cv_tasksim, gen_data, metrics_csv, run_finetune, run_meta_comparison, run_training, write_manifest,
    write_report, ExperimentConfig, PerfOptions, Store,
};
use nettopo::synthdata::generate;
use nettopo::topofeat::{characterize, ExtractionConfig, GMode};
use nettopo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nettopo",
    version,
    about = "Topological characterization experiments on synthetic 2-D tasks"
)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configuration's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_g_mode)]
    g_mode: Option<GMode>,
    #[arg(long, global = true, value_enum, default_value = "synthetic2d")]
    parent: Parent,
    /// Architecture name from the configuration; defaults to the first one.
    #[arg(long, global = true)]
    arch: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Parent {
    Synthetic2d,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateArg {
    Untrained,
    Trained,
    Overfit,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Writes every roster task as CSV.
    GenData,
    /// Trains and characterizes every (task, seed) run of a state.
    Train {
        #[arg(long, value_enum, default_value = "all")]
        state: StateArg,
    },
    /// Characterizes one checkpoint on a task's training split.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
    },
    /// Leave-one-task-out evaluation of state, accuracy and gap estimators.
    CvPerf {
        /// Shuffles fitting-set states with this seed (chance baseline).
        #[arg(long)]
        shuffle_states: Option<u64>,
    },
    /// Fine-tunes pretrained models across unaugmented tasks.
    Finetune,
    /// Leave-one-task-out evaluation of pretrained-model selection.
    CvTasksim,
    /// Small-data training with and without the topological regularizer.
    Meta,
    /// Feature and accuracy tables plus the manifest.
    Report,
}

fn parse_g_mode(s: &str) -> std::result::Result<GMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

struct Context {
    config: ExperimentConfig,
    store: Store,
    arch: String,
    g_mode: GMode,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        if let Some(out) = &cli.out {
            config.out = out.clone();
        }
        let arch = match &cli.arch {
            Some(a) => {
                config.architecture(a)?;
                a.clone()
            }
            None => config.architectures.keys().next().cloned().expect("validated nonempty"),
        };
        let g_mode = cli.g_mode.unwrap_or(config.extraction.g_mode);
        let store = Store::new(config.out.clone());
        Ok(Self {
            config,
            store,
            arch,
            g_mode,
        })
    }

    fn layouts(
        &self,
    ) -> Result<(
        Arc<nettopo::topofeat::FeatureLayout>,
        Arc<nettopo::topofeat::FeatureLayout>,
    )> {
        let source = self.store.load_layout(&self.arch)?;
        let widths = self.config.architecture(&self.arch)?;
        let tag_config = ExtractionConfig {
            g_mode: self.g_mode,
            ..self.config.extraction.clone()
        };
        let target = Arc::new(tag_config.layout_for(widths, self.g_mode));
        Ok((source, target))
    }

    fn write_report(&self, name: &str, text: &str) -> Result<()> {
        let path = self.store.report_path(name);
        self.store.write(&path, text.as_bytes())?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let Parent::Synthetic2d = cli.parent;
    let ctx = Context::new(&cli)?;
    let (config, store, arch, g) = (&ctx.config, &ctx.store, ctx.arch.as_str(), ctx.g_mode);
    match cli.command {
        Command::GenData => {
            let ids = gen_data(config, store)?;
            println!(
                "wrote {} tasks under {}",
                ids.len(),
                store.root().join("data").display()
            );
        }
        Command::Train { state } => {
            let states: Vec<ModelState> = match state {
                StateArg::Untrained => vec![ModelState::Untrained],
                StateArg::Trained => vec![ModelState::Trained],
                StateArg::Overfit => vec![ModelState::Overfit],
                StateArg::All => ModelState::ALL.to_vec(),
            };
            for s in states {
                let records = run_training(config, arch, s, store)?;
                println!(
                    "{s}: {} records -> {}",
                    records.len(),
                    store.records_path(arch, s).display()
                );
            }
        }
        Command::Extract { checkpoint, task } => {
            let net = load_checkpoint(&checkpoint)?;
            let data = generate(&config.task(&task)?)?;
            let extraction = ExtractionConfig {
                g_mode: g,
                ..config.extraction.clone()
            };
            let t = characterize(&net, &data.train.matrix(), &extraction)?;
            let mut text = format!("# layout {}\nname,value\n", t.layout.hash());
            for (c, v) in t.layout.components().iter().zip(&t.values) {
                text.push_str(&format!("{},{v}\n", c.name));
            }
            let stem = checkpoint
                .file_stem()
                .map_or("checkpoint".into(), |s| s.to_string_lossy().into_owned());
            let path = store.root().join("extract").join(format!("{stem}-{task}-{g}.csv"));
            store.write(&path, text.as_bytes())?;
            println!("wrote {}", path.display());
        }
        Command::CvPerf { shuffle_states } => {
            let (source, target) = ctx.layouts()?;
            let records = store.load_records(arch)?;
            let options = PerfOptions {
                shuffle_states,
                ..Default::default()
            };
            let rep = cv_performance(&records, &source, &target, &config.estimators, &options)?;
            let suffix = if shuffle_states.is_some() { "-shuffled" } else { "" };
            ctx.write_report(&format!("cv-perf-{arch}-{g}{suffix}.csv"), &rep.to_csv())?;
            ctx.write_report(
                &format!("metrics-cv-perf-{arch}-{g}{suffix}.csv"),
                &metrics_csv(&rep.metrics(arch)),
            )?;
            for (m, mean, se) in rep.summary() {
                println!("{m} {mean:.2} +- {se:.2}");
            }
        }
        Command::Finetune => {
            let sims = run_finetune(config, arch, store)?;
            println!("{} pairs -> {}", sims.len(), store.finetune_path(arch).display());
        }
        Command::CvTasksim => {
            let (source, target) = ctx.layouts()?;
            let sims = store.load_sims(arch)?;
            let rep = cv_tasksim(&sims, &source, &target, config.estimators.alpha)?;
            ctx.write_report(&format!("cv-tasksim-{arch}-{g}.csv"), &rep.to_csv())?;
            ctx.write_report(
                &format!("metrics-cv-tasksim-{arch}-{g}.csv"),
                &metrics_csv(&rep.metrics(arch)),
            )?;
            println!(
                "mean rank {:.2} (random {:.2})",
                rep.mean_rank(),
                rep.mean_random_rank()
            );
        }
        Command::Meta => {
            let source = store.load_layout(arch)?;
            let records = store.load_records(arch)?;
            let cmp = run_meta_comparison(config, arch, &records, &source)?;
            for (task, g, bank) in &cmp.banks {
                let path = store.root().join("banks").join(arch).join(format!("{task}-{g}.json"));
                store.prepare(&path)?;
                bank.save(&path)?;
            }
            ctx.write_report(&format!("meta-{arch}.csv"), &cmp.to_csv())?;
            ctx.write_report(&format!("meta-seeds-{arch}.csv"), &cmp.seeds_csv())?;
            ctx.write_report(&format!("metrics-meta-{arch}.csv"), &metrics_csv(&cmp.metrics()))?;
        }
        Command::Report => {
            for path in write_report(config, arch, store)? {
                println!("wrote {}", path.display());
            }
            return Ok(());
        }
    }
    write_manifest(config, store)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage msg={first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} msg={}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
