use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use pinrank::cascade::{Cascade, LoadedModel, ModelSet, RankedList, RerankPolicy, IDENTITY_MODEL};
use pinrank::evalkit::{compare, deltas_to_csv, EvalReport, RankedResult};
use pinrank::experiment::{self as exp, ExperimentConfig, Pipeline, Prepared};
use pinrank::featurize::{FULL, LIGHTWEIGHT, RERANK};
use pinrank::labelgen::{LabelSource, SplitPart};
use pinrank::models::ModelKind;
use pinrank::synthlog::{simulate_log, write_log};
use pinrank::util::{read_jsonl, write_json, write_jsonl};
use pinrank::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "pinrank", version, about = "Cascading learning-to-rank experiments on a synthetic pin corpus")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true, env = "PINRANK_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the config seed; required when no config is given.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker cap. All stages currently run on one thread.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct DataArg {
    /// Directory holding earlier stage outputs; defaults to --out.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ModelsArg {
    /// Directory of model files; defaults to <out>/models.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the corpus, hidden utility and relevance judgments.
    Gen,
    /// Simulate the engagement log over a generated corpus.
    Simlog(DataArg),
    /// Build labels, pairs, the query split and feature rows.
    Labels(DataArg),
    /// Train one model kind (or all) on one label source.
    Train {
        #[command(flatten)]
        data: DataArg,
        /// Model kind, or "all" for every trained kind on both sources.
        #[arg(long, default_value = "all")]
        kind: String,
        #[arg(long, default_value = "engagement")]
        source: String,
        /// Feature subset: full, lightweight or rerank.
        #[arg(long, default_value = FULL)]
        subset: String,
    },
    /// Stack trained engagement and relevance models, picking gamma on validation.
    Stack {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        models: ModelsArg,
    },
    /// Train a single GBRT on both label sources with a gamma tree schedule.
    StackTrain {
        #[command(flatten)]
        data: DataArg,
        /// Defaults to the gamma recorded in stacked.json, else 0.5.
        #[arg(long)]
        gamma: Option<f64>,
        #[command(flatten)]
        models: ModelsArg,
    },
    /// Run the cascade with a pass-through re-ranker over the test queries.
    Rank {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        models: ModelsArg,
    },
    /// Run the cascade with the configured freshness/localness re-ranker.
    Rerank {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        models: ModelsArg,
    },
    /// Evaluate ranked lists, optionally against a baseline run.
    Eval {
        #[command(flatten)]
        data: DataArg,
        /// Ranked lists to evaluate.
        #[arg(long)]
        ranked: PathBuf,
        /// Baseline ranked lists for relative deltas.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Wall-clock latency of the cascade against the full model on every candidate.
    Bench(ModelsArg),
    /// Run every stage end to end.
    Reproduce,
    /// Check a config and report problems without touching any file.
    Validate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let (cfg, unused) = ExperimentConfig::load(path)?;
            for key in unused {
                warn!("unused config key: {key}");
            }
            cfg
        }
        None => {
            let seed = common
                .seed
                .ok_or_else(|| Error::config("--seed is required when no config is given"))?;
            ExperimentConfig::new(seed)
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    if let Command::Validate = cli.command {
        return validate(common);
    }
    if common.jobs > 1 {
        info!("--jobs {} requested; stages run single-threaded", common.jobs);
    }
    let cfg = load_config(common)?;
    let out = common.out.as_path();
    let data_dir = |d: &DataArg| d.data.clone().unwrap_or_else(|| out.to_path_buf());
    let models_dir = |m: &ModelsArg| m.models.clone().unwrap_or_else(|| out.join("models"));
    match &cli.command {
        Command::Gen => {
            let (corpus, utility, judgments) = exp::generate_world_data(&cfg)?;
            exp::write_world_data(out, &corpus, &utility, &judgments)?;
            println!(
                "wrote {} pins, {} queries, {} judgments to {}",
                corpus.pins.len(),
                corpus.queries.len(),
                judgments.len(),
                out.display()
            );
        }
        Command::Simlog(d) => {
            let (corpus, utility) = exp::read_corpus(&data_dir(d))?;
            let log = simulate_log(&corpus, &utility, &cfg.sim_params())?;
            write_log(&log, &out.join(exp::files::LOG))?;
            println!("wrote {} engagement records", log.len());
        }
        Command::Labels(d) => {
            let world = exp::load_world(&data_dir(d))?;
            if data_dir(d) != out {
                exp::write_world_data(out, &world.corpus, &world.utility, &world.judgments)?;
                write_log(&world.log, &out.join(exp::files::LOG))?;
            }
            let prepared = Prepared::build(&cfg, world)?;
            prepared.write_labels(out, true)?;
            for set in [&prepared.engagement, &prepared.relevance] {
                println!(
                    "{}: {} train / {} test / {} valid groups, cuts {:?}",
                    set.source.name(),
                    set.n_groups(SplitPart::Train),
                    set.n_groups(SplitPart::Test),
                    set.n_groups(SplitPart::Valid),
                    set.cuts
                );
            }
        }
        Command::Train {
            data,
            kind,
            source,
            subset,
        } => {
            let dir = out.join("models");
            if kind == "all" {
                let prepared = Prepared::load(&data_dir(data))?;
                let p = exp::train_all(&cfg, &prepared, &dir)?;
                println!("trained {} models into {}", p.models.len(), dir.display());
            } else {
                let kind: ModelKind = kind.parse()?;
                let source: LabelSource = source.parse()?;
                let suffix = match subset.as_str() {
                    FULL => source.name(),
                    LIGHTWEIGHT => "light",
                    RERANK => "rerank",
                    other => return Err(Error::config(format!("unknown feature subset '{other}'"))),
                };
                let prepared = Prepared::load(&data_dir(data))?;
                let m = exp::train_on(&cfg, &prepared, kind, source, subset)?;
                let path = dir.join(format!("{kind}-{suffix}.json"));
                m.save(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Stack { data, models } => {
            let prepared = Prepared::load(&data_dir(data))?;
            let pipeline = Pipeline {
                models: load_model_dir(&models_dir(models))?,
            };
            let (stacked, table) = exp::stack_models(&cfg, &prepared, &pipeline)?;
            let dir = out.join("models");
            stacked.save(&dir.join("stacked.json"))?;
            write_json(&out.join("gamma_table.json"), &table)?;
            for (g, e, r) in &table {
                println!("gamma {g:.2}: ndcg_e {e:.4} ndcg_r {r:.4}");
            }
            println!("selected gamma {}", stacked.gamma);
        }
        Command::StackTrain { data, gamma, models } => {
            let prepared = Prepared::load(&data_dir(data))?;
            let gamma = match gamma {
                Some(g) => *g,
                None => match LoadedModel::load(&models_dir(models).join("stacked.json")) {
                    Ok(LoadedModel::Stacked(s)) => s.gamma,
                    _ => 0.5,
                },
            };
            let m = exp::train_stacked(&cfg, &prepared, gamma)?;
            let path = out.join("models").join("stacked-gbrt.json");
            m.save(&path)?;
            println!("wrote {} (gamma {gamma})", path.display());
        }
        Command::Rank { data, models } => {
            rank_command(&cfg, &data_dir(data), &models_dir(models), out, false)?;
        }
        Command::Rerank { data, models } => {
            rank_command(&cfg, &data_dir(data), &models_dir(models), out, true)?;
        }
        Command::Eval {
            data,
            ranked,
            baseline,
            name,
        } => {
            let prepared = Prepared::load(&data_dir(data))?;
            let report = eval_file(&cfg, &prepared, ranked, name)?;
            let dir = out.join("eval");
            report.write(&dir, name)?;
            print!("{}", report.to_csv());
            if let Some(b) = baseline {
                let base = eval_file(&cfg, &prepared, b, "baseline")?;
                let deltas = compare(&base, &report)?;
                let path = dir.join(format!("{name}_vs_baseline.csv"));
                std::fs::write(&path, deltas_to_csv(&deltas)).map_err(|e| Error::io(&path, e))?;
                print!("{}", deltas_to_csv(&deltas));
            }
        }
        Command::Bench(models) => {
            let set = load_model_dir(&models_dir(models))?;
            let report = exp::bench(&cfg, &set)?;
            write_json(&out.join("latency.json"), &report)?;
            println!(
                "{} candidates: cascade median {:.1} ms, full-on-all median {:.1} ms, speedup {:.1}x",
                report.n_candidates,
                pinrank::util::median(&report.cascade.per_query_ms),
                pinrank::util::median(&report.full_on_all.per_query_ms),
                report.speedup
            );
        }
        Command::Reproduce => {
            let summary = exp::reproduce(&cfg, out)?;
            println!("gamma {}", summary.gamma);
            for m in &summary.models {
                println!("{}: {:?}", m.name, m.metrics);
            }
            println!("wrote {}", out.join("metrics.json").display());
        }
        Command::Validate => unreachable!("handled above"),
    }
    Ok(())
}

fn validate(common: &Common) -> Result<()> {
    let Some(path) = &common.config else {
        println!("no config given; nothing to validate");
        return Err(Error::config("missing --config"));
    };
    let (mut cfg, unused) = match ExperimentConfig::load(path) {
        Ok(v) => v,
        Err(e) => {
            println!("{e}");
            return Err(e);
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mut problems = cfg.violations();
    problems.extend(unused.iter().map(|k| format!("unused key: {k}")));
    if problems.is_empty() {
        println!("ok");
        Ok(())
    } else {
        for p in &problems {
            println!("{p}");
        }
        Err(Error::config(format!("{} problem(s) in {}", problems.len(), path.display())))
    }
}

/// Every `*.json` file in `dir` keyed by its stem.
fn load_model_dir(dir: &Path) -> Result<ModelSet> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                paths.insert(stem.to_string(), path.clone());
            }
        }
    }
    exp::load_models(&paths)
}

fn rank_command(cfg: &ExperimentConfig, data: &Path, models: &Path, out: &Path, rerank: bool) -> Result<()> {
    let prepared = Prepared::load(data)?;
    let set = load_model_dir(models)?;
    let mut config = cfg.cascade_config();
    if !rerank {
        config.rerank_policy = RerankPolicy::default();
        if let Some(last) = config.stages.last_mut() {
            last.model = IDENTITY_MODEL.into();
        }
    }
    let cascade = Cascade::new(&config, &set, &prepared.context.schema)?;
    let lists = exp::run_cascade_on_split(&cascade, &prepared, SplitPart::Test)?;
    let name = if rerank { "reranked.jsonl" } else { "ranked.jsonl" };
    let path = out.join(name);
    write_jsonl(&path, &lists)?;
    println!("wrote {} lists to {}", lists.len(), path.display());
    Ok(())
}

fn eval_file(cfg: &ExperimentConfig, prepared: &Prepared, path: &Path, name: &str) -> Result<EvalReport> {
    let lists: Vec<RankedList> = read_jsonl(path)?;
    let results: Vec<RankedResult> = lists.iter().map(RankedList::to_result).collect();
    exp::evaluate_lists(name, &results, prepared, SplitPart::Test, &cfg.eval)
}
