//! Command-line front end: ingest, build-metapaths, train, evaluate,
//! export-embeddings. Flags override config-file keys which override
//! defaults; every run writes a config echo sufficient to reproduce it.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Result, SminError};
use crate::eval::{self, EmbeddingScorer};
use crate::graph::split::{sample_eval_negatives, split_leave_one_out, Split};
use crate::graph::{load_dataset, HeteroGraph, LoadOptions, ReindexMaps};
use crate::infomax;
use crate::metapath::{self, MetapathKind};
use crate::trainer::{self, ModelContext, TrainState};

#[derive(Parser)]
#[command(name = "smin", version, about = "Knowledge-aware social recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct DataArgs {
    /// Interactions file: user<TAB>item[<TAB>rating[<TAB>timestamp]]
    #[arg(long)]
    pub interactions: PathBuf,
    /// Social file: user<TAB>user (directed)
    #[arg(long)]
    pub social: Option<PathBuf>,
    /// Relations file: item<TAB>relation_entity
    #[arg(long)]
    pub relations: Option<PathBuf>,
}

#[derive(Args, Default)]
pub struct ConfigArgs {
    /// Config file with key = value lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[arg(long)]
    pub lambda_alpha: Option<f64>,
    #[arg(long)]
    pub lambda_beta: Option<f64>,
    #[arg(long)]
    pub lambda_gamma: Option<f64>,
    #[arg(long)]
    pub neg_per_pos: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Top-m neighbor cap for dense metapaths; 0 disables
    #[arg(long)]
    pub degree_cap: Option<usize>,
    #[arg(long)]
    pub rating_threshold: Option<f64>,
    /// Comma-separated cutoffs, e.g. 5,10,15
    #[arg(long)]
    pub eval_n: Option<String>,
    /// Component ablation: h, s, g, t or a (repeatable)
    #[arg(long = "ablate")]
    pub ablate: Vec<String>,
    /// Metapath to disable: UU, UIU, UIKIU, IUI or IKI (repeatable)
    #[arg(long = "drop-metapath")]
    pub drop_metapath: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! over {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        over!(d);
        over!(layers);
        over!(k);
        over!(lr);
        over!(lr_decay);
        over!(batch_size);
        over!(epochs);
        over!(lambda0);
        over!(lambda_alpha);
        over!(lambda_beta);
        over!(lambda_gamma);
        over!(neg_per_pos);
        over!(seed);
        if let Some(cap) = self.degree_cap {
            cfg.degree_cap = if cap == 0 { None } else { Some(cap) };
        }
        if let Some(t) = self.rating_threshold {
            cfg.rating_threshold = Some(t);
        }
        if let Some(ns) = &self.eval_n {
            cfg.set("eval_n", ns)?;
        }
        cfg.apply_ablations(&self.ablate, &self.drop_metapath)?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Parse a dataset, print its summary, write reindex maps
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Materialize the five metapath adjacencies as edge lists with stats
    BuildMetapaths {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the k-order interaction adjacency for this k
        #[arg(long)]
        phi_k: Option<usize>,
    },
    /// Train on the leave-one-out split, writing checkpoint and loss history
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank held-out positives against 99 sampled negatives
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate a reference scorer ("popularity") on the same split
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Write fused embeddings as node<TAB>domain<TAB>v1..vd
    ExportEmbeddings {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { data, config, out } => cmd_ingest(&data, &config, &out),
        Command::BuildMetapaths {
            data,
            config,
            out,
            phi_k,
        } => cmd_build_metapaths(&data, &config, &out, phi_k),
        Command::Train { data, config, out } => cmd_train(&data, &config, &out),
        Command::Evaluate {
            data,
            config,
            checkpoint,
            out,
            baseline,
        } => cmd_evaluate(&data, &config, &checkpoint, &out, baseline.as_deref()),
        Command::ExportEmbeddings {
            data,
            config,
            checkpoint,
            out,
        } => cmd_export_embeddings(&data, &config, &checkpoint, &out),
    }
}

fn load(data: &DataArgs, cfg: &RunConfig) -> Result<(HeteroGraph, ReindexMaps)> {
    load_dataset(
        &data.interactions,
        data.social.as_deref(),
        data.relations.as_deref(),
        LoadOptions {
            rating_threshold: cfg.rating_threshold,
        },
    )
}

fn write_echo(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut echo = cfg.echo();
    echo.push_str(&format!("config_hash = {}\n", cfg.hash()));
    fs::write(out.join("config_echo.txt"), echo)?;
    Ok(())
}

fn cmd_ingest(data: &DataArgs, config: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = config.resolve()?;
    let (graph, maps) = load(data, &cfg)?;
    fs::create_dir_all(out)?;
    maps.write_tsv(out)?;
    write_echo(&cfg, out)?;
    println!(
        "users {}\nitems {}\ninteractions {}\ndensity {:.4}%\nsocial_edges {}\nrelation_entities {}",
        graph.user_count,
        graph.item_count,
        graph.interaction_count(),
        100.0 * graph.density(),
        graph.social_edges.len(),
        graph.relation_entity_count,
    );
    Ok(())
}

fn cmd_build_metapaths(
    data: &DataArgs,
    config: &ConfigArgs,
    out: &Path,
    phi_k: Option<usize>,
) -> Result<()> {
    let cfg = config.resolve()?;
    let (graph, _) = load(data, &cfg)?;
    fs::create_dir_all(out)?;
    write_echo(&cfg, out)?;
    for kind in MetapathKind::ALL {
        let mp = metapath::build(&graph, kind, cfg.degree_cap);
        let mut edges = String::new();
        for (r, c, _) in mp.adj.iter() {
            edges.push_str(&format!("{r}\t{c}\n"));
        }
        fs::write(out.join(format!("{kind}.edges.tsv")), edges)?;
        let n = mp.adj.rows().max(1);
        let stats = format!(
            "{{\"kind\":\"{kind}\",\"nodes\":{},\"nnz\":{},\"density\":{},\"cap_dropped\":{}}}\n",
            mp.adj.rows(),
            mp.adj.nnz(),
            mp.adj.nnz() as f64 / (n * n) as f64,
            mp.cap_dropped
        );
        fs::write(out.join(format!("{kind}.stats.json")), stats)?;
        eprintln!("built {kind}: {} edges", mp.adj.nnz());
    }
    if let Some(k) = phi_k {
        let phi = infomax::build_phi(&graph);
        let phik = infomax::build_k_adj(&phi.phi, k)?;
        let mut edges = String::new();
        for (r, c, _) in phik.iter() {
            edges.push_str(&format!("{r}\t{c}\n"));
        }
        fs::write(out.join(format!("phi_{k}.edges.tsv")), edges)?;
        eprintln!("built phi^({k}): {} entries", phik.nnz());
    }
    Ok(())
}

fn history_csv(state: &TrainState) -> String {
    let mut csv = String::from("epoch,total,bpr,l2,alpha,beta,gamma\n");
    for e in &state.history {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.mean.total, e.mean.bpr, e.mean.l2, e.mean.alpha, e.mean.beta, e.mean.gamma
        ));
    }
    csv
}

fn cmd_train(data: &DataArgs, config: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = config.resolve()?;
    let train_cfg = cfg.train_config();
    train_cfg.validate()?;
    let (graph, _) = load(data, &cfg)?;
    let split = split_leave_one_out(&graph, cfg.seed)?;
    write_echo(&cfg, out)?;
    let hash = cfg.hash();
    let ckpt_path = out.join("checkpoint.tsv");
    let hist_path = out.join("history.csv");
    let state = trainer::train(&split.train, &train_cfg, |state| {
        checkpoint::write(&ckpt_path, &state.params, &hash, state.epoch)?;
        fs::write(&hist_path, history_csv(state))?;
        let last = state.history.last().expect("epoch recorded");
        eprintln!(
            "epoch {:>4}  lr {:.6}  total {:.6}  bpr {:.6}",
            last.epoch, last.lr, last.mean.total, last.mean.bpr
        );
        Ok(())
    })?;
    println!(
        "trained {} epochs, {} parameters, checkpoint {}",
        state.epoch,
        state.params.total_parameters(),
        ckpt_path.display()
    );
    Ok(())
}

fn prepare_eval(
    data: &DataArgs,
    cfg: &RunConfig,
    ckpt_path: &Path,
) -> Result<(HeteroGraph, ReindexMaps, Split, checkpoint::Checkpoint)> {
    let (graph, maps) = load(data, cfg)?;
    let split = split_leave_one_out(&graph, cfg.seed)?;
    let ckpt = checkpoint::read(ckpt_path)?;
    let expected = cfg.hash();
    if ckpt.config_hash != expected {
        return Err(SminError::Checkpoint(format!(
            "checkpoint was written under config hash {} but the resolved config hashes to {expected}; refusing to evaluate",
            ckpt.config_hash
        )));
    }
    Ok((graph, maps, split, ckpt))
}

fn cmd_evaluate(
    data: &DataArgs,
    config: &ConfigArgs,
    ckpt_path: &Path,
    out: &Path,
    baseline: Option<&str>,
) -> Result<()> {
    let cfg = config.resolve()?;
    let train_cfg = cfg.train_config();
    let (graph, _, split, ckpt) = prepare_eval(data, &cfg, ckpt_path)?;
    let cases = sample_eval_negatives(&graph, &split, cfg.seed)?;
    let ctx = ModelContext::build(&split.train, &train_cfg)?;
    let fused = trainer::fused_embeddings(&ckpt.params, &ctx, &train_cfg)?;
    let scorer = EmbeddingScorer { fused: &fused };
    let (report, results) = eval::evaluate(&scorer, &cases, &cfg.eval_n, cfg.seed, &cfg.hash())?;

    fs::create_dir_all(out)?;
    write_echo(&cfg, out)?;
    fs::write(out.join("metrics.csv"), report.csv())?;
    fs::write(out.join("metrics.txt"), report.table())?;
    fs::write(out.join("ranks.tsv"), eval::score_dump(&results))?;
    print!("{}", report.table());

    if let Some(name) = baseline {
        if name != "popularity" {
            return Err(SminError::Config(format!("unknown baseline '{name}'")));
        }
        let pop = eval::popularity_baseline(&split.train);
        let (pop_report, _) = eval::evaluate(&pop, &cases, &cfg.eval_n, cfg.seed, &cfg.hash())?;
        fs::write(out.join("baseline_metrics.csv"), pop_report.csv())?;
        println!("baseline: popularity");
        print!("{}", pop_report.table());
    }
    Ok(())
}

fn cmd_export_embeddings(
    data: &DataArgs,
    config: &ConfigArgs,
    ckpt_path: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = config.resolve()?;
    let train_cfg = cfg.train_config();
    let (_, maps, split, ckpt) = prepare_eval(data, &cfg, ckpt_path)?;
    let ctx = ModelContext::build(&split.train, &train_cfg)?;
    let fused = trainer::fused_embeddings(&ckpt.params, &ctx, &train_cfg)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(out)?;
    for (row, raw) in maps.users.iter().enumerate() {
        let vals: Vec<String> = fused.users.row(row).iter().map(|v| v.to_string()).collect();
        writeln!(f, "{raw}\tuser\t{}", vals.join("\t"))?;
    }
    for (row, raw) in maps.items.iter().enumerate() {
        let vals: Vec<String> = fused.items.row(row).iter().map(|v| v.to_string()).collect();
        writeln!(f, "{raw}\titem\t{}", vals.join("\t"))?;
    }
    eprintln!(
        "wrote {} user and {} item embeddings to {}",
        maps.users.len(),
        maps.items.len(),
        out.display()
    );
    Ok(())
}
