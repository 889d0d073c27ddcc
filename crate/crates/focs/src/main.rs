//! Command-line surface for the FoCS CPT pipeline: dataset generation,
//! scorer training, context/tree learning, evaluation curves, OBDD
//! compilation, exact marginals, MPE queries, and the coding study.
//!
//! Exit codes: 0 success, 1 validation/input error, 2 budget exhaustion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use focs::codec::{self, CodeSpec, DecoderConfig};
use focs::compile::{self, ObddStats};
use focs::data::{gen_cardinality, Dataset, FamilyView};
use focs::focs::{learn_focs, ncll_per_record, FoCSCpt, Scorer};
use focs::mlp::{self, Activation, Mlp, TrainConfig};
use focs::mpe;
use focs::tree::{learn_tree, tree_ncll_per_record, TreeCpt};

#[derive(Parser)]
#[command(name = "focs", about = "FoCS CPT learning and exact inference")]
struct Cli {
    /// Worker threads for fold/instance parallelism (0 = all cores).
    #[arg(long, global = true, env = "FOCS_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate datasets.
    #[command(subcommand)]
    Gen(GenCmd),
    /// Train scorers.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Learn CPTs from data and a scorer.
    #[command(subcommand)]
    Learn(LearnCmd),
    /// Negated conditional log likelihood per record of a saved model.
    Eval(EvalArgs),
    /// Contexts-vs-CLL comparison curve (FoCS / tree / raw MLP).
    Curve(CurveArgs),
    /// Compile a model's contexts to OBDDs.
    Compile(CompileArgs),
    /// Exact child marginal under a factorized parent prior.
    Marginal(MarginalArgs),
    /// Most probable explanation given observed children.
    Mpe(MpeArgs),
    /// Experiment harnesses.
    #[command(subcommand)]
    Study(StudyCmd),
}

#[derive(Subcommand)]
enum GenCmd {
    /// Cardinality benchmark: X = [at least k of n parents set].
    Synth(GenSynthArgs),
    /// Parity-code message/codeword pairs through a noisy channel.
    Code(GenCodeArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    count: usize,
    #[arg(long, env = "FOCS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenCodeArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    window: usize,
    #[arg(long, default_value_t = 0.05)]
    flip_prob: f64,
    #[arg(long, default_value_t = 0.8)]
    prior: f64,
    #[arg(long)]
    count: usize,
    #[arg(long, env = "FOCS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TrainCmd {
    Mlp(TrainMlpArgs),
}

#[derive(Args)]
struct TrainMlpArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    child: String,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value = "relu")]
    activation: String,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, env = "FOCS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum LearnCmd {
    /// Thresholded contexts over a trained scorer.
    Focs(LearnFocsArgs),
    /// Decision-tree CPT baseline.
    Tree(LearnTreeArgs),
}

#[derive(Args)]
struct LearnFocsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    child: String,
    #[arg(long)]
    mlp: PathBuf,
    #[arg(long, default_value_t = 8)]
    max_contexts: usize,
    #[arg(long, default_value_t = 0.0)]
    min_gain: f64,
    /// Tail fraction of records held out to validate splits (0 = none).
    #[arg(long, default_value_t = 0.0)]
    val_frac: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LearnTreeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    child: String,
    #[arg(long, default_value_t = 8)]
    max_depth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    child: String,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    child: String,
    #[arg(long)]
    mlp: PathBuf,
    #[arg(long, default_value_t = 8)]
    max_contexts: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompileArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_dot: Option<PathBuf>,
    /// Print per-context node and model counts as JSON.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct MarginalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Per-parent Pr(=1), comma separated; a single value is broadcast.
    #[arg(long)]
    prior: String,
}

#[derive(Args)]
struct MpeArgs {
    /// Model files, one FoCS CPT per observed child.
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    /// Observed child bits, comma separated, aligned with --models.
    #[arg(long)]
    evidence: String,
    /// Per-bit Pr(u=1); a single value is broadcast.
    #[arg(long, default_value = "0.8")]
    prior: String,
    #[arg(long)]
    export_lp: Option<PathBuf>,
    /// Solver time budget in seconds (0 = unlimited).
    #[arg(long, default_value_t = 0.0)]
    time_budget: f64,
}

#[derive(Subcommand)]
enum StudyCmd {
    /// Parity-code cross-validation table row.
    Coding(StudyCodingArgs),
}

#[derive(Args)]
struct StudyCodingArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 0.05)]
    flip_prob: f64,
    #[arg(long, default_value_t = 0.8)]
    prior: f64,
    #[arg(long, default_value_t = 1 << 14)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, env = "FOCS_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
}

fn load_view(data: &Path, child: &str) -> Result<FamilyView> {
    let dataset = Dataset::load_csv(data)?;
    Ok(FamilyView::with_child(dataset, child)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_prior(text: &str, n: usize) -> Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| anyhow!("bad prior '{text}': {e}"))?;
    let prior = if parts.len() == 1 {
        vec![parts[0]; n]
    } else {
        parts
    };
    if prior.len() != n {
        bail!("prior has {} entries, model expects {n}", prior.len());
    }
    Ok(prior)
}

fn parse_bits(text: &str) -> Result<Vec<u8>> {
    text.split(',')
        .map(|p| match p.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(anyhow!("evidence bits must be 0 or 1, got '{other}'")),
        })
        .collect()
}

/// Either saved CPT kind, distinguished by shape.
#[derive(serde::Deserialize)]
#[serde(untagged)]
enum AnyModel {
    Focs(FoCSCpt),
    Tree(TreeCpt),
}

/// Head/tail split of the records for held-out validation.
fn split_tail(view: &FamilyView, val_frac: f64) -> Result<(FamilyView, Option<FamilyView>)> {
    if val_frac == 0.0 {
        return Ok((view.clone(), None));
    }
    if !(0.0..1.0).contains(&val_frac) {
        bail!("--val-frac must be in [0, 1), got {val_frac}");
    }
    let total = view.num_records();
    let val_len = ((total as f64) * val_frac).round() as usize;
    if val_len == 0 || val_len == total {
        bail!("--val-frac {val_frac} leaves an empty split for {total} records");
    }
    let cut = total - val_len;
    let ds = view.dataset();
    let make = |range: std::ops::Range<usize>| -> Result<FamilyView> {
        let records: Vec<Vec<u8>> = range.clone().map(|i| ds.record(i).to_vec()).collect();
        let weights: Vec<u64> = range.map(|i| ds.weight(i)).collect();
        let sub = Arc::new(Dataset::new(
            ds.variables().to_vec(),
            records,
            weights,
        )?);
        Ok(FamilyView::new(sub, view.child(), view.parents().to_vec()))
    };
    Ok((make(0..cut)?, Some(make(cut..total)?)))
}

fn parse_activation(name: &str) -> Result<Activation> {
    match name {
        "relu" => Ok(Activation::Relu),
        "sigmoid" => Ok(Activation::Sigmoid),
        other => bail!("unknown activation '{other}' (use relu or sigmoid)"),
    }
}

fn mlp_ncll(view: &FamilyView, net: &Mlp) -> f64 {
    let mut cll = 0.0;
    let mut total = 0.0;
    for i in 0..view.num_records() {
        let p = net.eval(&view.parent_bits(i)).clamp(1e-12, 1.0 - 1e-12);
        let x = view.child_bit(i);
        let w = view.weight(i) as f64;
        cll += w * if x == 1 { p.ln() } else { (1.0 - p).ln() };
        total += w;
    }
    -cll / total
}

fn model_ncll(view: &FamilyView, model: &AnyModel) -> f64 {
    match model {
        AnyModel::Focs(cpt) => ncll_per_record(view, cpt),
        AnyModel::Tree(tree) => tree_ncll_per_record(view, tree),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Gen(GenCmd::Synth(a)) => {
            let view = gen_cardinality(a.n, a.k, a.count, a.seed)?;
            view.dataset().save_csv(&a.out)?;
            eprintln!(
                "wrote {} records over {} variables to {}",
                a.count,
                a.n + 1,
                a.out.display()
            );
        }
        Cmd::Gen(GenCmd::Code(a)) => {
            let spec = CodeSpec {
                n: a.n,
                window: a.window,
                flip_prob: a.flip_prob,
                prior_p: a.prior,
            };
            let pairs = codec::make_pairs(&spec, a.count, a.seed)?;
            pairs.to_dataset().save_csv(&a.out)?;
            eprintln!("wrote {} pairs to {}", a.count, a.out.display());
        }
        Cmd::Train(TrainCmd::Mlp(a)) => {
            let view = load_view(&a.data, &a.child)?;
            let cfg = TrainConfig {
                hidden_units: a.hidden,
                hidden_activation: parse_activation(&a.activation)?,
                epochs: a.epochs,
                learning_rate: a.lr,
                batch_size: a.batch_size,
                seed: a.seed,
            };
            let net = mlp::train(&view, &cfg)?;
            let final_loss = net.loss_curve.last().copied().unwrap_or(f64::NAN);
            write_json(&a.out, &net)?;
            eprintln!("trained scorer, final loss {final_loss:.6}");
        }
        Cmd::Learn(LearnCmd::Focs(a)) => {
            let view = load_view(&a.data, &a.child)?;
            let net: Mlp = read_json(&a.mlp)?;
            let scorer = Scorer::Step(net.to_step(false)?);
            let (train_view, val_view) = split_tail(&view, a.val_frac)?;
            let cpt = learn_focs(
                &train_view,
                &scorer,
                a.max_contexts,
                a.min_gain,
                val_view.as_ref(),
            );
            eprintln!(
                "learned {} contexts, train ncll {:.4}",
                cpt.pairs.len(),
                ncll_per_record(&train_view, &cpt)
            );
            write_json(&a.out, &cpt)?;
        }
        Cmd::Learn(LearnCmd::Tree(a)) => {
            let view = load_view(&a.data, &a.child)?;
            let tree = learn_tree(&view, a.max_depth);
            eprintln!(
                "learned tree with {} leaves, train ncll {:.4}",
                tree.leaf_count(),
                tree_ncll_per_record(&view, &tree)
            );
            write_json(&a.out, &tree)?;
        }
        Cmd::Eval(a) => {
            let view = load_view(&a.data, &a.child)?;
            let model: AnyModel = read_json(&a.model)?;
            println!("{:.6}", model_ncll(&view, &model));
        }
        Cmd::Curve(a) => {
            let view = load_view(&a.data, &a.child)?;
            let net: Mlp = read_json(&a.mlp)?;
            let scorer = Scorer::Step(net.to_step(false)?);
            let mlp_row = mlp_ncll(&view, &net);
            let mut out = String::from("contexts,focs_ncll,tree_ncll,mlp_ncll\n");
            for c in 1..=a.max_contexts {
                let cpt = learn_focs(&view, &scorer, c, 0.0, None);
                let depth = (c as f64).log2().floor() as usize;
                let tree = learn_tree(&view, depth);
                out.push_str(&format!(
                    "{c},{:.6},{:.6},{:.6}\n",
                    ncll_per_record(&view, &cpt),
                    tree_ncll_per_record(&view, &tree),
                    mlp_row
                ));
            }
            std::fs::write(&a.out, out)
                .with_context(|| format!("writing {}", a.out.display()))?;
            eprintln!("wrote {} rows to {}", a.max_contexts, a.out.display());
        }
        Cmd::Compile(a) => {
            let cpt: FoCSCpt = read_json(&a.model)?;
            let (builder, roots) = compile::compile_all_contexts(&cpt)?;
            let n = cpt.parents.len();
            if let Some(dot_path) = &a.out_dot {
                let labels: Vec<String> = (0..roots.len()).map(|i| format!("ctx{i}")).collect();
                let named: Vec<(&str, focs::BddId)> = labels
                    .iter()
                    .map(String::as_str)
                    .zip(roots.iter().copied())
                    .collect();
                let mut names = cpt.parents.clone();
                names.extend((n..builder.num_vars()).map(|j| format!("h{}", j - n)));
                std::fs::write(dot_path, builder.to_dot(&named, &names))
                    .with_context(|| format!("writing {}", dot_path.display()))?;
            }
            if a.stats {
                let stats: Vec<ObddStats> = roots
                    .iter()
                    .enumerate()
                    .map(|(i, &r)| ObddStats {
                        context: i,
                        node_count: builder.node_count(r),
                        model_count: builder.model_count(r, n),
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                eprintln!("compiled {} contexts", roots.len());
            }
        }
        Cmd::Marginal(a) => {
            let cpt: FoCSCpt = read_json(&a.model)?;
            let prior = parse_prior(&a.prior, cpt.parents.len())?;
            let result = compile::marginal(&cpt, &prior)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Cmd::Mpe(a) => {
            let models: Vec<FoCSCpt> = a
                .models
                .iter()
                .map(|p| read_json::<FoCSCpt>(p))
                .collect::<Result<_>>()?;
            let evidence = parse_bits(&a.evidence)?;
            if evidence.len() != models.len() {
                bail!(
                    "{} evidence bits for {} models",
                    evidence.len(),
                    models.len()
                );
            }
            let n = models
                .first()
                .map(|m| m.parents.len())
                .ok_or_else(|| anyhow!("at least one model required"))?;
            let prior = parse_prior(&a.prior, n)?;
            let families: Vec<(FoCSCpt, u8)> =
                models.into_iter().zip(evidence).collect();
            let problem = mpe::encode(&families, &prior, mpe::DEFAULT_EPSILON)?;
            if let Some(lp_path) = &a.export_lp {
                mpe::export_lp(&problem, lp_path)
                    .with_context(|| format!("writing {}", lp_path.display()))?;
            }
            let budget = (a.time_budget > 0.0).then(|| Duration::from_secs_f64(a.time_budget));
            let sol = mpe::solve(&problem, budget);
            println!("{}", serde_json::to_string_pretty(&sol)?);
            if !sol.optimal {
                eprintln!("time budget exhausted; assignment is the best incumbent");
                return Ok(ExitCode::from(2));
            }
        }
        Cmd::Study(StudyCmd::Coding(a)) => {
            let spec = CodeSpec {
                n: a.n,
                window: a.window,
                flip_prob: a.flip_prob,
                prior_p: a.prior,
            };
            let cfg = DecoderConfig {
                epochs: a.epochs,
                learning_rate: a.lr,
                ..DecoderConfig::default()
            };
            let metrics = codec::run_study(&spec, a.count, a.folds, a.seed, &cfg)?;
            println!("{}", codec::Metrics::CSV_HEADER);
            println!("{}", metrics.csv_row(&spec, a.count));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
