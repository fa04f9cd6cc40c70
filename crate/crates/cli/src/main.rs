use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zeta::bench::{run_bench, write_bench_csv, BenchConfig};
use zeta::cauchy_attention::{attend, gradient_check, AttentionParams};
use zeta::locality_eval::{k_ablation, locality_sweep, write_k_ablation_csv, write_locality_csv, KAblationConfig, LocalitySweepConfig};
use zeta::numerics::{gaussian_matrix, Rng};
use zeta::oracle::{dense_causal_attention, house_example, SoftmaxVariant};
use zeta::toy_train::{eval_accuracy, train, ModelConfig, ModelParams, TaskConfig};

const GRADCHECK_TOL: f64 = 1e-5;
const EQUIV_TOL: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(name = "zeta", version, about = "Z-order top-k sparse attention experiments")]
struct Cli {
    /// Seed for every random draw
    #[arg(long, global = true, env = "ZETA_SEED", default_value_t = 0)]
    seed: u64,

    /// Write results here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel sections (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare analytic attention gradients with central finite differences
    Gradcheck(GradcheckArgs),
    /// Compare ZETA at M=1, k>=N with dense causal Cauchy attention
    Equiv(EquivArgs),
    /// Overlap of Euclidean and Z-order nearest neighbors (CSV)
    Locality(LocalityArgs),
    /// Recall of chunked top-k search as k varies (CSV)
    AblateK(AblateArgs),
    /// Euclidean distance vs dot product on the house example
    MetricDemo,
    /// Train the one-layer model on associative recall (CSV loss trace)
    Train(TrainArgs),
    /// Time ZETA against dense attention over growing N (CSV)
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long = "d-k", default_value_t = 3)]
    d_k: usize,
    #[arg(long = "d-v", default_value_t = 8)]
    d_v: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    chunk: usize,
    /// Random instances to check
    #[arg(long, default_value_t = 5)]
    configs: usize,
}

#[derive(Args, Debug)]
struct EquivArgs {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long = "d-k", default_value_t = 3)]
    d_k: usize,
    #[arg(long = "d-v", default_value_t = 8)]
    d_v: usize,
}

#[derive(Args, Debug)]
struct LocalityArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "512,1024,2048")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    neighbors: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Bits per dimension [default: floor(63 / d_k)]
    #[arg(long)]
    bits: Option<usize>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long = "d-k", default_value_t = 3)]
    d_k: usize,
    #[arg(long, default_value_t = 32)]
    chunk: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,24,32,40,48")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Bits per dimension [default: floor(63 / d_k)]
    #[arg(long)]
    bits: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Sequence length
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long = "d-model", default_value_t = 64)]
    d_model: usize,
    #[arg(long = "d-k", default_value_t = 3)]
    d_k: usize,
    #[arg(long = "d-v", default_value_t = 64)]
    d_v: usize,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 8)]
    chunk: usize,
    #[arg(long, default_value_t = 16)]
    vocab: usize,
    /// Key-value pairs per sequence
    #[arg(long, default_value_t = 8)]
    pairs: usize,
    #[arg(long = "train-instances", default_value_t = 32)]
    train_instances: usize,
    #[arg(long = "eval-instances", default_value_t = 32)]
    eval_instances: usize,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384,32768,65536")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long = "d-k", default_value_t = 3)]
    d_k: usize,
    #[arg(long = "d-v", default_value_t = 64)]
    d_v: usize,
    #[arg(long, default_value_t = 32)]
    k: usize,
    /// Number of chunks; the chunk size is ceil(N / chunks)
    #[arg(long, default_value_t = 16)]
    chunks: usize,
    /// Run the per-query loops on the thread pool
    #[arg(long)]
    parallel: bool,
    /// Largest dense score matrix to attempt, in MiB
    #[arg(long = "dense-budget-mb", default_value_t = 2048)]
    dense_budget_mb: usize,
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

enum Outcome {
    Pass,
    CheckFailed,
}

fn run(cli: Cli, out: &mut dyn Write) -> AnyResult<Outcome> {
    let seed = cli.seed;
    match cli.command {
        Command::Gradcheck(a) => {
            let params = AttentionParams::new(a.d_k, a.d_v, a.chunk, a.k)?;
            let mut worst: f64 = 0.0;
            writeln!(out, "config,max_rel_q,max_rel_k,max_rel_v,rel_theta")?;
            for c in 0..a.configs {
                let mut rng = Rng::fork(seed, c as u64);
                let q = gaussian_matrix(&mut rng, a.n, a.d_k, 1.0)?;
                let k = gaussian_matrix(&mut rng, a.n, a.d_k, 1.0)?;
                let v = gaussian_matrix(&mut rng, a.n, a.d_v, 1.0)?;
                let theta = 2.0 * rng.uniform() - 1.0;
                let r = gradient_check(&q, &k, &v, &params.clone().with_theta(theta))?;
                writeln!(out, "{c},{:.3e},{:.3e},{:.3e},{:.3e}", r.max_rel_q, r.max_rel_k, r.max_rel_v, r.rel_theta)?;
                worst = worst.max(r.max_rel());
            }
            writeln!(out, "max_relative_error={worst:.3e}")?;
            Ok(if worst < GRADCHECK_TOL { Outcome::Pass } else { Outcome::CheckFailed })
        }
        Command::Equiv(a) => {
            let params = AttentionParams::new(a.d_k, a.d_v, 1, a.n.max(1))?;
            let mut rng = Rng::new(seed);
            let q = gaussian_matrix(&mut rng, a.n, a.d_k, 1.0)?;
            let k = gaussian_matrix(&mut rng, a.n, a.d_k, 1.0)?;
            let v = gaussian_matrix(&mut rng, a.n, a.d_v, 1.0)?;
            let sparse = attend(&q, &k, &v, &params)?;
            let dense = dense_causal_attention(&q, &k, &v, SoftmaxVariant::Cauchy, &params)?;
            let diff = sparse.max_abs_diff(&dense)?;
            writeln!(out, "max_abs_diff={diff:.3e}")?;
            Ok(if diff < EQUIV_TOL { Outcome::Pass } else { Outcome::CheckFailed })
        }
        Command::Locality(a) => {
            let cfg = LocalitySweepConfig {
                dims: a.dims,
                sizes: a.sizes,
                neighbors: a.neighbors,
                trials: a.trials,
                seed,
                bits: a.bits,
            };
            write_locality_csv(out, seed, &locality_sweep(&cfg)?)?;
            Ok(Outcome::Pass)
        }
        Command::AblateK(a) => {
            let cfg = KAblationConfig {
                n: a.n,
                d_k: a.d_k,
                chunk_size: a.chunk,
                ks: a.ks,
                trials: a.trials,
                seed,
                bits: a.bits,
            };
            write_k_ablation_csv(out, &k_ablation(&cfg)?)?;
            Ok(Outcome::Pass)
        }
        Command::MetricDemo => {
            writeln!(out, "{}", house_example())?;
            Ok(Outcome::Pass)
        }
        Command::Train(a) => {
            let mut rng = Rng::new(seed);
            let model_cfg = ModelConfig {
                vocab: a.vocab,
                d_model: a.d_model,
                d_k: a.d_k,
                d_v: a.d_v,
                chunk_size: a.chunk,
                k: a.k,
            };
            let task = TaskConfig {
                vocab: a.vocab,
                n_pairs: a.pairs,
                seq_len: a.n,
                train_instances: a.train_instances,
                eval_instances: a.eval_instances,
            };
            let mut model = ModelParams::init(&mut rng, &model_cfg)?;
            let train_set = task.generate(&mut rng, task.train_instances)?;
            let eval_set = task.generate(&mut rng, task.eval_instances)?;
            let trace = train(&mut model, &train_set, a.steps, a.lr)?;
            writeln!(out, "step,loss")?;
            for (step, loss) in trace.iter().enumerate() {
                writeln!(out, "{step},{loss:.6}")?;
            }
            writeln!(out, "accuracy={:.6}", eval_accuracy(&model, &eval_set)?)?;
            Ok(Outcome::Pass)
        }
        Command::Bench(a) => {
            let cfg = BenchConfig {
                sizes: a.sizes,
                repetitions: a.reps,
                d_k: a.d_k,
                d_v: a.d_v,
                k: a.k,
                num_chunks: a.chunks,
                seed,
                parallel: a.parallel,
                dense_memory_budget: a.dense_budget_mb << 20,
            };
            let rows = run_bench(&cfg, |line| eprintln!("{line}"))?;
            write_bench_csv(out, &rows)?;
            Ok(Outcome::Pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let mut sink: Box<dyn Write> = match &cli.out {
        Some(path) => match File::create(path) {
            Ok(f) => Box::new(BufWriter::new(f)),
            Err(e) => {
                eprintln!("error: cannot create {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let result = run(cli, &mut sink).and_then(|o| {
        sink.flush()?;
        Ok(o)
    });
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
