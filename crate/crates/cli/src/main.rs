//! `trishare` command line: share provider data, benchmark protocols, train
//! and query the MLP, and run the range-inference analysis.

use std::fs;
use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use trishare::bench::{run_bench, BenchProtocol, BenchRow, BenchSpec};
use trishare::mlp::checkpoint::{self, CheckpointSeeds, Manifest};
use trishare::mlp::{
    ingest_vertical, predict, prepare_blocks, run_training, split_indices, train_party, Dataset,
    EpochMetrics, MlpConfig, Partition, ProviderBlock, VerticalLayout, EVALUATOR,
};
use trishare::runtime::{
    run_inprocess, run_loopback_sockets, run_socket_party, NetProfile, Outcome, Session,
    SessionConfig, TransportMode,
};
use trishare::secanalysis::{analyze, PriorInterval};
use trishare::sharing::{share, write_share_file, PartyId};
use trishare::tensor::RandomRange;

#[derive(Parser)]
#[command(
    name = "trishare",
    version,
    about = "Three-party secure computation over replicated real-valued sharings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a provider CSV block into three PRSS1 share files.
    Share(ShareArgs),
    /// Time protocols and report traffic and error against plaintext.
    Bench(BenchArgs),
    /// Train the MLP on vertically partitioned data.
    Train(TrainArgs),
    /// Predict with a saved checkpoint.
    Predict(PredictArgs),
    /// Range-inference analysis for a masked value.
    Analyze(AnalyzeArgs),
    /// Run one party of a training job over TCP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Inprocess,
    Socket,
}

impl From<Mode> for TransportMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Inprocess => TransportMode::InProcess,
            Mode::Socket => TransportMode::Socket,
        }
    }
}

#[derive(Args, Clone)]
struct SessionArgs {
    /// `inprocess` runs the parties on threads; `socket` connects them over
    /// loopback TCP.
    #[arg(long, value_enum, default_value = "inprocess")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    rtt_ms: f64,
    /// Unlimited when absent.
    #[arg(long)]
    bandwidth_bps: Option<f64>,
    /// Zero-sharing range, `LO:HI`.
    #[arg(long, allow_hyphen_values = true)]
    rand_range: Option<RandomRange>,
    /// Zero-sharing range inside softmax, `LO:HI`.
    #[arg(long, allow_hyphen_values = true)]
    softmax_range: Option<RandomRange>,
    /// Seconds to wait for a peer in any round.
    #[arg(long, default_value_t = 30.0)]
    timeout_s: f64,
}

impl SessionArgs {
    fn config(&self) -> Result<SessionConfig> {
        let mut cfg = SessionConfig {
            profile: NetProfile {
                rtt_ms: self.rtt_ms,
                bandwidth_bps: self.bandwidth_bps,
            },
            round_timeout: Duration::from_secs_f64(self.timeout_s),
            ..SessionConfig::default()
        };
        if let Some(r) = self.rand_range {
            cfg.randomness = r;
        }
        if let Some(r) = self.softmax_range {
            cfg.softmax_randomness = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seed contributed by each party during setup.
    fn party_seeds(&self) -> [u64; 3] {
        [1, 2, 3].map(|k| self.seed.wrapping_add(k))
    }

    fn run<T, F>(&self, program: F) -> Result<Outcome<T>>
    where
        T: Send,
        F: Fn(&mut Session) -> trishare::Result<T> + Sync,
    {
        let cfg = self.config()?;
        Ok(match self.mode {
            Mode::Inprocess => run_inprocess(&cfg, self.party_seeds(), program)?,
            Mode::Socket => run_loopback_sockets(&cfg, self.party_seeds(), program)?,
        })
    }
}

#[derive(Args)]
struct ShareArgs {
    /// CSV block with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Party that owns the block.
    #[arg(long, default_value_t = 0)]
    owner: usize,
    /// Class count, used to validate a `label` column.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_parser = parse_protocol)]
    protocol: Option<BenchProtocol>,
    /// Comma-separated matrix sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 20, 30, 40, 50])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    /// Exponent span of the random inputs.
    #[arg(long, default_value_t = 0)]
    span: u32,
    /// JSON file with a full benchmark spec; overrides the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Emit CSV instead of JSON lines.
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Built-in dataset: iris or wine.
    #[arg(long, conflicts_with = "data")]
    dataset: Option<String>,
    /// Full dataset CSV with a `label` column.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Feature columns per provider, e.g. `2,1,1`. Even split by default.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    label_provider: usize,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        match (&self.dataset, &self.data) {
            (Some(name), None) => Ok(Dataset::builtin(name)?),
            (None, Some(path)) => {
                let block = ProviderBlock::from_csv(path, self.classes)?;
                Ok(Dataset {
                    name: path.display().to_string(),
                    features: block
                        .features
                        .ok_or_else(|| anyhow!("{} has no feature columns", path.display()))?,
                    labels: block
                        .labels
                        .ok_or_else(|| anyhow!("{} has no label column", path.display()))?,
                    classes: self.classes,
                })
            }
            _ => bail!("pass exactly one of --dataset or --data"),
        }
    }

    fn partition(&self, features: usize) -> Result<Partition> {
        let label_provider = PartyId::new(self.label_provider)?;
        let widths = match &self.widths {
            None => Partition::even(features).widths,
            Some(w) => <[usize; 3]>::try_from(w.as_slice())
                .map_err(|_| anyhow!("--widths needs three values"))?,
        };
        Ok(Partition {
            widths,
            label_provider,
        })
    }

    /// Preset for a built-in dataset, or a generic shape for a CSV.
    fn mlp_config(&self, data: &Dataset, path: Option<&Path>, seed: u64) -> Result<MlpConfig> {
        let cfg = match path {
            Some(p) => {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => match &self.dataset {
                Some(name) => MlpConfig::preset(name)?.with_seed(seed),
                None => {
                    let mut c = MlpConfig::iris().with_seed(seed);
                    c.layer_sizes = vec![data.features.cols(), 16, 16, data.classes];
                    c.train_size = data.rows() * 4 / 5;
                    c
                }
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON file with a full MLP config; seeds inside it are used as given.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory to write every party's checkpoint into.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    csv: bool,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Predict every row instead of the held-out split.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    session: SessionArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, allow_hyphen_values = true)]
    lx: f64,
    #[arg(long, allow_hyphen_values = true)]
    rx: f64,
    #[arg(long, allow_hyphen_values = true)]
    lr: f64,
    #[arg(long, allow_hyphen_values = true)]
    rr: f64,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    party: usize,
    /// Address this party listens on.
    #[arg(long)]
    listen: SocketAddr,
    /// The other two parties' addresses, in party order.
    #[arg(long, value_delimiter = ',')]
    peers: Vec<SocketAddr>,
    #[command(flatten)]
    data: DataArgs,
    /// This party's own CSV block; otherwise its columns are cut from the
    /// dataset.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    rtt_ms: f64,
    #[arg(long)]
    bandwidth_bps: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rand_range: Option<RandomRange>,
    #[arg(long, allow_hyphen_values = true)]
    softmax_range: Option<RandomRange>,
    #[arg(long, default_value_t = 30.0)]
    timeout_s: f64,
}

fn parse_protocol(s: &str) -> std::result::Result<BenchProtocol, String> {
    s.parse().map_err(|e: trishare::Error| e.to_string())
}

fn emit_json(out: &mut impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_share(args: &ShareArgs, out: &mut impl Write) -> Result<()> {
    let owner = PartyId::new(args.owner)?;
    let block = ProviderBlock::from_csv(&args.input, args.classes)?;
    let features = block
        .features
        .clone()
        .ok_or_else(|| anyhow!("{} has no feature columns", args.input.display()))?;
    let shape = features.shape();
    let outcome = args.session.run(|s| {
        let input = (s.id() == owner).then_some(&features);
        share(s, owner, input, shape)
    })?;
    fs::create_dir_all(&args.out)?;
    let stem = args
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("block")
        .to_string();
    let mut files = Vec::new();
    for (i, view) in outcome.outputs().into_iter().enumerate() {
        let path = args.out.join(format!("{stem}.p{i}.prss"));
        write_share_file(&path, view)?;
        files.push(path.display().to_string());
    }
    emit_json(
        out,
        &serde_json::json!({
            "rows": shape.0,
            "cols": shape.1,
            "columns": block.columns,
            "owner": args.owner,
            "files": files,
        }),
    )
}

fn bench_csv_row(r: &BenchRow) -> String {
    format!(
        "{},{},{},{},{:.6},{},{},{},{:e}",
        r.protocol,
        r.n,
        r.exponent_span,
        r.repetitions,
        r.mean_ms,
        r.bytes,
        r.bits,
        r.rounds,
        r.mre
    )
}

fn cmd_bench(args: &BenchArgs, out: &mut impl Write) -> Result<()> {
    let specs: Vec<BenchSpec> = match (&args.config, args.protocol) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            vec![serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?]
        }
        (None, p) => {
            let protocols = p
                .map(|p| vec![p])
                .unwrap_or_else(|| BenchProtocol::ALL.to_vec());
            protocols
                .into_iter()
                .map(|protocol| BenchSpec {
                    protocol,
                    sizes: args.sizes.clone(),
                    repetitions: args.repetitions,
                    exponent_span: args.span,
                })
                .collect()
        }
    };
    let cfg = args.session.config()?;
    if args.csv {
        writeln!(
            out,
            "protocol,n,exponent_span,repetitions,mean_ms,bytes,bits,rounds,mre"
        )?;
    }
    for spec in &specs {
        for row in run_bench(spec, &cfg, args.session.mode.into(), args.session.seed)? {
            if args.csv {
                writeln!(out, "{}", bench_csv_row(&row))?;
            } else {
                emit_json(out, &row)?;
            }
        }
    }
    Ok(())
}

fn manifest_for(cfg: &MlpConfig, session_seeds: [u64; 3]) -> Manifest {
    Manifest {
        layer_sizes: cfg.layer_sizes.clone(),
        epoch: cfg.epochs,
        seeds: CheckpointSeeds {
            init: cfg.init_seed,
            shuffle: cfg.shuffle_seed,
            split: cfg.split_seed,
            session: session_seeds,
        },
    }
}

fn emit_metrics(out: &mut impl Write, metrics: &[EpochMetrics], csv: bool) -> Result<()> {
    if csv {
        writeln!(out, "epoch,loss,accuracy,bytes_total,rounds_total,wall_ms")?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        for m in metrics {
            writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                m.epoch,
                opt(m.loss),
                opt(m.accuracy),
                m.bytes_total,
                m.rounds_total,
                m.wall_ms
            )?;
        }
        return Ok(());
    }
    for m in metrics {
        emit_json(out, m)?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, out: &mut impl Write) -> Result<()> {
    let data = args.data.load()?;
    let partition = args.data.partition(data.features.cols())?;
    let cfg = args
        .data
        .mlp_config(&data, args.config.as_deref(), args.session.seed)?;
    let seeds = args.session.party_seeds();
    let report = run_training(
        &data,
        partition,
        &cfg,
        &args.session.config()?,
        args.session.mode.into(),
        seeds,
    )?;
    emit_metrics(out, &report.metrics, args.csv)?;
    if let Some(dir) = &args.checkpoint {
        let manifest = manifest_for(&cfg, seeds);
        for model in &report.models {
            checkpoint::save(dir, &manifest, model)?;
        }
    }
    if !args.csv {
        emit_json(
            out,
            &serde_json::json!({
                "final_accuracy": report.final_accuracy,
                "test_rows": report.test_rows.len(),
                "predictions": report.predictions,
            }),
        )?;
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs, out: &mut impl Write) -> Result<()> {
    let data = args.data.load()?;
    let partition = args.data.partition(data.features.cols())?;
    let manifest = checkpoint::read_manifest(&args.checkpoint)?;
    let mut cfg = args
        .data
        .mlp_config(&data, args.config.as_deref(), args.session.seed)?;
    cfg.layer_sizes = manifest.layer_sizes.clone();
    let rows: Vec<usize> = if args.all {
        (0..data.rows()).collect()
    } else {
        split_indices(data.rows(), cfg.train_size, manifest.seeds.split)?.1
    };
    let (layout, blocks) = prepare_blocks(&data, partition)?;
    let dir = &args.checkpoint;
    let outcome = args.session.run(|s| {
        let (_, model) = checkpoint::load(dir, s.id())?;
        let shared = ingest_vertical(s, &layout, Some(&blocks[s.id().index()]))?;
        let x = shared.features.select_rows(&rows)?;
        predict(s, &model, &x, &cfg, EVALUATOR)
    })?;
    let predictions = outcome.parties[EVALUATOR.index()]
        .output
        .clone()
        .ok_or_else(|| anyhow!("evaluator received no predictions"))?;
    let hits = rows
        .iter()
        .zip(&predictions)
        .filter(|(&r, &p)| data.labels[r] == p)
        .count();
    emit_json(
        out,
        &serde_json::json!({
            "rows": rows,
            "predictions": predictions,
            "accuracy": hits as f64 / rows.len() as f64,
        }),
    )
}

fn cmd_analyze(args: &AnalyzeArgs, out: &mut impl Write) -> Result<()> {
    let x = PriorInterval::new(args.lx, args.rx)?;
    let report = analyze(x, (args.lr, args.rr), args.trials, args.seed)?;
    emit_json(out, &report)
}

fn cmd_serve(args: &ServeArgs, out: &mut impl Write) -> Result<()> {
    let me = PartyId::new(args.party)?;
    if args.peers.len() != 2 {
        bail!("--peers needs the two other parties' addresses");
    }
    let mut addrs = [args.listen; 3];
    let others = PartyId::ALL.into_iter().filter(|p| *p != me);
    for (p, a) in others.zip(&args.peers) {
        addrs[p.index()] = *a;
    }
    let session = SessionArgs {
        mode: Mode::Socket,
        seed: args.seed,
        rtt_ms: args.rtt_ms,
        bandwidth_bps: args.bandwidth_bps,
        rand_range: args.rand_range,
        softmax_range: args.softmax_range,
        timeout_s: args.timeout_s,
    };
    let data = args.data.load()?;
    let partition = args.data.partition(data.features.cols())?;
    let cfg = args
        .data
        .mlp_config(&data, args.config.as_deref(), args.seed)?;
    let (layout, blocks): (VerticalLayout, _) = prepare_blocks(&data, partition)?;
    let own = match &args.input {
        Some(path) => ProviderBlock::from_csv(path, data.classes)?.standardized(),
        None => blocks[me.index()].clone(),
    };
    let listener =
        TcpListener::bind(args.listen).with_context(|| format!("binding {}", args.listen))?;
    let seed = session.party_seeds()[me.index()];
    let program = |s: &mut Session| train_party(s, &cfg, &layout, Some(&own));
    let party = run_socket_party(me, addrs, listener, session.config()?, seed, &program)?;
    let training = party.output;
    if let Some(dir) = &args.checkpoint {
        checkpoint::save(
            dir,
            &manifest_for(&cfg, session.party_seeds()),
            &training.model,
        )?;
    }
    for m in &training.metrics {
        emit_json(out, m)?;
    }
    if let Some(pred) = &training.predictions {
        emit_json(
            out,
            &serde_json::json!({ "party": args.party, "predictions": pred }),
        )?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Share(a) => cmd_share(a, &mut out),
        Command::Bench(a) => cmd_bench(a, &mut out),
        Command::Train(a) => cmd_train(a, &mut out),
        Command::Predict(a) => cmd_predict(a, &mut out),
        Command::Analyze(a) => cmd_analyze(a, &mut out),
        Command::Serve(a) => cmd_serve(a, &mut out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("trishare").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn session_flags_reach_the_config() {
        let Command::Bench(b) = parse(&[
            "bench",
            "--rand-range",
            "-8:8",
            "--rtt-ms",
            "40",
            "--bandwidth-bps",
            "3e8",
        ])
        .command
        else {
            panic!("wrong subcommand");
        };
        let cfg = b.session.config().unwrap();
        assert_eq!((cfg.randomness.low, cfg.randomness.high), (-8.0, 8.0));
        assert_eq!(cfg.profile.rtt_ms, 40.0);
        assert_eq!(cfg.profile.bandwidth_bps, Some(3e8));
        assert_eq!(b.session.party_seeds(), [1, 2, 3]);
    }

    #[test]
    fn bad_flags_are_rejected() {
        let Command::Bench(b) = parse(&["bench", "--rtt-ms=-1"]).command else {
            panic!("wrong subcommand");
        };
        assert!(b.session.config().is_err());
        assert!(Cli::try_parse_from(["trishare", "bench", "--protocol", "conv"]).is_err());
        assert!(
            Cli::try_parse_from(["trishare", "train", "--dataset", "iris", "--data", "x.csv"])
                .is_err()
        );
    }

    #[test]
    fn partition_flags() {
        let Command::Train(t) = parse(&[
            "train",
            "--dataset",
            "iris",
            "--widths",
            "0,4,0",
            "--label-provider",
            "2",
        ])
        .command
        else {
            panic!("wrong subcommand");
        };
        let p = t.data.partition(4).unwrap();
        assert_eq!(p.widths, [0, 4, 0]);
        assert_eq!(p.label_provider, PartyId::P2);
        let Command::Train(t) = parse(&["train", "--dataset", "iris", "--widths", "1,3"]).command
        else {
            panic!("wrong subcommand");
        };
        assert!(t.data.partition(4).is_err());
    }
}
