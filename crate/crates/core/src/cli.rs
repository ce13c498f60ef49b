//! The `ulsam` command line.
//!
//! Exit codes: 0 on success, 1 when a check fails, 2 on usage, configuration
//! or data errors. Flags given on the command line override the config file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{RunConfig, UlsamSection};
use crate::cost::{analyze_model_at, format_table1, instrumented_macs, table1_rows};
use crate::error::{Error, Result};
use crate::gradcheck::run_suite;
use crate::model::{Arch, ModelGraph};
use crate::ops::MacKind;
use crate::train::{checkpoint, evaluate, topk_hits, train_loop, TrainOutputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "ulsam", version, about = "Subspace attention for compact CNNs: cost analysis, gradient checks and training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer parameter and MAC report for a configured model.
    Analyze {
        #[command(flatten)]
        model: ModelArgs,
        /// Square input resolution.
        #[arg(long)]
        input_size: Option<usize>,
        /// Also run the instrumented kernels and require exact MAC agreement.
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Overhead comparison of attention modules on one feature map.
    Table1 {
        #[arg(long, default_value_t = 512)]
        m: u64,
        #[arg(long, default_value_t = 14)]
        h: u64,
        #[arg(long, default_value_t = 14)]
        w: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt the named check's analytic gradient.
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Train on the configured dataset; writes history and checkpoint.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory for `history.jsonl` and `checkpoint.ulsm`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Evaluate a checkpoint on the evaluation dataset.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report top-k accuracy besides top-1 (default 5 when there are
        /// at least five classes).
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// List the layers of a configured model.
    Describe {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Required when no config file is given.
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ULSAM groups per block.
    #[arg(long)]
    pub g: Option<usize>,
    /// Comma-separated directives: `L` substitutes layer L, `L:1` inserts after it.
    #[arg(long)]
    pub positions: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Mv1,
    Mv2,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.arch) {
            (Some(path), _) => RunConfig::from_path(path)?,
            (None, Some(_)) => RunConfig::new(Arch::Mv1),
            (None, None) => return Err(Error::config("either --config or --arch is required")),
        };
        if let Some(a) = self.arch {
            cfg.arch = match a {
                ArchArg::Mv1 => Arch::Mv1,
                ArchArg::Mv2 => Arch::Mv2,
            };
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(n) = self.num_classes {
            cfg.num_classes = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.positions {
            let positions = p.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
            let g = match (self.g, &cfg.ulsam) {
                (Some(g), _) => g,
                (None, Some(u)) => u.g,
                (None, None) => return Err(Error::config("--positions needs --g or a ulsam section in the config")),
            };
            cfg.ulsam = Some(UlsamSection { g, positions });
        } else if let Some(g) = self.g {
            let positions = cfg.ulsam.take().map(|u| u.positions).unwrap_or_default();
            cfg.ulsam = Some(UlsamSection { g, positions });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(output: &OutputArgs, stdout: &mut dyn Write, text: String, value: serde_json::Value) -> Result<()> {
    let body = match output.format {
        Format::Text => text,
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&value)?),
    };
    match &output.out {
        Some(p) => std::fs::write(p, body)?,
        None => stdout.write_all(body.as_bytes())?,
    }
    Ok(())
}

fn describe_model(graph: &ModelGraph<f32>) -> (String, serde_json::Value) {
    let meta = graph.meta();
    let mut text = format!(
        "{} alpha={} classes={} ulsam g={} positions=[{}]\n",
        meta.arch,
        meta.alpha,
        meta.num_classes,
        meta.ulsam_groups.map_or("-".to_string(), |g| g.to_string()),
        meta.positions()
    );
    let mut layers = Vec::new();
    for (label, spec) in graph.layers() {
        text.push_str(&format!(
            "{label:>8}  {:<20} {:>5} -> {:<5} stride {}{}\n",
            spec.kind_name(),
            spec.in_channels(),
            spec.out_channels(),
            spec.stride(),
            if spec.has_skip() { "  skip" } else { "" }
        ));
        layers.push(json!({
            "layer": label,
            "kind": spec.kind_name(),
            "in_channels": spec.in_channels(),
            "out_channels": spec.out_channels(),
            "stride": spec.stride(),
            "skip": spec.has_skip(),
        }));
    }
    (text, json!({ "meta": meta, "layers": layers }))
}

fn analyze(model: &ModelArgs, input_size: Option<usize>, verify: bool, output: &OutputArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut cfg = model.resolve()?;
    if let Some(s) = input_size {
        cfg.input_size = s;
        cfg.validate()?;
    }
    let graph = cfg.build_graph::<f32>()?;
    let report = analyze_model_at(&graph, cfg.input_size);
    let mut text = report.to_text();
    let mut value = report.to_json();
    let mut code = EXIT_OK;
    if verify {
        let counted = instrumented_macs(&graph, cfg.input_size)?;
        let analytic = report.total_mac_count();
        let ok = counted == report.total_macs;
        text.push_str(&format!(
            "instrumented MACs: {} ({})\n",
            counted.total(),
            if ok { "matches" } else { "MISMATCH" }
        ));
        value["instrumented_macs"] = json!(counted.total());
        value["verified"] = json!(ok);
        if !ok {
            for kind in MacKind::ALL {
                if counted.get(kind) != report.total_macs.get(kind) {
                    eprintln!("{kind}: analytic {} vs counted {}", report.total_macs.get(kind), counted.get(kind));
                }
            }
            eprintln!("MAC verification failed: analytic {analytic}, counted {}", counted.total());
            code = EXIT_CHECK_FAILED;
        }
    }
    emit(output, stdout, text, value)?;
    Ok(code)
}

fn gradcheck(seed: u64, fault: Option<&str>, output: &OutputArgs, stdout: &mut dyn Write) -> Result<i32> {
    let checks = run_suite(seed, fault)?;
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).collect();
    let mut text: String = checks.iter().map(|c| format!("{c}\n")).collect();
    text.push_str(&format!("{} of {} checks passed\n", checks.len() - failed.len(), checks.len()));
    let value = json!({ "checks": checks, "passed": failed.is_empty() });
    emit(output, stdout, text, value)?;
    for c in &failed {
        eprintln!("gradient check failed: {} {} max rel err {:.3e}", c.name, c.shape, c.max_rel_err);
    }
    Ok(if failed.is_empty() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn train(model: &ModelArgs, epochs: Option<usize>, out: &Path, format: Format, stdout: &mut dyn Write) -> Result<i32> {
    let cfg = model.resolve()?;
    let mut tc = cfg.train_config();
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    let source = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::config("config field `dataset` is required for training"))?;
    let train_set = source.load()?;
    let eval_set = cfg.eval_dataset.as_ref().map(|d| d.load()).transpose()?;
    let mut graph = cfg.build_graph::<f32>()?;
    std::fs::create_dir_all(out)?;
    let ckpt = out.join("checkpoint.ulsm");
    let history_path = out.join("history.jsonl");
    let outputs = TrainOutputs {
        checkpoint: Some(&ckpt),
        history: Some(&history_path),
    };
    let history = train_loop(&mut graph, &train_set, eval_set.as_ref(), &tc, outputs)?;
    for r in &history {
        match format {
            Format::Text => writeln!(
                stdout,
                "epoch {:>3}  lr {:<10} loss {:.4}  train top-1 {:.4}  top-1 {:.4}{}",
                r.epoch,
                r.lr,
                r.train_loss,
                r.train_top1,
                r.top1,
                r.top5.map_or(String::new(), |t| format!("  top-5 {t:.4}"))
            )?,
            Format::Json => writeln!(stdout, "{}", serde_json::to_string(r)?)?,
        }
    }
    Ok(EXIT_OK)
}

fn eval(model: &ModelArgs, ckpt: &Path, k: Option<usize>, output: &OutputArgs, stdout: &mut dyn Write) -> Result<i32> {
    let cfg = model.resolve()?;
    let source = cfg
        .eval_dataset
        .as_ref()
        .or(cfg.dataset.as_ref())
        .ok_or_else(|| Error::config("config field `eval_dataset` or `dataset` is required for eval"))?;
    let classes = cfg.num_classes;
    let k = match k {
        Some(k) if k == 0 || k > classes => {
            return Err(Error::config(format!("--k {k} must be in 1..={classes}")));
        }
        Some(k) => Some(k),
        None => (classes >= 5).then_some(5),
    };
    let ds = source.load()?;
    let mut graph = cfg.build_graph::<f32>()?;
    checkpoint::load(&mut graph, ckpt)?;
    let batch = cfg.train_config().batch_size;
    let metrics = evaluate(&graph, &ds, batch)?;
    let topk = match k {
        Some(k) => {
            let order: Vec<usize> = (0..ds.len()).collect();
            let mut hits = 0;
            for chunk in order.chunks(batch) {
                let (x, y) = ds.batch::<f32>(chunk, None);
                hits += topk_hits(&graph.infer(&x)?, &y, k)?;
            }
            Some((k, hits as f64 / ds.len() as f64))
        }
        None => None,
    };
    let mut text = format!("samples {}  loss {:.4}  top-1 {:.4}", ds.len(), metrics.loss, metrics.top1);
    if let Some((k, acc)) = topk {
        text.push_str(&format!("  top-{k} {acc:.4}"));
    }
    text.push('\n');
    let mut value = json!({ "samples": ds.len(), "loss": metrics.loss, "top1": metrics.top1 });
    if let Some((k, acc)) = topk {
        value["k"] = json!(k);
        value["topk"] = json!(acc);
    }
    emit(output, stdout, text, value)?;
    Ok(EXIT_OK)
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Analyze {
            model,
            input_size,
            verify,
            output,
        } => analyze(&model, input_size, verify, &output, stdout),
        Command::Table1 { m, h, w, output } => {
            let rows = table1_rows(m, h, w)?;
            emit(&output, stdout, format_table1(&rows), json!(rows))?;
            Ok(EXIT_OK)
        }
        Command::Gradcheck {
            seed,
            inject_fault,
            output,
        } => gradcheck(seed, inject_fault.as_deref(), &output, stdout),
        Command::Train {
            model,
            epochs,
            out,
            format,
        } => train(&model, epochs, &out, format, stdout),
        Command::Eval {
            model,
            checkpoint,
            k,
            output,
        } => eval(&model, &checkpoint, k, &output, stdout),
        Command::Describe { model, output } => {
            let graph = model.resolve()?.build_graph::<f32>()?;
            let (text, value) = describe_model(&graph);
            emit(&output, stdout, text, value)?;
            Ok(EXIT_OK)
        }
    }
}

/// Parse `args` (program name first) and run. Returns the exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}
