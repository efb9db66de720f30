mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gazeadapt::checkpoint::{list_checkpoints, load_checkpoint, save_checkpoint, Checkpoint};
use gazeadapt::data::evaluate;
use gazeadapt::engine::{
    ablation_matrix, adapt, format_ablation, format_ranking, pretrain, rank_checkpoints,
    select_top, write_atomic, AdaptOptions, Variant,
};
use gazeadapt::ensemble::init_group;
use gazeadapt::losses::{loss_curve_export, write_loss_curve};
use gazeadapt::{DomainTag, Error, Result};

use config::CliConfig;

#[derive(Parser)]
#[command(name = "gazeadapt", version, about = "Unsupervised domain adaptation for gaze regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source models and rank them on held-out source data.
    Pretrain(Common),
    /// Adapt the top-H checkpoints to the target domain.
    Adapt(Common),
    /// Report the mean angular error of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory to evaluate.
        #[arg(long)]
        model: PathBuf,
    },
    /// Run every configured variant over every configured seed.
    Ablate(Common),
    /// Export the outlier-guided loss and its L1/L2 counterparts.
    Losscurve(Common),
}

fn setup(common: &Common) -> Result<(CliConfig, PathBuf)> {
    let mut cfg = CliConfig::load(common.config.as_deref())?;
    cfg.apply_seed(common.seed);
    let out = cfg.out_dir(common.out.as_deref())?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok((cfg, out))
}

fn load_all(dir: &Path) -> Result<Vec<Checkpoint>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "checkpoint directory {} does not exist",
            dir.display()
        )));
    }
    list_checkpoints(dir)?.iter().map(|p| load_checkpoint(p)).collect()
}

fn cmd_pretrain(common: &Common) -> Result<()> {
    let (cfg, out) = setup(common)?;
    let (train, val) = cfg.source_splits()?;
    let arch = cfg.architecture(Some(&train))?;
    let ckpts = pretrain(&train, &val, &arch, &cfg.pretrain)?;
    let dir = cfg.checkpoint_dir(Some(&out))?;
    for c in &ckpts {
        save_checkpoint(&dir.join(&c.id), c)?;
    }
    let ranked = rank_checkpoints(&ckpts)?;
    write_atomic(&out.join("ranking.csv"), &format_ranking(&ranked))?;
    println!("{} checkpoints in {}", ckpts.len(), dir.display());
    Ok(())
}

fn cmd_adapt(common: &Common) -> Result<()> {
    let (cfg, out) = setup(common)?;
    cfg.adapt.validate()?;
    let ckpts = load_all(&cfg.checkpoint_dir(Some(&out))?)?;
    let group = select_top(&rank_checkpoints(&ckpts)?, cfg.adapt.h)?;
    let arch = group[0].architecture.clone();
    let (source, _) = cfg.source_splits()?;
    let target = cfg.target.load(DomainTag::Target)?;
    let eval = cfg.eval_data()?;
    let scored = eval.is_labeled();
    let state = init_group(&group, &arch, cfg.adapt.alpha)?;
    let opts = AdaptOptions {
        eval_data: scored.then_some(&eval),
        out_dir: Some(&out),
        checkpoint_ids: group.iter().map(|c| c.id.clone()).collect(),
        resolved_config: Some(cfg.to_json()?),
        ..Default::default()
    };
    let outcome = adapt(state, &source, &target.hidden(), &cfg.adapt, &opts)?;
    let adapted =
        Checkpoint::from_model("adapted", outcome.state.online()[0].as_ref(), cfg.adapt.seed);
    save_checkpoint(&out.join("adapted"), &adapted)?;
    match outcome.manifest.final_error {
        Some(e) => println!("adapted target error {e:.3}"),
        None => println!("adapted checkpoint in {}", out.join("adapted").display()),
    }
    Ok(())
}

fn cmd_eval(common: &Common, model: &Path) -> Result<()> {
    let mut cfg = CliConfig::load(common.config.as_deref())?;
    cfg.apply_seed(common.seed);
    let ckpt = load_checkpoint(model)?;
    let data = cfg.eval_data()?;
    let report = evaluate(ckpt.instantiate()?.as_ref(), &data)?;
    if let Some(out) = common.out.as_deref().or(cfg.out_dir.as_deref()) {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut text = String::from("index,error_deg\n");
        for (i, e) in report.per_sample.iter().enumerate() {
            text.push_str(&format!("{i},{e}\n"));
        }
        write_atomic(&out.join("per_sample.csv"), &text)?;
    }
    println!("{:.3}", report.mean);
    Ok(())
}

fn cmd_ablate(common: &Common) -> Result<()> {
    let (cfg, out) = setup(common)?;
    if cfg.ablate.variants.is_empty() || cfg.ablate.seeds.is_empty() {
        return Err(Error::Config("ablate needs at least one variant and one seed".into()));
    }
    let ranked = rank_checkpoints(&load_all(&cfg.checkpoint_dir(Some(&out))?)?)?;
    let variants = cfg
        .ablate
        .variants
        .iter()
        .map(|v| {
            let config = v.apply(&cfg.adapt)?;
            Ok(Variant {
                name: v.name.clone(),
                checkpoints: select_top(&ranked, config.h)?,
                config,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let arch = ranked[0].architecture.clone();
    let (source, _) = cfg.source_splits()?;
    let target = cfg.target.load(DomainTag::Target)?.hidden();
    let eval = cfg.eval_data()?;
    let rows = ablation_matrix(&variants, &arch, &source, &target, &eval, &cfg.ablate.seeds)?;
    let table = format_ablation(&rows);
    write_atomic(&out.join("ablation.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_losscurve(common: &Common) -> Result<()> {
    let (cfg, out) = setup(common)?;
    let c = &cfg.losscurve;
    let rows = loss_curve_export(&c.params()?, (c.lo, c.hi), c.n_points)?;
    let path = out.join("loss_curve.csv");
    write_loss_curve(&path, &rows)?;
    println!("{} rows in {}", rows.len(), path.display());
    Ok(())
}

fn error_record(e: &Error) -> String {
    serde_json::json!({
        "status": "error",
        "kind": e.kind(),
        "message": e.to_string(),
    })
    .to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let record = serde_json::json!({
                "status": "error",
                "kind": "usage",
                "message": e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: "),
            });
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Pretrain(c) => cmd_pretrain(c),
        Command::Adapt(c) => cmd_adapt(c),
        Command::Eval { common, model } => cmd_eval(common, model),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Losscurve(c) => cmd_losscurve(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
