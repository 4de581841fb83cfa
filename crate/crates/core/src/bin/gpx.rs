use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gpointx::data_io::AugmentMode;
use gpointx::equivariant_layers::{CoordMode, LayerKind};
use gpointx::group_algebra::GroupName;
use gpointx::harness::{
    cmd_eval, cmd_gen_data, cmd_group_info, cmd_train, equiv_check, EquivSettings, GenDataSettings, Precision, RunConfig,
};
use gpointx::models::Task;

#[derive(Parser)]
#[command(name = "gpx", version, about = "Rotation-equivariant point cloud networks over finite groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape or scene dataset.
    GenData {
        #[arg(long, default_value = "cls")]
        task: Task,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        test: usize,
        #[arg(long, default_value_t = 256)]
        points: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Objects per scene (segmentation only).
        #[arg(long, default_value_t = 3)]
        objects: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, short, default_value = "data")]
        out: PathBuf,
    },
    /// Train from a key=value run config.
    Train { config: PathBuf },
    /// Evaluate a checkpoint on a dataset split directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "none")]
        rotate: AugmentMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "32")]
        precision: Precision,
    },
    /// Check layer and model equivariance on random clouds.
    EquivCheck {
        #[arg(long, default_value = "g4")]
        group: GroupName,
        #[arg(long, default_value = "g_pointnet")]
        layer: LayerKind,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value = "64")]
        precision: Precision,
        /// Feed raw offsets p - q to every group slot (breaks equivariance).
        #[arg(long)]
        unconjugated: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a group's elements and Cayley table.
    GroupInfo { group: String },
}

fn run(cli: Cli) -> gpointx::Result<bool> {
    match cli.command {
        Command::GenData {
            task,
            classes,
            train,
            test,
            points,
            noise,
            objects,
            seed,
            out,
        } => {
            let s = GenDataSettings {
                task,
                classes,
                train,
                test,
                points,
                noise,
                objects,
                seed,
            };
            let (tr, te) = cmd_gen_data(&s, &out)?;
            println!("{}", serde_json::json!({"out": out.display().to_string(), "train": tr, "test": te}));
        }
        Command::Train { config } => {
            let cfg = RunConfig::read(&config)?;
            let mut stdout = std::io::stdout().lock();
            cmd_train(&cfg, &mut stdout)?;
            if let Some(test) = &cfg.test_data {
                let report = cmd_eval(&cfg.output, test, cfg.eval_rotate, cfg.seed, cfg.precision)?;
                println!("{}", report.to_json());
            }
        }
        Command::Eval {
            checkpoint,
            data,
            rotate,
            seed,
            precision,
        } => {
            println!("{}", cmd_eval(&checkpoint, &data, rotate, seed, precision)?.to_json());
        }
        Command::EquivCheck {
            group,
            layer,
            trials,
            tol,
            precision,
            unconjugated,
            seed,
        } => {
            let mut s = EquivSettings::new(group, layer);
            s.trials = trials;
            s.tol = tol;
            s.precision = precision;
            s.seed = seed;
            if unconjugated {
                s.coords = CoordMode::Unconjugated;
            }
            let report = equiv_check(&s)?;
            println!("{}", report.to_json());
            return Ok(report.passed());
        }
        Command::GroupInfo { group } => print!("{}", cmd_group_info(&group)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
