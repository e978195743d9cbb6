use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cilfuse::experiment::{run_ablation, run_experiment, ExperimentError, RunConfig};
use cilfuse::imgio::{generate_dataset, load_ppm, write_dataset, GeneratorSpec};
use cilfuse::streams::{color_histogram, edge_histogram};

#[derive(Parser)]
#[command(name = "cilfuse", version, about = "Multi-stream class-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pill dataset.
    Gen(GenArgs),
    /// Run the incremental protocol described by a JSON config.
    Run { config: PathBuf },
    /// Run the stream/fusion ablation matrix for a JSON config.
    Ablate { config: PathBuf },
    /// Print the color (or edge) histogram of a PPM image.
    Hist {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        edge: bool,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    train_per_class: usize,
    #[arg(long)]
    test_per_class: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn gen(args: GenArgs) -> Result<(), ExperimentError> {
    let spec = GeneratorSpec {
        num_classes: args.classes,
        train_per_class: args.train_per_class,
        test_per_class: args.test_per_class,
        image_size: args.size,
        seed: args.seed,
    };
    let ds = generate_dataset(&spec).map_err(|e| ExperimentError::Config(e.to_string()))?;
    write_dataset(&args.out, &ds.samples).map_err(|e| ExperimentError::Data(e.to_string()))?;
    println!("class_id,shape,color,imprint");
    for c in &ds.classes {
        println!(
            "{},{},{},{}",
            c.class_id,
            format!("{:?}", c.shape).to_lowercase(),
            c.color.name,
            format!("{:?}", c.imprint).to_lowercase()
        );
    }
    println!("wrote {} images to {}", ds.samples.len(), args.out.display());
    Ok(())
}

fn hist(image: PathBuf, edge: bool) -> Result<(), ExperimentError> {
    let img = load_ppm(&image).map_err(|e| ExperimentError::Data(format!("{}: {e}", image.display())))?;
    let v = if edge { edge_histogram(&img, true) } else { color_histogram(&img, true) }
        .map_err(|e| ExperimentError::Data(e.to_string()))?;
    let mut out = String::with_capacity(v.values.len() * 12);
    for (i, x) in v.values.iter().enumerate() {
        out.push_str(&format!("{i},{x:.6}\n"));
    }
    print!("{out}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Gen(args) => gen(args),
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            let summary = run_experiment(&cfg)?;
            for r in &summary.reports {
                println!("phase {}: A={:.6} F={:.6}", r.phase, r.cumulative_accuracy, r.forgetting);
            }
            println!("{}", summary.final_line());
            Ok(())
        }
        Command::Ablate { config } => {
            let cfg = RunConfig::load(&config)?;
            let rows = run_ablation(&cfg)?;
            print!("{}", cilfuse::experiment::ablation_csv(&rows));
            Ok(())
        }
        Command::Hist { image, edge } => hist(image, edge),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
