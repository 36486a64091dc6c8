use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sfas_core::data::{generate_dataset, io, Manifest, Split};
use sfas_core::metrics;
use sfas_core::model::StereoModel;
use sfas_core::train::{self, TrainConfig};
use sfas_core::Error;

#[derive(Parser)]
#[command(name = "sfas", version, about = "Stereo face anti-spoofing on synthetic binocular scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a seeded synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_train: usize,
        #[arg(long)]
        n_test: usize,
        /// Image size as HxW.
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stage 1: train the disparity network.
    TrainDisparity {
        #[arg(long)]
        config: PathBuf,
    },
    /// Stage 2: train the classifier on a frozen stage-1 checkpoint.
    TrainCls {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
    },
    /// Score the test split and write the report, ROC and histogram.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.005,0.001")]
        fpr: Vec<f64>,
        /// Report directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Also write per-sample disparity and confidence maps here.
        #[arg(long)]
        dump_maps: Option<PathBuf>,
    },
    /// Score one stereo pair.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((num(h)?, num(w)?))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) => 3,
        Error::Checkpoint(_) => 4,
        Error::Io { .. } | Error::Tensor(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Config errors include an unreadable config file.
fn read_config(path: &Path) -> Result<TrainConfig, Error> {
    TrainConfig::read(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
        e => e,
    })
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::GenData { out, n_train, n_test, size, seed } => {
            if n_train + n_test == 0 {
                return Err(Error::Config("nothing to generate".into()));
            }
            let m = generate_dataset(&out, n_train, n_test, size.0, size.1, seed)?;
            println!("wrote {} samples to {}", m.records.len(), out.display());
        }
        Cmd::TrainDisparity { config } => {
            let cfg = read_config(&config)?;
            cfg.effective()?;
            let samples = Manifest::read(&cfg.manifest)?.load_split(Split::Train)?;
            create_dir(&cfg.out_dir)?;
            let log_path = cfg.out_dir.join("stage1_log.csv");
            let mut log = Vec::new();
            let model = train::train_disparity(&cfg, &samples, &mut log)?;
            write(&log_path, log)?;
            let ckpt = cfg.out_dir.join("stage1.ckpt");
            model.save(&ckpt)?;
            println!("{}", ckpt.display());
        }
        Cmd::TrainCls { config, init } => {
            let cfg = read_config(&config)?;
            let (mcfg, _) = cfg.effective()?;
            let samples = Manifest::read(&cfg.manifest)?.load_split(Split::Train)?;
            let mut model = StereoModel::new(&mcfg, cfg.seed)?;
            model.load_disparity(&init)?;
            create_dir(&cfg.out_dir)?;
            let mut log = Vec::new();
            train::train_classifier(&cfg, &mut model, &samples, &mut log)?;
            write(&cfg.out_dir.join("stage2_log.csv"), log)?;
            let ckpt = cfg.out_dir.join("model.ckpt");
            model.save(&ckpt)?;
            println!("{}", ckpt.display());
        }
        Cmd::Eval { ckpt, manifest, fpr, out, threshold, dump_maps } => {
            if fpr.iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(Error::Config(format!("fpr targets must lie in [0, 1]: {fpr:?}")));
            }
            let model = StereoModel::load(&ckpt)?;
            let samples = Manifest::read(&manifest)?.load_split(Split::Test)?;
            let ev = train::evaluate(&model, &samples, &fpr, threshold)?;
            let out = out.unwrap_or_else(|| ckpt.parent().map(Path::to_path_buf).unwrap_or_default());
            create_dir(&out)?;
            let report = serde_json::to_string_pretty(&ev.report).expect("report serialises");
            write(&out.join("report.json"), &report)?;
            let roc = metrics::export_roc(&ev.scored).map_err(|e| Error::Config(e.to_string()))?;
            write(&out.join("roc.csv"), roc)?;
            write(&out.join("histogram.csv"), metrics::export_histogram(&ev.scored, 20))?;
            if let Some(dir) = dump_maps {
                create_dir(&dir)?;
                let mut lines = String::new();
                for (r, p) in ev.samples.iter().zip(&ev.predictions) {
                    io::write_dsp(&dir.join(format!("{}_disp.dsp", r.id)), &p.pixels)?;
                    io::write_dsp(&dir.join(format!("{}_refined.dsp", r.id)), &p.refined)?;
                    io::write_dsp(&dir.join(format!("{}_conf_real.dsp", r.id)), &p.confidence[0])?;
                    io::write_dsp(&dir.join(format!("{}_conf_attack.dsp", r.id)), &p.confidence[1])?;
                    lines.push_str(&serde_json::to_string(r).expect("sample serialises"));
                    lines.push('\n');
                }
                write(&dir.join("samples.jsonl"), lines)?;
            }
            println!("{report}");
        }
        Cmd::Infer { ckpt, left, right, out } => {
            let model = StereoModel::load(&ckpt)?;
            let l = io::read_pgm(&left)?;
            let r = io::read_pgm(&right)?;
            let want = (model.config.height, model.config.width);
            io::check_dims(&left, &l, want)?;
            io::check_dims(&right, &r, want)?;
            let p = train::predict(&model, &[(&l, &r)])?.remove(0);
            create_dir(&out)?;
            io::write_dsp(&out.join("disparity.dsp"), &p.pixels)?;
            io::write_dsp(&out.join("refined.dsp"), &p.refined)?;
            io::write_dsp(&out.join("conf_real.dsp"), &p.confidence[0])?;
            io::write_dsp(&out.join("conf_attack.dsp"), &p.confidence[1])?;
            let json = serde_json::json!({ "score": p.score, "real": p.score >= 0.5 });
            let mut f = fs::File::create(out.join("score.json")).map_err(io_err(&out))?;
            writeln!(f, "{json}").map_err(io_err(&out))?;
            println!("{}", p.score);
        }
    }
    Ok(())
}
