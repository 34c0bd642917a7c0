//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::RunConfig;
use super::dataset::{ingest, Split};
use super::synth::{synth_dataset, SynthParams};
use super::{build_vocab, featurize, fit_pca, retrieve, Featurizer, QueryOptions};
use crate::error::{Error, Result};
use crate::geoeval::{evaluate_retrieval, read_pose_csv};
use crate::image::Image;
use crate::retrieval::{read_matches, write_matches, RetrievalIndex};
use crate::translator::{load_checkpoint, save_checkpoint, train, MsNorm};
use crate::vlad::{DescriptorDb, PcaModel, Vocabulary, VladNorm};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "nightshift", version, about = "Night-to-day translation and retrieval-based localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArg {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster dense descriptors of a directory of images into a vocabulary.
    BuildVocab {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a PCA projection to the VLAD vectors of a directory of images.
    FitPca {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        voc: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe every image of a directory and write a descriptor database.
    Featurize {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        voc: PathBuf,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        images: PathBuf,
        /// Histogram-equalize images before description.
        #[arg(long)]
        hist_eq: bool,
        /// Normalize each cluster block before the global normalization.
        #[arg(long)]
        intra_norm: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the translation model on unpaired day and night images.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        day: PathBuf,
        #[arg(long)]
        night: PathBuf,
        /// Weight decision maps by i / (n * sum(i)) instead of i / sum(i).
        #[arg(long)]
        paper_literal_msweight: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate every image of a directory from night to day.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match query images against a descriptor database.
    Retrieve {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        voc: PathBuf,
        #[arg(long)]
        pca: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        /// Translate queries with this checkpoint first.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Also query with the flip-translate-flip image and keep the closer match.
        #[arg(long)]
        dual: bool,
        #[arg(long)]
        hist_eq: bool,
        #[arg(long)]
        intra_norm: bool,
        /// Pose table of the database images, checked for completeness.
        #[arg(long)]
        ref_poses: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score matches against ground-truth poses.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        matches: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        ref_poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic day / night street dataset.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 200)]
        n_ref: usize,
        #[arg(long, default_value_t = 60)]
        n_query: usize,
        #[arg(long, default_value_t = 100)]
        n_train: usize,
        #[arg(long, default_value_t = 96)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Diverged(_) => EXIT_DIVERGED,
        Error::InvalidState(_) | Error::Data(_) | Error::Load(_) | Error::Io { .. } => EXIT_DATA,
    }
}

/// Parse `args` (program name first), run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Record the resolved configuration next to a file output.
fn echo_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_text(&sidecar(out, ".config"), &cfg.echo())
}

fn load_dir(dir: &Path, split: Split) -> Result<Vec<(String, Image)>> {
    ingest(dir, split)?.load_images()
}

fn load_featurizer(voc: &Path, pca: Option<&Path>, cfg: &RunConfig) -> Result<Featurizer> {
    let vocab = Vocabulary::load(voc)?;
    let pca = pca.map(PcaModel::load).transpose()?;
    Featurizer::new(vocab, pca, cfg)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildVocab { cfg, images, out } => {
            let cfg = RunConfig::load(cfg.config.as_deref())?;
            let imgs: Vec<Image> = load_dir(&images, Split::Train)?.into_iter().map(|(_, i)| i).collect();
            let vocab = build_vocab(&imgs, &cfg)?;
            vocab.save(&out)?;
            echo_config(&out, &cfg)
        }
        Command::FitPca {
            cfg,
            voc,
            images,
            out,
        } => {
            let cfg = RunConfig::load(cfg.config.as_deref())?;
            let vocab = Vocabulary::load(&voc)?;
            let imgs: Vec<Image> = load_dir(&images, Split::Train)?.into_iter().map(|(_, i)| i).collect();
            fit_pca(&imgs, &vocab, &cfg)?.save(&out)?;
            echo_config(&out, &cfg)
        }
        Command::Featurize {
            cfg,
            voc,
            pca,
            images,
            hist_eq,
            intra_norm,
            out,
        } => {
            let mut cfg = RunConfig::load(cfg.config.as_deref())?;
            cfg.hist_eq |= hist_eq;
            if intra_norm {
                cfg.vlad_norm = VladNorm::Intra;
            }
            let f = load_featurizer(&voc, pca.as_deref(), &cfg)?;
            let imgs = load_dir(&images, Split::Train)?;
            featurize(&imgs, &f, cfg.hist_eq)?.save(&out)?;
            echo_config(&out, &cfg)
        }
        Command::Train {
            cfg,
            day,
            night,
            paper_literal_msweight,
            out,
        } => {
            let mut cfg = RunConfig::load(cfg.config.as_deref())?;
            if paper_literal_msweight {
                cfg.train.msweight = MsNorm::Literal;
            }
            let day: Vec<Image> = load_dir(&day, Split::Train)?.into_iter().map(|(_, i)| i).collect();
            let night: Vec<Image> = load_dir(&night, Split::Train)?.into_iter().map(|(_, i)| i).collect();
            echo_config(&out, &cfg)?;
            let (model, _) = train(&cfg.train, &day, &night, |model, s| {
                eprintln!(
                    "epoch {:>3}  lr_g {:.2e}  G {:.4}  D {:.4}  cycle {:.4}",
                    s.epoch + 1,
                    s.lr_g,
                    s.g_loss,
                    s.d_loss,
                    s.cycle_loss
                );
                save_checkpoint(&out, model)
            })?;
            save_checkpoint(&out, &model)
        }
        Command::Translate { ckpt, input, out } => {
            let model = load_checkpoint(&ckpt)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let manifest = ingest(&input, Split::Train)?;
            for e in &manifest.images {
                let img = Image::load(&e.path)?;
                model.translate(&img)?.save(out.join(format!("{}.png", e.id)))?;
            }
            write_text(&out.join("run.config"), &model.config.to_text())
        }
        Command::Retrieve {
            cfg,
            db,
            voc,
            pca,
            queries,
            ckpt,
            dual,
            hist_eq,
            intra_norm,
            ref_poses,
            out,
        } => {
            let mut cfg = RunConfig::load(cfg.config.as_deref())?;
            cfg.dual |= dual;
            cfg.hist_eq |= hist_eq;
            if intra_norm {
                cfg.vlad_norm = VladNorm::Intra;
            }
            let f = load_featurizer(&voc, pca.as_deref(), &cfg)?;
            let db = DescriptorDb::load(&db)?;
            let index = match ref_poses {
                Some(p) => RetrievalIndex::build(&db, &read_pose_csv(&p)?)?,
                None => RetrievalIndex::without_poses(&db)?,
            };
            let model = ckpt.as_deref().map(load_checkpoint).transpose()?;
            let qs = load_dir(&queries, Split::Train)?;
            let opts = QueryOptions {
                translator: model.as_ref(),
                dual: cfg.dual,
                hist_eq: cfg.hist_eq,
            };
            let matches = retrieve(&index, &qs, &f, opts)?;
            write_matches(&out, &matches)?;
            echo_config(&out, &cfg)
        }
        Command::Evaluate {
            cfg,
            matches,
            truth,
            ref_poses,
            out,
        } => {
            let cfg = RunConfig::load(cfg.config.as_deref())?;
            let matches = read_matches(&matches)?;
            let truth = read_pose_csv(&truth)?;
            let refs = read_pose_csv(&ref_poses)?;
            let report = evaluate_retrieval(&matches, &truth, &refs, &cfg.thresholds)?;
            write_text(&out, &report.to_text())?;
            write_text(&sidecar(&out, ".csv"), &report.to_csv())?;
            write_text(&sidecar(&out, ".errors.csv"), &report.errors_csv())?;
            print!("{}", report.to_text());
            echo_config(&out, &cfg)
        }
        Command::Synth {
            seed,
            n_ref,
            n_query,
            n_train,
            size,
            out,
        } => {
            let mut cfg = RunConfig::load(None)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let params = SynthParams {
                seed: cfg.train.seed,
                n_ref,
                n_query,
                n_train,
                size,
                ..SynthParams::default()
            };
            synth_dataset(&params, &out)?;
            write_text(&out.join("run.config"), &cfg.echo())
        }
    }
}
