use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcsr_cli::config::ExperimentConfig;
use pcsr_cli::experiment::build_corpus;
use pcsr_cli::table::{f, Table};
use pcsr_cli::{run_experiment, version_line, CliError, StageExt};
use pcsr_core::access::{
    decrypt_frame, encrypt_frame, keygen, setup, AttributeSet, EncryptedFrame, Granularity, MasterKeys, PolicyTree,
    PublicParams, UserKey,
};
use pcsr_core::dataset::{extract_pairs, train_test_split, Corpus, TrainingRecord, DEFAULT_K, DEFAULT_M};
use pcsr_core::forest::{evaluate, train, ForestConfig, ForestModel, TrainingManifest};
use pcsr_core::metrics::{similarity, ChamferVariant};
use pcsr_core::ply::{read_ply_file, write_ply_file, PlyEncoding};
use pcsr_core::sampling::{resolution_ladder, ResolutionLevel};
use pcsr_core::scenes::{fetch_real_with, generate, FetchOptions, SceneKind, SceneSpec, REAL_DATASET_COUNTS};
use pcsr_core::upsample::upsample_chain;
use pcsr_stream::{
    bench, run_matrix, serve_with, write_latency_csv, BenchConfig, ConnectionMode, LadderEntry, ServeOptions,
};
use rand::RngCore;

#[derive(Parser)]
#[command(name = "pcsr", version = version_line(), about = "Point cloud access control and super-resolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene as a PLY file.
    Gen {
        #[arg(long, default_value = "room")]
        kind: SceneKind,
        #[arg(long, default_value_t = 200_000)]
        points: usize,
        /// Gaussian noise sigma in meters.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ascii: bool,
    },
    /// Download and verify a real capture set listed in a manifest.
    Fetch {
        /// Dataset manifest URL; no default is built in.
        #[arg(long)]
        url: String,
        /// Defaults to `~/.pcsr/data`.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Skip the per-scene file count check.
        #[arg(long)]
        any_count: bool,
    },
    /// Write stride-downsampled copies of a cloud as `<stem>_<level>.ply`.
    Downsample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "50,25,12.5")]
        levels: Vec<ResolutionLevel>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Create master keys and publish the attribute universe.
    Setup {
        /// Comma-separated attribute labels, e.g. `Role:Viewer,Dept:Research`.
        #[arg(long)]
        attrs: String,
        #[arg(long, default_value = "keys")]
        out_dir: PathBuf,
        /// Deterministic seed text (at least 32 bytes); random if absent.
        #[arg(long)]
        seed: Option<String>,
    },
    /// Issue a user key for an attribute set.
    Keygen {
        #[arg(long, default_value = "keys/master.key")]
        master: PathBuf,
        #[arg(long)]
        attrs: String,
        #[arg(long, default_value = "user.key")]
        out: PathBuf,
    },
    /// Encrypt the selected coordinate columns of a cloud under a policy.
    Encrypt {
        #[arg(long = "in")]
        input: PathBuf,
        /// Infix `&`, `|`, `thresh(k; a, b, ...)` and parentheses.
        #[arg(long)]
        policy: PolicyTree,
        #[arg(long, default_value = "xyz")]
        gran: Granularity,
        #[arg(long, default_value = "keys/public.params")]
        public: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decrypt a frame with a user key.
    Decrypt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a training corpus from sparse/dense pairs.
    Prepare {
        /// Lines of `sparse.ply dense.ply tag`, paths relative to the manifest.
        #[arg(long, required_unless_present = "clouds")]
        pairs: Option<PathBuf>,
        /// Full-resolution clouds; the sparse side is their stride half and
        /// the tag is the file stem up to the first `-`.
        #[arg(long, num_args = 1.., conflicts_with = "pairs")]
        clouds: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Add to an existing corpus instead of replacing it.
        #[arg(long)]
        append: bool,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Train a forest on a corpus sample and report held-out error.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated tags to draw training records from; all if absent.
        #[arg(long, value_delimiter = ',')]
        train_tags: Vec<String>,
        #[arg(long, default_value_t = 20_000)]
        n_train: usize,
        /// Held-out records drawn from the remaining corpus.
        #[arg(long, default_value_t = 0)]
        n_test: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        trees: usize,
        #[arg(long, default_value_t = 24)]
        max_depth: usize,
        #[arg(long, default_value_t = 4)]
        min_leaf: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report MAE/RMSE of a model on a corpus sample.
    EvalModel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',')]
        test_tags: Vec<String>,
        /// Capped at the number of matching records.
        #[arg(long, default_value_t = 10_000)]
        n_test: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
    /// Upsample a sparse cloud by 2, 4 or 8.
    Upsample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        stages: u32,
        #[arg(long)]
        out: PathBuf,
        /// Per-stage timing CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Chamfer and Hausdorff distances of clouds against a reference, in mm.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        test: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "mean")]
        variant: ChamferVariant,
    },
    /// Serve encrypted frames over HTTP until interrupted.
    Serve {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = pcsr_stream::DEFAULT_WORKERS)]
        workers: usize,
    },
    /// Measure request latency; `{res}` in the URL runs every ladder level.
    Bench {
        #[arg(long)]
        url: String,
        #[arg(long, default_value_t = 10)]
        clients: u32,
        #[arg(long, default_value_t = 30)]
        fps: u32,
        #[arg(long, default_value_t = 600)]
        duration: u32,
        #[arg(long, default_value_t = 10)]
        concurrency: usize,
        #[arg(long, default_value_t = 0.01)]
        scale: f64,
        #[arg(long, default_value = "keep-alive")]
        connection: ConnectionMode,
        /// Timed in-memory decryptions per level; 0 decrypts once per response.
        #[arg(long, default_value_t = 100)]
        decrypt_samples: usize,
        /// Resolution label for a single URL without `{res}`.
        #[arg(long, default_value = "100")]
        resolution: ResolutionLevel,
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn attrs(list: &str) -> Result<AttributeSet, CliError> {
    AttributeSet::parse_list(list).map_err(|e| CliError::Config(format!("attributes: {e}")))
}

fn print_errors(model: &ForestModel, records: &[TrainingRecord], stage: &'static str) -> Result<(), CliError> {
    let r = evaluate(model, records).stage(stage)?;
    let zero = evaluate(&ForestModel::constant([0.0; 3]), records).stage(stage)?;
    println!("records {}", r.n_samples);
    println!("mae_mm {:.6}", r.mae_mm);
    println!("rmse_mm {:.6}", r.rmse_mm);
    println!("zero_offset_mae_mm {:.6}", zero.mae_mm);
    Ok(())
}

/// Reads `sparse dense tag` lines; `#` starts a comment.
fn corpus_from_pairs(manifest: &Path, k: usize) -> Result<Corpus, CliError> {
    let text = fs::read_to_string(manifest)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut corpus = Corpus::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let [sparse, dense, tag] = line.split_whitespace().collect::<Vec<_>>()[..] else {
            return Err(CliError::Config(format!(
                "{}:{}: expected `sparse.ply dense.ply tag`",
                manifest.display(),
                i + 1
            )));
        };
        let s = read_ply_file(base.join(sparse)).stage("prepare")?;
        let d = read_ply_file(base.join(dense)).stage("prepare")?;
        corpus.append(extract_pairs(&s, &d, k, DEFAULT_M, tag, dense).stage("prepare")?);
    }
    Ok(corpus)
}

fn dispatch(cmd: Command) -> Result<ExitCode, CliError> {
    match cmd {
        Command::Gen {
            kind,
            points,
            noise,
            seed,
            out,
            ascii,
        } => {
            let cloud = generate(&SceneSpec::new(kind, points, noise, seed)).stage("gen")?;
            let enc = if ascii {
                PlyEncoding::ASCII_F64
            } else {
                PlyEncoding::BINARY_F64
            };
            write_ply_file(&out, &cloud, enc).stage("gen")?;
            println!("wrote {} points to {}", cloud.len(), out.display());
        }
        Command::Fetch { url, cache, any_count } => {
            let cache = match cache {
                Some(c) => c,
                None => std::env::var_os("HOME")
                    .map(|h| PathBuf::from(h).join(".pcsr/data"))
                    .ok_or_else(|| CliError::Config("HOME is unset; pass --cache".into()))?,
            };
            let opts = FetchOptions {
                expected_counts: if any_count {
                    Vec::new()
                } else {
                    REAL_DATASET_COUNTS.iter().map(|(t, n)| (t.to_string(), *n)).collect()
                },
                ..FetchOptions::default()
            };
            let files = fetch_real_with(&url, &cache, &opts).stage("fetch")?;
            println!("{} files cached under {}", files.len(), cache.display());
        }
        Command::Downsample { input, levels, out_dir } => {
            let cloud = read_ply_file(&input).stage("downsample")?;
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            fs::create_dir_all(&out_dir)?;
            let ladder = resolution_ladder(&cloud).stage("downsample")?;
            for level in levels {
                let c = &ladder[&level];
                let path = out_dir.join(format!("{stem}_{level}.ply"));
                write_ply_file(&path, c, PlyEncoding::BINARY_F64).stage("downsample")?;
                println!("{level:>5}% {:>9} points  {}", c.len(), path.display());
            }
        }
        Command::Setup {
            attrs: list,
            out_dir,
            seed,
        } => {
            let seed = match seed {
                Some(s) => s.into_bytes(),
                None => {
                    let mut b = vec![0u8; 32];
                    rand::rngs::OsRng.fill_bytes(&mut b);
                    b
                }
            };
            let mut mk = setup(&seed).stage("setup")?;
            let labels = attrs(&list)?;
            mk.publish(labels.iter()).stage("setup")?;
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("master.key"), mk.to_bytes())?;
            fs::write(out_dir.join("public.params"), mk.public_params().to_bytes())?;
            println!("published {} attributes to {}", labels.len(), out_dir.display());
        }
        Command::Keygen {
            master,
            attrs: list,
            out,
        } => {
            let mk = MasterKeys::from_bytes(&read(&master)?).stage("keygen")?;
            let uk = keygen(&mk, &attrs(&list)?).stage("keygen")?;
            fs::write(&out, uk.to_bytes())?;
        }
        Command::Encrypt {
            input,
            policy,
            gran,
            public,
            out,
        } => {
            let cloud = read_ply_file(&input).stage("encrypt")?;
            let pk = PublicParams::from_bytes(&read(&public)?).stage("encrypt")?;
            let ef = encrypt_frame(&cloud, &policy, gran, &pk, &mut rand::rngs::OsRng).stage("encrypt")?;
            let bytes = ef.to_ply_bytes().stage("encrypt")?;
            fs::write(&out, &bytes)?;
            println!("{} points, {} bytes", cloud.len(), bytes.len());
        }
        Command::Decrypt { input, key, out } => {
            let ef = EncryptedFrame::from_ply_bytes(&read(&input)?).stage("decrypt")?;
            let uk = UserKey::from_bytes(&read(&key)?).stage("decrypt")?;
            let cloud = decrypt_frame(&ef, &uk).stage("decrypt")?;
            write_ply_file(&out, &cloud, PlyEncoding::BINARY_F64).stage("decrypt")?;
        }
        Command::Prepare {
            pairs,
            clouds,
            out,
            append,
            k,
        } => {
            let fresh = match pairs {
                Some(manifest) => corpus_from_pairs(&manifest, k)?,
                None => {
                    let clouds = clouds
                        .iter()
                        .map(|p| {
                            let c = read_ply_file(p).stage("prepare")?;
                            Ok((c.source_id().unwrap_or("cloud").to_string(), c))
                        })
                        .collect::<Result<Vec<_>, CliError>>()?;
                    build_corpus(&clouds, k)?
                }
            };
            let mut corpus = if append && out.exists() {
                Corpus::read_file(&out).stage("prepare")?
            } else {
                Corpus::new()
            };
            corpus.append(fresh.iter());
            corpus.write_file(&out).stage("prepare")?;
            println!("{} records in {}", corpus.len(), out.display());
        }
        Command::Train {
            corpus,
            train_tags,
            n_train,
            n_test,
            seed,
            trees,
            max_depth,
            min_leaf,
            out,
        } => {
            let corpus = Corpus::read_file(&corpus).stage("train")?;
            let tags = (!train_tags.is_empty()).then_some(train_tags.as_slice());
            let (sample, held_out) = train_test_split(&corpus, n_train, n_test, tags, None, seed).stage("train")?;
            let cfg = ForestConfig {
                n_trees: trees,
                max_depth,
                min_leaf,
                seed,
                ..ForestConfig::default()
            };
            let model = train(&sample, &cfg).stage("train")?.with_manifest(TrainingManifest {
                corpus_sha256: corpus.digest(),
                sample_seed: seed,
                n_records: sample.len() as u64,
            });
            model.save(&out).stage("train")?;
            println!("trained {trees} trees on {} records", sample.len());
            if !held_out.is_empty() {
                print_errors(&model, &held_out, "train")?;
            }
        }
        Command::EvalModel {
            model,
            corpus,
            test_tags,
            n_test,
            seed,
        } => {
            let model = ForestModel::load(&model).stage("eval-model")?;
            let corpus = Corpus::read_file(&corpus).stage("eval-model")?;
            let tags = (!test_tags.is_empty()).then_some(test_tags.as_slice());
            let n = n_test.min(corpus.indices_with_tags(tags).len());
            let (_, test) = train_test_split(&corpus, 0, n, None, tags, seed).stage("eval-model")?;
            print_errors(&model, &test, "eval-model")?;
        }
        Command::Upsample {
            model,
            input,
            stages,
            out,
            report,
        } => {
            let model = ForestModel::load(&model).stage("upsample")?;
            let sparse = read_ply_file(&input).stage("upsample")?;
            let (dense, rep) = upsample_chain(&model, &sparse, stages).stage("upsample")?;
            write_ply_file(&out, &dense, PlyEncoding::BINARY_F64).stage("upsample")?;
            println!(
                "{} -> {} points in {:.1} ms",
                rep.input_points, rep.output_points, rep.total_ms
            );
            if let Some(path) = report {
                let mut t = Table::new(&["stage", "input_points", "output_points", "inference_ms"]);
                let mut n = rep.input_points;
                for (i, ms) in rep.inference_ms_per_stage.iter().enumerate() {
                    t.push(vec![(i + 1).to_string(), n.to_string(), (2 * n).to_string(), f(*ms)]);
                    n *= 2;
                }
                t.write(&path)?;
            }
        }
        Command::Eval {
            reference,
            test,
            out,
            variant,
        } => {
            let r = read_ply_file(&reference).stage("eval")?;
            let mut t = Table::new(&["file", "chamfer_mm", "hausdorff_mm", "n_ref", "n_test"]);
            for path in &test {
                let c = read_ply_file(path).stage("eval")?;
                let q = similarity(&r, &c, variant).stage("eval")?;
                t.push(vec![
                    path.display().to_string(),
                    f(q.chamfer_mm),
                    f(q.hausdorff_mm),
                    q.n_a.to_string(),
                    q.n_b.to_string(),
                ]);
            }
            print!("{}", t.to_csv());
            if let Some(out) = out {
                t.write(&out)?;
            }
        }
        Command::Serve {
            dir,
            port,
            host,
            workers,
        } => {
            let opts = ServeOptions {
                workers,
                host,
                ..ServeOptions::default()
            };
            let server = serve_with(&dir, port, &opts).stage("serve")?;
            let trigger = server.shutdown_trigger();
            ctrlc::set_handler(move || trigger.trigger())
                .map_err(|e| CliError::Config(format!("cannot install signal handler: {e}")))?;
            println!(
                "serving {} frames on http://{}/frames/",
                server.checksums().len(),
                server.addr()
            );
            server.wait();
            println!("stopped");
        }
        Command::Bench {
            url,
            clients,
            fps,
            duration,
            concurrency,
            scale,
            connection,
            decrypt_samples,
            resolution,
            key,
            out,
        } => {
            let cfg = BenchConfig {
                clients,
                fps,
                duration_s: duration,
                concurrency,
                scale,
                connection,
                decrypt_samples,
            };
            let key = key
                .map(|k| read(&k).and_then(|b| UserKey::from_bytes(&b).stage("bench")))
                .transpose()?;
            let reports = if url.contains("{res}") {
                let ladder: Vec<LadderEntry> = ResolutionLevel::ALL
                    .iter()
                    .map(|&resolution| LadderEntry {
                        resolution,
                        url: url.replace("{res}", resolution.percent_label()),
                    })
                    .collect();
                run_matrix(&ladder, &cfg, key.as_ref()).stage("bench")?
            } else {
                vec![bench(&url, resolution, &cfg, key.as_ref()).stage("bench")?]
            };
            let mut csv = Vec::new();
            write_latency_csv(&mut csv, &reports, &[])?;
            print!("{}", String::from_utf8_lossy(&csv));
            if let Some(out) = out {
                fs::write(out, csv)?;
            }
        }
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            let report = run_experiment(&cfg, &out)?;
            for c in &report.checks {
                println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("results in {} (config {})", out.display(), report.config_hash);
            return Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            });
        }
    }
    Ok(ExitCode::SUCCESS)
}
