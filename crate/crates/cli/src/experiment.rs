//! End-to-end runner: scenes, resolution ladder, encryption, streaming
//! bench, forest training, upsampling and quality metrics, one table per
//! measurement.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pcsr_core::access::{
    decrypt_frame, encrypt_frame, keygen, setup, time_crypto, CryptoError, EncryptedFrame, MasterKeys, UserKey,
};
use pcsr_core::dataset::{extract_pairs, sample_corpus, Corpus, DEFAULT_M};
use pcsr_core::forest::{evaluate, train, ForestModel, TrainingManifest};
use pcsr_core::metrics::{similarity, ChamferVariant};
use pcsr_core::ply::{read_ply_file, write_ply, PlyEncoding};
use pcsr_core::sampling::{downsample_stride, resolution_ladder, ResolutionLevel};
use pcsr_core::scenes::generate;
use pcsr_core::stats::{linear_fit, median};
use pcsr_core::upsample::upsample_chain;
use pcsr_core::PointCloud;
use pcsr_stream::{run_matrix, serve_with, write_latency_csv, LadderEntry, LatencyReport, ServeOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, SceneSource};
use crate::table::{f, Table};
use crate::{version_line, CliError, StageExt};

pub const CSV_FILES: [&str; 5] = [
    "sizes.csv",
    "crypto_times.csv",
    "latency.csv",
    "quality.csv",
    "inference_times.csv",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub checks: Vec<Check>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    seed: String,
    checks: Vec<Check>,
    manifest: Vec<(String, String)>,
}

impl Ctx<'_> {
    fn save(&self, name: &str, mut table: Table) -> Result<(), CliError> {
        table.tag("seed", &self.seed);
        table.tag("config_hash", &self.cfg.hash);
        table.write(&self.out.join(name))?;
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.manifest.push((key.to_string(), value.to_string()));
    }
}

/// Runs every stage and writes the tables plus `manifest.txt` into `out_dir`.
/// The report lists each threshold check; the caller decides the exit code.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut ctx = Ctx {
        cfg,
        out: out_dir,
        seed: cfg.seed.to_string(),
        checks: Vec::new(),
        manifest: Vec::new(),
    };
    ctx.note("version", version_line());
    ctx.note("config_hash", &cfg.hash);
    ctx.note("seed", cfg.seed);

    let (mk, user, denied) = keys(cfg).stage("setup")?;
    fs::create_dir_all(out_dir.join("keys"))?;
    fs::write(out_dir.join("keys/public.params"), mk.public_params().to_bytes())?;
    fs::write(out_dir.join("keys/user.key"), user.to_bytes())?;

    crypto_stage(&mut ctx, &mk, &user, denied.as_ref())?;
    stream_stage(&mut ctx, &mk, &user)?;
    let model = model_stage(&mut ctx)?;
    quality_stage(&mut ctx, &model)?;

    let mut text = String::new();
    for (k, v) in &ctx.manifest {
        let _ = writeln!(text, "{k} = {v}");
    }
    for c in &ctx.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(text, "check {} = {verdict} ({})", c.name, c.detail);
    }
    fs::write(out_dir.join("manifest.txt"), text)?;
    Ok(ExperimentReport {
        out_dir: out_dir.to_path_buf(),
        config_hash: cfg.hash.clone(),
        checks: ctx.checks,
    })
}

fn keys(cfg: &ExperimentConfig) -> Result<(MasterKeys, UserKey, Option<UserKey>), CryptoError> {
    let mut mk = setup(format!("pcsr experiment deployment seed {:020}", cfg.seed).as_bytes())?;
    let mut labels: Vec<String> = cfg.policy.leaves().into_iter().map(str::to_string).collect();
    labels.extend(cfg.attributes.iter().map(str::to_string));
    if let Some(d) = &cfg.denied {
        labels.extend(d.iter().map(str::to_string));
    }
    mk.publish(labels.iter().map(String::as_str))?;
    let user = keygen(&mk, &cfg.attributes)?;
    let denied = cfg.denied.as_ref().map(|d| keygen(&mk, d)).transpose()?;
    Ok((mk, user, denied))
}

/// Loads or generates the clouds of one scene group, named for reports.
pub fn load_clouds(src: &SceneSource) -> Result<Vec<(String, PointCloud)>, CliError> {
    match src {
        SceneSource::Synthetic(specs) => specs
            .iter()
            .map(|s| Ok((s.name(), generate(s).stage("gen")?)))
            .collect(),
        SceneSource::Files(paths) => paths
            .iter()
            .map(|p| {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok((name, read_ply_file(p).stage("load")?))
            })
            .collect(),
    }
}

fn ladder_levels(
    cfg: &ExperimentConfig,
    cloud: &PointCloud,
) -> Result<BTreeMap<ResolutionLevel, PointCloud>, CliError> {
    let mut ladder = resolution_ladder(cloud).stage("downsample")?;
    ladder.retain(|l, _| cfg.levels.contains(l));
    Ok(ladder)
}

fn crypto_stage(ctx: &mut Ctx, mk: &MasterKeys, user: &UserKey, denied: Option<&UserKey>) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let (name, cloud) = load_clouds(&cfg.crypto)?.remove(0);
    let ladder = ladder_levels(cfg, &cloud)?;
    let dir = ctx.out.join("crypto");
    fs::create_dir_all(&dir)?;

    let mut sizes = Table::new(&[
        "resolution",
        "points",
        "plain_bytes",
        "encrypted_bytes",
        "fraction_of_full",
    ]);
    let mut times = Table::new(&[
        "resolution",
        "points",
        "encrypt_ms",
        "decrypt_ms",
        "encrypted_bytes",
        "repeats",
    ]);
    let mut rows = Vec::new();
    for (&level, c) in &ladder {
        let path = dir.join(format!("{name}_{level}.ply"));
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        let mut size = 0;
        for _ in 0..cfg.crypto_repeats {
            let t = time_crypto(c, cfg.granularity, &cfg.policy, mk.public_params(), user, &path).stage("encrypt")?;
            enc.push(t.encrypt_ms);
            dec.push(t.decrypt_ms);
            size = t.encrypted_size_bytes;
        }
        let frame = EncryptedFrame::from_ply_bytes(&fs::read(&path)?).stage("decrypt")?;
        let roundtrip = decrypt_frame(&frame, user).stage("decrypt")?.bit_eq(c);
        ctx.checks.push(Check::new(
            &format!("roundtrip_{level}"),
            roundtrip,
            format!("{} points", c.len()),
        ));
        if let Some(d) = denied {
            let refused = matches!(decrypt_frame(&frame, d), Err(CryptoError::PolicyNotSatisfied));
            ctx.checks.push(Check::new(
                &format!("denied_{level}"),
                refused,
                "unauthorised key refused".into(),
            ));
        }
        let plain = write_ply(c, PlyEncoding::BINARY_F64).stage("encrypt")?.len();
        rows.push((level, c.len(), plain, size, median(&enc), median(&dec)));
    }

    let full_size = rows[0].3 as f64;
    let mut worst = 0.0f64;
    for &(level, n, plain, size, e, d) in &rows {
        let expected = full_size / f64::from(1u32 << level.halvings());
        worst = worst.max((size as f64 / expected - 1.0).abs());
        sizes.push(vec![
            level.to_string(),
            n.to_string(),
            plain.to_string(),
            size.to_string(),
            f(size as f64 / full_size),
        ]);
        times.push(vec![
            level.to_string(),
            n.to_string(),
            f(e),
            f(d),
            size.to_string(),
            cfg.crypto_repeats.to_string(),
        ]);
    }
    let tol = cfg.thresholds.size_tolerance;
    ctx.checks.push(Check::new(
        "size_linearity",
        worst <= tol,
        format!("max deviation {:.4}% (limit {:.2}%)", worst * 100.0, tol * 100.0),
    ));

    let points: Vec<f64> = rows.iter().map(|r| r.1 as f64).collect();
    let dec: Vec<f64> = rows.iter().map(|r| r.5).collect();
    if let Some(fit) = linear_fit(&points, &dec) {
        ctx.checks.push(Check::new(
            "decrypt_linearity",
            fit.r_squared >= cfg.thresholds.decrypt_r2_min,
            format!("R² {:.4}", fit.r_squared),
        ));
    }
    if let Some(last) = rows.iter().find(|r| r.0 == ResolutionLevel::Eighth) {
        let (de, ee) = (last.5 / rows[0].5, last.4 / rows[0].4);
        ctx.checks.push(Check::new(
            "decrypt_eighth_ratio",
            de <= cfg.thresholds.decrypt_eighth_max,
            format!("{de:.3} of full"),
        ));
        ctx.checks.push(Check::new(
            "encrypt_eighth_ratio",
            ee <= cfg.thresholds.encrypt_eighth_max,
            format!("{ee:.3} of full"),
        ));
    }
    ctx.save("sizes.csv", sizes)?;
    ctx.save("crypto_times.csv", times)
}

fn stream_stage(ctx: &mut Ctx, mk: &MasterKeys, user: &UserKey) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let (name, cloud) = load_clouds(&cfg.stream)?.remove(0);
    let ladder = ladder_levels(cfg, &cloud)?;
    let dir = ctx.out.join("frames");
    fs::create_dir_all(&dir)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::new();
    let mut names = Vec::new();
    for (&level, c) in &ladder {
        let ef = encrypt_frame(c, &cfg.policy, cfg.granularity, mk.public_params(), &mut rng).stage("encrypt")?;
        let file = format!("{name}_{level}.ply");
        fs::write(dir.join(&file), ef.to_ply_bytes().stage("encrypt")?)?;
        entries.push((level, c.len(), file.clone()));
        names.push(file);
    }

    let opts = ServeOptions {
        required: names,
        ..ServeOptions::default()
    };
    let server = serve_with(&dir, cfg.port, &opts).stage("serve")?;
    let ladder: Vec<LadderEntry> = entries
        .iter()
        .map(|(resolution, _, file)| LadderEntry {
            resolution: *resolution,
            url: server.frame_url(file),
        })
        .collect();
    let reports = run_matrix(&ladder, &cfg.bench, Some(user)).stage("bench")?;
    let intact = entries
        .iter()
        .zip(&reports)
        .all(|((_, _, file), r)| server.checksums().get(file) == Some(&r.body_sha256));
    drop(server);

    ctx.checks.push(Check::new(
        "served_bytes_intact",
        intact,
        "SHA-256 of served bodies".into(),
    ));
    let points: Vec<f64> = entries.iter().map(|e| e.1 as f64).collect();
    latency_checks(ctx, &points, &reports);
    let mut csv = Vec::new();
    write_latency_csv(
        &mut csv,
        &reports,
        &[("seed", ctx.seed.clone()), ("config_hash", cfg.hash.clone())],
    )?;
    fs::write(ctx.out.join("latency.csv"), csv)?;
    Ok(())
}

fn latency_checks(ctx: &mut Ctx, points: &[f64], reports: &[LatencyReport]) {
    let decreasing = reports.windows(2).all(|w| w[1].mean_ms < w[0].mean_ms);
    let means: Vec<String> = reports.iter().map(|r| format!("{:.3}", r.mean_ms)).collect();
    ctx.checks.push(Check::new(
        "latency_decreasing",
        decreasing,
        format!("network mean ms {}", means.join(" > ")),
    ));
    let totals: Vec<f64> = reports.iter().map(|r| r.total_mean_ms).collect();
    if let Some(fit) = linear_fit(points, &totals) {
        ctx.checks.push(Check::new(
            "latency_linearity",
            fit.r_squared >= ctx.cfg.thresholds.latency_r2_min,
            format!("R² {:.4}", fit.r_squared),
        ));
    }
}

/// Training pairs: each cloud's half-resolution copy against the cloud.
pub fn build_corpus(clouds: &[(String, PointCloud)], k: usize) -> Result<Corpus, CliError> {
    let mut corpus = Corpus::new();
    for (name, cloud) in clouds {
        let tag = name.split('-').next().unwrap_or(name);
        let sparse = downsample_stride(cloud).stage("prepare")?;
        corpus.append(extract_pairs(&sparse, cloud, k, DEFAULT_M, tag, name).stage("prepare")?);
    }
    Ok(corpus)
}

fn model_stage(ctx: &mut Ctx) -> Result<ForestModel, CliError> {
    let cfg = ctx.cfg;
    let corpus = build_corpus(&load_clouds(&cfg.train)?, cfg.k)?;
    corpus.write_file(ctx.out.join("corpus.pcsr")).stage("prepare")?;
    let n = cfg.train_records.min(corpus.len());
    let records = sample_corpus(&corpus, n, cfg.seed).stage("prepare")?;
    let model = train(&records, &cfg.forest)
        .stage("train")?
        .with_manifest(TrainingManifest {
            corpus_sha256: corpus.digest(),
            sample_seed: cfg.seed,
            n_records: n as u64,
        });
    let model_path = ctx.out.join("model.pcfm");
    model.save(&model_path).stage("train")?;

    let test_corpus = build_corpus(&load_clouds(&cfg.test)?, cfg.k)?;
    let test = sample_corpus(
        &test_corpus,
        cfg.test_records.min(test_corpus.len()),
        cfg.seed ^ 0x9e37_79b9,
    )
    .stage("eval-model")?;
    let err = evaluate(&model, &test).stage("eval-model")?;
    let zero = evaluate(&ForestModel::constant([0.0; 3]), &test).stage("eval-model")?;
    let reduction = 1.0 - err.mae_mm / zero.mae_mm;

    ctx.note("corpus_records", corpus.len());
    ctx.note("corpus_sha256", hex::encode(corpus.digest()));
    ctx.note("train_records", n);
    ctx.note("model_sha256", hex::encode(Sha256::digest(fs::read(&model_path)?)));
    ctx.note("forest", format!("{:?}", cfg.forest));
    ctx.note("test_mae_mm", f(err.mae_mm));
    ctx.note("test_rmse_mm", f(err.rmse_mm));
    ctx.note("zero_offset_mae_mm", f(zero.mae_mm));
    ctx.checks.push(Check::new(
        "mae_vs_zero_offset",
        reduction >= cfg.thresholds.mae_reduction_min && err.rmse_mm >= err.mae_mm,
        format!(
            "MAE {:.4} mm vs {:.4} mm ({:.1}% lower)",
            err.mae_mm,
            zero.mae_mm,
            reduction * 100.0
        ),
    ));
    Ok(model)
}

fn quality_stage(ctx: &mut Ctx, model: &ForestModel) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let scales: Vec<u32> = cfg.levels.iter().map(|l| l.halvings()).filter(|&h| h > 0).collect();
    let mut by_scene = Table::new(&[
        "scale",
        "scene",
        "input_points",
        "output_points",
        "sparse_chamfer_mm",
        "chamfer_mm",
        "sparse_hausdorff_mm",
        "hausdorff_mm",
    ]);
    let mut inference = Table::new(&[
        "scale",
        "scene",
        "stage",
        "input_points",
        "output_points",
        "inference_ms",
    ]);
    // scale -> (sums of cd, hd, sparse cd, sparse hd, count)
    let mut sums: BTreeMap<u32, [f64; 5]> = BTreeMap::new();
    let mut improved = true;
    let mut worst = String::new();

    for (name, cloud) in load_clouds(&cfg.test)? {
        let ladder = resolution_ladder(&cloud).stage("downsample")?;
        for &s in &scales {
            let sparse = &ladder[&ResolutionLevel::from_halvings(s).expect("scale within ladder")];
            let (up, rep) = upsample_chain(model, sparse, s).stage("upsample")?;
            let q = similarity(&up, &cloud, ChamferVariant::Mean).stage("eval")?;
            let base = similarity(sparse, &cloud, ChamferVariant::Mean).stage("eval")?;
            if q.chamfer_mm >= base.chamfer_mm {
                improved = false;
                let _ = write!(worst, " {name}@{}x", 1 << s);
            }
            let e = sums.entry(s).or_default();
            for (slot, v) in e
                .iter_mut()
                .zip([q.chamfer_mm, q.hausdorff_mm, base.chamfer_mm, base.hausdorff_mm, 1.0])
            {
                *slot += v;
            }
            by_scene.push(vec![
                format!("{}x", 1 << s),
                name.clone(),
                sparse.len().to_string(),
                up.len().to_string(),
                f(base.chamfer_mm),
                f(q.chamfer_mm),
                f(base.hausdorff_mm),
                f(q.hausdorff_mm),
            ]);
            let mut n_in = sparse.len();
            for (i, ms) in rep.inference_ms_per_stage.iter().enumerate() {
                inference.push(vec![
                    format!("{}x", 1 << s),
                    name.clone(),
                    (i + 1).to_string(),
                    n_in.to_string(),
                    (2 * n_in).to_string(),
                    f(*ms),
                ]);
                n_in *= 2;
            }
        }
    }

    let mut quality = Table::new(&[
        "scale",
        "scenes",
        "sparse_chamfer_mm",
        "chamfer_mm",
        "sparse_hausdorff_mm",
        "hausdorff_mm",
    ]);
    let mut means = Vec::new();
    for (s, [cd, hd, scd, shd, n]) in &sums {
        means.push((cd / n, hd / n));
        quality.push(vec![
            format!("{}x", 1 << s),
            (*n as usize).to_string(),
            f(scd / n),
            f(cd / n),
            f(shd / n),
            f(hd / n),
        ]);
    }
    let monotone = means.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
    let listed: Vec<String> = means.iter().map(|(c, h)| format!("{c:.3}/{h:.3}")).collect();
    if cfg.thresholds.require_sr_improvement {
        ctx.checks.push(Check::new(
            "sr_improves_chamfer",
            improved,
            if improved {
                "every scene and scale".into()
            } else {
                format!("no gain at{worst}")
            },
        ));
    }
    if cfg.thresholds.require_monotone_quality {
        ctx.checks.push(Check::new(
            "quality_monotone",
            monotone,
            format!("mean CD/HD mm by scale {}", listed.join(", ")),
        ));
    }
    ctx.save("quality.csv", quality)?;
    ctx.save("quality_by_scene.csv", by_scene)?;
    ctx.save("inference_times.csv", inference)
}
