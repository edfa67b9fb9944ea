//! The operations behind each subcommand. Output goes to a caller-supplied writer.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use converter_core::gradcheck::{registry, sweep_case, GradReport};
use converter_core::kpm::{gibbs_demo, DEMO_COLUMNS};
use converter_core::model::ConverterParams;
use converter_core::tasks::Dataset;
use converter_core::tensor::matmul;
use converter_core::train::{
    evaluate, train, EvalMetrics, Split, TrainConfig, TrainEvent, TrainOutcome,
};
use converter_core::unitary::{
    dhhp_dense_matrix, dhhp_forward, dhhp_inverse, unitarity_defect, DhhpParams,
};
use converter_core::{ComplexTensor, Rng};

use crate::checkpoint;
use crate::error::{CliError, CliResult};
use crate::exec::Threaded;
use crate::metrics::MetricsCsv;

/// Tolerance of every unitary check.
pub const UNITARY_TOL: f64 = 1e-10;
/// Largest size with the dense oracle in `unitary-check`.
pub const ORACLE_MAX: usize = 64;
/// Largest size timed on the dense path in `bench`.
pub const BENCH_DENSE_MAX: usize = 1024;
/// Doubling-ratio limit for the fast transform.
pub const RATIO_LIMIT: f64 = 2.6;

fn emit(out: &mut dyn Write, line: impl AsRef<str>) -> CliResult<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| CliError::io("<output>", e))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn time_median(reps: usize, mut f: impl FnMut() -> CliResult<()>) -> CliResult<f64> {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedCheck {
    pub seed: u64,
    pub norm_error: f64,
    pub round_trip: f64,
    pub dense: Option<(f64, f64)>,
}

impl SeedCheck {
    pub fn passed(&self) -> bool {
        let dense_ok = self
            .dense
            .is_none_or(|(d, u)| d < UNITARY_TOL && u < UNITARY_TOL);
        self.norm_error <= UNITARY_TOL && self.round_trip < UNITARY_TOL && dense_ok
    }
}

/// Norm preservation, inverse round trip and, for small `n`, agreement with the dense matrix.
pub fn check_transform(n: usize, m: usize, seed: u64, stream: u64) -> CliResult<SeedCheck> {
    let mut rng = Rng::new(seed).fork(stream);
    let p = DhhpParams::random(n, m, &mut rng)?;
    let x = rng.complex_uniform(&[n, 3]);
    let y = dhhp_forward(&p, &x)?;
    let norm = |t: &ComplexTensor| t.data().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let norm_error = (norm(&y) / norm(&x) - 1.0).abs();
    let round_trip = dhhp_inverse(&p, &y)?.max_abs_diff(&x);
    let dense = if n <= ORACLE_MAX {
        let u = dhhp_dense_matrix(&p)?;
        Some((matmul(&u, &x)?.max_abs_diff(&y), unitarity_defect(&u)?))
    } else {
        None
    };
    Ok(SeedCheck {
        seed: stream,
        norm_error,
        round_trip,
        dense,
    })
}

/// Median seconds of `dhhp_forward` on an `n`-vector.
pub fn time_forward(n: usize, reps: usize, seed: u64) -> CliResult<f64> {
    let mut rng = Rng::new(seed);
    let p = DhhpParams::random(n, 1, &mut rng)?;
    let x = rng.complex_uniform(&[n, 1]);
    time_median(reps, || {
        std::hint::black_box(dhhp_forward(&p, &x)?);
        Ok(())
    })
}

pub fn unitary_check(
    n: usize,
    seeds: u64,
    m: usize,
    seed: u64,
    timing: bool,
    out: &mut dyn Write,
) -> CliResult<()> {
    if n == 0 || n > 4096 {
        return Err(CliError::Usage(format!(
            "--n must lie in 1..=4096, got {n}"
        )));
    }
    if m == 0 || !n.is_multiple_of(m) {
        return Err(converter_core::Error::Divisibility { n, m }.into());
    }
    let mut failures = 0;
    for s in 0..seeds {
        let c = check_transform(n, m, seed, s)?;
        let dense = match c.dense {
            Some((d, u)) => format!(" dense {d:.2e} unitary {u:.2e}"),
            None => String::new(),
        };
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        emit(
            out,
            format!(
                "n {n} m {m} seed {s}: norm {:.2e} round-trip {:.2e}{dense} {verdict}",
                c.norm_error, c.round_trip
            ),
        )?;
        failures += !c.passed() as usize;
    }
    if timing {
        let (a, b) = (
            time_forward(1 << 14, 5, seed)?,
            time_forward(1 << 15, 5, seed)?,
        );
        let ratio = b / a;
        let verdict = if ratio < RATIO_LIMIT { "PASS" } else { "FAIL" };
        emit(
            out,
            format!("timing 2^14 -> 2^15 ratio {ratio:.2} {verdict}"),
        )?;
        failures += (ratio >= RATIO_LIMIT) as usize;
    }
    if failures > 0 {
        return Err(CliError::CheckFailed(format!(
            "{failures} unitary check(s) failed"
        )));
    }
    Ok(())
}

/// Worst report per registered operation.
pub fn gradcheck_reports(inject_fault: bool, tol: f64, seed: u64) -> CliResult<Vec<GradReport>> {
    registry(inject_fault)
        .iter()
        .map(|case| Ok(sweep_case(case, 3, tol, seed)?))
        .collect()
}

pub fn gradcheck(inject_fault: bool, tol: f64, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let reports = gradcheck_reports(inject_fault, tol, seed)?;
    let mut failed = Vec::new();
    for r in &reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        emit(
            out,
            format!("{:<24} {:.3e} {verdict}", r.op, r.max_rel_error),
        )?;
        if !r.passed {
            failed.push(r.op.clone());
        }
    }
    if !failed.is_empty() {
        return Err(CliError::CheckFailed(format!(
            "gradient mismatch in: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

pub const DEMO_POINTS: usize = 2001;

/// Writes the sign-step demo CSV and returns the max `|p|` of each kernel column.
pub fn kpm_demo(order: usize, path: &Path, out: &mut dyn Write) -> CliResult<Vec<(String, f64)>> {
    let rows = gibbs_demo(order, DEMO_POINTS)?;
    let mut text = DEMO_COLUMNS.join(",");
    text.push('\n');
    for row in &rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    let mut peaks = Vec::new();
    for (c, name) in DEMO_COLUMNS.iter().enumerate().skip(2) {
        let peak = rows.iter().map(|r| r[c].abs()).fold(0.0, f64::max);
        emit(out, format!("{name:<12} max|p| {peak:.5}"))?;
        peaks.push((name.to_string(), peak));
    }
    emit(
        out,
        format!("wrote {} rows to {}", rows.len(), path.display()),
    )?;
    Ok(peaks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub fast: f64,
    pub dense: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `(n, time(n) / time(n / 2))` for each consecutive doubling.
    pub ratios: Vec<(usize, f64)>,
}

/// Median times of the fast transform and, up to [`BENCH_DENSE_MAX`], of multiplying by the
/// equivalent dense matrix.
pub fn bench(ns: &[usize], reps: usize, seed: u64, out: &mut dyn Write) -> CliResult<BenchReport> {
    if reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    if let Some(bad) = ns.iter().find(|n| !n.is_power_of_two() || **n < 2) {
        return Err(CliError::Usage(format!(
            "sizes must be powers of two >= 2, got {bad}"
        )));
    }
    emit(out, "n,fast_seconds,dense_seconds")?;
    let mut rows = Vec::new();
    for &n in ns {
        let mut rng = Rng::new(seed);
        let p = DhhpParams::random(n, 1, &mut rng)?;
        let x = rng.complex_uniform(&[n, 1]);
        dhhp_forward(&p, &x)?;
        let fast = time_median(reps, || {
            std::hint::black_box(dhhp_forward(&p, &x)?);
            Ok(())
        })?;
        let dense = if n <= BENCH_DENSE_MAX {
            let u = dhhp_forward(&p, &ComplexTensor::identity(n))?;
            Some(time_median(reps, || {
                std::hint::black_box(matmul(&u, &x)?);
                Ok(())
            })?)
        } else {
            None
        };
        let d = dense.map_or(String::from("-"), |d| format!("{d:.6e}"));
        emit(out, format!("{n},{fast:.6e},{d}"))?;
        rows.push(BenchRow { n, fast, dense });
    }
    let ratios: Vec<(usize, f64)> = rows
        .windows(2)
        .filter(|w| w[1].n == 2 * w[0].n)
        .map(|w| (w[1].n, w[1].fast / w[0].fast))
        .collect();
    for (n, r) in &ratios {
        emit(out, format!("doubling to {n}: ratio {r:.3}"))?;
    }
    Ok(BenchReport { rows, ratios })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainPaths {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
    pub config: PathBuf,
}

impl TrainPaths {
    pub fn new(dir: &Path) -> Self {
        TrainPaths {
            dir: dir.to_path_buf(),
            metrics: dir.join("metrics.csv"),
            best: dir.join("best.ckpt"),
            last: dir.join("last.ckpt"),
            config: dir.join("config.txt"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub test: EvalMetrics,
    pub paths: TrainPaths,
}

/// Trains, streaming metric rows to `out` and the CSV, keeping the best-validation checkpoint
/// on disk. With `timing` off the seconds column is zero so reruns are byte-identical.
pub fn run_training(
    cfg: &TrainConfig,
    dir: &Path,
    timing: bool,
    exec: &Threaded,
    out: &mut dyn Write,
) -> CliResult<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let paths = TrainPaths::new(dir);
    fs::write(&paths.config, cfg.canonical()).map_err(|e| CliError::io(&paths.config, e))?;
    for line in cfg.canonical().lines() {
        emit(out, format!("# {line}"))?;
    }
    let splits = cfg.splits()?;
    emit(
        out,
        format!(
            "# data: {} train / {} val / {} test, majority baseline {:.4}",
            splits.train.len(),
            splits.val.len(),
            splits.test.len(),
            splits.val.majority_baseline()
        ),
    )?;
    let mut csv = MetricsCsv::create(&paths.metrics)?;
    emit(out, converter_core::train::EpochMetrics::CSV_HEADER)?;
    let start = Instant::now();
    let clock = move || {
        if timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let outcome = train(
        cfg,
        &splits,
        exec,
        &clock,
        &mut |e: TrainEvent<'_>| -> CliResult<()> {
            match e {
                TrainEvent::Epoch(row) => {
                    csv.row(row)?;
                    emit(out, row.csv_row())
                }
                TrainEvent::Improved { params, .. } => checkpoint::save(&paths.best, cfg, params),
            }
        },
    )?;
    checkpoint::save(&paths.last, cfg, &outcome.params)?;
    let test = evaluate(
        &cfg.model_config(),
        &outcome.best,
        &splits.test,
        cfg.eta,
        exec,
    )?;
    emit(
        out,
        format!(
            "final val accuracy {:.4} (epoch {}), test accuracy {:.4}",
            outcome.best_val.accuracy, outcome.best_epoch, test.accuracy
        ),
    )?;
    Ok(TrainSummary {
        outcome,
        test,
        paths,
    })
}

pub fn parse_split(s: &str) -> CliResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(CliError::Usage(format!(
            "unknown split '{s}' (train, val or test)"
        ))),
    }
}

/// Evaluates a checkpoint on one split of the data described by `data_cfg`, or of its own
/// configuration when none is given.
pub fn run_eval(
    ckpt: &Path,
    data_cfg: Option<TrainConfig>,
    split: Split,
    exec: &Threaded,
    out: &mut dyn Write,
) -> CliResult<EvalMetrics> {
    let (cfg, params) = checkpoint::load(ckpt)?;
    let data_cfg = data_cfg.unwrap_or_else(|| cfg.clone());
    check_compatible(&cfg, &data_cfg).map_err(|message| CliError::Checkpoint {
        path: ckpt.to_path_buf(),
        message,
    })?;
    let splits = data_cfg.splits()?;
    let data: &Dataset = match split {
        Split::Train => &splits.train,
        Split::Val => &splits.val,
        Split::Test => &splits.test,
    };
    let m = evaluate_params(&cfg, &params, data, exec)?;
    emit(
        out,
        format!(
            "{split}: accuracy {:.4} loss {:.6} ce {:.6} ({} samples)",
            m.accuracy,
            m.loss,
            m.ce,
            data.len()
        ),
    )?;
    Ok(m)
}

pub fn evaluate_params(
    cfg: &TrainConfig,
    params: &ConverterParams,
    data: &Dataset,
    exec: &Threaded,
) -> CliResult<EvalMetrics> {
    Ok(evaluate(&cfg.model_config(), params, data, cfg.eta, exec)?)
}

fn check_compatible(model: &TrainConfig, data: &TrainConfig) -> Result<(), String> {
    let pairs = [
        ("task", model.task.to_string(), data.task.to_string()),
        ("vocab", model.vocab.to_string(), data.vocab.to_string()),
        (
            "seq_len",
            model.seq_len.to_string(),
            data.seq_len.to_string(),
        ),
    ];
    for (key, a, b) in pairs {
        if a != b {
            return Err(format!(
                "checkpoint has {key} = {a} but the data config has {key} = {b}"
            ));
        }
    }
    Ok(())
}
