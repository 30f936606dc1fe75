mod config;
mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stencilseer::datagen::{export_sample_csv, generate_dataset, read_dataset, write_dataset, Dataset};
use stencilseer::experiments::{
    ablate, probe_missing, probe_scaling, repeat_ablation, write_pgm, AblationAxis,
    AblationResult, Perturbation, ProbeKind,
};
use stencilseer::model::{build_model, parse_weights, train, weights_to_text, Model};
use stencilseer::verify::{
    activation_report, analytic_stencil, compose_stack, effective_stencil,
    similarity_up_to_transpose, Stencil,
};
use stencilseer::Family;

use config::{RunConfig, Settings};

/// Largest accepted relative deviation of the scaling probe.
const LINEARITY_TOL: f64 = 1e-4;
/// Flagged rows must sit this close to the perturbed row.
const FLAG_RADIUS: usize = 2;

#[derive(Parser)]
#[command(name = "stencilseer", version, about = "Learn and inspect PDE stencils")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file.
    Gen(Common),
    /// Train a model and write its weights and per-epoch report.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file; regenerated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare trained kernels with the analytic stencil.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Depth or width ablation on elliptic data.
    Ablate {
        axis: Axis,
        #[command(flatten)]
        common: Common,
        /// Repeat over three fixed seeds.
        #[arg(long)]
        repeat: bool,
    },
    /// Scaling or missing-data probe of a trained model.
    Probe {
        kind: ProbeArg,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1000.0)]
        factor: f64,
        /// Offset added to the middle row; defaults to 10 alpha.
        #[arg(long)]
        amplitude: Option<f64>,
        /// Zero the middle row instead of offsetting it.
        #[arg(long)]
        zeroing: bool,
    },
    /// Write every activation map of one sample as PGM and CSV.
    ExportMaps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Index into the validation split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Depth,
    Width,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeArg {
    Scale,
    Missing,
}

#[derive(Args)]
struct Common {
    /// Config file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-validate the manifest of an existing run directory and exit.
    #[arg(long)]
    check: bool,
    /// Run directory, same as out_dir.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long = "W")]
    w: Option<String>,
    #[arg(long = "H")]
    h: Option<String>,
    #[arg(long = "n_samples")]
    n_samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    depth: Option<String>,
    #[arg(long)]
    widths: Option<String>,
    #[arg(long)]
    coupling: Option<String>,
    #[arg(long = "lambda_zs")]
    lambda_zs: Option<String>,
    #[arg(long = "lambda_rec")]
    lambda_rec: Option<String>,
    #[arg(long)]
    decoder: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long = "steps_per_epoch")]
    steps_per_epoch: Option<String>,
    #[arg(long = "stop_threshold")]
    stop_threshold: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    cfl: Option<String>,
    #[arg(long = "out_dir")]
    out_dir: Option<String>,
}

impl Common {
    fn settings(&self) -> Result<Settings, Failure> {
        let mut s = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                Settings::parse(&text).map_err(Failure::Usage)?
            }
            None => Settings::default(),
        };
        let mut flags = Settings::default();
        for (k, v) in [
            ("family", &self.family),
            ("W", &self.w),
            ("H", &self.h),
            ("n_samples", &self.n_samples),
            ("seed", &self.seed),
            ("depth", &self.depth),
            ("widths", &self.widths),
            ("coupling", &self.coupling),
            ("lambda_zs", &self.lambda_zs),
            ("lambda_rec", &self.lambda_rec),
            ("decoder", &self.decoder),
            ("epochs", &self.epochs),
            ("steps_per_epoch", &self.steps_per_epoch),
            ("stop_threshold", &self.stop_threshold),
            ("alpha", &self.alpha),
            ("cfl", &self.cfl),
            ("out_dir", &self.out_dir),
            ("out_dir", &self.out),
        ] {
            if let Some(v) = v {
                flags.set(k, v).map_err(Failure::Usage)?;
            }
        }
        s.merge(&flags);
        Ok(s)
    }
}

enum Failure {
    /// Bad arguments or config; exit 1.
    Usage(String),
    /// Anything that went wrong while running, including failed checks; exit 2.
    Runtime(String),
}

impl From<stencilseer::Error> for Failure {
    fn from(e: stencilseer::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Files written by the current command. Everything except the resolved
/// config is removed again if the command fails.
struct Run {
    cfg: RunConfig,
    written: Vec<String>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
        self.track(name);
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))
    }

    fn track(&mut self, name: &str) {
        if !self.written.iter().any(|n| n == name) {
            self.written.push(name.to_string());
        }
    }

    fn discard(&self) {
        for name in self.written.iter().filter(|n| *n != "resolved_config.txt") {
            let _ = fs::remove_file(self.path(name));
        }
    }

    fn dataset(&self, data: Option<&Path>) -> Result<Dataset, Failure> {
        let ds = match data {
            Some(p) => read_dataset(p)?,
            None => generate_dataset(&self.cfg.gen_config())?,
        };
        if ds.family != self.cfg.family {
            return Err(Failure::Usage(format!(
                "dataset is {}, config says {}",
                ds.family, self.cfg.family
            )));
        }
        Ok(ds)
    }

    fn model(&self, weights: Option<&Path>) -> Result<Model, Failure> {
        let p = weights.map_or_else(|| self.path("weights.txt"), Path::to_path_buf);
        let text = fs::read_to_string(&p)
            .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
        let model = parse_weights(&text)?;
        if model.config.family != self.cfg.family {
            return Err(Failure::Usage(format!(
                "weights are for {}, config says {}",
                model.config.family, self.cfg.family
            )));
        }
        Ok(model)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("STENCILSEER_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Gen(c) => c,
        Command::Train { common, .. }
        | Command::Verify { common, .. }
        | Command::Ablate { common, .. }
        | Command::Probe { common, .. }
        | Command::ExportMaps { common, .. } => common,
    }
}

fn run(cmd: &Command) -> Result<(), Failure> {
    let opts = common(cmd);
    let cfg = opts.settings()?.resolve().map_err(Failure::Usage)?;
    if opts.check {
        return check(&cfg.out_dir);
    }
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", cfg.out_dir.display())))?;
    let mut run = Run {
        written: Vec::new(),
        cfg,
    };
    let text = run.cfg.to_text();
    run.write("resolved_config.txt", text)?;
    let outcome = execute(cmd, &mut run);
    // Failed checks keep their complete artifacts; only errors discard them.
    let finished = match &outcome {
        Ok(()) => true,
        Err(Failure::Runtime(m)) => m.starts_with("check failed"),
        Err(Failure::Usage(_)) => false,
    };
    if finished {
        manifest::update(&run.cfg.out_dir, &run.written)
            .map_err(|e| Failure::Runtime(format!("manifest: {e}")))?;
    } else {
        run.discard();
    }
    outcome
}

fn check(dir: &Path) -> Result<(), Failure> {
    let bad = manifest::verify(dir).map_err(|e| Failure::Runtime(format!("manifest: {e}")))?;
    if bad.is_empty() {
        println!("manifest ok: {}", dir.display());
        Ok(())
    } else {
        for b in &bad {
            println!("mismatch: {b}");
        }
        Err(Failure::Runtime(format!("{} manifest entries do not verify", bad.len())))
    }
}

fn execute(cmd: &Command, run: &mut Run) -> Result<(), Failure> {
    match cmd {
        Command::Gen(_) => {
            let ds = run.dataset(None)?;
            let name = "dataset.bin";
            run.track(name);
            write_dataset(&ds, run.path(name))?;
            println!("wrote {} samples to {}", ds.len(), run.path(name).display());
            Ok(())
        }
        Command::Train { data, .. } => cmd_train(run, data.as_deref()),
        Command::Verify { weights, data, .. } => {
            cmd_verify(run, weights.as_deref(), data.as_deref())
        }
        Command::Ablate { axis, repeat, .. } => cmd_ablate(run, *axis, *repeat),
        Command::Probe {
            kind,
            weights,
            factor,
            amplitude,
            zeroing,
            ..
        } => match kind {
            ProbeArg::Scale => cmd_probe_scale(run, weights.as_deref(), *factor),
            ProbeArg::Missing => {
                let p = if *zeroing {
                    Perturbation::Zeroing
                } else {
                    Perturbation::Additive(amplitude.unwrap_or(10.0 * run.cfg.alpha))
                };
                cmd_probe_missing(run, weights.as_deref(), p)
            }
        },
        Command::ExportMaps {
            weights,
            data,
            sample,
            ..
        } => cmd_export(run, weights.as_deref(), data.as_deref(), *sample),
    }
}

fn cmd_train(run: &mut Run, data: Option<&Path>) -> Result<(), Failure> {
    let ds = run.dataset(data)?;
    let mut model = build_model(&run.cfg.model_config(), run.cfg.seed)?;
    let report = train(&mut model, &ds, &run.cfg.train_config())?;
    run.write("weights.txt", weights_to_text(&model))?;
    run.write("train_report.csv", report.to_csv())?;
    println!(
        "epochs {} val_mse {:e} stop {:?}",
        report.epochs_run(),
        report.final_val_mse(),
        report.stop_reason
    );
    Ok(())
}

fn similarity_line(model: &Model, cfl: f64) -> Result<Option<(Stencil, f64)>, Failure> {
    let Ok(analytic) = analytic_stencil(model.config.family, cfl) else {
        return Ok(None);
    };
    let single = model.encoder.kernels().all(|k| k.cin() == 1)
        && model.encoder.layers.iter().all(|l| l.len() == 1);
    if !single {
        return Ok(None);
    }
    let composed = compose_stack(&model.encoder)?;
    let sim = similarity_up_to_transpose(&composed, &analytic.stencil).unwrap_or(0.0);
    Ok(Some((composed, sim)))
}

fn cmd_verify(run: &mut Run, weights: Option<&Path>, data: Option<&Path>) -> Result<(), Failure> {
    let model = run.model(weights)?;
    let ds = run.dataset(data)?;
    if let Some((composed, sim)) = similarity_line(&model, run.cfg.cfl)? {
        run.write("stencil.txt", composed.to_text())?;
        run.write("similarity.txt", format!("similarity {sim:.6}\n"))?;
        println!("similarity {sim:.6}");
    } else {
        let last = model.encoder.layers.last().map_or(0, Vec::len);
        for i in 0..model.config.in_channels() {
            for k in 0..last {
                let s = effective_stencil(&model.encoder, i, k)?;
                run.write(&format!("stencil_in{i}_out{k}.txt"), s.to_text())?;
            }
        }
        println!("no analytic stencil to compare against; effective stencils written");
    }
    let sample = ds
        .val_samples()
        .next()
        .ok_or_else(|| Failure::Usage("validation split is empty".into()))?;
    let report = activation_report(&model, sample)?;
    run.write("activation.csv", report.to_csv())?;
    println!("activation_error {:e}", report.activation_error());
    Ok(())
}

fn print_checks(result: &AblationResult) -> bool {
    let mut ok = true;
    for c in result.checks() {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
        ok &= c.passed;
    }
    ok
}

fn cmd_ablate(run: &mut Run, axis: Axis, repeat: bool) -> Result<(), Failure> {
    if run.cfg.family != Family::Elliptic {
        return Err(Failure::Usage("ablations need --family elliptic".into()));
    }
    let axis = match axis {
        Axis::Depth => AblationAxis::Depth,
        Axis::Width => AblationAxis::Width,
    };
    let ds = run.dataset(None)?;
    let gen = run.cfg.gen_config();
    let tc = run.cfg.train_config();
    let settings = [1, 2, 3];
    let results = if repeat {
        repeat_ablation(axis, &ds, &gen, &settings, &tc)?
    } else {
        vec![ablate(axis, &ds, &gen, &settings, &tc, run.cfg.seed)?]
    };
    let mut ok = true;
    for r in &results {
        let name = if repeat {
            format!("ablation_{axis}_seed{}.csv", r.seed)
        } else {
            format!("ablation_{axis}.csv")
        };
        run.write(&name, r.to_csv())?;
        print!("{}", r.to_csv());
        ok &= print_checks(r);
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime("check failed: ablation claims not reproduced".into()))
    }
}

fn cmd_probe_scale(run: &mut Run, weights: Option<&Path>, factor: f64) -> Result<(), Failure> {
    let model = run.model(weights)?;
    if !(factor.is_finite() && factor != 0.0) {
        return Err(Failure::Usage(format!("factor must be finite and nonzero, got {factor}")));
    }
    // The scaled input lands at the training amplitude.
    let mut gen = run.cfg.gen_config();
    gen.alpha /= factor.abs();
    let ds = generate_dataset(&gen)?;
    let sample = ds.val_samples().next().expect("non-empty validation split");
    let result = probe_scaling(&model, sample, factor)?;
    run.write("probe_scale.csv", result.to_csv())?;
    run.track("probe_scale.pgm");
    write_pgm(&result.map, 0, &run.path("probe_scale.pgm"))?;
    let err = result.linearity_error();
    for (l, r) in result.ratios.iter().enumerate() {
        println!("layer {} ratio {r:.6}", l + 1);
    }
    if err <= LINEARITY_TOL {
        println!("PASS linearity error {err:e}");
        Ok(())
    } else {
        Err(Failure::Runtime(format!("check failed: linearity error {err:e}")))
    }
}

fn cmd_probe_missing(run: &mut Run, weights: Option<&Path>, p: Perturbation) -> Result<(), Failure> {
    let model = run.model(weights)?;
    let ds = run.dataset(None)?;
    let sample = ds.val_samples().next().expect("non-empty validation split");
    let result = probe_missing(&model, sample, p)?;
    run.write("probe_missing.csv", result.to_csv())?;
    run.track("probe_missing.pgm");
    write_pgm(&result.map, 0, &run.path("probe_missing.pgm"))?;
    let ProbeKind::Missing { row, .. } = result.kind else {
        unreachable!("missing-data probe")
    };
    println!("flagged rows {:?} (perturbed row {row})", result.flagged);
    let near = result.flagged.iter().all(|&r| r.abs_diff(row) <= FLAG_RADIUS);
    if !result.flagged.is_empty() && near {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "check failed: flagged rows {:?} not within {FLAG_RADIUS} of {row}",
            result.flagged
        )))
    }
}

fn map_csv(map: &stencilseer::Tensor3, ch: usize) -> String {
    let (rows, cols, _) = map.dims();
    let mut s = String::new();
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| format!("{:e}", map.get(r, c, ch))).collect();
        writeln!(s, "{}", line.join(",")).expect("write to String");
    }
    s
}

fn cmd_export(
    run: &mut Run,
    weights: Option<&Path>,
    data: Option<&Path>,
    index: usize,
) -> Result<(), Failure> {
    let model = run.model(weights)?;
    let ds = run.dataset(data)?;
    let sample = ds
        .val_samples()
        .nth(index)
        .ok_or_else(|| Failure::Usage(format!("no validation sample {index}")))?;
    for p in export_sample_csv(sample, &run.cfg.out_dir, "sample")? {
        let name = p.file_name().expect("file name").to_string_lossy().into_owned();
        run.track(&name);
    }
    let enc = model.encode(&sample.image)?;
    for (l, m) in enc.maps.iter().enumerate() {
        for k in 0..m.channels() {
            let stem = format!("map_l{}_k{k}", l + 1);
            run.track(&format!("{stem}.pgm"));
            write_pgm(m, k, &run.path(&format!("{stem}.pgm")))?;
            run.write(&format!("{stem}.csv"), map_csv(m, k))?;
        }
    }
    println!("exported {} layers", enc.maps.len());
    Ok(())
}
