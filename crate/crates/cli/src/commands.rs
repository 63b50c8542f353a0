//! Subcommand behavior: resolve flags, call into the library, write
//! reports and manifests, and keep everything replayable.
//!
//! Reproducibility contract: a manifest records the fully resolved
//! configuration, and [`cmd_rerun`] turns it back into a command line and
//! dispatches it through the exact same code path as a fresh invocation.
//! All randomness is seeded (`--seed`, default 0), so model files and
//! verdict columns come out bit-identical; only wall-clock columns and
//! the manifest timestamps differ between replays.
//!
//! Epsilon semantics: every length-like flag (`--epsilon`, `--pgd-step`,
//! `--ia-step`, `--ia-eps0`) is given on the raw `[0,1]` input scale and
//! rescaled internally through the dataset's normalization record, so
//! budgets stay comparable across datasets.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Parser;

use vrnn_core::attack::{self, AttackConfig};
use vrnn_core::data_io::{self, Dataset, Normalization};
use vrnn_core::model::{self, Network};
use vrnn_core::numerics::{derive_seed, Rng};
use vrnn_core::train::{self, EpochReport, TrainConfig};
use vrnn_core::verify::{self, RobustnessSpec};
use vrnn_core::Error as CoreError;

use crate::args::{
    AttackArg, AttackArgs, Cli, Command, GenDataArgs, RerunArgs, SchemeArg, TrainArgs, VerifyArgs,
};
use crate::manifest::{unix_now, Manifest};
use crate::{dataspec, usage, CliError};

/// Execute one parsed subcommand.
pub fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Attack(a) => cmd_attack(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Rerun(a) => cmd_rerun(&a),
    }
}

// ---------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------

/// `path` with `suffix` appended to its final component.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Re-attach the file path to bare I/O errors so "No such file or
/// directory" names its file.
pub(crate) fn annotate_io(e: CoreError, path: &Path) -> CliError {
    match e {
        CoreError::Io(io) => {
            let msg = format!("{}: {io}", path.display());
            CliError::Core(CoreError::Io(std::io::Error::new(io.kind(), msg)))
        }
        other => CliError::Core(other),
    }
}

fn load_model(path: &Path) -> Result<Network, CliError> {
    model::load(path).map_err(|e| annotate_io(e, path))
}

/// Convert a raw-scale length (budget or step size) to the model's input
/// scale. Errors when per-feature normalization makes a scalar radius
/// ambiguous, and on non-finite or negative values.
fn to_internal_scale(norm: &Normalization, value: f32, what: &str) -> Result<f32, CliError> {
    if !(value.is_finite() && value >= 0.0) {
        return Err(usage(format!("{what} must be finite and >= 0, got {value}")));
    }
    let r = norm.radius(value);
    let r0 = r[0];
    if r.iter().any(|v| *v != r0) {
        return Err(usage(format!(
            "{what}: per-feature normalization scales features differently; \
             a scalar raw-scale length is ambiguous here"
        )));
    }
    Ok(r0)
}

/// Resolve the dataset and run the checks every model-consuming command
/// needs.
fn checked_dataset(spec: &str, net: Option<&Network>) -> Result<Dataset, CliError> {
    let ds = dataspec::resolve(spec)?;
    if ds.is_empty() {
        return Err(usage(format!("dataset '{spec}' is empty")));
    }
    if let Some(net) = net {
        if net.input_dim() != ds.dim() {
            return Err(usage(format!(
                "model expects {} input features but dataset '{spec}' provides {}",
                net.input_dim(),
                ds.dim()
            )));
        }
        if ds.class_count() > net.output_dim() {
            return Err(usage(format!(
                "dataset '{spec}' has labels up to {} but the model has only {} outputs",
                ds.class_count() - 1,
                net.output_dim()
            )));
        }
    }
    Ok(ds)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| annotate_io(CoreError::Io(e), path))
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

/// Comma-separated hidden widths; the empty string means a linear model.
fn parse_arch(s: &str) -> Result<Vec<usize>, CliError> {
    let t = s.trim();
    if t.is_empty() {
        return Ok(Vec::new());
    }
    t.split(',')
        .map(|p| {
            let p = p.trim();
            let w: usize = p
                .parse()
                .map_err(|_| usage(format!("bad --arch entry '{p}': expected an integer width")))?;
            if w == 0 {
                return Err(usage("hidden layer widths must be >= 1"));
            }
            Ok(w)
        })
        .collect()
}

fn render_arch(hidden: &[usize]) -> String {
    hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
}

fn write_epoch_csv(reports: &[EpochReport], path: &Path) -> Result<(), CliError> {
    let mut out =
        String::from("epoch,regular_loss,robust_loss,sampled_accuracy,alpha,eps,lr,mean_batch_time_s\n");
    let opt = |v: Option<f32>| v.map_or_else(|| "na".to_string(), |x| x.to_string());
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.regular_loss,
            opt(r.robust_loss),
            r.sampled_accuracy,
            opt(r.alpha),
            r.eps,
            r.lr,
            r.batch_time_s,
        ));
    }
    write_file(path, &out)
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    if a.scheme != SchemeArg::Mixtrain {
        for (flag, given) in [
            ("--k", a.k.is_some()),
            ("--alpha0", a.alpha0.is_some()),
            ("--acc-target", a.acc_target.is_some()),
        ] {
            if given {
                return Err(usage(format!(
                    "{flag} only applies to --scheme mixtrain (got --scheme {})",
                    a.scheme.token()
                )));
            }
        }
    }
    let ds = checked_dataset(&a.data, None)?;
    let classes = ds.class_count();
    if classes < 2 {
        return Err(usage("dataset needs at least two classes to train a classifier"));
    }
    let hidden = parse_arch(&a.arch)?;
    let eps_internal = to_internal_scale(&ds.norm, a.epsilon, "--epsilon")?;

    let mut cfg = TrainConfig::new(a.scheme.to_scheme(), a.epochs, a.batch_size, eps_internal, a.seed);
    cfg.lr = a.lr;
    cfg.warmup_epochs = a.warmup_epochs;
    cfg.optimizer = a.optimizer.to_kind();
    if a.scheme == SchemeArg::Mixtrain {
        cfg.k = a.k.unwrap_or(1);
        if let Some(v) = a.alpha0 {
            cfg.alpha0 = v;
        }
        if let Some(v) = a.acc_target {
            cfg.acc0 = v;
        }
    }

    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(ds.dim());
    dims.extend_from_slice(&hidden);
    dims.push(classes);
    let net = Network::kaiming(&dims, &mut Rng::seed(a.seed))?;

    let epoch_csv = a.epoch_csv.clone().unwrap_or_else(|| suffixed(&a.out, ".epochs.csv"));
    let manifest_path = a.manifest_out.clone().unwrap_or_else(|| suffixed(&a.out, ".manifest"));

    let mut man = Manifest::new();
    man.push("command", "train");
    man.push("version", env!("CARGO_PKG_VERSION"));
    man.push("scheme", a.scheme.token());
    man.push("data", &a.data);
    man.push("arch", render_arch(&hidden));
    man.push("epochs", a.epochs);
    man.push("batch_size", a.batch_size);
    man.push("optimizer", a.optimizer.token());
    man.push("lr", a.lr);
    man.push("epsilon", a.epsilon);
    man.push("warmup_epochs", a.warmup_epochs);
    if a.scheme == SchemeArg::Mixtrain {
        man.push("k", cfg.k);
        man.push("alpha0", cfg.alpha0);
        man.push("acc_target", cfg.acc0);
    }
    man.push("seed", a.seed);
    man.push("out", a.out.display());
    man.push("epoch_csv", epoch_csv.display());
    man.push("started_unix", unix_now());

    match train::train(net, &ds, &cfg) {
        Ok(run) => {
            model::save(&run.net, &a.out).map_err(|e| annotate_io(e, &a.out))?;
            write_epoch_csv(&run.reports, &epoch_csv)?;
            if let Some(kp) = run.k_prime {
                man.push("k_prime", kp);
            }
            man.push("status", "ok");
            man.push("finished_unix", unix_now());
            man.store(&manifest_path).map_err(|e| annotate_io(CoreError::Io(e), &manifest_path))?;
            match run.reports.last() {
                Some(last) => println!(
                    "trained {} model for {} epochs: final sampled accuracy {:.2}%",
                    a.scheme.token(),
                    run.reports.len(),
                    100.0 * last.sampled_accuracy
                ),
                None => println!("saved freshly initialized model (0 epochs)"),
            }
            for note in &run.notes {
                println!("note: {note}");
            }
            println!("model: {}", a.out.display());
            Ok(())
        }
        Err(e @ CoreError::Diverged { .. }) => {
            // The run still gets its manifest so the divergence is on
            // record and replayable.
            man.push("status", "diverged");
            man.push("finished_unix", unix_now());
            man.store(&manifest_path).map_err(|err| annotate_io(CoreError::Io(err), &manifest_path))?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------

fn cmd_attack(a: &AttackArgs) -> Result<(), CliError> {
    let net = load_model(&a.model)?;
    let ds = checked_dataset(&a.data, Some(&net))?;
    let eps_internal = to_internal_scale(&ds.norm, a.epsilon, "--epsilon")?;
    let (dlo, dhi) = ds.norm.domain();

    let manifest_path = a.manifest_out.clone().unwrap_or_else(|| suffixed(&a.report, ".manifest"));
    let mut man = Manifest::new();
    man.push("command", "attack");
    man.push("version", env!("CARGO_PKG_VERSION"));
    man.push("model", a.model.display());
    man.push("data", &a.data);
    man.push("attack", a.attack.token());
    man.push("epsilon", a.epsilon);

    // Resolve the algorithm parameters on the raw scale (that is what the
    // manifest records), then convert lengths to the model's input scale.
    let cfg: Option<AttackConfig> = if eps_internal == 0.0 {
        None
    } else {
        Some(match a.attack {
            AttackArg::Fgsm => AttackConfig::fgsm(eps_internal)?,
            AttackArg::Pgd => {
                let steps = a.pgd_steps.unwrap_or(40);
                let step_raw = a.pgd_step.unwrap_or(a.epsilon / 8.0);
                man.push("pgd_steps", steps);
                man.push("pgd_step", step_raw);
                man.push("restarts", a.restarts);
                AttackConfig::pgd(
                    eps_internal,
                    steps,
                    to_internal_scale(&ds.norm, step_raw, "--pgd-step")?,
                    a.restarts,
                )?
            }
            AttackArg::Interval => {
                let finisher_steps = a.pgd_steps.unwrap_or(40);
                let finisher_step_raw = a.pgd_step.unwrap_or(a.epsilon / 10.0);
                let iters = a.ia_iters.unwrap_or(20);
                let step_raw = a.ia_step.unwrap_or(a.epsilon / 4.0);
                let eps0_raw = a.ia_eps0.unwrap_or(a.epsilon / 16.0);
                let growth = a.ia_growth.unwrap_or(2.0);
                man.push("pgd_steps", finisher_steps);
                man.push("pgd_step", finisher_step_raw);
                man.push("ia_iters", iters);
                man.push("ia_step", step_raw);
                man.push("ia_eps0", eps0_raw);
                man.push("ia_growth", growth);
                let mut c = AttackConfig::interval(eps_internal)?;
                c.pgd_steps = finisher_steps;
                c.pgd_step = to_internal_scale(&ds.norm, finisher_step_raw, "--pgd-step")?;
                c.interval_iters = iters;
                c.interval_step = to_internal_scale(&ds.norm, step_raw, "--ia-step")?;
                c.interval_eps0 = to_internal_scale(&ds.norm, eps0_raw, "--ia-eps0")?;
                c.interval_growth = growth;
                c.validate()?;
                c
            }
        })
    };
    man.push("seed", a.seed);
    man.push("report", a.report.display());
    man.push("started_unix", unix_now());

    // Sequential by design: per-sample seeds make the CSV byte-stable and
    // the command cheap enough not to need threads.
    let mut rows = String::from("index,success,loss,iters\n");
    let mut hits = 0usize;
    for (i, s) in ds.samples.iter().enumerate() {
        let (success, loss, iters) = match &cfg {
            Some(c) => {
                let mut rng = Rng::seed(derive_seed(a.seed, i as u64));
                let o = attack::run_attack(&net, s.x.as_slice(), s.y, c, &dlo, &dhi, &mut rng)?;
                (o.success, o.loss, o.iterations)
            }
            // A zero-radius ball is the clean point itself.
            None => {
                let logits = model::forward(&net, s.x.as_slice())?;
                let success = model::argmax(&logits) != s.y;
                (success, model::cross_entropy(&logits, s.y), 0)
            }
        };
        hits += usize::from(success);
        rows.push_str(&format!("{},{},{},{}\n", i, u8::from(success), loss, iters));
    }
    let rate = hits as f32 / ds.len() as f32;
    write_file(&a.report, &rows)?;

    man.push("violations", hits);
    man.push("samples", ds.len());
    man.push("rate", rate);
    man.push("status", "ok");
    man.push("finished_unix", unix_now());
    man.store(&manifest_path).map_err(|e| annotate_io(CoreError::Io(e), &manifest_path))?;

    println!("RATE={:.2}", 100.0 * rate);
    println!("report: {}", a.report.display());
    Ok(())
}

// ---------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------

fn cmd_verify(a: &VerifyArgs) -> Result<(), CliError> {
    let net = load_model(&a.model)?;
    let ds = checked_dataset(&a.data, Some(&net))?;
    let eps_internal = to_internal_scale(&ds.norm, a.epsilon, "--epsilon")?;
    let (dlo, dhi) = ds.norm.domain();
    let spec = RobustnessSpec {
        eps: eps_internal,
        domain_lo: dlo,
        domain_hi: dhi,
        max_depth: a.max_depth,
        timeout: Duration::from_millis(a.timeout_ms),
        workers: a.threads,
    };
    spec.validate()?;

    let manifest_path = a.manifest_out.clone().unwrap_or_else(|| suffixed(&a.report, ".manifest"));
    let mut man = Manifest::new();
    man.push("command", "verify");
    man.push("version", env!("CARGO_PKG_VERSION"));
    man.push("model", a.model.display());
    man.push("data", &a.data);
    man.push("epsilon", a.epsilon);
    man.push("threads", a.threads);
    man.push("max_depth", a.max_depth);
    man.push("timeout_ms", a.timeout_ms);
    man.push("no_era", a.no_era);
    man.push("seed", a.seed);
    man.push("report", a.report.display());
    man.push("started_unix", unix_now());

    let report = if a.no_era {
        verify::parallel_verify(&net, &ds.samples, &spec)?
    } else {
        verify::metrics(&net, &ds.samples, &spec, None, a.seed)?.1
    };

    let mut csv = Vec::new();
    verify::write_report_csv(&report, &mut csv)?;
    std::fs::write(&a.report, &csv).map_err(|e| annotate_io(CoreError::Io(e), &a.report))?;

    let summary = verify::summary_line(&report);
    man.push("summary", &summary);
    man.push("total_nodes", report.inputs.iter().map(|r| r.nodes).sum::<usize>());
    man.push("status", "ok");
    man.push("finished_unix", unix_now());
    man.store(&manifest_path).map_err(|e| annotate_io(CoreError::Io(e), &manifest_path))?;

    println!("{summary}");
    println!("report: {}", a.report.display());
    Ok(())
}

// ---------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------

fn cmd_gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let ds = dataspec::resolve(&a.data)?;
    let manifest_path = a.manifest_out.clone().unwrap_or_else(|| suffixed(&a.out, ".manifest"));
    let started = unix_now();
    data_io::write_csv(&ds, &a.out).map_err(|e| annotate_io(e, &a.out))?;

    let mut man = Manifest::new();
    man.push("command", "gen-data");
    man.push("version", env!("CARGO_PKG_VERSION"));
    man.push("data", &a.data);
    man.push("out", a.out.display());
    man.push("samples", ds.len());
    man.push("features", ds.dim());
    man.push("classes", ds.class_count());
    man.push("started_unix", started);
    man.push("status", "ok");
    man.push("finished_unix", unix_now());
    man.store(&manifest_path).map_err(|e| annotate_io(CoreError::Io(e), &manifest_path))?;

    println!("wrote {} samples ({} features) to {}", ds.len(), ds.dim(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// rerun
// ---------------------------------------------------------------------

/// Manifest keys that map straight back to command-line flags, per
/// command. Result keys (`status`, `summary`, timestamps, …) are not
/// listed and therefore ignored during reconstruction.
const TRAIN_KEYS: &[(&str, &str)] = &[
    ("scheme", "--scheme"),
    ("data", "--data"),
    ("arch", "--arch"),
    ("epochs", "--epochs"),
    ("batch_size", "--batch-size"),
    ("optimizer", "--optimizer"),
    ("lr", "--lr"),
    ("epsilon", "--epsilon"),
    ("warmup_epochs", "--warmup-epochs"),
    ("k", "--k"),
    ("alpha0", "--alpha0"),
    ("acc_target", "--acc-target"),
    ("seed", "--seed"),
    ("out", "--out"),
    ("epoch_csv", "--epoch-csv"),
];

const ATTACK_KEYS: &[(&str, &str)] = &[
    ("model", "--model"),
    ("data", "--data"),
    ("attack", "--attack"),
    ("epsilon", "--epsilon"),
    ("pgd_steps", "--pgd-steps"),
    ("pgd_step", "--pgd-step"),
    ("restarts", "--restarts"),
    ("ia_iters", "--ia-iters"),
    ("ia_step", "--ia-step"),
    ("ia_eps0", "--ia-eps0"),
    ("ia_growth", "--ia-growth"),
    ("seed", "--seed"),
    ("report", "--report"),
];

const VERIFY_KEYS: &[(&str, &str)] = &[
    ("model", "--model"),
    ("data", "--data"),
    ("epsilon", "--epsilon"),
    ("threads", "--threads"),
    ("max_depth", "--max-depth"),
    ("timeout_ms", "--timeout-ms"),
    ("no_era", "--no-era"),
    ("seed", "--seed"),
    ("report", "--report"),
];

const GENDATA_KEYS: &[(&str, &str)] = &[("data", "--data"), ("out", "--out")];

/// Rebuild the argv a manifest describes. Pure so it can be tested
/// without touching the filesystem.
fn build_argv(man: &Manifest) -> Result<Vec<String>, CliError> {
    let command = man
        .get("command")
        .ok_or_else(|| usage("manifest has no 'command' key"))?;
    let table = match command {
        "train" => TRAIN_KEYS,
        "attack" => ATTACK_KEYS,
        "verify" => VERIFY_KEYS,
        "gen-data" => GENDATA_KEYS,
        other => return Err(usage(format!("manifest names unknown command '{other}'"))),
    };
    let mut argv: Vec<String> = vec!["vrnn".into(), command.into()];
    for (key, flag) in table {
        if let Some(v) = man.get(key) {
            if *key == "no_era" {
                // Boolean switch: present in argv only when set.
                if v == "true" {
                    argv.push(flag.to_string());
                }
            } else {
                argv.push(flag.to_string());
                argv.push(v.to_string());
            }
        }
    }
    Ok(argv)
}

fn cmd_rerun(a: &RerunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.manifest)
        .map_err(|e| annotate_io(CoreError::Io(e), &a.manifest))?;
    let man = Manifest::parse(&text)
        .map_err(|e| usage(format!("malformed manifest {}: {e}", a.manifest.display())))?;
    let argv = build_argv(&man)?;
    let cli = Cli::try_parse_from(&argv).map_err(|e| {
        usage(format!(
            "manifest {} does not reconstruct a valid command line: {e}",
            a.manifest.display()
        ))
    })?;
    let mut cmd = cli.cmd;
    apply_overrides(&mut cmd, a);
    dispatch(cmd)
}

/// Redirect the replay's outputs where the override flags ask; overrides
/// that do not apply to the replayed command are ignored.
fn apply_overrides(cmd: &mut Command, o: &RerunArgs) {
    match cmd {
        Command::Train(t) => {
            if let Some(p) = &o.out {
                t.out = p.clone();
            }
            if let Some(p) = &o.epoch_csv {
                t.epoch_csv = Some(p.clone());
            }
            if let Some(p) = &o.manifest_out {
                t.manifest_out = Some(p.clone());
            }
        }
        Command::Attack(x) => {
            if let Some(p) = &o.report {
                x.report = p.clone();
            }
            if let Some(p) = &o.manifest_out {
                x.manifest_out = Some(p.clone());
            }
        }
        Command::Verify(v) => {
            if let Some(p) = &o.report {
                v.report = p.clone();
            }
            if let Some(p) = &o.manifest_out {
                v.manifest_out = Some(p.clone());
            }
        }
        Command::GenData(g) => {
            if let Some(p) = &o.out {
                g.out = p.clone();
            }
            if let Some(p) = &o.manifest_out {
                g.manifest_out = Some(p.clone());
            }
        }
        // `build_argv` never produces a rerun command.
        Command::Rerun(_) => {}
    }
}
