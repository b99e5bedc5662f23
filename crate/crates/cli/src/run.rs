use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;

use dualcp::cpg::{check_separation, class_mean_guidance};
use dualcp::harness::{evaluate, train_sequence};
use dualcp::{
    build_dual_bank, build_vanilla_bank, store, DomainMemory, DualPrototypeBank, GuidanceMatrix,
    SynthSpec,
};

use crate::args::{EvalArgs, PrototypeArgs, SynthArgs, TrainArgs, VerifyArgs};

pub const GIT_DESCRIBE: &str = env!("DUALCP_GIT_DESCRIBE");

/// How a command failed: bad input maps to exit code 2, everything else to 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        match err.downcast_ref::<dualcp::Error>() {
            Some(
                e @ (dualcp::Error::BadConfig(_)
                | dualcp::Error::Infeasible(_)
                | dualcp::Error::BadThreshold(_)),
            ) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(err),
        }
    }
}

impl From<dualcp::Error> for Failure {
    fn from(err: dualcp::Error) -> Self {
        anyhow::Error::from(err).into()
    }
}

type Outcome = Result<(), Failure>;

#[derive(Serialize)]
struct RunManifest<'a, A: Serialize, C: Serialize> {
    command: &'a str,
    version: &'a str,
    git: &'a str,
    args: &'a A,
    config: C,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_manifest<A: Serialize, C: Serialize>(
    out: &Path,
    command: &str,
    args: &A,
    config: C,
) -> anyhow::Result<()> {
    write_json(
        &out.join("run.json"),
        &RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            git: GIT_DESCRIBE,
            args,
            config,
        },
    )
}

fn load_bank(path: &Path) -> anyhow::Result<DualPrototypeBank> {
    DualPrototypeBank::load(path).with_context(|| format!("loading bank {}", path.display()))
}

pub fn synth(a: &SynthArgs) -> Outcome {
    let spec = SynthSpec {
        num_classes: a.classes,
        num_domains: a.domains,
        dim: a.dim,
        per_class: a.per_class,
        test_per_class: a.test_per_class,
        group_plan: a.groups.clone(),
        intra_cosine: a.intra_cosine,
        domain_shift: a.domain_shift,
        class_noise: a.class_noise,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let data = dualcp::generate(&spec)?;
    prepare_out(&a.out)?;
    store::save(&data.train, a.out.join("train.dcp"))?;
    store::save(&data.test, a.out.join("test.dcp"))?;
    data.guidance.save(a.out.join("guidance.dcp"))?;
    write_json(&a.out.join("planned_groups.json"), &data.planned.groups())?;
    write_manifest(&a.out, "synth", a, &spec)?;
    println!(
        "wrote {} train and {} test rows ({} classes, {} domains, d = {}) to {}",
        data.train.len(),
        data.test.len(),
        spec.num_classes,
        spec.num_domains,
        spec.dim,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GroupSummary<'a> {
    mode: &'a str,
    threshold: f64,
    num_classes: usize,
    num_groups: usize,
    groups: Vec<Vec<&'a str>>,
}

pub fn prototypes(a: &PrototypeArgs) -> Outcome {
    let guidance = match (&a.guidance, &a.embeddings) {
        (Some(path), _) => GuidanceMatrix::load(path)
            .with_context(|| format!("loading guidance {}", path.display()))?,
        (None, Some(path)) => {
            let set = store::load(path)
                .with_context(|| format!("loading embeddings {}", path.display()))?;
            class_mean_guidance(&set, 0)?
        }
        (None, None) => {
            return Err(Failure::Usage(
                "one of --guidance or --embeddings is required".into(),
            ))
        }
    };
    let bank = if a.vanilla {
        build_vanilla_bank(&guidance)?
    } else {
        build_dual_bank(&guidance, a.p)?
    };
    prepare_out(&a.out)?;
    bank.save(a.out.join("bank.dcpb"))?;
    let names = &bank.class_names;
    let summary = GroupSummary {
        mode: if a.vanilla { "vanilla" } else { "dual" },
        threshold: bank.threshold,
        num_classes: bank.num_classes(),
        num_groups: bank.num_groups(),
        groups: bank
            .grouping
            .groups()
            .iter()
            .map(|g| g.iter().map(|&c| names[c].as_str()).collect())
            .collect(),
    };
    write_json(&a.out.join("groups.json"), &summary)?;
    write_manifest(&a.out, "prototypes", a, ())?;
    let separation = check_separation(&bank);
    println!(
        "{} classes in {} groups (p = {}); prototype separation check: {}",
        bank.num_classes(),
        bank.num_groups(),
        bank.threshold,
        if separation.holds { "ok" } else { "VIOLATED" }
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainingSummary {
    domains: Vec<String>,
    final_losses: Vec<f64>,
    /// `reads[t][s]`: feature reads of domain `s` while training domain `t`.
    reads: Vec<Vec<u64>>,
}

pub fn train(a: &TrainArgs) -> Outcome {
    let cfg = a.hyper.config();
    cfg.validate()?;
    let set = store::load(&a.embeddings)
        .with_context(|| format!("loading embeddings {}", a.embeddings.display()))?;
    let bank = load_bank(&a.bank)?;
    let run = train_sequence(&set, &bank, &cfg)?;
    prepare_out(&a.out)?;
    run.memory.save(&cfg, a.out.join("model.dcpk"))?;
    write_json(
        &a.out.join("training.json"),
        &TrainingSummary {
            domains: set.manifest().domain_names.clone(),
            final_losses: run.final_losses.clone(),
            reads: run.reads.clone(),
        },
    )?;
    write_manifest(&a.out, "train", a, &cfg)?;
    for (name, loss) in set.manifest().domain_names.iter().zip(&run.final_losses) {
        println!("{name}: final loss {loss:.6}");
    }
    Ok(())
}

#[derive(Serialize)]
struct Timing {
    seconds: f64,
    rows: usize,
    threads: usize,
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let set = store::load(&a.embeddings)
        .with_context(|| format!("loading embeddings {}", a.embeddings.display()))?;
    let bank = load_bank(&a.bank)?;
    let (memory, cfg) = DomainMemory::load(&a.model)
        .with_context(|| format!("loading model {}", a.model.display()))?;
    let start = Instant::now();
    let report = evaluate(&set, &memory, &bank)?;
    let seconds = start.elapsed().as_secs_f64();
    prepare_out(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    write_json(
        &a.out.join("timing.json"),
        &Timing {
            seconds,
            rows: report.rows.len(),
            threads: rayon_threads(),
        },
    )?;
    if a.csv {
        let mut csv = String::from("true_label,predicted_label,true_domain,identified_domain\n");
        for r in &report.rows {
            writeln!(
                csv,
                "{},{},{},{}",
                r.true_label, r.predicted, r.true_domain, r.identified_domain
            )
            .map_err(|e| anyhow!(e))?;
        }
        let path = a.out.join("predictions.csv");
        fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    write_manifest(&a.out, "eval", a, &cfg)?;
    println!("average accuracy {:.4}", report.average_accuracy);
    if let Some(f) = report.forgetting {
        println!("forgetting {f:.4}");
    }
    println!(
        "domain identification {:.4}",
        report.domain_id_accuracy_overall
    );
    Ok(())
}

fn rayon_threads() -> usize {
    dualcp::harness::current_threads()
}

pub fn verify(a: &VerifyArgs) -> Outcome {
    let results = dualcp::verify::run_all(a.seed)?;
    for r in &results {
        println!(
            "{}  {:<16} {:>4} cases  worst {:.3e} (tolerance {:.1e})  {:.2}s",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.cases,
            r.worst,
            r.tolerance,
            r.seconds
        );
    }
    if let Some(out) = &a.out {
        prepare_out(out)?;
        write_json(&out.join("verify.json"), &results)?;
        write_manifest(out, "verify", a, ())?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Runtime(anyhow!("{failed} suite(s) failed")));
    }
    Ok(())
}
