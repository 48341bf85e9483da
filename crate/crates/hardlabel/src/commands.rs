//! The `gen`, `attack` and `verify` commands. The binary is a thin wrapper so
//! tests can drive the same code paths in-process.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hardlabel_core::extraction::attack::{pmr_samples, search_candidates, AttackReport};
use hardlabel_core::extraction::{count_max_patterns, run_attack, AttackConfig, PlanMode};
use hardlabel_core::verify::{align, sampled_deviation, verify, VerifyConfig};
use hardlabel_core::{Architecture, ModelOracle, ModelParameters, Oracle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::budget::AttackBudget;
use crate::error::CliError;
use crate::exec::RayonExecutor;
use crate::format::{parse_arch, read_model, sha256_file, to_json, write_model};
use crate::manifest::RunManifest;
use crate::report::{AttackRecord, BudgetRecord, ConfigRecord, CountsRecord, EquivalenceRecord};
use crate::transcript::{read_transcript, write_transcript};

#[derive(Debug, Parser)]
#[command(
    name = "hardlabel",
    version,
    about = "Hard-label extraction of scalar-output ReLU networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random untrained victim model.
    Gen(GenArgs),
    /// Extract a model from a victim through its hard-label oracle.
    Attack(AttackArgs),
    /// Compare an extracted model against the victim it came from.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Layer widths, e.g. 512-2-1.
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Lower end of the uniform parameter distribution.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub low: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub high: f64,
    /// Search precision assumed by the printed budget forecast.
    #[arg(long, default_value_t = 1e-12)]
    pub precision: f64,
    #[arg(long, default_value_t = 8)]
    pub points_multiplier: usize,
    #[arg(long, default_value_t = 1.0)]
    pub domain_radius: f64,
    #[arg(long, default_value = "victim.json")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AttackArgs {
    /// Victim model file; only its hard labels are used by the attack.
    pub victim: PathBuf,
    /// Architecture known to the attacker; defaults to the victim file's.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bisection precision ε.
    #[arg(long, default_value_t = 1e-12)]
    pub precision: f64,
    /// Boundary points collected per possible pattern (c_n).
    #[arg(long, default_value_t = 8)]
    pub points_multiplier: usize,
    /// Per-coordinate tuple comparison threshold, relative to the tuple magnitude.
    #[arg(long)]
    pub phi: Option<f64>,
    /// Coordinates allowed to disagree when merging tuples.
    #[arg(long)]
    pub d_phi: Option<usize>,
    /// Fresh oracle samples used to rank candidates.
    #[arg(long, default_value_t = 1000)]
    pub pmr_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub domain_radius: f64,
    #[arg(long, default_value_t = 1 << 20)]
    pub max_candidates: u64,
    /// Stop at the first candidate that matches every ranking sample.
    #[arg(long)]
    pub early_exit: bool,
    /// Let downstream layers take any non-empty pattern in the slot plan.
    #[arg(long)]
    pub relaxed: bool,
    /// Worker threads; 0 uses every logical CPU.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Extracted model path; report, transcript and manifest are written beside it.
    #[arg(long, default_value = "extracted.json")]
    pub output: PathBuf,
    /// Reuse the tuples of an earlier transcript instead of collecting new ones.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Samples for the post-attack comparison against the victim (0 skips it).
    #[arg(long, default_value_t = 1_000_000)]
    pub verify_samples: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    pub victim: PathBuf,
    pub extracted: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    pub pmr_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub domain_radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attack report to take the query count and precision from.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Where to write the equivalence record.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// `base.json` → `base.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Attack(a) => cmd_attack(&a, out).map(|_| ()),
        Command::Verify(a) => cmd_verify(&a, out).map(|_| ()),
    }
}

fn budget_for(arch: &Architecture, c_n: usize, eps: f64, radius: f64) -> AttackBudget {
    let tuples =
        count_max_patterns(arch).map_or(usize::MAX, |h| h.min(usize::MAX as u128) as usize);
    AttackBudget::new(arch, c_n, eps, radius, tuples)
}

pub fn generate(arch: Architecture, seed: u64, low: f64, high: f64) -> ModelParameters {
    ModelParameters::random(arch, &mut ChaCha8Rng::seed_from_u64(seed), low, high)
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let arch = parse_arch(&a.arch)?;
    if !(a.low < a.high) || !a.low.is_finite() || !a.high.is_finite() {
        return Err(hardlabel_core::Error::InvalidConfig("need finite low < high").into());
    }
    let m = generate(arch.clone(), a.seed, a.low, a.high);
    write_model(&a.output, &m)?;
    let b = budget_for(&arch, a.points_multiplier, a.precision, a.domain_radius);
    let w = CliError::io("stdout");
    writeln!(
        out,
        "wrote {} ({} parameters, n = {} neurons, k = {} hidden layers)",
        a.output.display(),
        arch.parameter_count(),
        arch.neurons(),
        arch.depth()
    )
    .map_err(w)?;
    writeln!(
        out,
        "forecast at eps {:e}: c_eps = {}, ~2^{:.2} queries, ~2^{:.2} candidates (N = {})",
        a.precision,
        b.c_eps,
        b.predicted_queries.log2(),
        b.predicted_candidates.log2(),
        b.tuples_assumed
    )
    .map_err(CliError::io("stdout"))?;
    Ok(())
}

pub fn attack_config(arch: &Architecture, a: &AttackArgs) -> Result<AttackConfig, CliError> {
    let mut cfg = AttackConfig::new(arch, a.precision, a.domain_radius, a.seed);
    cfg.points_multiplier = a.points_multiplier;
    if let Some(phi) = a.phi {
        cfg.dedup.compare.phi = phi;
        cfg.filter.compare.phi = phi;
    }
    if let Some(d) = a.d_phi {
        cfg.dedup.compare.d_phi = d;
        cfg.filter.compare.d_phi = d;
    }
    cfg.filter.pmr_samples = a.pmr_samples;
    cfg.max_candidates = a.max_candidates;
    cfg.early_exit = a.early_exit;
    cfg.plan_mode = if a.relaxed {
        PlanMode::Relaxed
    } else {
        PlanMode::Strict
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Extracted model (if any) and the written report.
pub struct AttackResult {
    pub extracted: Option<ModelParameters>,
    pub record: AttackRecord,
}

pub fn cmd_attack(a: &AttackArgs, out: &mut dyn Write) -> Result<AttackResult, CliError> {
    let started = Instant::now();
    let victim = read_model(&a.victim)?;
    let arch = match &a.arch {
        Some(s) => {
            let arch = parse_arch(s)?;
            if arch != *victim.arch() {
                return Err(CliError::ArchMismatch {
                    expected: arch.dims().to_vec(),
                    found: victim.arch().dims().to_vec(),
                });
            }
            arch
        }
        None => victim.arch().clone(),
    };
    let cfg = attack_config(&arch, a)?;
    let exec = RayonExecutor::new(a.threads)?;
    let oracle = ModelOracle::new(&victim);

    let (best, report, tuples) = match &a.resume {
        Some(path) => {
            let file = File::open(path).map_err(CliError::io(path))?;
            let tuples = read_transcript(BufReader::new(file))?;
            let mut report = AttackReport {
                tuples: tuples.len(),
                ..AttackReport::default()
            };
            report.tuples_valid = tuples.iter().filter(|t| t.occurrence_count > 1).count();
            let samples = pmr_samples(&oracle, &[], &cfg, &exec)?;
            report.pmr_samples = samples.len();
            let (best, _) = search_candidates(&arch, &tuples, &samples, &cfg, &exec, &mut report)?;
            report.query_count = oracle.query_count();
            (best, report, tuples)
        }
        None => {
            let o = run_attack(&oracle, &arch, &cfg, &exec)?;
            (o.best, o.report, o.tuples)
        }
    };
    let queries = report.query_count;

    let transcript_path = sibling(&a.output, "transcript.jsonl");
    let report_path = sibling(&a.output, "report.json");
    let manifest_path = sibling(&a.output, "manifest.json");
    let mut manifest = RunManifest::new(
        "attack",
        a.seed,
        serde_json::from_str(&to_json(&config_record(a, &cfg, &exec))?)?,
        Some(sha256_file(&a.victim)?),
    );
    {
        let f = File::create(&transcript_path).map_err(CliError::io(&transcript_path))?;
        let mut w = BufWriter::new(f);
        write_transcript(&mut w, &tuples)?;
        w.flush().map_err(CliError::io(&transcript_path))?;
    }
    manifest.add_output(&transcript_path)?;

    let extracted = best.map(|b| b.params);
    let equivalence = match &extracted {
        Some(m) if a.verify_samples > 0 => Some(equivalence_record(
            &victim,
            m,
            a.verify_samples,
            a.domain_radius,
            a.seed,
            Some(queries),
        )?),
        _ => None,
    };
    if let Some(m) = &extracted {
        write_model(&a.output, m)?;
        manifest.add_output(&a.output)?;
    }
    let budget = budget_for(&arch, cfg.points_multiplier, a.precision, a.domain_radius);
    let record = AttackRecord {
        architecture: arch.dims().to_vec(),
        config: config_record(a, &cfg, &exec),
        counts: CountsRecord::from(&report),
        budget: BudgetRecord::new(&budget, queries),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        equivalence,
        outcome: if extracted.is_some() {
            "success"
        } else {
            "no-survivor"
        }
        .to_string(),
    };
    std::fs::write(&report_path, to_json(&record)? + "\n").map_err(CliError::io(&report_path))?;
    manifest.finish();
    manifest.write(&manifest_path)?;

    print_attack_summary(out, &record).map_err(CliError::io("stdout"))?;
    if extracted.is_none() {
        return Err(CliError::NoSurvivor);
    }
    Ok(AttackResult { extracted, record })
}

fn config_record(a: &AttackArgs, cfg: &AttackConfig, exec: &RayonExecutor) -> ConfigRecord {
    ConfigRecord {
        precision: a.precision,
        domain_radius: a.domain_radius,
        seed: a.seed,
        points_multiplier: cfg.points_multiplier,
        phi: cfg.dedup.compare.phi,
        d_phi: cfg.dedup.compare.d_phi,
        pmr_samples: cfg.filter.pmr_samples,
        max_candidates: cfg.max_candidates,
        early_exit: cfg.early_exit,
        relaxed_plan: cfg.plan_mode == PlanMode::Relaxed,
        recovery_step: cfg.recovery.step,
        probe_stride: cfg.recovery.probe_stride,
        threads: exec.threads(),
    }
}

fn print_attack_summary(out: &mut dyn Write, r: &AttackRecord) -> std::io::Result<()> {
    let c = &r.counts;
    writeln!(out, "outcome: {}", r.outcome)?;
    writeln!(
        out,
        "queries 2^{:.2} ({} , {:.2}x forecast), points {}/{}, tuples {} ({} seen twice or more)",
        (c.query_count as f64).log2(),
        c.query_count,
        r.budget.queries_over_prediction,
        c.points_collected,
        c.points_requested,
        c.tuples,
        c.tuples_valid
    )?;
    writeln!(
        out,
        "candidates: space {}, enumerated {}, degenerate {}, signature pass {} (unfiltered {}), sign pass {}",
        c.candidate_space, c.candidates_enumerated, c.degenerate, c.passed_signature, c.unfiltered_signature, c.passed_sign
    )?;
    if let Some(p) = c.best_pmr {
        writeln!(
            out,
            "best ranking PMR {p} (candidate #{})",
            c.best_index.unwrap_or(0)
        )?;
    }
    if let Some(e) = &r.equivalence {
        writeln!(out, "{}", e.table_row(Some(r.config.precision)))?;
        writeln!(
            out,
            "scale c = {:.17e} (closed form {:.17e}), spread {:.3e}, PMR {} over {} samples",
            e.scale_c, e.scale_closed_form, e.scale_spread, e.pmr, e.pmr_samples
        )?;
    }
    writeln!(out, "wall time {:.2}s", r.wall_time_seconds)
}

pub fn equivalence_record(
    victim: &ModelParameters,
    extracted: &ModelParameters,
    pmr_samples: usize,
    radius: f64,
    seed: u64,
    queries: Option<u64>,
) -> Result<EquivalenceRecord, CliError> {
    let cfg = VerifyConfig {
        domain_radius: radius,
        pmr_samples,
        scale_samples: 10_000,
        seed,
    };
    let mut rep = verify(victim, extracted, &cfg)?;
    rep.query_count = queries;
    let dev = sampled_deviation(victim, extracted, rep.scale.c, 100_000, radius, seed ^ 2)?;
    Ok(EquivalenceRecord::new(&rep, pmr_samples, Some(dev)))
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<EquivalenceRecord, CliError> {
    let victim = read_model(&a.victim)?;
    let extracted = read_model(&a.extracted)?;
    if victim.arch() != extracted.arch() {
        return Err(CliError::ArchMismatch {
            expected: victim.arch().dims().to_vec(),
            found: extracted.arch().dims().to_vec(),
        });
    }
    let prior = match &a.report {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
            let r: AttackRecord =
                serde_json::from_str(&text).map_err(|source| CliError::Parse {
                    path: p.clone(),
                    source,
                })?;
            Some(r)
        }
        None => None,
    };
    let queries = prior.as_ref().map(|r| r.counts.query_count);
    let rec = equivalence_record(
        &victim,
        &extracted,
        a.pmr_samples,
        a.domain_radius,
        a.seed,
        queries,
    )?;
    let al = align(&victim, &extracted)?;
    let io = CliError::io("stdout");
    writeln!(out, "eps_search | PMR | queries | (eps,0) bound | max|theta - theta^|")
        .and_then(|_| writeln!(out, "{}", rec.table_row(prior.as_ref().map(|r| r.config.precision))))
        .and_then(|_| {
            writeln!(
                out,
                "scale c = {:.17e} (closed form {:.17e}), spread {:.3e}, sampled max deviation {:.3e}{}",
                rec.scale_c,
                rec.scale_closed_form,
                rec.scale_spread,
                rec.sampled_deviation.unwrap_or(f64::NAN),
                if al.ambiguous { ", alignment ambiguous" } else { "" }
            )
        })
        .map_err(io)?;
    if let Some(p) = &a.output {
        std::fs::write(p, to_json(&rec)? + "\n").map_err(CliError::io(p))?;
    }
    Ok(rec)
}
