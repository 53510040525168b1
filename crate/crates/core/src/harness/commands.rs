//! One function per CLI command. Each reads its inputs from the run
//! directory, checks the upstream ids they were built against, and writes
//! one artifact (or one set of evaluation tables) plus a log.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::{
    check_link, read_clips, AdaptersBody, Artifact, GateBody, GeneralistArtifact, HardSetBody, RunDir,
};
use super::config::RunConfig;
use super::pipeline::{self, EvalSet, Split};
use crate::adapters::AdapterEnsemble;
use crate::error::{Error, Result};
use crate::expand::{summarize, pdms_by_clip, EvalSummary};
use crate::metrics::{forget_stats, read_report, report_to_bytes, ForgetStats, ReportRow};
use crate::policy::Generalist;
use crate::world::Clip;

pub const TRAIN_CLIPS: &str = "train_clips.jsonl";
pub const TEST_CLIPS: &str = "test_clips.jsonl";
pub const GENERALIST: &str = "generalist.json";
pub const HARD_SET: &str = "hard_set.json";
pub const ADAPTERS: &str = "adapters.json";
pub const GATE: &str = "gate.json";
pub const EVAL_GENERALIST: &str = "eval_generalist.csv";
pub const EVAL_GATED: &str = "eval_gated.csv";
pub const EVAL_HARD_GENERALIST: &str = "eval_hard_generalist.csv";
pub const EVAL_HARD_SPECIALIST: &str = "eval_hard_specialist.csv";
pub const REPORT: &str = "report.json";
pub const ABLATION: &str = "ablation.csv";

const KIND_GENERALIST: &str = "generalist";
const KIND_HARD_SET: &str = "hard_set";
const KIND_ADAPTERS: &str = "adapters";
const KIND_GATE: &str = "gate";

fn load_clips(run: &RunDir, name: &str) -> Result<Vec<Clip>> {
    read_clips(&run.path(name))
}

fn load_generalist(run: &RunDir) -> Result<GeneralistArtifact> {
    run.load(GENERALIST, KIND_GENERALIST)
}

fn load_hard_set(run: &RunDir, generalist: &GeneralistArtifact) -> Result<Artifact<HardSetBody>> {
    let hard: Artifact<HardSetBody> = run.load(HARD_SET, KIND_HARD_SET)?;
    check_link("hard_set.generalist_id", &hard.body.generalist_id, &generalist.id)?;
    Ok(hard)
}

fn load_adapters(
    run: &RunDir,
    generalist: &GeneralistArtifact,
    hard: &Artifact<HardSetBody>,
) -> Result<Artifact<AdaptersBody>> {
    let a: Artifact<AdaptersBody> = run.load(ADAPTERS, KIND_ADAPTERS)?;
    check_link("adapters.base_id", &a.body.base_id, &generalist.id)?;
    check_link("adapters.hard_set_id", &a.body.hard_set_id, &hard.id)?;
    a.body.ensemble.validate(&generalist.body.network)?;
    Ok(a)
}

fn load_gate(
    run: &RunDir,
    hard: &Artifact<HardSetBody>,
    adapters: &Artifact<AdaptersBody>,
) -> Result<Artifact<GateBody>> {
    let g: Artifact<GateBody> = run.load(GATE, KIND_GATE)?;
    check_link("gate.hard_set_id", &g.body.hard_set_id, &hard.id)?;
    check_link("gate.ensemble_id", &g.body.ensemble_id, &adapters.id)?;
    Ok(g)
}

/// Every upstream artifact of evaluation, chain-checked.
struct Chain {
    generalist: GeneralistArtifact,
    hard: Artifact<HardSetBody>,
    adapters: Artifact<AdaptersBody>,
    gate: Artifact<GateBody>,
}

impl Chain {
    fn load(run: &RunDir) -> Result<Self> {
        let generalist = load_generalist(run)?;
        let hard = load_hard_set(run, &generalist)?;
        let adapters = load_adapters(run, &generalist, &hard)?;
        let gate = load_gate(run, &hard, &adapters)?;
        Ok(Chain {
            generalist,
            hard,
            adapters,
            gate,
        })
    }

    fn g(&self) -> &Generalist {
        &self.generalist.body
    }

    fn ensemble(&self) -> &AdapterEnsemble {
        &self.adapters.body.ensemble
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataLog {
    pub train: BTreeMap<String, usize>,
    pub test: BTreeMap<String, usize>,
}

pub fn cmd_gen_data(config: &RunConfig, out: &Path) -> Result<GenDataLog> {
    let mut run = RunDir::open(out, config)?;
    let train = pipeline::generate_clips(config, Split::Train)?;
    let test = pipeline::generate_clips(config, Split::Test)?;
    run.write(TRAIN_CLIPS, &super::artifacts::clips_to_bytes(&train)?)?;
    run.write(TEST_CLIPS, &super::artifacts::clips_to_bytes(&test)?)?;
    let log = GenDataLog {
        train: pipeline::kind_counts(&train),
        test: pipeline::kind_counts(&test),
    };
    run.manifest.kind_counts.insert("train".into(), log.train.clone());
    run.manifest.kind_counts.insert("test".into(), log.test.clone());
    run.write_json("gen_data_log.json", &log)?;
    Ok(log)
}

pub fn cmd_pretrain(config: &RunConfig, out: &Path) -> Result<String> {
    let mut run = RunDir::open(out, config)?;
    let train = load_clips(&run, TRAIN_CLIPS)?;
    let (generalist, log) = pipeline::train_generalist(config, &train)?;
    let a = Artifact::new(KIND_GENERALIST, generalist)?;
    run.write_artifact(GENERALIST, &a)?;
    run.write_json("pretrain_log.json", &log)?;
    Ok(a.id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocateLog {
    pub hard_cases: usize,
    pub threshold: f64,
    pub rl_clips: usize,
    pub hard_kinds: BTreeMap<String, usize>,
}

pub fn cmd_allocate(config: &RunConfig, out: &Path) -> Result<AllocateLog> {
    let mut run = RunDir::open(out, config)?;
    let generalist = load_generalist(&run)?;
    let train = load_clips(&run, TRAIN_CLIPS)?;
    let prepared = pipeline::prepare(config, &generalist.body.vocabulary, &train)?;
    let alloc = pipeline::allocate(config, &generalist.body, &prepared)?;
    let ids = alloc.hard.ids();
    let hard_clips: Vec<Clip> = train.iter().filter(|c| ids.contains(&c.id)).cloned().collect();
    let rl_clips: BTreeSet<&str> = alloc.rl.groups.iter().flat_map(|g| g.clip_ids()).collect();
    let log = AllocateLog {
        hard_cases: alloc.hard.len(),
        threshold: alloc.hard.threshold,
        rl_clips: rl_clips.len(),
        hard_kinds: pipeline::kind_counts(&hard_clips),
    };
    let body = HardSetBody {
        generalist_id: generalist.id.clone(),
        hard_set: alloc.hard,
        rl_set: alloc.rl,
        scores: alloc.scores,
    };
    run.write_artifact(HARD_SET, &Artifact::new(KIND_HARD_SET, body)?)?;
    run.write_json("allocate_log.json", &log)?;
    Ok(log)
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn cmd_refine(config: &RunConfig, out: &Path) -> Result<String> {
    let mut run = RunDir::open(out, config)?;
    let generalist = load_generalist(&run)?;
    let hard = load_hard_set(&run, &generalist)?;
    let train = load_clips(&run, TRAIN_CLIPS)?;
    let prepared = pipeline::prepare(config, &generalist.body.vocabulary, &train)?;
    let data = pipeline::refine_data(&generalist.body, &prepared, &hard.body.rl_set)?;
    let (ensemble, log) = pipeline::train_specialists(config, &config.refine_config(), &generalist.body, &data)?;
    let body = AdaptersBody {
        base_id: generalist.id.clone(),
        hard_set_id: hard.id.clone(),
        ensemble,
    };
    let a = Artifact::new(KIND_ADAPTERS, body)?;
    run.write_artifact(ADAPTERS, &a)?;
    run.write("refine_log.jsonl", &jsonl(&log)?)?;
    Ok(a.id)
}

fn hard_train_clips(run: &RunDir, hard: &Artifact<HardSetBody>) -> Result<Vec<Clip>> {
    let ids = hard.body.hard_set.ids();
    let clips: Vec<Clip> = load_clips(run, TRAIN_CLIPS)?
        .into_iter()
        .filter(|c| ids.contains(&c.id))
        .collect();
    if clips.len() != ids.len() {
        return Err(Error::Input(format!(
            "{} of {} hard clips found in {TRAIN_CLIPS}",
            clips.len(),
            ids.len()
        )));
    }
    Ok(clips)
}

pub fn cmd_fit_gate(config: &RunConfig, out: &Path) -> Result<GateBody> {
    let mut run = RunDir::open(out, config)?;
    let generalist = load_generalist(&run)?;
    let hard = load_hard_set(&run, &generalist)?;
    let adapters = load_adapters(&run, &generalist, &hard)?;
    let clips = hard_train_clips(&run, &hard)?;
    let prepared = pipeline::prepare(config, &generalist.body.vocabulary, &clips)?;
    let (params, samples) = pipeline::fit_tail(config, &generalist.body, &adapters.body.ensemble, &prepared)?;
    let body = GateBody {
        hard_set_id: hard.id.clone(),
        ensemble_id: adapters.id.clone(),
        params,
        sigma: config.gate.sigma,
        direction: config.gate.direction,
        samples,
    };
    run.write_artifact(GATE, &Artifact::new(KIND_GATE, body.clone())?)?;
    run.write_json("fit_gate_log.json", &params)?;
    Ok(body)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalLog {
    pub generalist: EvalSummary,
    pub gated: EvalSummary,
    pub hard_generalist: EvalSummary,
    pub hard_specialist: EvalSummary,
}

/// Scores the generalist and the gated policy on the test split, and the
/// generalist and the specialist ensemble on the hard training clips.
pub fn cmd_eval(config: &RunConfig, out: &Path) -> Result<EvalLog> {
    let mut run = RunDir::open(out, config)?;
    let chain = Chain::load(&run)?;
    let test = pipeline::eval_set(config, chain.g(), &load_clips(&run, TEST_CLIPS)?)?;
    let hard = pipeline::eval_set(config, chain.g(), &hard_train_clips(&run, &chain.hard)?)?;
    let gen_rows = test.generalist(config, chain.g())?;
    let gated_rows = test.gated(config, chain.g(), chain.ensemble(), &chain.gate.body.params, config.gate.sigma)?;
    let hard_gen = hard.generalist(config, chain.g())?;
    let hard_spec = hard.always_specialist(config, chain.g(), chain.ensemble())?;
    run.write(EVAL_GENERALIST, &report_to_bytes(&gen_rows)?)?;
    run.write(EVAL_GATED, &report_to_bytes(&gated_rows)?)?;
    run.write(EVAL_HARD_GENERALIST, &report_to_bytes(&hard_gen)?)?;
    run.write(EVAL_HARD_SPECIALIST, &report_to_bytes(&hard_spec)?)?;
    let log = EvalLog {
        generalist: summarize(&gen_rows),
        gated: summarize(&gated_rows),
        hard_generalist: summarize(&hard_gen),
        hard_specialist: summarize(&hard_spec),
    };
    run.write_json("eval_log.json", &log)?;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub generalist: EvalSummary,
    pub gated: EvalSummary,
    /// Generalist → gated on the test split.
    pub test: ForgetStats,
    pub hard_generalist: EvalSummary,
    pub hard_specialist: EvalSummary,
    /// Generalist → specialist ensemble on the hard training clips.
    pub hard: ForgetStats,
    pub ablation: Option<Vec<AblationRow>>,
}

fn read_csv(run: &RunDir, name: &str) -> Result<Vec<ReportRow>> {
    read_report(&run.path(name))
}

/// Fraction of rows whose difficulty still reaches the allocation cut.
pub fn remaining_hard(rows: &[ReportRow], threshold: f64) -> f64 {
    rows.iter().filter(|r| r.f_x >= threshold).count() as f64 / rows.len().max(1) as f64
}

pub fn cmd_report(config: &RunConfig, out: &Path) -> Result<Report> {
    let mut run = RunDir::open(out, config)?;
    let generalist = load_generalist(&run)?;
    let hard = load_hard_set(&run, &generalist)?;
    let gen_rows = read_csv(&run, EVAL_GENERALIST)?;
    let gated_rows = read_csv(&run, EVAL_GATED)?;
    let hard_gen = read_csv(&run, EVAL_HARD_GENERALIST)?;
    let hard_spec = read_csv(&run, EVAL_HARD_SPECIALIST)?;
    let delta = config.eval.delta_h;
    let test = forget_stats(
        &pdms_by_clip(&gen_rows),
        &pdms_by_clip(&gated_rows),
        &BTreeSet::new(),
        delta,
        0.0,
    )?;
    let mut hard_stats = forget_stats(
        &pdms_by_clip(&hard_gen),
        &pdms_by_clip(&hard_spec),
        &hard.body.hard_set.ids(),
        delta,
        0.0,
    )?;
    // Difficulty mixes PDMS with perception and entropy terms, so the cut is
    // applied to the re-evaluated F_X rather than to PDMS alone.
    hard_stats.remaining_hard = remaining_hard(&hard_spec, hard.body.hard_set.threshold);
    let ablation = if run.path(ABLATION).exists() {
        Some(read_ablation(&run.path(ABLATION))?)
    } else {
        None
    };
    let report = Report {
        generalist: summarize(&gen_rows),
        gated: summarize(&gated_rows),
        test,
        hard_generalist: summarize(&hard_gen),
        hard_specialist: summarize(&hard_spec),
        hard: hard_stats,
        ablation,
    };
    run.write_json(REPORT, &report)?;
    Ok(report)
}

/// One configuration of the component ablation, scored on the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: u32,
    pub name: String,
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub pdms: f64,
    pub expand_rate: f64,
    /// Forget rate against the generalist.
    pub fr: f64,
}

/// Row names in table order; id 0 is the full fine-tune reference.
pub const ABLATION_ROWS: [&str; 6] = [
    "full_finetune",
    "il_only",
    "il_cost",
    "cost_rl",
    "il_cost_rl",
    "il_cost_rl_expansion",
];

fn ablation_row(id: u32, rows: &[ReportRow], baseline: &BTreeMap<String, f64>) -> Result<AblationRow> {
    let s = summarize(rows);
    let fr = forget_stats(baseline, &pdms_by_clip(rows), &BTreeSet::new(), 1.0, 0.0)?.fr;
    Ok(AblationRow {
        id,
        name: ABLATION_ROWS[id as usize].to_string(),
        nc: s.nc,
        dac: s.dac,
        ttc: s.ttc,
        comfort: s.comfort,
        ep: s.ep,
        pdms: s.pdms,
        expand_rate: s.expand_rate,
        fr,
    })
}

pub fn ablation_to_bytes(rows: &[AblationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(format!("ablation row {}: {e}", r.name)))?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("ablation buffer: {e}")))
}

pub fn read_ablation(path: &Path) -> Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Input(format!("{}: {e}", path.display()))))
        .collect()
}

/// Trains the variants that differ from the main run and scores each row on
/// the test split:
///
/// 1. IL only: the generalist.
/// 2. IL + cost: specialists trained without the reward term.
/// 3. cost + RL without IL: specialists trained without the distillation anchor.
/// 4. IL + cost + RL: the main run's specialists on every clip.
/// 5. IL + cost + RL + expansion: the gated policy.
///
/// Row 0 refines the planning head directly with the same objective.
pub fn cmd_ablate(config: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let mut run = RunDir::open(out, config)?;
    let chain = Chain::load(&run)?;
    let g = chain.g();
    let train = load_clips(&run, TRAIN_CLIPS)?;
    let prepared = pipeline::prepare(config, &g.vocabulary, &train)?;
    let data = pipeline::refine_data(g, &prepared, &chain.hard.body.rl_set)?;
    let test: EvalSet = pipeline::eval_set(config, g, &load_clips(&run, TEST_CLIPS)?)?;

    let base_rows = test.generalist(config, g)?;
    let baseline = pdms_by_clip(&base_rows);

    let (full, _) = pipeline::train_full(config, g, &data)?;
    let full_rows = test.network(config, g, &full)?;

    let mut no_reward = config.refine_config();
    no_reward.reward_scale = 0.0;
    let (ens_cost, _) = pipeline::train_specialists(config, &no_reward, g, &data)?;
    let mut no_il = config.refine_config();
    no_il.alpha_pretrain = 0.0;
    let (ens_rl, _) = pipeline::train_specialists(config, &no_il, g, &data)?;

    let variants = [
        full_rows,
        base_rows.clone(),
        test.always_specialist(config, g, &ens_cost)?,
        test.always_specialist(config, g, &ens_rl)?,
        test.always_specialist(config, g, chain.ensemble())?,
        test.gated(config, g, chain.ensemble(), &chain.gate.body.params, config.gate.sigma)?,
    ];
    let rows = variants
        .iter()
        .enumerate()
        .map(|(i, r)| ablation_row(i as u32, r, &baseline))
        .collect::<Result<Vec<_>>>()?;
    run.write(ABLATION, &ablation_to_bytes(&rows)?)?;
    run.write_json("ablate_log.json", &rows)?;
    Ok(rows)
}

/// Every command in order.
pub fn run_all(config: &RunConfig, out: &Path) -> Result<Report> {
    cmd_gen_data(config, out)?;
    cmd_pretrain(config, out)?;
    cmd_allocate(config, out)?;
    cmd_refine(config, out)?;
    cmd_fit_gate(config, out)?;
    cmd_eval(config, out)?;
    cmd_ablate(config, out)?;
    cmd_report(config, out)
}
