//! In-memory pipeline stages. The commands wrap these with artifact I/O.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::adapters::{init_ensemble, AdapterEnsemble};
use crate::allocate::{build_rl_set, score_dataset, select_hard, HardSet, RlSet};
use crate::error::{Error, Result};
use crate::expand::{clip_uncertainty, evaluate_gated, evaluate_generalist, fit_gpd, GateDirection, GpdParams, TailModel};
use crate::metrics::{DifficultyScore, ReportRow};
use crate::policy::{
    build_vocabulary, clip_seed, network_shape, prepare_clips, pretrain, Generalist, PreparedClip, PretrainLog,
    Vocabulary,
};
use crate::refine::{
    process_signals_all, refine_full, refine_specialists, EpochLog, ProcessSignals, RefineClip, RefineConfig,
    RefineMode,
};
use crate::tensor_nn::NetworkWeights;
use crate::world::{generate_scenario, Clip, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Generates a split's clips. Kinds are assigned round-robin; each clip gets
/// its own seed derived from the split seed and its index.
pub fn generate_clips(config: &RunConfig, split: Split) -> Result<Vec<Clip>> {
    let kinds = config.data.scenario_kinds()?;
    let (n, stream) = match split {
        Split::Train => (config.data.train_clips, "train_data"),
        Split::Test => (config.data.test_clips, "test_data"),
    };
    let base = config.seed_for(stream);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let id = format!("{}-{i:05}", split.name());
            let spec = ScenarioSpec::sample(kinds[i % kinds.len()], clip_seed(base, &id));
            let mut clip = generate_scenario(&spec, &config.world)?;
            clip.id = id;
            Ok(clip)
        })
        .collect()
}

/// Clip counts per scenario kind.
pub fn kind_counts(clips: &[Clip]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for c in clips {
        *out.entry(c.scenario_tag.name().to_string()).or_insert(0) += 1;
    }
    out
}

pub fn prepare(config: &RunConfig, vocabulary: &Vocabulary, clips: &[Clip]) -> Result<Vec<PreparedClip>> {
    prepare_clips(
        clips,
        vocabulary,
        &config.features.noise,
        config.seed_for("observation_noise"),
        config.features.target_tau,
    )
}

/// Vocabulary, prepared training clips and the pretrained generalist.
pub fn train_generalist(config: &RunConfig, train: &[Clip]) -> Result<(Generalist, PretrainLog)> {
    let vocabulary = build_vocabulary(train, config.model.vocab_size, config.seed_for("vocabulary"))?;
    let prepared = prepare(config, &vocabulary, train)?;
    let samples: Vec<_> = prepared.iter().map(PreparedClip::sample).collect();
    let shape = network_shape(&config.model.hidden, config.model.vocab_size);
    let init = NetworkWeights::init(&shape, config.seed_for("init"));
    let (network, log) = pretrain(init, &samples, &config.pretrain_config())?;
    Ok((Generalist { network, vocabulary }, log))
}

/// Hard cases and the RL set built around them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub scores: Vec<DifficultyScore>,
    pub hard: HardSet,
    pub rl: RlSet,
}

pub fn allocate(config: &RunConfig, generalist: &Generalist, train: &[PreparedClip]) -> Result<Allocation> {
    let scores = score_dataset(generalist, train, &config.allocate.weights())?;
    let hard = select_hard(&scores, config.allocate.epsilon)?;
    if hard.is_empty() {
        return Err(Error::Config(format!(
            "allocate.epsilon = {} selects no clips from {}",
            config.allocate.epsilon,
            train.len()
        )));
    }
    let ids: Vec<String> = train.iter().map(|c| c.clip.id.clone()).collect();
    let rl = build_rl_set(&hard, &ids, config.allocate.anchors, config.seed_for("rl_set"))?;
    Ok(Allocation { scores, hard, rl })
}

/// The clips used by refinement with their cached embeddings and signals,
/// and each group as indices into them.
pub struct RefineData {
    pub clips: Vec<RefineClip>,
    pub groups: Vec<Vec<usize>>,
}

pub fn refine_data(generalist: &Generalist, train: &[PreparedClip], rl: &RlSet) -> Result<RefineData> {
    let by_id: BTreeMap<&str, &PreparedClip> = train.iter().map(|c| (c.clip.id.as_str(), c)).collect();
    let used: BTreeSet<&str> = rl.groups.iter().flat_map(|g| g.clip_ids()).collect();
    let selected = used
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|c| (*c).clone())
                .ok_or_else(|| Error::Input(format!("RL set references unknown clip {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let signals = process_signals_all(&selected, &generalist.vocabulary)?;
    let clips = selected
        .par_iter()
        .zip(signals)
        .map(|(c, s)| RefineClip::new(&generalist.network, c, s))
        .collect::<Result<Vec<_>>>()?;
    let index: BTreeMap<&str, usize> = used.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let groups = rl
        .groups
        .iter()
        .map(|g| g.clip_ids().map(|id| index[id]).collect())
        .collect();
    Ok(RefineData { clips, groups })
}

pub fn train_specialists(
    config: &RunConfig,
    refine_cfg: &RefineConfig,
    generalist: &Generalist,
    data: &RefineData,
) -> Result<(AdapterEnsemble, Vec<EpochLog>)> {
    let ensemble = init_ensemble(
        &generalist.network,
        config.adapters.members,
        config.adapters.rank,
        config.seed_for("adapters"),
    )?;
    refine_specialists(&generalist.network, ensemble, &data.clips, &data.groups, refine_cfg)
}

/// Refines the planning head directly, with the full-mode step size.
pub fn train_full(
    config: &RunConfig,
    generalist: &Generalist,
    data: &RefineData,
) -> Result<(NetworkWeights, Vec<EpochLog>)> {
    let mut cfg = config.refine_config();
    cfg.mode = RefineMode::Full;
    cfg.learning_rate = config.refine.full_learning_rate;
    refine_full(&generalist.network, &data.clips, &data.groups, &cfg)
}

/// Ensemble uncertainties over the given clips.
pub fn uncertainties(generalist: &Generalist, ensemble: &AdapterEnsemble, clips: &[PreparedClip]) -> Result<Vec<f64>> {
    ensemble.validate(&generalist.network)?;
    clips
        .par_iter()
        .map(|c| clip_uncertainty(generalist, ensemble, &c.features.normalized))
        .collect()
}

/// Hard clips of `train`, in hard-set order.
pub fn hard_clips(train: &[PreparedClip], hard: &HardSet) -> Result<Vec<PreparedClip>> {
    let by_id: BTreeMap<&str, &PreparedClip> = train.iter().map(|c| (c.clip.id.as_str(), c)).collect();
    hard.cases
        .iter()
        .map(|h| {
            by_id
                .get(h.clip_id.as_str())
                .map(|c| (*c).clone())
                .ok_or_else(|| Error::Input(format!("hard clip {} not in the training set", h.clip_id)))
        })
        .collect()
}

/// GPD fit over the ensemble uncertainty of the hard clips.
pub fn fit_tail(
    config: &RunConfig,
    generalist: &Generalist,
    ensemble: &AdapterEnsemble,
    hard: &[PreparedClip],
) -> Result<(GpdParams, Vec<f64>)> {
    let u = uncertainties(generalist, ensemble, hard)?;
    let params = fit_gpd(&u, config.gate.threshold)?;
    Ok((params, u))
}

/// Evaluation inputs for one split: prepared clips and their candidate signals.
pub struct EvalSet {
    pub clips: Vec<PreparedClip>,
    pub signals: Vec<ProcessSignals>,
}

pub fn eval_set(config: &RunConfig, generalist: &Generalist, clips: &[Clip]) -> Result<EvalSet> {
    let prepared = prepare(config, &generalist.vocabulary, clips)?;
    let signals = process_signals_all(&prepared, &generalist.vocabulary)?;
    Ok(EvalSet {
        clips: prepared,
        signals,
    })
}

impl EvalSet {
    /// Subset by clip id, keeping this set's order.
    pub fn subset(&self, ids: &BTreeSet<String>) -> EvalSet {
        let keep: Vec<usize> = (0..self.clips.len()).filter(|&i| ids.contains(&self.clips[i].clip.id)).collect();
        EvalSet {
            clips: keep.iter().map(|&i| self.clips[i].clone()).collect(),
            signals: keep.iter().map(|&i| self.signals[i].clone()).collect(),
        }
    }

    pub fn generalist(&self, config: &RunConfig, generalist: &Generalist) -> Result<Vec<ReportRow>> {
        evaluate_generalist(&self.clips, &self.signals, generalist, &config.allocate.weights())
    }

    pub fn gated(
        &self,
        config: &RunConfig,
        generalist: &Generalist,
        ensemble: &AdapterEnsemble,
        tail: &(dyn TailModel + Sync),
        sigma: f64,
    ) -> Result<Vec<ReportRow>> {
        evaluate_gated(
            &self.clips,
            &self.signals,
            generalist,
            ensemble,
            tail,
            sigma,
            config.gate.direction,
            &config.allocate.weights(),
        )
    }

    /// Every clip routed to the ensemble mean.
    pub fn always_specialist(
        &self,
        config: &RunConfig,
        generalist: &Generalist,
        ensemble: &AdapterEnsemble,
    ) -> Result<Vec<ReportRow>> {
        evaluate_gated(
            &self.clips,
            &self.signals,
            generalist,
            ensemble,
            &AlwaysTail,
            0.0,
            GateDirection::SpecialistAbove,
            &config.allocate.weights(),
        )
    }

    /// A network used on its own (for example a fully fine-tuned head).
    pub fn network(&self, config: &RunConfig, generalist: &Generalist, network: &NetworkWeights) -> Result<Vec<ReportRow>> {
        let g = Generalist {
            network: network.clone(),
            vocabulary: generalist.vocabulary.clone(),
        };
        self.generalist(config, &g)
    }
}

/// Tail model that places every uncertainty at the top of the distribution.
struct AlwaysTail;

impl TailModel for AlwaysTail {
    fn cdf(&self, _u: f64) -> f64 {
        1.0
    }
}
