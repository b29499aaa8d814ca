//! A pruning session: one model, one dataset and a tree of pruning steps.
//!
//! Step 0 is the unpruned baseline. Each new step is a child of the current step;
//! reverting moves the current pointer so the next step starts a new branch.
//! Every mutating method either succeeds completely or leaves the session as it was.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::metrics::{self, EvalReport};
use crate::model::{Dataset, Model};
use crate::prune::{apply_edits, prune_step_masks, EditOp, MaskEdit, PruneSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    pub step_id: u64,
    pub parent_id: Option<u64>,
    pub settings: PruneSettings,
    pub masks: MaskSet,
    pub manual_edits: Vec<MaskEdit>,
    pub report: EvalReport,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
}

/// A step without its masks, as shown on a timeline card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step_id: u64,
    pub parent_id: Option<u64>,
    pub settings: PruneSettings,
    pub manual_edits: Vec<MaskEdit>,
    pub report: EvalReport,
    pub created_at: u64,
}

impl From<&PruneStep> for StepSummary {
    fn from(step: &PruneStep) -> Self {
        Self {
            step_id: step.step_id,
            parent_id: step.parent_id,
            settings: step.settings.clone(),
            manual_edits: step.manual_edits.clone(),
            report: step.report.clone(),
            created_at: step.created_at,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    model: Arc<Model>,
    dataset: Arc<Dataset>,
    steps: Vec<PruneStep>,
    current: u64,
    next_id: u64,
    /// Channel clicks not yet applied: `(layer, channel) -> marked for pruning`.
    pending: BTreeMap<(usize, usize), bool>,
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Session {
    /// Starts a session whose only step is the evaluated, unpruned baseline.
    pub fn new(model: Arc<Model>, dataset: Arc<Dataset>) -> Result<Self> {
        model.validate()?;
        dataset.validate()?;
        dataset.check_compatible(&model)?;
        let masks = MaskSet::all_ones(&model);
        let report = metrics::evaluate(&model, &masks, &dataset)?;
        let baseline = PruneStep {
            step_id: 0,
            parent_id: None,
            settings: PruneSettings::manual(),
            masks,
            manual_edits: Vec::new(),
            report,
            created_at: now_millis(),
        };
        Ok(Self {
            model,
            dataset,
            steps: vec![baseline],
            current: 0,
            next_id: 1,
            pending: BTreeMap::new(),
        })
    }

    /// Rebuilds a session from stored steps, checking every mask against the model.
    pub fn from_parts(
        model: Arc<Model>,
        dataset: Arc<Dataset>,
        steps: Vec<PruneStep>,
        current: u64,
        next_id: u64,
    ) -> Result<Self> {
        dataset.check_compatible(&model)?;
        if steps.first().map(|s| s.step_id) != Some(0) {
            return Err(Error::UnknownStep(0));
        }
        let ids: BTreeSet<u64> = steps.iter().map(|s| s.step_id).collect();
        for step in &steps {
            step.masks.check_congruent(&model)?;
            if let Some(parent) = step.parent_id {
                if !ids.contains(&parent) || parent >= step.step_id {
                    return Err(Error::UnknownStep(parent));
                }
            }
            if step.step_id >= next_id {
                return Err(Error::UnknownStep(step.step_id));
            }
        }
        if !ids.contains(&current) {
            return Err(Error::UnknownStep(current));
        }
        Ok(Self {
            model,
            dataset,
            steps,
            current,
            next_id,
            pending: BTreeMap::new(),
        })
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn steps(&self) -> &[PruneStep] {
        &self.steps
    }

    pub fn list_steps(&self) -> Vec<StepSummary> {
        self.steps.iter().map(StepSummary::from).collect()
    }

    pub fn current_id(&self) -> u64 {
        self.current
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn step(&self, id: u64) -> Result<&PruneStep> {
        self.steps
            .iter()
            .find(|s| s.step_id == id)
            .ok_or(Error::UnknownStep(id))
    }

    pub fn current_step(&self) -> &PruneStep {
        self.step(self.current).expect("current step exists")
    }

    pub fn baseline(&self) -> &PruneStep {
        &self.steps[0]
    }

    pub fn masks(&self) -> &MaskSet {
        &self.current_step().masks
    }

    pub fn evaluate(&self, masks: &MaskSet) -> Result<EvalReport> {
        metrics::evaluate(&self.model, masks, &self.dataset)
    }

    /// Runs one algorithmic pruning step from the current step.
    pub fn run_prune_step(&mut self, settings: PruneSettings) -> Result<&PruneStep> {
        let masks = prune_step_masks(&self.model, self.masks(), &settings)?;
        self.push_step(settings, masks, Vec::new())
    }

    /// Applies manual edits (atomically) as a new step.
    pub fn apply_manual_edits(&mut self, edits: Vec<MaskEdit>) -> Result<&PruneStep> {
        let masks = apply_edits(&self.model, self.masks(), &edits)?;
        self.push_step(PruneSettings::manual(), masks, edits)
    }

    fn push_step(&mut self, settings: PruneSettings, masks: MaskSet, manual_edits: Vec<MaskEdit>) -> Result<&PruneStep> {
        let report = self.evaluate(&masks)?;
        let step = PruneStep {
            step_id: self.next_id,
            parent_id: Some(self.current),
            settings,
            masks,
            manual_edits,
            report,
            created_at: now_millis(),
        };
        self.next_id += 1;
        self.current = step.step_id;
        self.steps.push(step);
        self.pending.clear();
        Ok(self.steps.last().expect("just pushed"))
    }

    /// Makes `id` the current step; the next step branches from it.
    pub fn revert_to(&mut self, id: u64) -> Result<&PruneStep> {
        self.step(id)?;
        self.current = id;
        self.pending.clear();
        self.step(id)
    }

    /// Removes a step and all its descendants; returns the removed ids in order.
    /// If the current step is removed, the removed step's parent becomes current.
    pub fn remove_step(&mut self, id: u64) -> Result<Vec<u64>> {
        if id == 0 {
            return Err(Error::RemoveBaseline);
        }
        let parent = self.step(id)?.parent_id;
        let mut doomed = BTreeSet::from([id]);
        // parents always precede children, so one ordered pass collects the subtree
        for step in &self.steps {
            if step.parent_id.is_some_and(|p| doomed.contains(&p)) {
                doomed.insert(step.step_id);
            }
        }
        if doomed.contains(&self.current) {
            self.current = parent.unwrap_or(0);
        }
        self.steps.retain(|s| !doomed.contains(&s.step_id));
        self.pending.clear();
        Ok(doomed.into_iter().collect())
    }

    /// Toggles a channel click and returns the edit it stands for, without
    /// applying it. A channel counts as marked when it is pending for pruning or,
    /// with nothing pending, already fully pruned in the current masks.
    pub fn toggle_channel_mark(&mut self, layer_index: usize, channel: usize) -> Result<MaskEdit> {
        let mask = self
            .masks()
            .get(layer_index)
            .ok_or(Error::NotWeighted(layer_index))?;
        if channel >= mask.num_channels() {
            return Err(Error::IndexOutOfRange {
                what: "channel",
                index: channel,
                len: mask.num_channels(),
            });
        }
        let applied = mask.channel_fully_pruned(channel);
        let marked = self
            .pending
            .get(&(layer_index, channel))
            .copied()
            .unwrap_or(applied);
        let want_pruned = !marked;
        if want_pruned == applied {
            self.pending.remove(&(layer_index, channel));
        } else {
            self.pending.insert((layer_index, channel), want_pruned);
        }
        let op = if want_pruned {
            EditOp::PruneChannel { channel }
        } else {
            EditOp::RestoreChannel { channel }
        };
        Ok(MaskEdit::new(layer_index, op))
    }

    /// Edits that applying the pending channel marks would perform.
    pub fn pending_edits(&self) -> Vec<MaskEdit> {
        self.pending
            .iter()
            .map(|(&(layer, channel), &prune)| {
                let op = if prune {
                    EditOp::PruneChannel { channel }
                } else {
                    EditOp::RestoreChannel { channel }
                };
                MaskEdit::new(layer, op)
            })
            .collect()
    }

    /// Re-evaluates a stored step and checks it against its stored report.
    pub fn verify_step(&self, id: u64, tolerance: f64) -> Result<()> {
        let step = self.step(id)?;
        let fresh = self.evaluate(&step.masks)?;
        let stored = &step.report;
        if (fresh.accuracy - stored.accuracy).abs() > tolerance
            || (fresh.mean_loss - stored.mean_loss).abs() > tolerance
            || fresh.sparsity != stored.sparsity
            || fresh.confusion != stored.confusion
        {
            return Err(Error::ReportMismatch(format!(
                "step {id}: stored accuracy {} loss {}, re-evaluated {} / {}",
                stored.accuracy, stored.mean_loss, fresh.accuracy, fresh.mean_loss
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSpec;
    use crate::prune::Algorithm;
    use crate::tensor::Tensor;

    fn session() -> Session {
        let w1: Vec<f32> = (0..12).map(|i| ((i as f32) * 0.91).sin()).collect();
        let w2: Vec<f32> = (0..8).map(|i| ((i as f32) * 1.37).cos()).collect();
        let model = Model::new(
            "toy",
            vec![3],
            vec![
                LayerSpec::Dense {
                    weight: Tensor::new(vec![4, 3], w1).unwrap(),
                    bias: Tensor::zeros(vec![4]),
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    weight: Tensor::new(vec![2, 4], w2).unwrap(),
                    bias: Tensor::zeros(vec![2]),
                },
            ],
        )
        .unwrap();
        let samples: Vec<f32> = (0..30).map(|i| ((i as f32) * 0.53).sin()).collect();
        let labels = (0..10).map(|i| i % 2).collect();
        let dataset = Dataset::new(
            "toy",
            Tensor::new(vec![10, 3], samples).unwrap(),
            labels,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        Session::new(Arc::new(model), Arc::new(dataset)).unwrap()
    }

    #[test]
    fn zero_ratio_step_matches_baseline() {
        let mut s = session();
        let base = s.baseline().report.clone();
        let step = s.run_prune_step(PruneSettings::new(Algorithm::Map, 0.0)).unwrap();
        assert_eq!(step.report, base);
        assert_eq!(step.parent_id, Some(0));
    }

    #[test]
    fn revert_and_replay_is_deterministic() {
        let mut s = session();
        let settings = PruneSettings::new(Algorithm::Lap, 0.5);
        let first = s.run_prune_step(settings.clone()).unwrap().masks.clone();
        s.revert_to(0).unwrap();
        assert_eq!(s.current_step().report.sparsity.pruned, 0);
        let second = s.run_prune_step(settings).unwrap();
        assert_eq!(second.masks, first);
        assert_eq!(second.parent_id, Some(0));
        assert_eq!(second.step_id, 2);
    }

    #[test]
    fn remove_cascades_to_descendants() {
        let mut s = session();
        s.run_prune_step(PruneSettings::new(Algorithm::Map, 0.2)).unwrap(); // 1
        s.run_prune_step(PruneSettings::new(Algorithm::Map, 0.2)).unwrap(); // 2
        s.revert_to(1).unwrap();
        s.run_prune_step(PruneSettings::new(Algorithm::Lap, 0.2)).unwrap(); // 3
        s.revert_to(0).unwrap();
        s.run_prune_step(PruneSettings::new(Algorithm::Map, 0.4)).unwrap(); // 4
        assert_eq!(s.remove_step(2).unwrap(), vec![2]);
        assert_eq!(s.steps().len(), 4);
        assert_eq!(s.remove_step(1).unwrap(), vec![1, 3]);
        assert_eq!(s.current_id(), 4);
        assert_eq!(s.remove_step(4).unwrap(), vec![4]);
        assert_eq!(s.current_id(), 0);
        assert!(matches!(s.remove_step(0), Err(Error::RemoveBaseline)));
        assert!(matches!(s.remove_step(9), Err(Error::UnknownStep(9))));
        // ids are never reused
        let next = s.run_prune_step(PruneSettings::new(Algorithm::Map, 0.1)).unwrap();
        assert_eq!(next.step_id, 5);
    }

    #[test]
    fn failed_edit_leaves_session_untouched() {
        let mut s = session();
        let before = s.list_steps();
        let err = s.apply_manual_edits(vec![
            MaskEdit::new(0, EditOp::PruneChannel { channel: 1 }),
            MaskEdit::new(2, EditOp::PruneChannel { channel: 7 }),
        ]);
        assert!(err.is_err());
        assert_eq!(s.list_steps(), before);
        assert!(s.run_prune_step(PruneSettings::new(Algorithm::Manual, 0.1)).is_err());
        assert_eq!(s.list_steps(), before);
    }

    #[test]
    fn manual_step_records_edits() {
        let mut s = session();
        let edits = vec![MaskEdit::new(0, EditOp::PruneIndices { indices: vec![0, 4] })];
        let step = s.apply_manual_edits(edits.clone()).unwrap();
        assert_eq!(step.settings.algorithm, Algorithm::Manual);
        assert_eq!(step.manual_edits, edits);
        assert_eq!(step.report.sparsity.pruned, 2);
        s.verify_step(1, 1e-6).unwrap();
    }

    #[test]
    fn channel_marks_toggle() {
        let mut s = session();
        assert_eq!(
            s.toggle_channel_mark(0, 3).unwrap(),
            MaskEdit::new(0, EditOp::PruneChannel { channel: 3 })
        );
        assert_eq!(s.pending_edits().len(), 1);
        assert_eq!(
            s.toggle_channel_mark(0, 3).unwrap(),
            MaskEdit::new(0, EditOp::RestoreChannel { channel: 3 })
        );
        assert!(s.pending_edits().is_empty());
        assert!(s.toggle_channel_mark(0, 4).is_err());
        assert!(s.toggle_channel_mark(1, 0).is_err());
        // an applied channel prune counts as marked
        s.apply_manual_edits(vec![MaskEdit::new(0, EditOp::PruneChannel { channel: 1 })])
            .unwrap();
        assert_eq!(
            s.toggle_channel_mark(0, 1).unwrap(),
            MaskEdit::new(0, EditOp::RestoreChannel { channel: 1 })
        );
    }
}
