//! Headless pruning runs and their JSON reports. Reports carry no timestamps or
//! paths so identical inputs give byte-identical files.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use vinnpruner_core::metrics::Sparsity;
use vinnpruner_core::{Dataset, EvalReport, Model, PruneSettings, Session};

pub const REPORT_FORMAT: &str = "vinnpruner-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// 0 is the unpruned baseline.
    pub step: usize,
    /// SHA-256 of the step's masks.
    pub mask_digest: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub format: String,
    pub model: String,
    pub dataset: String,
    pub settings: PruneSettings,
    pub steps: Vec<StepReport>,
    /// Sparsity after each step, baseline first.
    pub sparsity_trajectory: Vec<Sparsity>,
}

impl PruneReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn last(&self) -> &StepReport {
        self.steps.last().expect("report has a baseline step")
    }
}

/// Runs `steps` successive pruning steps from the baseline with the same settings.
pub fn run_pruning(
    model: Arc<Model>,
    dataset: Arc<Dataset>,
    settings: &PruneSettings,
    steps: usize,
) -> vinnpruner_core::Result<(PruneReport, Session)> {
    settings.validate(&model)?;
    let mut session = Session::new(Arc::clone(&model), Arc::clone(&dataset))?;
    for _ in 0..steps {
        session.run_prune_step(settings.clone())?;
    }
    let step_reports: Vec<StepReport> = session
        .steps()
        .iter()
        .enumerate()
        .map(|(k, s)| StepReport {
            step: k,
            mask_digest: s.masks.digest(),
            report: s.report.clone(),
        })
        .collect();
    let report = PruneReport {
        format: REPORT_FORMAT.into(),
        model: model.name.clone(),
        dataset: dataset.name.clone(),
        settings: settings.clone(),
        sparsity_trajectory: step_reports.iter().map(|s| s.report.sparsity.clone()).collect(),
        steps: step_reports,
    };
    Ok((report, session))
}
