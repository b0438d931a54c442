use std::collections::HashMap;
use std::sync::Arc;

use trainfractal_core::formats::{boxcount_csv, encode_field, encode_png, RenderRequest};
use trainfractal_core::fracdim::report_field;
use trainfractal_core::{colorize, render_field_with, RenderControl};

/// Bytes served for a finished job.
#[derive(Debug)]
pub struct Artifacts {
    pub png: Vec<u8>,
    pub field: Vec<u8>,
    pub csv: Vec<u8>,
    /// NaN when the box-count fit has too few usable scales.
    pub dimension: f64,
    pub r2: f64,
}

impl Artifacts {
    pub fn render(req: &RenderRequest, control: &RenderControl) -> trainfractal_core::Result<Self> {
        let condition = req.condition_config();
        let field = render_field_with(&condition, &req.viewport(), req.width, req.height, req.seed, req.steps, control)?;
        let png = encode_png(&colorize(&field)?)?;
        let report = report_field(&field);
        Ok(Self {
            png,
            field: encode_field(&field),
            csv: boxcount_csv(&report).into_bytes(),
            dimension: report.dimension,
            r2: report.fit_r2,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed(String),
}

impl JobState {
    pub fn name(&self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Done => "done",
            JobState::Failed(_) => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Done | JobState::Failed(_))
    }
}

pub(crate) struct Job {
    pub request: RenderRequest,
    pub state: JobState,
    pub control: Arc<RenderControl>,
    pub progress: f64,
    pub artifacts: Option<Arc<Artifacts>>,
    last_used: u64,
}

/// Snapshot of a job for status responses.
#[derive(Debug, Clone)]
pub struct JobStatus {
    pub state: JobState,
    pub progress: f64,
    pub dimension: Option<f64>,
}

#[derive(Default)]
pub(crate) struct Registry {
    jobs: HashMap<String, Job>,
    clock: u64,
}

impl Registry {
    pub fn insert(&mut self, id: String, request: RenderRequest, state: JobState, control: Arc<RenderControl>) {
        self.clock += 1;
        let job = Job { request, state, control, progress: 0.0, artifacts: None, last_used: self.clock };
        self.jobs.insert(id, job);
    }

    pub fn queued(&self) -> usize {
        self.jobs.values().filter(|j| j.state == JobState::Queued).count()
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Job> {
        self.clock += 1;
        let job = self.jobs.get_mut(id)?;
        job.last_used = self.clock;
        Some(job)
    }

    pub fn status(&mut self, id: &str) -> Option<JobStatus> {
        let job = self.get_mut(id)?;
        if job.state == JobState::Running {
            let total = (job.request.width * job.request.height).max(1) as f64;
            job.progress = job.progress.max((job.control.completed() as f64 / total).min(1.0));
        }
        Some(JobStatus {
            state: job.state.clone(),
            progress: job.progress,
            dimension: job.artifacts.as_ref().map(|a| a.dimension),
        })
    }

    /// Record a job's terminal state. Terminal states are never overwritten.
    pub fn finish(&mut self, id: &str, result: Result<Arc<Artifacts>, String>) {
        if let Some(job) = self.jobs.get_mut(id) {
            if job.state.is_terminal() {
                return;
            }
            match result {
                Ok(a) => {
                    job.state = JobState::Done;
                    job.progress = 1.0;
                    job.artifacts = Some(a);
                }
                Err(message) => job.state = JobState::Failed(message),
            }
        }
    }

    /// Drop the least recently used finished jobs beyond `keep`.
    pub fn evict(&mut self, keep: usize) {
        let mut finished: Vec<(u64, String)> = self
            .jobs
            .iter()
            .filter(|(_, j)| j.state.is_terminal())
            .map(|(id, j)| (j.last_used, id.clone()))
            .collect();
        if finished.len() <= keep {
            return;
        }
        finished.sort();
        for (_, id) in &finished[..finished.len() - keep] {
            self.jobs.remove(id);
        }
    }

    pub fn cancel_unfinished(&mut self) {
        for job in self.jobs.values_mut().filter(|j| !j.state.is_terminal()) {
            job.control.cancel();
            job.state = JobState::Failed("cancelled".into());
        }
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.jobs.len()
    }
}
