use std::fmt::Write as _;
use std::io::Write;

use super::config::MAX_SKILLS;
use crate::error::Result;

/// One row of the training log. Written when an episode ends, when the log
/// interval is hit, or both (merged into one row).
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub episode: usize,
    /// Undiscounted return of the episode that ended at this step.
    pub episode_return: Option<f64>,
    pub entropy: Option<f64>,
    pub active_skill: usize,
    pub loss_q1: Option<f64>,
    pub loss_q2: Option<f64>,
    pub loss_pi: Option<f64>,
    pub j_integrated: Option<f64>,
    pub relevance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub mean_return: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub num_skills: usize,
    pub records: Vec<LogRecord>,
    pub evals: Vec<EvalRecord>,
}

pub const LOG_COLUMNS: [&str; 9] = [
    "step",
    "episode",
    "return",
    "entropy",
    "active_skill",
    "loss_q1",
    "loss_q2",
    "loss_pi",
    "j_integrated",
];

fn num(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        let _ = write!(out, "{v:.8e}");
    }
}

impl RunLog {
    pub fn new(num_skills: usize) -> Self {
        Self {
            num_skills,
            ..Self::default()
        }
    }

    /// `(step, return)` for every finished episode.
    pub fn episode_returns(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.episode_return.map(|g| (r.step, g)))
            .collect()
    }

    /// Header plus one line per record. Relevance is padded with empty
    /// cells to `MAX_SKILLS` columns so every run shares one schema.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header: Vec<String> = LOG_COLUMNS.iter().map(|c| c.to_string()).collect();
        header.extend((0..MAX_SKILLS).map(|i| format!("r_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut line = format!("{},{},", r.step, r.episode);
            num(&mut line, r.episode_return);
            line.push(',');
            num(&mut line, r.entropy);
            let _ = write!(line, ",{},", r.active_skill);
            num(&mut line, r.loss_q1);
            line.push(',');
            num(&mut line, r.loss_q2);
            line.push(',');
            num(&mut line, r.loss_pi);
            line.push(',');
            num(&mut line, r.j_integrated);
            for i in 0..MAX_SKILLS {
                line.push(',');
                num(&mut line, r.relevance.get(i).copied());
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write_eval_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "step,mean_return,mean_entropy")?;
        for e in &self.evals {
            writeln!(out, "{},{:.8e},{:.8e}", e.step, e.mean_return, e.mean_entropy)?;
        }
        Ok(())
    }
}
