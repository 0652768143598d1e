//! Figure-ready series: gamma heatmaps over the workspace and training curves.

use crate::env::EnvConfig;
use crate::episode::EpisodeTrace;
use crate::train::TrainLogRecord;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub stage: u8,
    pub success_rate: f64,
    pub mean_gamma: f64,
    pub mean_reward: f64,
}

/// Trailing-window averages, one point per `window` episodes.
pub fn learning_curve(log: &[TrainLogRecord], window: usize) -> Vec<CurvePoint> {
    let window = window.max(1);
    log.chunks(window)
        .map(|c| {
            let n = c.len() as f64;
            let last = c.last().expect("chunks are non-empty");
            CurvePoint {
                episode: last.episode,
                stage: last.stage,
                success_rate: c.iter().filter(|r| r.success).count() as f64 / n,
                mean_gamma: c.iter().map(|r| r.mean_gamma).sum::<f64>() / n,
                mean_reward: c.iter().map(|r| r.total_reward).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Mean blending weight per workspace cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaHeatmap {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    /// Row-major, `y` outer; `None` where no step landed.
    pub mean_gamma: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

pub fn gamma_heatmap<'a>(traces: impl IntoIterator<Item = &'a EpisodeTrace>, env: &EnvConfig, cell: f64) -> GammaHeatmap {
    let nx = (env.width / cell).ceil() as usize;
    let ny = (env.height / cell).ceil() as usize;
    let mut sums = vec![0.0; nx * ny];
    let mut counts = vec![0usize; nx * ny];
    for trace in traces {
        for s in &trace.steps {
            let ix = ((s.cursor.x / cell).floor().max(0.0) as usize).min(nx - 1);
            let iy = ((s.cursor.y / cell).floor().max(0.0) as usize).min(ny - 1);
            sums[iy * nx + ix] += s.gamma;
            counts[iy * nx + ix] += 1;
        }
    }
    let mean_gamma = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    GammaHeatmap {
        nx,
        ny,
        cell,
        mean_gamma,
        counts,
    }
}

/// One row per step of one episode: the γ-colored trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub gamma: f64,
    pub p_max: f64,
    pub entropy: f64,
}

pub fn gamma_trajectory(trace: &EpisodeTrace) -> Vec<TrajectoryPoint> {
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| TrajectoryPoint {
            t,
            x: s.cursor.x,
            y: s.cursor.y,
            gamma: s.gamma,
            p_max: s.belief.iter().cloned().fold(0.0, f64::max),
            entropy: s.entropy,
        })
        .collect()
}
