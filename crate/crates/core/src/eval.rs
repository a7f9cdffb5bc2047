//! Rollout metrics: fraction of goals reached and normalized forward
//! displacement toward the final goal.
//!
//! Rollout logs are JSON Lines, one object per trajectory:
//!
//! ```json
//! {"trajectory_id": "t0",
//!  "start": [0, 0, 0],
//!  "goals": [[1, 0, 0], [2, 0.5, 0]],
//!  "poses": [{"t": 0.0, "position": [0, 0, 0], "yaw": 0.0}, ...],
//!  "reaches": [{"goal": 0, "t": 1.2}],
//!  "final_goal_distance": 2.0616}
//! ```
//!
//! `final_goal_distance` is the straight-line distance from `start` to the
//! last goal.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no rollout logs")]
    Empty,
    #[error("logs contain no goals")]
    NoGoals,
    #[error("{0}: start and final goal coincide")]
    ZeroGoalDistance(String),
    #[error("{id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachEvent {
    pub goal: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub trajectory_id: String,
    pub start: [f64; 3],
    pub goals: Vec<[f64; 3]>,
    pub poses: Vec<TimedPose>,
    #[serde(default)]
    pub reaches: Vec<ReachEvent>,
    pub final_goal_distance: f64,
}

fn v(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl RolloutLog {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: String| Err(EvalError::Invalid { id: self.trajectory_id.clone(), reason });
        if let Some(r) = self.reaches.iter().find(|r| r.goal >= self.goals.len()) {
            return bad(format!("reach event for goal {} of {}", r.goal, self.goals.len()));
        }
        if self.reaches.windows(2).any(|w| w[1].t < w[0].t) {
            return bad("reach events out of time order".into());
        }
        if self.poses.windows(2).any(|w| w[1].t < w[0].t) {
            return bad("poses out of time order".into());
        }
        if let Some(g) = self.goals.last() {
            let d = (v(*g) - v(self.start)).norm();
            if (d - self.final_goal_distance).abs() > 1e-6 * d.max(1.0) {
                return bad(format!("final_goal_distance {} but start to last goal is {d}", self.final_goal_distance));
            }
        }
        Ok(())
    }

    /// Distinct goals with at least one reach event.
    pub fn goals_reached(&self) -> usize {
        self.reaches.iter().map(|r| r.goal).collect::<BTreeSet<_>>().len()
    }

    /// Applies `p -> R p + t` to every position.
    pub fn transformed(&self, rotation: &nalgebra::Rotation3<f64>, translation: &Vector3<f64>) -> Self {
        let f = |p: [f64; 3]| -> [f64; 3] { (rotation * v(p) + translation).into() };
        let (_, _, dyaw) = rotation.euler_angles();
        Self {
            trajectory_id: self.trajectory_id.clone(),
            start: f(self.start),
            goals: self.goals.iter().map(|&g| f(g)).collect(),
            poses: self.poses.iter().map(|p| TimedPose { t: p.t, position: f(p.position), yaw: p.yaw + dyaw }).collect(),
            reaches: self.reaches.clone(),
            final_goal_distance: self.final_goal_distance,
        }
    }
}

/// Reached goals (deduplicated per goal) over all goals, pooled across logs.
pub fn fgr(logs: &[RolloutLog]) -> Result<f64, EvalError> {
    if logs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut reached = 0usize;
    let mut total = 0usize;
    for log in logs {
        log.validate()?;
        reached += log.goals_reached();
        total += log.goals.len();
    }
    if total == 0 {
        return Err(EvalError::NoGoals);
    }
    Ok(reached as f64 / total as f64)
}

/// Progress of the final pose along the start-to-final-goal axis, over
/// the start-to-final-goal distance, clamped to `[0, 1]`. Lateral motion
/// does not count.
pub fn x_displacement(log: &RolloutLog) -> Result<f64, EvalError> {
    let goal = log.goals.last().ok_or_else(|| EvalError::ZeroGoalDistance(log.trajectory_id.clone()))?;
    let axis = v(*goal) - v(log.start);
    let d = axis.norm();
    if d <= 0.0 {
        return Err(EvalError::ZeroGoalDistance(log.trajectory_id.clone()));
    }
    let end = log.poses.last().map(|p| v(p.position)).unwrap_or_else(|| v(log.start));
    let progress = (end - v(log.start)).dot(&axis) / d;
    Ok((progress / d).clamp(0.0, 1.0))
}

pub fn read_logs<R: BufRead>(r: R) -> Result<Vec<RolloutLog>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: RolloutLog =
            serde_json::from_str(&line).map_err(|e| EvalError::Parse { line: i + 1, reason: e.to_string() })?;
        log.validate()?;
        out.push(log);
    }
    Ok(out)
}

pub fn write_logs(logs: &[RolloutLog]) -> String {
    let mut s = String::new();
    for log in logs {
        s.push_str(&serde_json::to_string(log).expect("log serializes"));
        s.push('\n');
    }
    s
}

/// One row of a results table: a method (or log set) evaluated on a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub trials: usize,
    pub fgr: f64,
    pub x_displacement: f64,
    pub x_displacement_std: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

pub fn metric_row(name: &str, logs: &[RolloutLog]) -> Result<MetricRow, EvalError> {
    let f = fgr(logs)?;
    let xs = logs.iter().map(x_displacement).collect::<Result<Vec<_>, _>>()?;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(MetricRow { name: name.into(), trials: logs.len(), fgr: f, x_displacement: mean, x_displacement_std: var.sqrt() })
}

impl MetricReport {
    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{:<w$}  {:>6}  {:>6}  {:>14}\n", "method", "trials", "FGR", "x-disp.");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>6}  {:>6.3}  {:>6.3} ± {:.3}",
                r.name, r.trials, r.fgr, r.x_displacement, r.x_displacement_std
            );
        }
        s
    }
}

/// Random logs for demos and tests: straight-line goals along a jittered
/// heading, a walk that stops somewhere along the way, reach events for
/// the goals passed.
pub fn synthetic_logs(n: usize, seed: u64) -> Vec<RolloutLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let start = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            let heading: f64 = rng.gen_range(-0.5..0.5);
            let dir = Vector3::new(heading.cos(), heading.sin(), 0.0);
            let n_goals = rng.gen_range(1..=5);
            let mut goals = Vec::new();
            let mut along = 0.0;
            for _ in 0..n_goals {
                along += rng.gen_range(0.5..2.0);
                let lateral = Vector3::new(-dir.y, dir.x, 0.0) * rng.gen_range(-0.3..0.3);
                goals.push((start + dir * along + lateral).into());
            }
            let stop = rng.gen_range(-0.2..1.2) * along;
            let steps = 20;
            let poses = (0..=steps)
                .map(|s| {
                    let a = stop * s as f64 / steps as f64;
                    let wobble = Vector3::new(-dir.y, dir.x, 0.0) * 0.1 * (a * 3.0).sin();
                    TimedPose { t: 0.1 * s as f64, position: (start + dir * a + wobble).into(), yaw: heading }
                })
                .collect();
            let mut reaches = Vec::new();
            for (g, goal) in goals.iter().enumerate() {
                let ga = (v(*goal) - start).dot(&dir);
                if ga <= stop && rng.gen_bool(0.8) {
                    reaches.push(ReachEvent { goal: g, t: 0.1 * steps as f64 * ga / stop.max(1e-9) });
                    if rng.gen_bool(0.2) {
                        // a repeated reach of the same goal
                        reaches.push(ReachEvent { goal: g, t: 0.1 * steps as f64 * ga / stop.max(1e-9) });
                    }
                }
            }
            let final_goal_distance = (v(*goals.last().expect("at least one goal")) - start).norm();
            RolloutLog {
                trajectory_id: format!("synthetic-{i:04}"),
                start: start.into(),
                goals,
                poses,
                reaches,
                final_goal_distance,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_log(goals: Vec<[f64; 3]>, end: [f64; 3], reached: &[usize]) -> RolloutLog {
        let start = [0.0, 0.0, 0.0];
        let d = (v(*goals.last().unwrap()) - v(start)).norm();
        RolloutLog {
            trajectory_id: "t".into(),
            start,
            goals,
            poses: vec![TimedPose { t: 0.0, position: start, yaw: 0.0 }, TimedPose { t: 1.0, position: end, yaw: 0.0 }],
            reaches: reached.iter().enumerate().map(|(i, &g)| ReachEvent { goal: g, t: i as f64 }).collect(),
            final_goal_distance: d,
        }
    }

    #[test]
    fn fgr_ratios() {
        let g = vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0], [4.0, 0.0, 0.0]];
        assert_eq!(fgr(&[line_log(g.clone(), [0.0; 3], &[])]).unwrap(), 0.0);
        let three = vec![line_log(g.clone(), [0.0; 3], &[]); 3];
        assert_eq!(fgr(&three).unwrap(), 0.0);
        assert_eq!(fgr(&[line_log(g.clone(), [3.0, 0.0, 0.0], &[0, 1, 1, 2])]).unwrap(), 0.75);
        assert!(matches!(fgr(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn x_displacement_geometry() {
        let g = vec![[2.0, 0.0, 0.0]];
        assert_eq!(x_displacement(&line_log(g.clone(), [2.0, 0.0, 0.0], &[0])).unwrap(), 1.0);
        assert_eq!(x_displacement(&line_log(g.clone(), [0.0, 0.0, 0.0], &[])).unwrap(), 0.0);
        assert!((x_displacement(&line_log(g.clone(), [1.0, 0.7, 0.0], &[])).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(x_displacement(&line_log(g.clone(), [-1.0, 0.0, 0.0], &[])).unwrap(), 0.0);
        assert_eq!(x_displacement(&line_log(g, [5.0, 0.0, 0.0], &[])).unwrap(), 1.0);
        let zero = line_log(vec![[0.0; 3]], [0.0; 3], &[]);
        assert!(matches!(x_displacement(&zero), Err(EvalError::ZeroGoalDistance(_))));
    }

    #[test]
    fn validation_rejects_bad_reaches() {
        let mut log = line_log(vec![[1.0, 0.0, 0.0]], [1.0, 0.0, 0.0], &[0]);
        log.reaches.push(ReachEvent { goal: 3, t: 5.0 });
        assert!(log.validate().is_err());
        let mut log = line_log(vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], [1.0, 0.0, 0.0], &[1, 0]);
        log.reaches[1].t = -1.0;
        assert!(log.validate().is_err());
    }

    #[test]
    fn jsonl_round_trip_and_table() {
        let logs = synthetic_logs(5, 3);
        let text = write_logs(&logs);
        assert_eq!(read_logs(text.as_bytes()).unwrap(), logs);
        assert!(matches!(read_logs("{\"x\": 1}\n".as_bytes()), Err(EvalError::Parse { line: 1, .. })));
        let report = MetricReport { rows: vec![metric_row("synthetic", &logs).unwrap()] };
        let table = report.to_table();
        assert!(table.contains("FGR") && table.contains("synthetic"));
    }
}
