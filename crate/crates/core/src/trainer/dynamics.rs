use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrajectoryPoint};
use crate::dataset::PreferenceTriple;
use crate::error::{Error, Result};
use crate::objectives::ObjectiveKind;
use crate::policy::PolicyParams;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone)]
pub struct ObjectiveRun {
    pub objective: ObjectiveKind,
    pub trajectory: Vec<TrajectoryPoint>,
    pub policy: PolicyParams,
}

impl ObjectiveRun {
    pub fn final_point(&self) -> &TrajectoryPoint {
        self.trajectory.last().expect("trajectory always has a step-0 point")
    }
}

/// Ordering of final held-out rewards across objectives. A clause is `None`
/// when one of the objectives it mentions was not run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OrderingVerdict {
    /// APO-zero has the largest final `r_w` and `r_l` among the runs.
    pub apo_zero_highest: Option<bool>,
    /// APO-down has the smallest final `r_w` and `r_l` among the runs.
    pub apo_down_lowest: Option<bool>,
    /// DPO lies strictly between APO-zero and APO-down on both rewards.
    pub dpo_between: Option<bool>,
    /// Every run ends with `r_w > r_l`.
    pub positive_margins: Option<bool>,
    /// DPO's first-epoch rewards are closer to APO-zero's than to APO-down's.
    pub dpo_tracks_apo_zero_early: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct DynamicsReport {
    pub runs: Vec<ObjectiveRun>,
    pub verdict: OrderingVerdict,
}

impl DynamicsReport {
    pub fn run(&self, kind: ObjectiveKind) -> Option<&ObjectiveRun> {
        self.runs.iter().find(|r| r.objective == kind)
    }
}

/// Trains one policy per objective with otherwise identical configuration
/// and compares the resulting held-out trajectories.
pub fn compare_dynamics(
    dataset: &[PreferenceTriple],
    vocab: &Vocabulary,
    base: &TrainConfig,
    objectives: &[ObjectiveKind],
) -> Result<DynamicsReport> {
    if objectives.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "comparing dynamics needs at least two objectives, got {}",
            objectives.len()
        )));
    }
    let runs = objectives
        .par_iter()
        .map(|&kind| {
            let run = train(dataset, vocab, &base.clone().with_objective(kind))?;
            Ok(ObjectiveRun {
                objective: kind,
                trajectory: run.trajectory,
                policy: run.policy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let verdict = ordering_verdict(&runs);
    Ok(DynamicsReport { runs, verdict })
}

fn rewards(p: &TrajectoryPoint) -> (f64, f64) {
    (p.mean_r_w, p.mean_r_l)
}

pub(crate) fn ordering_verdict(runs: &[ObjectiveRun]) -> OrderingVerdict {
    let find = |k| runs.iter().find(|r| r.objective == k);
    let fin = |r: &ObjectiveRun| rewards(r.final_point());
    let zero = find(ObjectiveKind::ApoZero);
    let down = find(ObjectiveKind::ApoDown);
    let dpo = find(ObjectiveKind::Dpo);
    let others = |me: ObjectiveKind| runs.iter().filter(move |r| r.objective != me);

    let apo_zero_highest = zero.map(|z| {
        let (zw, zl) = fin(z);
        others(ObjectiveKind::ApoZero).all(|o| {
            let (w, l) = fin(o);
            zw > w && zl > l
        })
    });
    let apo_down_lowest = down.map(|d| {
        let (dw, dl) = fin(d);
        others(ObjectiveKind::ApoDown).all(|o| {
            let (w, l) = fin(o);
            dw < w && dl < l
        })
    });
    let dpo_between = match (zero, dpo, down) {
        (Some(z), Some(m), Some(d)) => {
            let ((zw, zl), (mw, ml), (dw, dl)) = (fin(z), fin(m), fin(d));
            Some(zw > mw && mw > dw && zl > ml && ml > dl)
        }
        _ => None,
    };
    let positive_margins = Some(runs.iter().all(|r| {
        let (w, l) = fin(r);
        w > l
    }));
    let dpo_tracks_apo_zero_early = match (zero, dpo, down) {
        (Some(z), Some(m), Some(d)) => {
            let early = |r: &ObjectiveRun| {
                r.trajectory
                    .iter()
                    .find(|p| p.epoch >= 1)
                    .map(rewards)
                    .unwrap_or_else(|| fin(r))
            };
            let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
            let m = early(m);
            Some(dist(m, early(z)) < dist(m, early(d)))
        }
        _ => None,
    };
    OrderingVerdict {
        apo_zero_highest,
        apo_down_lowest,
        dpo_between,
        positive_margins,
        dpo_tracks_apo_zero_early,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Source;

    fn run(kind: ObjectiveKind, points: &[(usize, f64, f64)]) -> ObjectiveRun {
        ObjectiveRun {
            objective: kind,
            trajectory: points
                .iter()
                .map(|&(epoch, r_w, r_l)| TrajectoryPoint {
                    step: epoch * 10,
                    epoch,
                    mean_ll_w: 0.0,
                    mean_ll_l: 0.0,
                    mean_r_w: r_w,
                    mean_r_l: r_l,
                    train_loss: 0.0,
                })
                .collect(),
            policy: PolicyParams::zeros(1, 4).unwrap(),
        }
    }

    #[test]
    fn verdict_on_handmade_trajectories() {
        let runs = [
            run(ObjectiveKind::ApoZero, &[(0, 0.0, 0.0), (1, 0.3, -0.1), (2, 1.0, -0.5)]),
            run(ObjectiveKind::Dpo, &[(0, 0.0, 0.0), (1, 0.25, -0.1), (2, -0.2, -1.5)]),
            run(ObjectiveKind::ApoDown, &[(0, 0.0, 0.0), (1, -0.1, -0.4), (2, -0.9, -2.0)]),
        ];
        let v = ordering_verdict(&runs);
        assert_eq!(
            v,
            OrderingVerdict {
                apo_zero_highest: Some(true),
                apo_down_lowest: Some(true),
                dpo_between: Some(true),
                positive_margins: Some(true),
                dpo_tracks_apo_zero_early: Some(true),
            }
        );
        let partial = ordering_verdict(&runs[..2]);
        assert_eq!(partial.apo_down_lowest, None);
        assert_eq!(partial.dpo_between, None);
        assert_eq!(partial.apo_zero_highest, Some(true));
    }

    #[test]
    fn verdict_detects_violations() {
        let runs = [
            run(ObjectiveKind::ApoZero, &[(0, 0.0, 0.0), (1, -0.3, -0.1), (2, -1.0, 0.5)]),
            run(ObjectiveKind::Dpo, &[(0, 0.0, 0.0), (1, -0.3, -0.4), (2, -0.2, -1.5)]),
            run(ObjectiveKind::ApoDown, &[(0, 0.0, 0.0), (1, -0.3, -0.4), (2, -0.9, -2.0)]),
        ];
        let v = ordering_verdict(&runs);
        assert_eq!(v.apo_zero_highest, Some(false));
        assert_eq!(v.positive_margins, Some(false));
        assert_eq!(v.dpo_tracks_apo_zero_early, Some(false));
    }

    #[test]
    fn single_objective_rejected() {
        let v = Vocabulary::from_words(["a"]).unwrap();
        let d = vec![PreferenceTriple::new("a", "a", "a", Source::Synthetic).unwrap(); 4];
        let err = compare_dynamics(&d, &v, &TrainConfig::default(), &[ObjectiveKind::Dpo]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn repeated_objective_is_bit_identical() {
        let words = ["a", "b", "c", "d"];
        let v = Vocabulary::from_words(words).unwrap();
        let d: Vec<_> = (0..40)
            .map(|i| {
                PreferenceTriple::new(words[i % 4], "a b", words[(i + 1) % 4], Source::Synthetic)
                    .unwrap()
            })
            .collect();
        let c = TrainConfig {
            epochs: 2,
            min_heldout: 8,
            ..TrainConfig::default()
        };
        let r = compare_dynamics(&d, &v, &c, &[ObjectiveKind::ApoZero, ObjectiveKind::ApoZero])
            .unwrap();
        assert_eq!(r.runs[0].trajectory, r.runs[1].trajectory);
        assert_eq!(r.runs[0].policy, r.runs[1].policy);
    }
}
