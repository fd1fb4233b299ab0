use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt::Display;

use super::mlp::{seeded_rng, MlpExpert, TrainConfig};
use super::NetError;

/// Training rows together with the names used for scaling.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub input_names: &'a [String],
    pub target_name: &'a str,
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [f64],
}

/// Creates `n` experts seeded `base_seed..base_seed+n`, each scaled and
/// trained on `data` alone. Experts train in parallel.
pub fn generate_experts(
    n: usize,
    base_seed: u64,
    n_hidden: usize,
    data: TrainingData<'_>,
    cfg: &TrainConfig,
) -> Result<Vec<MlpExpert>, NetError> {
    if n == 0 {
        return Err(NetError::Input("need at least one expert".into()));
    }
    cfg.validate()?;
    let n_inputs = data.input_names.len();
    (0..n)
        .into_par_iter()
        .map(|index| {
            let seed = base_seed.wrapping_add(index as u64);
            let wrap = |source: NetError| NetError::Expert {
                index,
                seed,
                source: Box::new(source),
            };
            let mut expert = MlpExpert::init(n_inputs, n_hidden, cfg.initial_weight_range, seed).map_err(wrap)?;
            expert
                .fit_scaling(data.input_names, data.target_name, data.inputs, data.targets)
                .map_err(wrap)?;
            expert.train(data.inputs, data.targets, cfg).map_err(wrap)?;
            Ok(expert)
        })
        .collect()
}

/// Test-range evaluation of one expert.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertScore {
    /// EP confidence level; `None` when the test was degenerate.
    pub ep_prob: Option<f64>,
    /// Final equity of the strategy driven by the expert.
    pub equity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExpert {
    pub index: usize,
    pub seed: u64,
    pub score: ExpertScore,
    pub passed_ep: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index of the chosen expert in the input list.
    pub best: usize,
    /// False when no expert reached the EP threshold and the choice fell back
    /// to equity alone.
    pub passed_ep: bool,
    pub scores: Vec<ScoredExpert>,
}

fn by_equity_then_seed(a: &ScoredExpert, b: &ScoredExpert) -> Ordering {
    b.score
        .equity
        .total_cmp(&a.score.equity)
        .then(a.seed.cmp(&b.seed))
}

/// Two-stage choice: keep experts whose EP probability reaches
/// `ep_threshold`, then take the highest final equity (lowest seed on ties).
pub fn select_expert<E: Display>(
    experts: &[MlpExpert],
    ep_threshold: f64,
    scorer: impl Fn(&MlpExpert) -> Result<ExpertScore, E>,
) -> Result<(MlpExpert, Selection), NetError> {
    if experts.is_empty() {
        return Err(NetError::Input("no experts to select from".into()));
    }
    let scores = experts
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let score = scorer(e).map_err(|err| NetError::Selection {
                index,
                seed: e.seed(),
                reason: err.to_string(),
            })?;
            Ok(ScoredExpert {
                index,
                seed: e.seed(),
                passed_ep: score.ep_prob.is_some_and(|p| p >= ep_threshold),
                score,
            })
        })
        .collect::<Result<Vec<_>, NetError>>()?;
    let any_passed = scores.iter().any(|s| s.passed_ep);
    let best = scores
        .iter()
        .filter(|s| s.passed_ep || !any_passed)
        .min_by(|a, b| by_equity_then_seed(a, b))
        .expect("at least one candidate");
    let selection = Selection {
        best: best.index,
        passed_ep: any_passed,
        scores: scores.clone(),
    };
    Ok((experts[best.index].clone(), selection))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbOutcome {
    pub rounds: usize,
    pub accepted: usize,
    pub initial_score: f64,
    pub final_score: f64,
}

/// Random-restart-free hill climbing on the network parameters: each round
/// perturbs every parameter by uniform noise in `[-epsilon, epsilon]` and
/// keeps the result only if `score` strictly improves.
pub fn perturb_improve<E: Display>(
    expert: &MlpExpert,
    epsilon: f64,
    rounds: usize,
    seed: u64,
    score: impl Fn(&MlpExpert) -> Result<f64, E>,
) -> Result<(MlpExpert, PerturbOutcome), NetError> {
    if !(epsilon > 0.0) || rounds == 0 {
        return Err(NetError::Input(format!(
            "perturbation needs epsilon > 0 and rounds >= 1, got {epsilon} and {rounds}"
        )));
    }
    let fail = |e: E| NetError::Selection {
        index: 0,
        seed: expert.seed(),
        reason: e.to_string(),
    };
    let mut rng = seeded_rng(seed);
    let mut current = expert.clone();
    let initial_score = score(&current).map_err(fail)?;
    let mut best = initial_score;
    let mut accepted = 0;
    for _ in 0..rounds {
        let candidate = current.perturbed(epsilon, &mut rng);
        let s = score(&candidate).map_err(fail)?;
        if s > best {
            best = s;
            current = candidate;
            accepted += 1;
        }
    }
    Ok((
        current,
        PerturbOutcome {
            rounds,
            accepted,
            initial_score,
            final_score: best,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<String>, Vec<Vec<f64>>, Vec<f64>) {
        let inputs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i as f64 * 0.5).sin()]).collect();
        let targets: Vec<f64> = inputs.iter().map(|r| r[0] * 0.3 + r[1]).collect();
        (vec!["a".into(), "b".into()], inputs, targets)
    }

    fn cfg() -> TrainConfig {
        TrainConfig { max_epochs: 50, ..TrainConfig::default() }
    }

    #[test]
    fn single_expert_matches_manual_training() {
        let (names, x, y) = toy();
        let data = TrainingData { input_names: &names, target_name: "y", inputs: &x, targets: &y };
        let got = generate_experts(1, 42, 3, data, &cfg()).unwrap();
        let mut manual = MlpExpert::init(2, 3, 0.4, 42).unwrap();
        manual.fit_scaling(&names, "y", &x, &y).unwrap();
        manual.train(&x, &y, &cfg()).unwrap();
        assert_eq!(got, vec![manual]);
    }

    #[test]
    fn experts_are_distinct_and_reproducible() {
        let (names, x, y) = toy();
        let data = TrainingData { input_names: &names, target_name: "y", inputs: &x, targets: &y };
        let a = generate_experts(5, 7, 3, data, &cfg()).unwrap();
        let b = generate_experts(5, 7, 3, data, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(MlpExpert::seed).collect::<Vec<_>>(), vec![7, 8, 9, 10, 11]);
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(a[i].parameters(), a[j].parameters());
            }
        }
        assert!(generate_experts(0, 7, 3, data, &cfg()).is_err());
    }

    #[test]
    fn training_errors_name_the_expert() {
        let (names, x, y) = toy();
        let data = TrainingData { input_names: &names[..1], target_name: "y", inputs: &x, targets: &y };
        let err = generate_experts(2, 3, 2, data, &cfg()).unwrap_err();
        assert!(matches!(err, NetError::Expert { index: 0, seed: 3, .. }));
    }

    fn fixed_scores(table: &[(u64, Option<f64>, f64)]) -> impl Fn(&MlpExpert) -> Result<ExpertScore, String> + '_ {
        move |e: &MlpExpert| {
            let (_, ep_prob, equity) = table.iter().find(|t| t.0 == e.seed()).copied().unwrap();
            Ok(ExpertScore { ep_prob, equity })
        }
    }

    #[test]
    fn selection_prefers_equity_among_passing() {
        let experts: Vec<_> = (1..=3).map(|s| MlpExpert::init(1, 1, 0.4, s).unwrap()).collect();
        let table = [(1, Some(0.995), 62.70), (2, Some(0.999), 30.00), (3, Some(0.5), 90.0)];
        let (best, sel) = select_expert(&experts, 0.99, fixed_scores(&table)).unwrap();
        assert_eq!(best.seed(), 1);
        assert!(sel.passed_ep);
        assert_eq!(sel.scores.len(), 3);
        assert!(!sel.scores[2].passed_ep);
    }

    #[test]
    fn selection_falls_back_to_equity() {
        let experts: Vec<_> = (1..=2).map(|s| MlpExpert::init(1, 1, 0.4, s).unwrap()).collect();
        let table = [(1, None, 11.0), (2, Some(0.3), 12.0)];
        let (best, sel) = select_expert(&experts, 0.99, fixed_scores(&table)).unwrap();
        assert_eq!(best.seed(), 2);
        assert!(!sel.passed_ep);

        let one = [MlpExpert::init(1, 1, 0.4, 1).unwrap()];
        let (_, sel) = select_expert(&one, 0.99, fixed_scores(&[(1, Some(0.999), 1.0)])).unwrap();
        assert!(sel.passed_ep);
    }

    #[test]
    fn selection_is_permutation_invariant() {
        let mut experts: Vec<_> = (1..=6).map(|s| MlpExpert::init(1, 1, 0.4, s).unwrap()).collect();
        let table = [
            (1, Some(0.999), 20.0),
            (2, Some(0.995), 25.0),
            (3, Some(0.999), 25.0),
            (4, Some(0.6), 80.0),
            (5, None, 99.0),
            (6, Some(0.991), 24.0),
        ];
        let (first, _) = select_expert(&experts, 0.99, fixed_scores(&table)).unwrap();
        assert_eq!(first.seed(), 2);
        for rot in 1..6 {
            experts.rotate_left(1);
            let (best, _) = select_expert(&experts, 0.99, fixed_scores(&table)).unwrap();
            assert_eq!(best.seed(), 2, "rotation {rot}");
        }
        experts.reverse();
        let (best, _) = select_expert(&experts, 0.99, fixed_scores(&table)).unwrap();
        assert_eq!(best.seed(), 2);
    }

    #[test]
    fn scorer_failure_names_expert() {
        let experts = [MlpExpert::init(1, 1, 0.4, 9).unwrap()];
        let err = select_expert(&experts, 0.99, |_| Err::<ExpertScore, _>("boom")).unwrap_err();
        assert!(matches!(err, NetError::Selection { index: 0, seed: 9, .. }));
        assert!(select_expert(&[], 0.99, |_| Ok::<_, String>(ExpertScore { ep_prob: None, equity: 0.0 })).is_err());
    }

    #[test]
    fn perturbation_never_worsens() {
        let e = MlpExpert::init(2, 2, 0.4, 3).unwrap();
        let target: Vec<f64> = vec![0.5; e.parameter_count()];
        let score = |m: &MlpExpert| -> Result<f64, String> {
            Ok(-m.parameters().iter().zip(&target).map(|(p, t)| (p - t).powi(2)).sum::<f64>())
        };
        let (better, out) = perturb_improve(&e, 0.05, 200, 1, score).unwrap();
        assert!(out.final_score >= out.initial_score);
        assert!(out.accepted > 0);
        assert_eq!(score(&better).unwrap(), out.final_score);
        let (again, _) = perturb_improve(&e, 0.05, 200, 1, score).unwrap();
        assert_eq!(again, better);
    }

    #[test]
    fn no_accepted_move_returns_original() {
        let e = MlpExpert::init(2, 2, 0.4, 3).unwrap();
        let (same, out) = perturb_improve(&e, 0.1, 10, 4, |_| Ok::<_, String>(1.0)).unwrap();
        assert_eq!(same, e);
        assert_eq!(out.accepted, 0);
        assert!(perturb_improve(&e, 0.0, 10, 4, |_| Ok::<_, String>(1.0)).is_err());
    }
}
