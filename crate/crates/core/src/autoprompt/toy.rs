//! Integer-parameterized prompt family with a known unique optimum, used to
//! verify the calibration loop end to end: bodies carry a `[k=N]` marker,
//! mutations step k by ±1 (plus a seeded jump), and the scorer is the
//! negated squared distance to the optimum.

use std::sync::OnceLock;

use rand::RngCore;
use regex::Regex;

use crate::autoprompt::{AutopromptError, Mutator, PromptScorer};
use crate::oracle::{PromptTemplate, PromptType};

pub fn toy_prompt(k: i64) -> PromptTemplate {
    let body = format!("[k={k}] Ask exactly one question next.\n\n{{context}}");
    PromptTemplate::new(PromptType::Rollout, body).expect("toy body is always valid")
}

pub fn toy_param(p: &PromptTemplate) -> Option<i64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\[k=(-?\d+)\]").expect("static pattern compiles"));
    re.captures(p.body()).and_then(|c| c[1].parse().ok())
}

/// Steps the marker by ±1 (clamped to [lo, hi]) and adds a seeded jump so
/// the search can escape the walk occasionally.
pub struct ToyMutator {
    pub lo: i64,
    pub hi: i64,
}

impl Mutator for ToyMutator {
    fn mutate(&self, incumbent: &PromptTemplate, count: usize, rng: &mut dyn RngCore) -> Vec<String> {
        let Some(k) = toy_param(incumbent) else {
            return Vec::new();
        };
        let clamp = |v: i64| v.clamp(self.lo, self.hi);
        let mut out = Vec::with_capacity(count);
        let span = (self.hi - self.lo + 1).max(1) as u64;
        for i in 0..count {
            let next = match i {
                0 => clamp(k - 1),
                1 => clamp(k + 1),
                _ => self.lo + (rng.next_u64() % span) as i64,
            };
            out.push(toy_prompt(next).body().to_string());
        }
        out
    }
}

/// Unique-optimum scorer: −(k − optimum)².
pub struct ToyScorer {
    pub optimum: i64,
}

impl PromptScorer for ToyScorer {
    fn score(&self, p: &PromptTemplate) -> Result<f64, AutopromptError> {
        let k = toy_param(p)
            .ok_or_else(|| AutopromptError::BadParams("toy scorer needs a [k=N] marker".into()))?;
        let d = (k - self.optimum) as f64;
        Ok(-(d * d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoprompt::{calibrate, CalibrationParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn marker_round_trips() {
        assert_eq!(toy_param(&toy_prompt(7)), Some(7));
        assert_eq!(toy_param(&toy_prompt(-3)), Some(-3));
        assert_eq!(toy_param(&PromptTemplate::default_rollout()), None);
    }

    #[test]
    fn scorer_is_negated_squared_distance() {
        let scorer = ToyScorer { optimum: 7 };
        assert_eq!(scorer.score(&toy_prompt(7)).unwrap(), 0.0);
        assert_eq!(scorer.score(&toy_prompt(5)).unwrap(), -4.0);
        assert_eq!(scorer.score(&toy_prompt(10)).unwrap(), -9.0);
    }

    #[test]
    fn mutations_step_and_clamp() {
        let mutator = ToyMutator { lo: 0, hi: 10 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bodies = mutator.mutate(&toy_prompt(0), 3, &mut rng);
        assert_eq!(bodies[0], toy_prompt(0).body());
        assert_eq!(bodies[1], toy_prompt(1).body());
        let jump = toy_param(&PromptTemplate::new(PromptType::Rollout, bodies[2].clone()).unwrap()).unwrap();
        assert!((0..=10).contains(&jump));
    }

    #[test]
    fn search_reaches_the_unique_optimum() {
        let mutator = ToyMutator { lo: 0, hi: 20 };
        let scorer = ToyScorer { optimum: 7 };
        for seed in 0..3 {
            let params = CalibrationParams { k: 30, n_per_iter: 4, seed };
            let run = calibrate(&toy_prompt(0), params, &mutator, &scorer).unwrap();
            assert_eq!(toy_param(&run.best), Some(7), "seed {seed}");
            assert_eq!(run.best_score, 0.0);
            let mut prev = f64::NEG_INFINITY;
            for it in &run.iterations {
                assert!(it.best_score >= prev, "regression at iteration {}", it.iteration);
                prev = it.best_score;
            }
        }
    }
}
