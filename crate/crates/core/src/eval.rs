//! Metrics and the model comparison experiment.
//!
//! Four systems are compared on the test split: the supervised agents
//! without (SLNT) and with (SLT) tags, the reinforced agent decoded by beam
//! top-1 (SAMIA-A), and the reinforced agent reranked with the user model
//! (SAMIA). Every beam candidate is scored by the rule user; a system's
//! reward on an input is the score of the response it returns.
//!
//! nDCG normalizes each system's DCG by the ideal DCG of all candidates the
//! four systems produced for that input, so a system cannot reach 1 just by
//! never finding an informative response. When no candidate earns a reward
//! the ideal is 0 and nDCG is 1 for everyone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent_model::{agent_examples, rerank_infer, rl_inputs, AgentKind, AgentSample, Rerank, UserSimulator};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::seq2seq::{beam_search, perplexity, Hypothesis, Seq2SeqParams};
use crate::simulator::{criterion_reward, RuleUser};
use crate::slots::SlotSchema;
use crate::text::{decode, Vocabulary};
use crate::user_model::{user_examples, UserPair};

pub const REPORT_FORMAT: &str = "dialogue-eval-report";
pub const NDCG_CUTOFFS: [usize; 3] = [1, 3, 5];

/// `r_1 + sum_{i>=2} r_i / log2(i)`
pub fn dcg(rewards: &[f64]) -> Result<f64> {
    if let Some(r) = rewards.iter().find(|r| r.is_nan() || **r < 0.0) {
        return Err(Error::InvalidArgument(format!("rewards must be non-negative, got {r}")));
    }
    Ok(rewards
        .iter()
        .enumerate()
        .map(|(i, r)| if i == 0 { *r } else { r / ((i + 1) as f64).log2() })
        .sum())
}

/// DCG of `ranked` over the DCG of the best ordering of `pool`, both cut
/// at `ranked.len()`. Defined as 1 when the ideal is 0.
pub fn ndcg(ranked: &[f64], pool: &[f64]) -> Result<f64> {
    let mut ideal: Vec<f64> = pool.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    ideal.truncate(ranked.len());
    let best = dcg(&ideal)?;
    let got = dcg(ranked)?;
    if best == 0.0 {
        return Ok(1.0);
    }
    Ok((got / best).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
}

impl Stat {
    /// Mean and standard error (sample deviation over sqrt(n)).
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Stat { mean: 0.0, stderr: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Stat { mean, stderr: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Stat {
            mean,
            stderr: (var / n).sqrt(),
        }
    }

    /// `self` above `other` with the `±1 stderr` intervals disjoint.
    pub fn clearly_above(&self, other: &Stat) -> bool {
        self.mean - self.stderr > other.mean + other.stderr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum System {
    #[serde(rename = "SLNT")]
    Slnt,
    #[serde(rename = "SLT")]
    Slt,
    #[serde(rename = "SAMIA-A")]
    SamiaA,
    #[serde(rename = "SAMIA")]
    Samia,
}

impl System {
    pub const ALL: [System; 4] = [System::Slnt, System::Slt, System::SamiaA, System::Samia];

    pub fn label(self) -> &'static str {
        match self {
            System::Slnt => "SLNT",
            System::Slt => "SLT",
            System::SamiaA => "SAMIA-A",
            System::Samia => "SAMIA",
        }
    }
}

/// Trained parameters of every model in the comparison.
pub struct Models<'a> {
    pub user: &'a Seq2SeqParams,
    pub slnt: &'a Seq2SeqParams,
    pub slt: &'a Seq2SeqParams,
    /// The reinforced agent; tagged input like SLT.
    pub samia: &'a Seq2SeqParams,
}

/// Held-out data the experiment runs on.
pub struct EvalData<'a> {
    pub schema: &'a SlotSchema,
    pub vocab: &'a Vocabulary,
    pub agent_test: &'a [AgentSample],
    pub user_test: &'a [UserPair],
}

/// What each system produced for one test input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCandidates {
    /// Candidate texts per system, in that system's ranking order.
    pub ranked: BTreeMap<System, Vec<Vec<String>>>,
    /// The response each system returns.
    pub chosen: BTreeMap<System, Vec<String>>,
    /// SAMIA's full rerank record.
    pub rerank: Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: System,
    pub avg_reward: Stat,
    /// nDCG at 1, 3 and 5.
    pub ndcg: [Stat; 3],
    pub test_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub repeats: usize,
    pub test_inputs: usize,
    pub user_test_perplexity: f64,
    pub systems: Vec<SystemReport>,
    /// Reference agent turns scored the same way.
    pub ground_truth: Stat,
    pub notes: Vec<String>,
}

impl Report {
    pub fn system(&self, s: System) -> &SystemReport {
        self.systems.iter().find(|r| r.system == s).expect("every system is reported")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>17} {:>17} {:>17} {:>17} {:>10}",
            "model", "avg reward", "nDCG@1", "nDCG@3", "nDCG@5", "test ppl"
        );
        let cell = |s: &Stat| format!("{:.3} ± {:.3}", s.mean, s.stderr);
        for r in &self.systems {
            let _ = writeln!(
                out,
                "{:<10} {:>17} {:>17} {:>17} {:>17} {:>10.3}",
                r.system.label(),
                cell(&r.avg_reward),
                cell(&r.ndcg[0]),
                cell(&r.ndcg[1]),
                cell(&r.ndcg[2]),
                r.test_perplexity
            );
        }
        let _ = writeln!(out, "{:<10} {:>17}", "reference", cell(&self.ground_truth));
        let _ = writeln!(out, "user model test perplexity: {:.3}", self.user_test_perplexity);
        let _ = writeln!(out, "{} test inputs, {} repeats", self.test_inputs, self.repeats);
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    /// Tab-separated `model metric mean stderr` rows for plotting.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("model\tmetric\tmean\tstderr\n");
        for r in &self.systems {
            let mut row = |metric: &str, s: &Stat| {
                let _ = writeln!(out, "{}\t{metric}\t{:.6}\t{:.6}", r.system.label(), s.mean, s.stderr);
            };
            row("avg_reward", &r.avg_reward);
            for (k, s) in NDCG_CUTOFFS.iter().zip(&r.ndcg) {
                row(&format!("ndcg@{k}"), s);
            }
        }
        let _ = writeln!(
            out,
            "reference\tavg_reward\t{:.6}\t{:.6}",
            self.ground_truth.mean, self.ground_truth.stderr
        );
        out
    }
}

fn texts(hyps: &[Hypothesis], vocab: &Vocabulary) -> Vec<Vec<String>> {
    hyps.iter().map(|h| decode(&h.tokens, vocab)).collect()
}

/// Beam candidates and choices of every system on every test input. This
/// is the expensive, deterministic half of the experiment.
pub fn collect_candidates(cfg: &Config, data: &EvalData<'_>, models: &Models<'_>) -> Result<Vec<InputCandidates>> {
    let max_len = cfg.model.max_len;
    let (width, top) = (cfg.eval.beam_width, cfg.eval.rerank_top);
    let plain = rl_inputs(data.agent_test, data.vocab, data.schema, max_len, false);
    let tagged = rl_inputs(data.agent_test, data.vocab, data.schema, max_len, true);
    let mut sim = UserSimulator::new(models.user, data.vocab, data.schema, cfg.rl.user_beam, max_len, cfg.rl.baseline);
    let mut out = Vec::with_capacity(plain.len());
    for (p, t) in plain.iter().zip(&tagged) {
        let slnt = texts(&beam_search(models.slnt, &p.ids, width, max_len)?, data.vocab);
        let slt = texts(&beam_search(models.slt, &t.ids, width, max_len)?, data.vocab);
        let rerank = rerank_infer(models.samia, &mut sim, t, width, top, max_len)?;
        let samia_a: Vec<Vec<String>> = rerank
            .candidates
            .iter()
            .map(|c| decode(&c.hypothesis.tokens, data.vocab))
            .collect();
        let samia: Vec<Vec<String>> = rerank.ranking().into_iter().map(|i| samia_a[i].clone()).collect();
        let first = |c: &[Vec<String>]| c.first().cloned().unwrap_or_default();
        let chosen = BTreeMap::from([
            (System::Slnt, first(&slnt)),
            (System::Slt, first(&slt)),
            (System::SamiaA, first(&samia_a)),
            (System::Samia, decode(&rerank.chosen().tokens, data.vocab)),
        ]);
        let ranked = BTreeMap::from([
            (System::Slnt, slnt),
            (System::Slt, slt),
            (System::SamiaA, samia_a),
            (System::Samia, samia),
        ]);
        out.push(InputCandidates { ranked, chosen, rerank });
    }
    Ok(out)
}

/// Rule-user scoring over `cfg.eval.repeats` bootstrap resamples of the
/// test inputs, each with freshly drawn user goals.
pub fn score(
    cfg: &Config,
    data: &EvalData<'_>,
    candidates: &[InputCandidates],
    perplexities: &BTreeMap<System, f64>,
    user_perplexity: f64,
) -> Result<Report> {
    let n = data.agent_test.len();
    if n == 0 || candidates.len() != n {
        return Err(Error::InvalidArgument("candidate lists must cover a non-empty test split".into()));
    }
    let mut reward_runs: BTreeMap<System, Vec<f64>> = BTreeMap::new();
    let mut ndcg_runs: BTreeMap<(System, usize), Vec<f64>> = BTreeMap::new();
    let mut truth_runs = Vec::new();
    for rep in 0..cfg.eval.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.eval.wrapping_mul(1000).wrapping_add(rep as u64));
        let mut reward_sum: BTreeMap<System, f64> = BTreeMap::new();
        let mut ndcg_sum: BTreeMap<(System, usize), f64> = BTreeMap::new();
        let mut truth = 0.0;
        for _ in 0..n {
            let i = rng.random_range(0..n);
            let sample = &data.agent_test[i];
            let goal = RuleUser::random_goal(data.schema, &sample.input.tags, &mut rng);
            let user = RuleUser::new(goal, data.schema)?;
            let cand = &candidates[i];
            let mut pool: BTreeMap<&[String], f64> = BTreeMap::new();
            let mut gains: BTreeMap<System, Vec<f64>> = BTreeMap::new();
            for sys in System::ALL {
                let g: Vec<f64> = cand.ranked[&sys]
                    .iter()
                    .map(|c| criterion_reward(c, &sample.input, &user))
                    .collect();
                for (c, r) in cand.ranked[&sys].iter().zip(&g) {
                    pool.insert(c.as_slice(), *r);
                }
                *reward_sum.entry(sys).or_default() += criterion_reward(&cand.chosen[&sys], &sample.input, &user);
                gains.insert(sys, g);
            }
            let pool: Vec<f64> = pool.into_values().collect();
            for sys in System::ALL {
                for &k in &NDCG_CUTOFFS {
                    let g = &gains[&sys];
                    *ndcg_sum.entry((sys, k)).or_default() += ndcg(&g[..k.min(g.len())], &pool)?;
                }
            }
            truth += criterion_reward(&sample.response, &sample.input, &user);
        }
        for (sys, s) in reward_sum {
            reward_runs.entry(sys).or_default().push(s / n as f64);
        }
        for (key, s) in ndcg_sum {
            ndcg_runs.entry(key).or_default().push(s / n as f64);
        }
        truth_runs.push(truth / n as f64);
    }
    let systems = System::ALL
        .iter()
        .map(|&sys| SystemReport {
            system: sys,
            avg_reward: Stat::of(&reward_runs[&sys]),
            ndcg: NDCG_CUTOFFS.map(|k| Stat::of(&ndcg_runs[&(sys, k)])),
            test_perplexity: perplexities.get(&sys).copied().unwrap_or(f64::NAN),
        })
        .collect();
    Ok(Report {
        format: REPORT_FORMAT.into(),
        version: 1,
        repeats: cfg.eval.repeats,
        test_inputs: n,
        user_test_perplexity: user_perplexity,
        systems,
        ground_truth: Stat::of(&truth_runs),
        notes: vec![
            "each repeat resamples the test inputs with replacement and draws new rule-user goals".into(),
            "nDCG ideal pools the candidates of all systems; all-zero gains give nDCG = 1".into(),
            "SLNT, SLT and SAMIA-A return their beam top-1; SAMIA returns its reranked choice".into(),
        ],
    })
}

/// Test perplexities of the user model and each system.
pub fn perplexities(cfg: &Config, data: &EvalData<'_>, models: &Models<'_>) -> Result<(f64, BTreeMap<System, f64>)> {
    let max_len = cfg.model.max_len;
    let user = perplexity(models.user, &user_examples(data.user_test, data.vocab, max_len))?;
    let ex = |kind: AgentKind| agent_examples(data.agent_test, data.vocab, data.schema, max_len, kind.with_tags());
    let (plain, tagged) = (ex(AgentKind::Slnt), ex(AgentKind::Slt));
    let samia = perplexity(models.samia, &tagged)?;
    let map = BTreeMap::from([
        (System::Slnt, perplexity(models.slnt, &plain)?),
        (System::Slt, perplexity(models.slt, &tagged)?),
        (System::SamiaA, samia),
        (System::Samia, samia),
    ]);
    Ok((user, map))
}

/// The full comparison. Also returns the per-input candidate record.
pub fn run_experiment(
    cfg: &Config,
    data: &EvalData<'_>,
    models: &Models<'_>,
) -> Result<(Report, Vec<InputCandidates>)> {
    let candidates = collect_candidates(cfg, data, models)?;
    let (user_ppl, ppl) = perplexities(cfg, data, models)?;
    let report = score(cfg, data, &candidates, &ppl, user_ppl)?;
    Ok((report, candidates))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dcg_by_hand() {
        let d = dcg(&[1.0, 0.0, 1.0]).unwrap();
        assert!((d - (1.0 + 1.0 / 3f64.log2())).abs() < 1e-12);
        assert!((d - 1.6309297535714575).abs() < 1e-12);
        assert_eq!(dcg(&[]).unwrap(), 0.0);
        assert!(dcg(&[1.0, -0.5]).is_err());
        assert!(dcg(&[f64::NAN]).is_err());
    }

    #[test]
    fn ndcg_conventions() {
        assert_eq!(ndcg(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ndcg(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap(), 1.0);
        // A pool with more information than the ranking lowers the score.
        let v = ndcg(&[0.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stat_of_samples() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert!((s.mean - 2.0).abs() < 1e-12);
        assert!((s.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(Stat { mean: 1.0, stderr: 0.1 }.clearly_above(&Stat { mean: 0.5, stderr: 0.1 }));
        assert!(!Stat { mean: 1.0, stderr: 0.3 }.clearly_above(&Stat { mean: 0.5, stderr: 0.3 }));
    }

    #[test]
    fn ndcg_rewards_moving_gains_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let n: usize = rng.random_range(1..8);
            let gains: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) })
                .collect();
            let base = ndcg(&gains, &gains).unwrap();
            assert!((0.0..=1.0).contains(&base));
            let mut sorted = gains.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            assert!((ndcg(&sorted, &gains).unwrap() - 1.0).abs() < 1e-12);
            for i in 0..n.saturating_sub(1) {
                if gains[i] < gains[i + 1] {
                    let mut swapped = gains.clone();
                    swapped.swap(i, i + 1);
                    assert!(ndcg(&swapped, &gains).unwrap() >= base - 1e-12);
                }
            }
        }
    }
}
