//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails or overruns its time budget.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cre_engine::analyst::{render_error_analysis_prompt, render_relation_contrast_prompt, AnalystClient};
use cre_engine::backend::protocol::LoopbackTransport;
use cre_engine::backend::service::SimService;
use cre_engine::backend::{
    answer_json, ModelBackend, RecordingBackend, ReplayBackend, ScriptedBackend, SimBackend, SimConfig,
    TrainBatchItem, TrainParams, TrainSummary,
};
use cre_engine::config::{AblationFlags, RunConfig};
use cre_engine::corpus::synthetic::{generate, SyntheticConfig, ANALOGOUS_PAIRS};
use cre_engine::corpus::{
    build_task_sequences, cap_per_relation, parse_dataset, relation_set, DatasetFormat, RelationLabel, Sample,
    TaskSequence,
};
use cre_engine::embed::{CachedEmbedder, Embedder, Embedding, HashingEmbedder};
use cre_engine::evaluation::RunReport;
use cre_engine::instructions::{
    build_contrastive, build_simple, InstructionKind, NegativeDemos, PositiveDemos, Prediction, TASK_DESCRIPTION,
};
use cre_engine::memory::{select_indices, select_memory_kmeans};
use cre_engine::orchestrator::{prepare_sequences, run_all, run_sequence, Pipeline};
use cre_engine::retrieval::{cosine_slices, most_similar_relation, retrieve_negative, retrieve_positive, RelationPrototype};
use cre_engine::splitter::{classify_task_data, HardCaseRecord, Provenance};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn labels(names: &[&str]) -> Vec<RelationLabel> {
    names.iter().map(|n| RelationLabel::new(n)).collect()
}

// ---------------------------------------------------------------- goldens

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn golden_relations(name: &str) -> Vec<RelationLabel> {
    golden(name).lines().map(RelationLabel::new).collect()
}

fn hard_record(id: &str, sentence: &str, head: &str, tail: &str, gold: &str, wrong: &str, reason: &str, analysis: &str) -> HardCaseRecord {
    HardCaseRecord {
        sample: Sample::new(id, sentence, head, tail, gold),
        wrong_prediction: Prediction::Relation(RelationLabel::new(wrong)),
        error_reason: reason.to_string(),
        answer_analysis: analysis.to_string(),
        task_index: 1,
        provenance: Provenance::Remote,
    }
}

const MCNAIR: &str = "McNair, born on Dec. 14, 1923, in the rural low country of South Carolina, was buried on Tuesday near his childhood home in Berkeley county.";

fn golden_fidelity() -> Check {
    let easy_case = Sample::new(
        "carson",
        "the 33-year-old Carson says he doesn't believe his religious identity hurts him politically.",
        "Carson",
        "33-year-old",
        "person age",
    );
    let simple = ok(build_simple(&easy_case, &golden_relations("relations_easy_case.txt")))?;
    ensure!(simple.text == golden("simple_easy_case.txt"), "simple instruction differs from golden:\n{}", simple.text);

    let birth_state = RelationLabel::new("person state or province of birth");
    let positives = vec![
        Sample::new("mitchell", "Parren James Mitchell was born on April 29, 1922, in Maryland.", "Parren James Mitchell", "Maryland", birth_state.as_str()),
        Sample::new("ahearn", "Ahearn was born Oct. 7, 1954, in Nashville, Tenn., and graduated with honors from the University of Alabama.", "Ahearn", "Tenn.", birth_state.as_str()),
        Sample::new("king", "Born in 1955 in Montgomery, Alabama, King was just an infant when her home was bombed during the turbulent civil rights era.", "her", "Alabama", birth_state.as_str()),
    ];
    let residence = "person state or provinces of residence";
    let city_residence = "person cities of residence";
    let negatives = vec![
        hard_record(
            "dodd",
            "it was 1985 ... sen. ted kennedy and sen. chris dodd were having dinner, along with their dates at the posh washington eatery known as la brasserie.",
            "chris dodd", "washington", residence, city_residence,
            "The error likely occurred due to the model incorrectly associating ‘washington’ with a city instead of a state.",
            "The correct relation ‘person state or provinces of residence’ between ‘chris dodd’ and ‘washington’ is based on knowledge that Washington here refers to the D.C. area as a region.",
        ),
        hard_record(
            "forsberg",
            "an arms control expert and political science professor at city college of new york, forsberg launched the movement in 1980 when she wrote the `` call to halt the nuclear arms race , '' a position paper that outlined the devastating potential of the arsenals possessed by the united states and what was then the soviet union .",
            "forsberg", "new york", residence, city_residence,
            "The error may be due to the model incorrectly associating ‘new york’ with ‘city’, confusing it with a city rather than a state or province.",
            "‘new york’ should be correctly associated as the state where ‘city college of new york’ is located, indicating the person's state of residence.",
        ),
        hard_record(
            "deaver",
            "deaver formed his own company after reagan left the state capital -- the former governor and presidential aspirant was his chief client -- and then joined reagan in washington after his 1980 election .",
            "his", "washington", residence, city_residence,
            "The error likely occurred due to the model misinterpreting ‘washington’ as a city instead of the state of Washington.",
            "The correct relation is ‘person state or provinces of residence’, where ‘his’ refers to Washington, the state, not the city.",
        ),
    ];
    let hard = hard_record("mcnair", MCNAIR, "McNair", "low country of south carolina", "person city of birth", "person country of birth", "-", "-");
    let difference = "The ‘person city of birth’ relation specifies the specific city where a person was born, while the ‘person state or province of birth’ relation indicates the broader state or province where a person was born.";
    let pos = PositiveDemos {
        similar_relation: &birth_state,
        samples: &positives,
        difference: Some(difference),
    };
    let neg = NegativeDemos {
        records: &negatives,
        with_analysis: true,
    };
    let contrastive = ok(build_contrastive(&hard, Some(&pos), Some(&neg), &golden_relations("relations_hard_case.txt")))?;
    ensure!(
        contrastive.text == golden("contrastive_hard_case.txt"),
        "contrastive instruction differs from golden:\n{}",
        contrastive.text
    );

    let mcnair = Sample::new("mcnair", MCNAIR, "McNair", "low country of South Carolina", "person city of birth");
    let mitchell = Sample::new("mitchell-lc", "Parren james mitchell was born on April 29, 1922, in Maryland.", "Parren james mitchell", "Maryland", birth_state.as_str());
    let p_r = render_relation_contrast_prompt(&mcnair.relation, &mcnair, &birth_state, &mitchell);
    ensure!(p_r == golden("relation_difference_prompt.txt"), "relation-difference prompt differs:\n{p_r}");
    let n_r = render_error_analysis_prompt(&mcnair, &Prediction::Relation(RelationLabel::new("person country of birth")));
    ensure!(n_r == golden("error_analysis_prompt.txt"), "error-analysis prompt differs:\n{n_r}");

    // Block order on randomized builds.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let word = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.random_range(3..8)).map(|_| char::from(rng.random_range(b'a'..=b'z'))).collect()
    };
    let sentence = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.random_range(4..12)).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
    };
    for trial in 0..1000 {
        let rels: Vec<RelationLabel> = (0..rng.random_range(2..8)).map(|i| RelationLabel::new(&format!("rel {i} {}", word(&mut rng)))).collect();
        let gold = rels[rng.random_range(0..rels.len())].clone();
        let r_s = rels.iter().find(|r| **r != gold).unwrap().clone();
        let record = HardCaseRecord {
            sample: Sample::new(format!("q{trial}"), sentence(&mut rng), word(&mut rng), word(&mut rng), gold.as_str()),
            wrong_prediction: Prediction::Relation(r_s.clone()),
            error_reason: sentence(&mut rng),
            answer_analysis: sentence(&mut rng),
            task_index: 2,
            provenance: Provenance::Fallback,
        };
        let n_pos = rng.random_range(0..4);
        let n_neg = if n_pos == 0 { rng.random_range(1..4) } else { rng.random_range(0..4) };
        let positives: Vec<Sample> = (0..n_pos)
            .map(|i| Sample::new(format!("p{i}"), sentence(&mut rng), word(&mut rng), word(&mut rng), r_s.as_str()))
            .collect();
        let negatives: Vec<HardCaseRecord> = (0..n_neg)
            .map(|i| HardCaseRecord {
                sample: Sample::new(format!("n{i}"), sentence(&mut rng), word(&mut rng), word(&mut rng), gold.as_str()),
                error_reason: sentence(&mut rng),
                answer_analysis: sentence(&mut rng),
                ..record.clone()
            })
            .collect();
        let difference = rng.random_bool(0.5).then(|| sentence(&mut rng));
        let pos = PositiveDemos {
            similar_relation: &r_s,
            samples: &positives,
            difference: difference.as_deref(),
        };
        let neg = NegativeDemos {
            records: &negatives,
            with_analysis: rng.random_bool(0.5),
        };
        let text = ok(build_contrastive(&record, Some(&pos), Some(&neg), &rels))?.text;
        let blocks: Vec<&str> = text.split('\n').collect();
        let mut expected = vec!["Now you need"];
        if n_pos > 0 {
            expected.push("Here are some examples");
        }
        if n_neg > 0 {
            expected.push("Before this, you have made");
        }
        expected.push("Now given the sentence");
        ensure!(blocks.len() == expected.len(), "trial {trial}: {} blocks, expected {}", blocks.len(), expected.len());
        ensure!(blocks[0] == TASK_DESCRIPTION, "trial {trial}: first block is not the task description");
        for (block, prefix) in blocks.iter().zip(&expected) {
            ensure!(block.starts_with(prefix), "trial {trial}: block out of order: {block}");
        }
    }
    Ok("4 goldens byte-equal; block order held on 1000 random builds".into())
}

// ---------------------------------------------------------------- split oracle

/// Answers with the candidate after the gold relation, so it is always wrong.
struct AlwaysWrong {
    gold_of: HashMap<String, RelationLabel>,
    relations: Vec<RelationLabel>,
}

impl AlwaysWrong {
    fn wrong_for(&self, gold: &RelationLabel) -> RelationLabel {
        let i = self.relations.iter().position(|r| r == gold).unwrap();
        self.relations[(i + 1) % self.relations.len()].clone()
    }
}

impl ModelBackend for AlwaysWrong {
    fn identity(&self) -> String {
        "always-wrong".into()
    }

    fn infer(&mut self, text: &str) -> cre_engine::Result<String> {
        let gold = self
            .gold_of
            .iter()
            .find(|(sentence, _)| text.contains(&format!("“{sentence}”")))
            .map(|(_, r)| r.clone())
            .expect("sentence present");
        Ok(answer_json(&self.wrong_for(&gold)))
    }

    fn train(&mut self, _: &[TrainBatchItem], _: &TrainParams) -> cre_engine::Result<TrainSummary> {
        Ok(TrainSummary { items_seen: 0, loss: 0.0 })
    }

    fn checkpoint(&mut self) -> cre_engine::Result<String> {
        Ok("always-wrong".into())
    }

    fn restore(&mut self, _: &str) -> cre_engine::Result<()> {
        Ok(())
    }
}

fn split_corpus(seed: u64) -> (Vec<Sample>, Vec<RelationLabel>) {
    let rels = labels(&["alpha link", "beta link", "gamma link", "delta link", "epsilon link"]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..500)
        .map(|i| {
            let r = &rels[rng.random_range(0..rels.len())];
            Sample::new(format!("s{i:03}"), format!("sentence {i} mentions token{} and token{}", rng.random::<u32>(), i), "token", format!("{i}"), r.as_str())
        })
        .collect();
    (samples, rels)
}

fn split_oracle() -> Check {
    for seed in 0..3u64 {
        let (samples, rels) = split_corpus(seed);

        // Expected (easy ids, hard (id, prediction)) per backend, derived from
        // each backend's rule alone.
        type Expected = (Vec<String>, Vec<(String, Prediction)>);
        let derive = |answer: &dyn Fn(&Sample) -> Prediction| -> Expected {
            let mut easy = Vec::new();
            let mut hard = Vec::new();
            for s in &samples {
                let p = answer(s);
                if p == Prediction::Relation(s.relation.clone()) {
                    easy.push(s.id.clone());
                } else {
                    hard.push((s.id.clone(), p));
                }
            }
            (easy, hard)
        };

        let mut wrong = AlwaysWrong {
            gold_of: samples.iter().map(|s| (s.sentence.clone(), s.relation.clone())).collect(),
            relations: rels.clone(),
        };
        let fixed = rels[2].clone();
        let cases: Vec<(&str, Box<dyn ModelBackend>, Expected)> = vec![
            ("always-right", Box::new(ScriptedBackend::oracle(&samples)), derive(&|s| Prediction::Relation(s.relation.clone()))),
            ("fixed-relation", Box::new(ScriptedBackend::fixed_relation(fixed.clone())), derive(&|_| Prediction::Relation(fixed.clone()))),
            ("fixed-text", Box::new(ScriptedBackend::fixed("no idea, sorry")), derive(&|_| Prediction::Unparseable)),
        ];
        let always_wrong_expected = derive(&|s| Prediction::Relation(wrong.wrong_for(&s.relation)));
        let mut runs: Vec<(&str, Box<dyn ModelBackend>, Expected)> = cases;
        for (name, backend, expected) in runs.iter_mut() {
            let c = ok(classify_task_data(&samples, &rels, backend.as_mut()))?;
            let got: Expected = (
                c.easy.iter().map(|s| s.id.clone()).collect(),
                c.hard.iter().map(|(s, p)| (s.id.clone(), p.clone())).collect(),
            );
            ensure!(&got == expected, "{name} (seed {seed}): classification differs from re-derivation");
        }
        let c = ok(classify_task_data(&samples, &rels, &mut wrong))?;
        let got: Expected = (
            c.easy.iter().map(|s| s.id.clone()).collect(),
            c.hard.iter().map(|(s, p)| (s.id.clone(), p.clone())).collect(),
        );
        ensure!(got == always_wrong_expected, "always-wrong (seed {seed}): classification differs");
        ensure!(got.0.is_empty() && got.1.len() == 500, "always-wrong produced easy samples");
    }
    Ok("4 scripted backends x 3 corpora of 500 samples match re-derivation".into())
}

// ---------------------------------------------------------------- memory oracle

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact k-means optimum by enumerating every assignment with no empty
/// cluster, then each cluster's member nearest its mean (ties by id).
/// Point 0 is pinned to label 0; relabelings give the same partition.
fn brute_force_representatives(points: &[Vec<f64>], ids: &[String], k: usize) -> Vec<usize> {
    let n = points.len();
    let total = (k as u64).pow(n as u32 - 1);
    let mut best = (f64::INFINITY, vec![0usize; n]);
    let mut assign = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for a in assign[1..].iter_mut() {
            *a = (c % k as u64) as usize;
            c /= k as u64;
        }
        let mut sums = vec![[0.0f64; 2]; k];
        let mut sumsq = vec![0.0f64; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sumsq[a] += p[0] * p[0] + p[1] * p[1];
            counts[a] += 1;
        }
        if counts.contains(&0) {
            continue;
        }
        let sse: f64 = (0..k)
            .map(|j| sumsq[j] - (sums[j][0] * sums[j][0] + sums[j][1] * sums[j][1]) / counts[j] as f64)
            .sum();
        if sse < best.0 - 1e-9 {
            best = (sse, assign.clone());
        }
    }
    let assign = best.1;
    let mut picks = Vec::new();
    for j in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
        let mean: Vec<f64> = (0..2)
            .map(|d| members.iter().map(|&i| points[i][d]).sum::<f64>() / members.len() as f64)
            .collect();
        let pick = *members
            .iter()
            .min_by(|&&a, &&b| sq(&points[a], &mean).total_cmp(&sq(&points[b], &mean)).then(ids[a].cmp(&ids[b])))
            .unwrap();
        picks.push(pick);
    }
    picks.sort_unstable();
    picks
}

fn planted(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let centers: Vec<[f64; 2]> = (0..k).map(|j| [20.0 * j as f64, 15.0 * ((j * 7) % k) as f64]).collect();
    let mut points: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = centers[i % k];
            vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]
        })
        .collect();
    points.shuffle(rng);
    points
}

/// Embeds "x,y" as a 2-D vector.
struct PointEmbedder;

impl Embedder for PointEmbedder {
    fn provider_id(&self) -> &str {
        "point"
    }

    fn dim(&self) -> usize {
        2
    }

    fn embed(&self, text: &str) -> cre_engine::Result<Embedding> {
        Ok(Embedding(text.split(',').map(|v| v.trim().parse().unwrap()).collect()))
    }
}

fn memory_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for &(n, k) in &[(20usize, 2usize), (12, 3), (10, 4), (16, 2), (9, 3)] {
        for trial in 0..2u64 {
            let points = planted(n, k, &mut rng);
            let ids: Vec<String> = (0..n).map(|i| format!("p{i:02}")).collect();
            let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let got = ok(select_indices(&points, &id_refs, k, trial))?;
            let want = brute_force_representatives(&points, &ids, k);
            ensure!(got == want, "n={n} m={k} trial {trial}: selected {got:?}, exhaustive optimum gives {want:?}");
            checked += 1;
        }
    }

    // Size and fixed point on unstructured data, through the sample-level API.
    for n in 1..=20usize {
        for m in 1..=4usize {
            let samples: Vec<Sample> = (0..n)
                .map(|i| {
                    let (x, y): (f64, f64) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
                    Sample::new(format!("s{i:02}"), format!("{x},{y}"), "h", "t", "r")
                })
                .collect();
            let selected = ok(select_memory_kmeans(&samples, m, &PointEmbedder, 3))?;
            ensure!(selected.len() == n.min(m), "n={n} m={m}: selected {}", selected.len());
            let ids: BTreeSet<&str> = selected.iter().map(|s| s.id.as_str()).collect();
            ensure!(ids.len() == selected.len(), "n={n} m={m}: duplicate picks");
            let again = ok(select_memory_kmeans(&selected, m, &PointEmbedder, 99))?;
            ensure!(again == selected, "n={n} m={m}: reselection is not a fixed point");
        }
    }
    Ok(format!("{checked} planted sets match exhaustive optimum; size/fixed point on 80 pools"))
}

// ---------------------------------------------------------------- retrieval oracle

/// Looks up vectors registered by text.
struct TableEmbedder(HashMap<String, Vec<f64>>);

impl Embedder for TableEmbedder {
    fn provider_id(&self) -> &str {
        "table"
    }

    fn dim(&self) -> usize {
        self.0.values().next().map_or(0, Vec::len)
    }

    fn embed(&self, text: &str) -> cre_engine::Result<Embedding> {
        Ok(Embedding(self.0[text].clone()))
    }
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Full scan: every candidate's score, sorted descending with ties by id.
fn full_scan(query: &[f64], cands: &[(String, Vec<f64>)], k: usize) -> Vec<String> {
    let mut scored: Vec<(f64, &String)> = cands.iter().map(|(id, v)| (naive_cosine(query, v), id)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id.clone()).collect()
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    // Small integer coordinates make exact score ties common.
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2i32..=2) as f64).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

fn retrieval_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut ties = 0;
    for pool_no in 0..200 {
        let dim = rng.random_range(2..5);
        let size = rng.random_range(1..15);
        let k = rng.random_range(1..6);
        let mut table = HashMap::new();
        let query_text = format!("query {pool_no}");
        let query = random_vec(&mut rng, dim);
        table.insert(query_text.clone(), query.clone());

        let mut ids: Vec<String> = (0..size).map(|i| format!("c{:02}", (i * 7) % 50)).collect();
        ids.sort();
        ids.dedup();
        ids.shuffle(&mut rng);
        let cands: Vec<(String, Vec<f64>)> = ids.iter().map(|id| (id.clone(), random_vec(&mut rng, dim))).collect();
        for (id, v) in &cands {
            table.insert(format!("text {id}"), v.clone());
        }
        let embedder = TableEmbedder(table);
        let mut scores: Vec<f64> = cands.iter().map(|(_, v)| naive_cosine(&query, v)).collect();
        scores.sort_by(f64::total_cmp);
        ties += scores.windows(2).filter(|w| w[0] == w[1]).count();
        let want = full_scan(&query, &cands, k);

        let hard = Sample::new("hard", query_text.clone(), "h", "t", "new");
        let pool: Vec<Sample> = cands.iter().map(|(id, _)| Sample::new(id.clone(), format!("text {id}"), "h", "t", "old")).collect();
        let got: Vec<String> = ok(retrieve_positive(&hard, &pool, k, &embedder))?.into_iter().map(|s| s.id).collect();
        ensure!(got == want, "pool {pool_no}: positives {got:?}, full scan {want:?}");

        let record = HardCaseRecord {
            sample: hard.clone(),
            wrong_prediction: Prediction::Unparseable,
            error_reason: query_text.clone(),
            answer_analysis: "a".into(),
            task_index: 3,
            provenance: Provenance::Fallback,
        };
        let earlier: Vec<HardCaseRecord> = cands
            .iter()
            .map(|(id, _)| HardCaseRecord {
                sample: Sample::new(id.clone(), "unused", "h", "t", "old"),
                error_reason: format!("text {id}"),
                ..record.clone()
            })
            .collect();
        let got: Vec<String> = ok(retrieve_negative(&record, &earlier, k, &embedder))?.into_iter().map(|h| h.sample.id).collect();
        ensure!(got == want, "pool {pool_no}: negatives {got:?}, full scan {want:?}");

        // Most similar relation over prototypes.
        let target = RelationLabel::new("target");
        let mut protos = BTreeMap::new();
        protos.insert(target.clone(), RelationPrototype { relation: target.clone(), vector: Embedding(query.clone()), support_count: 1 });
        let previous: Vec<RelationLabel> = cands.iter().map(|(id, _)| RelationLabel::new(&format!("rel {id}"))).collect();
        for ((_, v), r) in cands.iter().zip(&previous) {
            protos.insert(r.clone(), RelationPrototype { relation: r.clone(), vector: Embedding(v.clone()), support_count: 1 });
        }
        let named: Vec<(String, Vec<f64>)> = cands.iter().map(|(id, v)| (format!("rel {id}"), v.clone())).collect();
        let want_rel = full_scan(&query, &named, 1)[0].clone();
        let got_rel = ok(most_similar_relation(&target, &previous, &protos))?;
        ensure!(got_rel.as_str() == want_rel, "pool {pool_no}: most similar {got_rel}, full scan {want_rel}");
    }

    for trial in 0..1000 {
        let dim = rng.random_range(2..9);
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        let base = ok(cosine_slices(&a, &b))?;
        let after = ok(cosine_slices(&scaled, &b))?;
        ensure!((base - after).abs() <= 1e-12, "trial {trial}: cosine moved by {}", (base - after).abs());

        let target = RelationLabel::new("target");
        let n = rng.random_range(1..8);
        let previous: Vec<RelationLabel> = (0..n).map(|i| RelationLabel::new(&format!("prev {i}"))).collect();
        let mut protos = BTreeMap::new();
        protos.insert(target.clone(), RelationPrototype { relation: target.clone(), vector: Embedding(a.clone()), support_count: 1 });
        for r in &previous {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            protos.insert(r.clone(), RelationPrototype { relation: r.clone(), vector: Embedding(v), support_count: 1 });
        }
        let before = ok(most_similar_relation(&target, &previous, &protos))?;
        for p in protos.values_mut() {
            let s = rng.random_range(0.01..100.0);
            p.vector = Embedding(p.vector.values().iter().map(|x| x * s).collect());
        }
        let after = ok(most_similar_relation(&target, &previous, &protos))?;
        ensure!(before == after, "trial {trial}: argmax changed under rescaling ({before} -> {after})");
    }
    Ok(format!("200 pools match full scan ({ties} score ties); 1000 invariance trials"))
}

// ---------------------------------------------------------------- loop invariants

fn toy_config(num_tasks: usize, samples_per_relation: usize) -> (RunConfig, Vec<Sample>) {
    let synthetic = SyntheticConfig {
        samples_per_relation,
        ..SyntheticConfig::default()
    };
    let config = RunConfig {
        dataset: cre_engine::config::DatasetSource::Synthetic(synthetic.clone()),
        num_tasks,
        num_sequences: 1,
        parallel: false,
        ..RunConfig::default()
    };
    (config, generate(&synthetic))
}

fn loop_invariants() -> Check {
    let (config, samples) = toy_config(3, 30);
    let mut seqs = ok(prepare_sequences(&config, &samples))?;
    let seq = seqs.remove(0);
    let mut backend = SimBackend::new(config.sim.clone());
    let analyst = AnalystClient::fallback();
    let embedder = CachedEmbedder::in_memory(HashingEmbedder::new(config.embed_dim));
    let mut state = ok(Pipeline::new(&config, seq.sequence_index, seq.seed, &mut backend, &analyst, &embedder))?.into_state();
    let mut total_contrastive = 0;
    for task in &seq.tasks {
        let k = task.index;
        // Independent split on a copy of the model before the task.
        let mut probe = backend.clone();
        let mut seen = state.seen.clone();
        seen.extend(task.relations.iter().cloned());
        let split = ok(classify_task_data(&task.train, &seen, &mut probe))?;
        let earlier_hard_exists = state.store.hard.values().any(|h| !h.is_empty());
        let easy_before = state.store.easy.clone();
        let previous = state.seen.clone();

        let mut pipeline = ok(Pipeline::resume(&config, state, &mut backend, &analyst, &embedder))?;
        ok(pipeline.run_task(task))?;
        state = pipeline.into_state();
        let log = state.logs.last().unwrap();

        let covered: BTreeSet<&RelationLabel> = state.store.relations().collect();
        let want: BTreeSet<&RelationLabel> = seen.iter().collect();
        ensure!(covered == want, "task {k}: memory covers {covered:?}, seen {want:?}");
        ensure!(log.hard_count == split.hard.len(), "task {k}: {} hard, independent split {}", log.hard_count, split.hard.len());

        let qualifying = if k == 1 {
            0
        } else {
            split
                .hard
                .iter()
                .filter(|(s, _)| {
                    let r_s = most_similar_relation(&s.relation, &previous, &state.prototypes).unwrap();
                    earlier_hard_exists || easy_before.get(&r_s).is_some_and(|v| !v.is_empty())
                })
                .count()
        };
        let simple = log.phase1.count(InstructionKind::Simple);
        let contrastive = log.phase1.count(InstructionKind::Contrastive);
        ensure!(simple == task.train.len(), "task {k}: {simple} simple items for {} samples", task.train.len());
        ensure!(contrastive == qualifying, "task {k}: {contrastive} contrastive items, {qualifying} qualifying hard cases");
        if k == 1 {
            ensure!(contrastive == 0, "task 1 produced contrastive items");
        }
        total_contrastive += contrastive;

        let mut phase2: Vec<&str> = log.phase2.as_ref().unwrap().items.iter().map(|i| i.sample_id.as_str()).collect();
        phase2.sort_unstable();
        let (easy_mem, hard_mem) = state.store.all_memory();
        let mut memory: Vec<&str> = easy_mem.iter().map(|s| s.id.as_str()).chain(hard_mem.iter().map(|h| h.sample.id.as_str())).collect();
        memory.sort_unstable();
        ensure!(phase2 == memory, "task {k}: phase-2 items differ from memory");
        ensure!(
            log.phase2.as_ref().unwrap().items.iter().all(|i| i.kind == InstructionKind::Simple),
            "task {k}: phase 2 contains contrastive items"
        );
    }
    ensure!(total_contrastive > 0, "toy run never built a contrastive instruction");
    Ok(format!("3 tasks; {total_contrastive} contrastive items across tasks 2-3"))
}

// ---------------------------------------------------------------- forgetting

fn run_variant(config: &RunConfig, seqs: &[TaskSequence], variant: &str, flags: AblationFlags) -> Result<Vec<RunReport>, String> {
    let config = RunConfig {
        ablation: flags,
        ..config.clone()
    };
    ok(run_all(&config, seqs, |seq| {
        let mut backend = SimBackend::new(config.sim.clone());
        let analyst = AnalystClient::fallback();
        let embedder = CachedEmbedder::in_memory(HashingEmbedder::new(config.embed_dim));
        run_sequence(&config, variant, seq, &mut backend, &analyst, &embedder)
    }))
}

fn forgetting_direction() -> Check {
    let synthetic = SyntheticConfig::default();
    let samples = generate(&synthetic);
    let rels = relation_set(&samples);
    ensure!(rels.len() == 12, "synthetic corpus has {} relations", rels.len());
    for (a, b) in ANALOGOUS_PAIRS {
        ensure!(rels.contains(&RelationLabel::new(a)) && rels.contains(&RelationLabel::new(b)), "analogous pair missing");
    }
    let config = RunConfig {
        dataset: cre_engine::config::DatasetSource::Synthetic(synthetic),
        num_tasks: 4,
        num_sequences: 5,
        parallel: true,
        ..RunConfig::default()
    };
    let seqs = ok(prepare_sequences(&config, &samples))?;
    let t1 = |reports: &[RunReport]| -> Vec<f64> {
        reports.iter().map(|r| r.tasks.last().unwrap().origin_accuracies[0]).collect()
    };
    let full = t1(&run_variant(&config, &seqs, "full", AblationFlags::default())?);
    let no_replay = t1(&run_variant(&config, &seqs, "no_replay", AblationFlags { no_replay: true, ..Default::default() })?);
    let no_hard = t1(&run_variant(&config, &seqs, "no_hard_split", AblationFlags { no_hard_split: true, ..Default::default() })?);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut detail = String::new();
    for i in 0..full.len() {
        let _ = write!(detail, " seq{i}: {:.3}/{:.3}/{:.3}", full[i], no_replay[i], no_hard[i]);
    }
    let gap = mean(&full) - mean(&no_replay);
    let wins = full.iter().zip(&no_hard).filter(|(f, h)| f >= h).count();
    ensure!(gap >= 0.10, "full - no_replay = {gap:.3} < 0.10 (full/no_replay/no_hard:{detail})");
    ensure!(
        mean(&full) >= mean(&no_hard) && wins >= 4,
        "full >= no_hard_split on {wins}/5 sequences, means {:.3} vs {:.3} ({detail})",
        mean(&full),
        mean(&no_hard)
    );
    Ok(format!(
        "T1 after task 4: full {:.3}, no_replay {:.3} (gap {gap:.3}), no_hard_split {:.3}; full >= no_hard_split on {wins}/5",
        mean(&full),
        mean(&no_replay),
        mean(&no_hard)
    ))
}

// ---------------------------------------------------------------- determinism and replay

fn determinism_and_replay() -> Check {
    let (config, samples) = toy_config(3, 30);
    let seq = ok(prepare_sequences(&config, &samples))?.remove(0);
    let service_analyst = || AnalystClient::remote(Arc::new(LoopbackTransport::new(SimService::new(SimConfig::default()))));

    let run_recorded = || -> Result<(RunReport, Vec<cre_engine::backend::BackendCall>, AnalystClient), String> {
        let mut backend = RecordingBackend::new(SimBackend::new(config.sim.clone()));
        let analyst = service_analyst();
        let embedder = CachedEmbedder::in_memory(HashingEmbedder::new(config.embed_dim));
        let report = ok(run_sequence(&config, "full", &seq, &mut backend, &analyst, &embedder))?;
        let (_, calls) = backend.into_parts();
        Ok((report, calls, analyst))
    };
    let (first, calls, analyst) = run_recorded()?;
    let (second, _, _) = run_recorded()?;
    let a = ok(first.to_json())?;
    let b = ok(second.to_json())?;
    ensure!(a == b, "two identical runs produced different reports");
    ensure!(first.tasks.iter().skip(1).any(|t| !t.contrastive.is_empty()), "toy run exercised no contrastive path");

    let identity = first.backend.clone();
    let call_count = calls.len();
    let mut replay = ReplayBackend::new(identity, calls);
    let replay_analyst = AnalystClient::replay(analyst.snapshot());
    let embedder = CachedEmbedder::in_memory(HashingEmbedder::new(config.embed_dim));
    let replayed = ok(run_sequence(&config, "full", &seq, &mut replay, &replay_analyst, &embedder))?;
    ensure!(replay.remaining() == 0, "{} recorded calls left unused", replay.remaining());
    ensure!(replay_analyst.network_calls() == 0, "replay reached the analyst service");
    let (h1, h2) = (ok(first.sha256())?, ok(replayed.sha256())?);
    ensure!(h1 == h2, "replayed report hash {h2} != recorded {h1}");
    Ok(format!("reports byte-identical; replay of {call_count} calls reproduces {}", &h1[..16]))
}

// ---------------------------------------------------------------- dataset rules

fn tacred_line(id: usize, relation: &str) -> String {
    serde_json::json!({
        "id": format!("t{id}"),
        "tokens": ["Entity", "A", "relates", "to", "entity", "B", format!("n{id}")],
        "head": {"text": "Entity A"},
        "tail": {"text": "entity B"},
        "relation": relation,
    })
    .to_string()
}

fn dataset_rules() -> Check {
    let sizes: Vec<(String, usize)> = (0..40)
        .map(|i| (format!("per:relation_{i:02}"), if i % 4 == 0 { 50 + i } else { 400 + 3 * i }))
        .chain(std::iter::once(("no_relation".to_string(), 900)))
        .collect();
    let mut lines = Vec::new();
    let mut id = 0;
    for (rel, n) in &sizes {
        for _ in 0..*n {
            lines.push(tacred_line(id, rel));
            id += 1;
        }
    }
    lines.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let samples = ok(parse_dataset(&lines.join("\n"), DatasetFormat::TacredLike))?;
    ensure!(samples.len() == id - 900, "ingestion kept {} of {} relation samples", samples.len(), id - 900);
    ensure!(samples.iter().all(|s| s.relation.as_str() != "no relation"), "no_relation survived ingestion");
    ensure!(relation_set(&samples).len() == 40, "expected 40 relations");

    let split = ok(cap_per_relation(&samples, 320, 40, 2024))?;
    fn count(pool: &[Sample]) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for s in pool {
            *m.entry(s.relation.as_str()).or_default() += 1;
        }
        m
    }
    let (train, test) = (count(&split.train), count(&split.test));
    for (rel, n) in &sizes[..40] {
        let label = RelationLabel::new(rel);
        let (tr, te) = (train.get(label.as_str()).copied().unwrap_or(0), test.get(label.as_str()).copied().unwrap_or(0));
        if *n >= 360 {
            ensure!(tr == 320 && te == 40, "{rel}: {tr}/{te} from {n}");
        } else {
            ensure!(tr + te == *n && te <= 40 && te >= 1, "{rel}: {tr}/{te} from {n}");
        }
    }
    let train_ids: BTreeSet<&str> = split.train.iter().map(|s| s.id.as_str()).collect();
    ensure!(split.test.iter().all(|s| !train_ids.contains(s.id.as_str())), "train and test overlap");

    let fewrel: Vec<Sample> = (0..80)
        .flat_map(|r| (0..60).map(move |i| Sample::new(format!("f{r}-{i}"), format!("sentence {i} of relation {r}"), "x", "y", &format!("P{r}"))))
        .collect();
    let rels = relation_set(&fewrel);
    let partitions = ok(build_task_sequences(&rels, 10, 5, 2024))?;
    for p in &partitions {
        ensure!(p.tasks.len() == 10 && p.tasks.iter().all(|t| t.len() == 8), "sequence {} is not 10 x 8", p.sequence_index);
        let union: BTreeSet<&RelationLabel> = p.tasks.iter().flatten().collect();
        ensure!(union.len() == 80, "sequence {} covers {} relations", p.sequence_index, union.len());
    }
    ensure!(partitions[0].tasks != partitions[1].tasks, "sequences share one ordering");
    let config = RunConfig {
        num_tasks: 10,
        num_sequences: 5,
        ..RunConfig::default()
    };
    let seqs = ok(prepare_sequences(&config, &fewrel))?;
    for seq in &seqs {
        for task in &seq.tasks {
            let task_rels: BTreeSet<&RelationLabel> = task.relations.iter().collect();
            ensure!(task.relations.len() == 8, "task {} has {} relations", task.index, task.relations.len());
            ensure!(
                task.train.iter().chain(&task.test).all(|s| task_rels.contains(&s.relation)),
                "task {} holds samples of other relations",
                task.index
            );
            ensure!(task.train.len() + task.test.len() == 8 * 60, "task {} lost samples", task.index);
        }
    }
    Ok("no_relation dropped; 320/40 caps; 5 sequences of 10 x 8 relations".into())
}

// ---------------------------------------------------------------- driver

fn main() {
    // Optional name filter, e.g. `cargo test --test acceptance -- memory`.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<(&str, Duration, fn() -> Check)> = vec![
        ("golden instruction fidelity", Duration::from_secs(5), golden_fidelity),
        ("split oracle", Duration::from_secs(10), split_oracle),
        ("memory oracle", Duration::from_secs(10), memory_oracle),
        ("retrieval oracle", Duration::from_secs(10), retrieval_oracle),
        ("continual-loop invariants", Duration::from_secs(30), loop_invariants),
        ("forgetting direction", Duration::from_secs(300), forgetting_direction),
        ("determinism and replay", Duration::from_secs(120), determinism_and_replay),
        ("dataset rules", Duration::from_secs(10), dataset_rules),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > budget => Err(format!("took {elapsed:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
