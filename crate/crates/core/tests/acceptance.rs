//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; exits non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{World, DIM};
use lawcase::backend::{Backend, BackendConfig, BackendKind};
use lawcase::config::EngineConfig;
use lawcase::corpus::{preprocess_corpus, render_case, ExtractivePreprocessor, Verdict};
use lawcase::dataset::{
    build_ljp_instance, build_pcr_instance, build_scr_instance, instance_seed, LjpMode, Phase, PromptInstance,
    SplitConfig, Task, LJP_TEMPLATE, PCR_TEMPLATE, SCR_TEMPLATE,
};
use lawcase::embedding::CorpusStats;
use lawcase::eval::{
    choice_size_sweep, score_judgment, score_retrieval, JudgmentReport, RetrievalReport, SweepConfig, K_SET,
};
use lawcase::graph::primary_factor;
use lawcase::pipeline::{make_synthetic, EvalTask, Pipeline};
use lawcase::seed::rng;
use lawcase::synthetic::{generate, SyntheticConfig};
use lawcase::{CaseId, EmbeddingProvider, EmbeddingVector, HashedBowEmbedder, PrimaryFactor, ProcessedCase, VectorIndex};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn backend(kind: BackendKind, seed: u64) -> Backend {
    Backend::new(BackendConfig::mock(kind, seed)).expect("mock backend")
}

fn answer(backend: &Backend, instances: &[PromptInstance]) -> Vec<Option<String>> {
    let requests: Vec<_> = instances.iter().map(PromptInstance::request).collect();
    backend
        .complete_batch(&requests, 8)
        .expect("batch")
        .into_iter()
        .map(|r| r.ok().map(|c| c.text))
        .collect()
}

fn test_instances(world: &World, task: Task, k: usize, limit: usize, master: u64) -> Vec<PromptInstance> {
    let ctx = world.ctx(10);
    world
        .test_cases()
        .into_iter()
        .filter_map(|c| {
            let seed = instance_seed(master, task, Phase::Test, &c.id, &format!("k{k}"));
            match task {
                Task::Scr => build_scr_instance(&ctx, c, Phase::Test, seed).ok(),
                _ => build_pcr_instance(&ctx, c, Phase::Test, k, seed).ok(),
            }
        })
        .take(limit)
        .collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_slice(&std::fs::read(path).expect("report exists")).expect("report parses")
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).expect("instances exist").lines().count()
}

// 1
fn oracle_closure() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    make_synthetic(&SyntheticConfig { cases: 1200, seed: 11, ..Default::default() }, &corpus)
        .map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let config = EngineConfig { corpus_path: corpus, output_dir: out.clone(), seed: 3, jobs: 4, ..Default::default() };
    let pipeline = Pipeline::new(config).map_err(|e| e.to_string())?;
    pipeline.run_all().map_err(|e| e.to_string())?;
    pipeline.eval(EvalTask::Ljp, Some(LjpMode::ZeroShot)).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed().as_secs_f64();

    let mut detail = Vec::new();
    for task in ["scr", "pcr"] {
        let r: RetrievalReport = read_json(&out.join(format!("eval/{task}/report.json")));
        let n = line_count(&out.join(format!("eval/{task}/instances.jsonl")));
        ensure(n >= 500 && r.n == n, || format!("{task}: only {n} instances"))?;
        ensure(r.top1 == 1.0 && r.top3 == 1.0 && r.top5 == 1.0 && r.not_found_rate == 0.0, || {
            format!("{task}: {r:?}")
        })?;
        detail.push(format!("{task} n={n}"));
    }
    for mode in [LjpMode::ZeroShot, LjpMode::FewShot] {
        let dir = out.join(format!("eval/ljp_{}", mode.name()));
        let r: JudgmentReport = read_json(&dir.join("report.json"));
        ensure(r.n >= 400, || format!("ljp {}: only {} instances", mode.name(), r.n))?;
        ensure(r.accuracy == 1.0 && r.macro_f1 == 1.0, || format!("ljp {}: {r:?}", mode.name()))?;
        detail.push(format!("ljp_{} n={}", mode.name(), r.n));
    }
    ensure(elapsed < 60.0, || format!("runtime {elapsed:.1}s"))?;
    Ok(format!("{}; all 1.000, runtime {elapsed:.1}s", detail.join(", ")))
}

// 2
fn random_calibration() -> Outcome {
    let world = World::new(
        SyntheticConfig { cases: 10_800, seed: 21, ..Default::default() },
        SplitConfig { train_fraction: 0.5, seed: 21, ..Default::default() },
    );
    let random = backend(BackendKind::UniformRandom, 5);
    let scr = test_instances(&world, Task::Scr, 1, 5000, 2);
    ensure(scr.len() == 5000, || format!("only {} SCR test instances", scr.len()))?;
    let r = score_retrieval(&scr, &answer(&random, &scr)).map_err(|e| e.to_string())?;
    let windows = [(0.08, 0.12), (0.27, 0.33), (0.47, 0.53)];
    for (k, (lo, hi)) in K_SET.iter().zip(windows) {
        let v = r.top(*k).unwrap();
        ensure((lo..=hi).contains(&v), || format!("SCR top-{k} = {v:.4} outside [{lo}, {hi}]"))?;
    }
    ensure(r.not_found_rate == 0.0, || format!("SCR not_found {}", r.not_found_rate))?;

    let mut pcr = Vec::new();
    for k in K_SET {
        let group = test_instances(&world, Task::Pcr, k, 5000, 2);
        ensure(group.len() == 5000, || format!("only {} PCR k={k} instances", group.len()))?;
        pcr.extend(group);
    }
    let p = score_retrieval(&pcr, &answer(&random, &pcr)).map_err(|e| e.to_string())?;
    for (k, (lo, hi)) in K_SET.iter().zip(windows) {
        let v = p.top(*k).unwrap();
        ensure((lo..=hi).contains(&v), || format!("PCR k={k} hit rate {v:.4} outside [{lo}, {hi}]"))?;
    }
    ensure(p.not_found_rate == 0.0, || format!("PCR not_found {}", p.not_found_rate))?;
    Ok(format!(
        "SCR {:.4}/{:.4}/{:.4}, PCR k=1,3,5 {:.4}/{:.4}/{:.4} on 5000 each",
        r.top1, r.top3, r.top5, p.top1, p.top3, p.top5
    ))
}

// 3
fn hallucination_metric() -> Outcome {
    let world = World::small(400, 5);
    let never = backend(BackendKind::AlwaysNotfound, 0);
    let mut detail = Vec::new();
    for (task, ks) in [(Task::Scr, vec![1]), (Task::Pcr, K_SET.to_vec())] {
        let instances: Vec<_> = ks.iter().flat_map(|k| test_instances(&world, task, *k, usize::MAX, 4)).collect();
        let r = score_retrieval(&instances, &answer(&never, &instances)).map_err(|e| e.to_string())?;
        ensure(r.not_found_rate == 1.0 && r.top1 == 0.0 && r.top3 == 0.0 && r.top5 == 0.0, || {
            format!("{}: {r:?}", task.name())
        })?;
        detail.push(format!("{} n={}", task.name(), r.n));
    }
    Ok(format!("{}; not_found 1.000, top-k 0.000", detail.join(", ")))
}

// 4
fn choice_size_trend() -> Outcome {
    let world = World::small(400, 9);
    let ctx = world.ctx(10);
    let random = backend(BackendKind::UniformRandom, 13);
    let config = SweepConfig { n_per_size: 20_000, seed: 17, parallelism: 8, ..Default::default() };
    let rows = choice_size_sweep(&ctx, &world.test_cases(), &random, &config).map_err(|e| e.to_string())?;
    let mut scr_top1 = Vec::new();
    let mut line = Vec::new();
    for row in &rows {
        let r = row.report.as_ref().ok_or_else(|| format!("{} c={} skipped", row.task.name(), row.choices))?;
        let expected = 1.0 / row.choices as f64;
        ensure((r.top1 - expected).abs() <= 0.02, || {
            format!("{} c={}: top-1 {:.4} vs {:.4}", row.task.name(), row.choices, r.top1, expected)
        })?;
        if row.task == Task::Scr {
            scr_top1.push(r.top1);
            line.push(format!("{:.3}", r.top1));
        }
    }
    ensure(scr_top1.len() == 6, || format!("{} SCR rows", scr_top1.len()))?;
    ensure(scr_top1.windows(2).all(|w| w[1] <= w[0]), || format!("SCR top-1 not non-increasing: {scr_top1:?}"))?;
    Ok(format!("SCR top-1 c=6..11: {}", line.join(" ")))
}

// 5
fn exhaustive_sort(index: &VectorIndex, query: &EmbeddingVector, k: usize, exclude: Option<&CaseId>) -> Vec<(CaseId, usize, f64)> {
    let q = query.values();
    let q_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut all: Vec<(f64, CaseId)> = Vec::new();
    for id in index.ids() {
        if Some(id) == exclude {
            continue;
        }
        let v = index.get(id).unwrap();
        let norm = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        let score = if norm == 0.0 || q_norm == 0.0 {
            0.0
        } else {
            let dot: f64 = v.values().iter().zip(q).map(|(a, b)| a * b).sum();
            (dot / (norm * q_norm)).clamp(-1.0, 1.0)
        };
        all.push((score, id.clone()));
    }
    // Insertion sort: deliberately unrelated to the index's selection path.
    let mut sorted: Vec<(f64, CaseId)> = Vec::new();
    for item in all {
        let at = sorted
            .iter()
            .position(|s| item.0 > s.0 || (item.0 == s.0 && item.1 < s.1))
            .unwrap_or(sorted.len());
        sorted.insert(at, item);
    }
    let first = usize::from(exclude.is_some());
    sorted.into_iter().take(k).enumerate().map(|(i, (s, id))| (id, first + i, s)).collect()
}

fn retrieval_oracle() -> Outcome {
    let corpus = generate(&SyntheticConfig { cases: 200, seed: 51, ..Default::default() }).map_err(|e| e.to_string())?;
    let (cases, _) = preprocess_corpus(&corpus.cases, &ExtractivePreprocessor::default());
    let texts: Vec<String> = cases.iter().map(|c| render_case(c, false)).collect();
    let embedder = HashedBowEmbedder::with_stats(DIM, CorpusStats::from_texts(texts.iter().map(String::as_str)));
    let mut index = VectorIndex::new(DIM);
    for (c, t) in cases.iter().zip(&texts) {
        index.insert(c.id.clone(), &embedder.embed(t).unwrap()).unwrap();
    }
    let foreign = generate(&SyntheticConfig { cases: 200, seed: 52, ..Default::default() }).map_err(|e| e.to_string())?;
    let (foreign, _) = preprocess_corpus(&foreign.cases, &ExtractivePreprocessor::default());
    let vocabulary: Vec<String> = texts.iter().flat_map(|t| lawcase::embedding::tokenize(t)).collect();

    let mut r = rng(53);
    let mut ties = 0;
    for q in 0..100 {
        let (query, exclude) = match q % 3 {
            0 => {
                let c = &cases[r.gen_range(0..cases.len())];
                (index.get(&c.id).unwrap(), Some(c.id.clone()))
            }
            1 => (embedder.embed(&render_case(&foreign[r.gen_range(0..foreign.len())], false)).unwrap(), None),
            _ => {
                let words: Vec<&str> = (0..r.gen_range(1..4)).map(|_| vocabulary[r.gen_range(0..vocabulary.len())].as_str()).collect();
                (embedder.embed(&words.join(" ")).unwrap(), None)
            }
        };
        let available = index.len() - usize::from(exclude.is_some());
        let k = r.gen_range(1..=available);
        let got = index.top_k(&query, k, exclude.as_ref()).map_err(|e| e.to_string())?;
        let want = exhaustive_sort(&index, &query, k, exclude.as_ref());
        ensure(got.len() == want.len(), || format!("query {q}: {} vs {} results", got.len(), want.len()))?;
        for (g, (id, rank, score)) in got.iter().zip(&want) {
            ensure(g.id == *id && g.rank == *rank && g.similarity.to_bits() == score.to_bits(), || {
                format!("query {q}: got {} rank {} ({}) want {id} rank {rank} ({score})", g.id, g.rank, g.similarity)
            })?;
        }
        ties += want.windows(2).filter(|w| w[0].2 == w[1].2).count();
    }
    Ok(format!("100 queries over 200 cases identical, {ties} tied neighbours ordered by id"))
}

// 6
fn judgment_instance(i: usize, label: Verdict) -> PromptInstance {
    PromptInstance {
        task: Task::Ljp,
        phase: Phase::Test,
        input_case: CaseId::new(format!("q{i}")).unwrap(),
        instruction_text: "predict".into(),
        expected_output: label.label().into(),
        choices: Vec::new(),
        permutation_seed: 0,
        token_estimate: 2,
        input_text: String::new(),
        ljp_label: Some(label),
        ljp_mode: Some(LjpMode::ZeroShot),
        icl_examples: None,
        truth_k: None,
        truncated: Vec::new(),
    }
}

/// Accuracy and macro-F1 from (truth, prediction) pairs; `None` is Invalid.
fn brute_force_metrics(pairs: &[(usize, Option<usize>)]) -> (f64, f64) {
    let correct = pairs.iter().filter(|(t, p)| Some(*t) == *p).count();
    let accuracy = correct as f64 / pairs.len() as f64;
    let mut f1s = Vec::new();
    for class in 0..4 {
        let support = pairs.iter().filter(|(t, _)| *t == class).count();
        if support == 0 {
            continue;
        }
        let tp = pairs.iter().filter(|(t, p)| *t == class && *p == Some(class)).count() as f64;
        let predicted = pairs.iter().filter(|(_, p)| *p == Some(class)).count() as f64;
        let precision = if predicted == 0.0 { 0.0 } else { tp / predicted };
        let recall = tp / support as f64;
        f1s.push(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) });
    }
    (accuracy, f1s.iter().sum::<f64>() / f1s.len() as f64)
}

fn metric_oracle() -> Outcome {
    let mut r = rng(61);
    let invalid = ["", "I cannot tell.", "Unsure", "no verdict can be given"];
    let mut invalid_total = 0;
    for trial in 0..1000 {
        let n = r.gen_range(1..80);
        let invalid_rate = r.gen_range(0.0..0.4);
        let mut instances = Vec::new();
        let mut responses = Vec::new();
        let mut pairs = Vec::new();
        for i in 0..n {
            let truth = r.gen_range(0..4);
            instances.push(judgment_instance(i, Verdict::OUTCOMES[truth]));
            if r.gen_bool(invalid_rate) {
                invalid_total += 1;
                pairs.push((truth, None));
                responses.push(if r.gen_bool(0.2) { None } else { Some(invalid[r.gen_range(0..invalid.len())].to_string()) });
            } else {
                let predicted = if r.gen_bool(0.5) { truth } else { r.gen_range(0..4) };
                pairs.push((truth, Some(predicted)));
                responses.push(Some(Verdict::OUTCOMES[predicted].label().to_string()));
            }
        }
        let report = score_judgment(&instances, &responses).map_err(|e| e.to_string())?;
        let (accuracy, f1) = brute_force_metrics(&pairs);
        ensure((report.accuracy - accuracy).abs() <= 1e-12 && (report.macro_f1 - f1).abs() <= 1e-12, || {
            format!("trial {trial}: accuracy {} vs {accuracy}, F1 {} vs {f1}", report.accuracy, report.macro_f1)
        })?;
    }
    Ok(format!("1000 labelings agree to 1e-12 ({invalid_total} Invalid predictions injected)"))
}

// 7
fn oracle_vector(text: &str) -> Option<Vec<f64>> {
    let mut counts: BTreeMap<String, f64> = BTreeMap::new();
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        *counts.entry(token.to_lowercase()).or_default() += 1.0;
    }
    if counts.is_empty() {
        return None;
    }
    let mut v = vec![0.0; DIM];
    for (token, count) in counts {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in token.bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x100000001b3);
        }
        v[(h % DIM as u64) as usize] += count;
    }
    Some(v)
}

fn oracle_similarity(a: &str, b: &str) -> f64 {
    match (oracle_vector(a), oracle_vector(b)) {
        (Some(x), Some(y)) => {
            let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
            let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
            let ny = y.iter().map(|q| q * q).sum::<f64>().sqrt();
            (dot / (nx * ny)).clamp(0.0, 1.0)
        }
        _ => 0.0,
    }
}

fn oracle_features(c: &ProcessedCase) -> [(PrimaryFactor, String); 6] {
    [
        (PrimaryFactor::CaseDetail, c.case_summary.clone()),
        (PrimaryFactor::Judge, c.judge.clone()),
        (PrimaryFactor::Defendants, c.defendants.join("; ")),
        (PrimaryFactor::Plaintiffs, c.plaintiffs.join("; ")),
        (PrimaryFactor::Date, c.date.format("%Y-%m-%d").to_string()),
        (PrimaryFactor::Title, c.title.clone()),
    ]
}

fn primary_factor_oracle() -> Outcome {
    let world = World::small(400, 71);
    let provider = HashedBowEmbedder::new(DIM);
    let mut r = rng(72);
    let mut seen = BTreeMap::new();
    for pair in 0..100 {
        let pick = |r: &mut rand_chacha::ChaCha8Rng| &world.cases[r.gen_range(0..world.cases.len())];
        let (a, b) = if pair % 2 == 0 {
            let p = &world.synthetic.planted[r.gen_range(0..world.synthetic.planted.len())];
            (&world.by_id[&p.case], &world.by_id[&p.precedent])
        } else {
            (pick(&mut r), pick(&mut r))
        };
        let got = primary_factor(a, b, &provider);
        // Features are listed strongest-first, so a later one must win outright.
        let (fa, fb) = (oracle_features(a), oracle_features(b));
        let mut best = (fa[0].0, f64::NEG_INFINITY);
        for ((factor, ta), (_, tb)) in fa.iter().zip(&fb) {
            let s = oracle_similarity(ta, tb);
            let lib = got.scores[factor];
            ensure((lib - s).abs() <= 1e-12, || format!("pair {pair} {factor}: {lib} vs {s}"))?;
            if s > best.1 + 1e-12 {
                best = (*factor, s);
            }
        }
        ensure(got.primary == best.0, || format!("pair {pair}: {} vs {}", got.primary, best.0))?;
        *seen.entry(best.0.name()).or_insert(0) += 1;
    }
    for c in world.cases.iter().take(25) {
        let same = primary_factor(c, c, &provider);
        ensure(same.scores.values().all(|s| (s - 1.0).abs() <= 1e-9), || format!("{}: {:?}", c.id, same.scores))?;
    }
    Ok(format!("100 pairs agree (argmax counts {seen:?}); identical cases score 1.0"))
}

// 8
fn split_constraints() -> Outcome {
    let world = World::new(SyntheticConfig::default(), SplitConfig::default());
    let (train, test) = (&world.split.train, &world.split.test);
    ensure(!train.is_empty() && !test.is_empty(), || "empty side".into())?;
    ensure(train.is_disjoint(test), || "train and test overlap".into())?;
    let known: BTreeSet<&CaseId> = world.cases.iter().map(|c| &c.id).collect();
    let precedents = |id: &CaseId| -> BTreeSet<&CaseId> {
        world.by_id[id].precedent_ids.iter().filter(|p| known.contains(p) && *p != id).collect()
    };
    for id in train.iter().chain(test) {
        let n = precedents(id).len();
        ensure(n >= 5, || format!("{id} kept with {n} precedents"))?;
    }
    for id in test {
        let inside = precedents(id).into_iter().filter(|p| train.contains(*p)).count();
        ensure(inside >= 5, || format!("test case {id} has {inside} precedents in train"))?;
    }
    let mut histogram: HashMap<Verdict, usize> = HashMap::new();
    for id in train {
        *histogram.entry(world.by_id[id].verdict).or_default() += 1;
    }
    ensure(!histogram.contains_key(&Verdict::Unsure), || "Unsure case in train".into())?;
    let counts: Vec<usize> = Verdict::OUTCOMES.iter().map(|v| histogram.get(v).copied().unwrap_or(0)).collect();
    ensure(counts.iter().all(|c| *c == counts[0] && *c > 0), || format!("train histogram {counts:?}"))?;
    Ok(format!("train {} ({} per outcome), test {}", train.len(), counts[0], test.len()))
}

// 9
const GOLDEN_SCR: &str = "### Instruction:
You are a legal expert who specializes in comparing user-supplied legal cases to a list of candidate legal cases, which includes titles and content. Your main function is to identify and output the title of the most similar case from the list based on the description provided.
You should only output the case title and not any other information.
Consider the following choices:
";

const GOLDEN_PCR: &str = "### Instruction:
You are a legal expert who specializes in comparing user-supplied legal cases to a list of candidate legal cases, which includes titles and content. Your main function is to identify and output the precedent case from the list based on the description provided.
You should only output the reasoning process and case title.
Consider the following choices:
";

const GOLDEN_LJP: &str = "### Instruction:
You are a legal expert who specializes in predicting outcomes for legal cases. Utilize your internal knowledge base to predict verdict. Your main function is to anticipate the likely verdict of the legal case presented by the user.
You should only output the verdict and not any other information.
Consider the following choices:
1. Defendant Wins
2. Plaintiff Wins
3. Settlement
4. Case Dismissal
### Input:
";

const GOLDEN_INPUT: &str = "### Input:\n";

fn golden_retrieval(head: &str, instance: &PromptInstance) -> String {
    let mut choices: Vec<_> = instance.choices.iter().collect();
    choices.sort_by_key(|c| c.position);
    let blocks: Vec<String> = choices.iter().map(|c| format!("Choice {}:\n{}", c.position, c.rendered)).collect();
    format!("{head}{}\n{GOLDEN_INPUT}{}\n", blocks.join("\n"), instance.input_text)
}

fn template_fidelity() -> Outcome {
    ensure(SCR_TEMPLATE == format!("{GOLDEN_SCR}[Choices...]\n{GOLDEN_INPUT}[Input Case...]\n"), || "SCR template".into())?;
    ensure(PCR_TEMPLATE == format!("{GOLDEN_PCR}[Choices...]\n{GOLDEN_INPUT}[Input Case...]\n"), || "PCR template".into())?;
    ensure(LJP_TEMPLATE == format!("{GOLDEN_LJP}[Input Case...]\n"), || "LJP template".into())?;

    let world = World::small(400, 81);
    let ctx = world.ctx(10);
    let mut checked = 0;
    for c in world.test_cases() {
        let seed = instance_seed(81, Task::Scr, Phase::Test, &c.id, "");
        let scr = build_scr_instance(&ctx, c, Phase::Test, seed).map_err(|e| e.to_string())?;
        ensure(scr.instruction_text == golden_retrieval(GOLDEN_SCR, &scr), || format!("SCR prompt for {}", c.id))?;
        let pcr = build_pcr_instance(&ctx, c, Phase::Test, 3, seed).map_err(|e| e.to_string())?;
        ensure(pcr.instruction_text == golden_retrieval(GOLDEN_PCR, &pcr), || format!("PCR prompt for {}", c.id))?;
        let zero = build_ljp_instance(&ctx, c, Phase::Test, LjpMode::ZeroShot, seed).map_err(|e| e.to_string())?;
        ensure(zero.instruction_text == format!("{GOLDEN_LJP}{}\n", zero.input_text), || format!("LJP prompt for {}", c.id))?;
        let few = build_ljp_instance(&ctx, c, Phase::Test, LjpMode::FewShot, seed).map_err(|e| e.to_string())?;
        let icl = few.icl_examples.as_ref().ok_or("few-shot prompt without examples")?;
        let expected = format!(
            "### Similar Case Example:\n{}\n\n### Precedent Case Example:\n{}\n\n{GOLDEN_LJP}{}\n",
            icl.similar_text, icl.precedent_text, few.input_text
        );
        ensure(few.instruction_text == expected, || format!("few-shot LJP prompt for {}", c.id))?;
        checked += 1;
    }
    Ok(format!("templates byte-identical; {checked} cases x 4 prompt kinds re-rendered"))
}

// 10
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    make_synthetic(&SyntheticConfig { seed: 91, ..Default::default() }, &corpus).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let run = |jobs: usize| -> Result<BTreeMap<String, Vec<u8>>, String> {
        let _ = std::fs::remove_dir_all(&out);
        let mut config = EngineConfig {
            corpus_path: corpus.clone(),
            output_dir: out.clone(),
            seed: 92,
            jobs,
            backend: BackendConfig::mock(BackendKind::UniformRandom, 93),
            ..Default::default()
        };
        config.sweep.n_per_size = 300;
        let pipeline = Pipeline::new(config).map_err(|e| e.to_string())?;
        pipeline.run_all().map_err(|e| e.to_string())?;
        pipeline.eval(EvalTask::Ljp, Some(LjpMode::ZeroShot)).map_err(|e| e.to_string())?;
        pipeline.sweep().map_err(|e| e.to_string())?;
        Ok(snapshot(&out))
    };
    let first = run(1)?;
    let second = run(1)?;
    let parallel = run(4)?;
    for (name, other) in [("rerun", &second), ("jobs=4", &parallel)] {
        ensure(first.keys().eq(other.keys()), || format!("{name}: different file sets"))?;
        for (path, bytes) in &first {
            ensure(other[path] == *bytes, || format!("{name}: {path} differs"))?;
        }
    }
    for required in ["index.bin", "train/combined.jsonl", "eval/scr/report.json", "sweep/sweep.json"] {
        ensure(first.contains_key(required), || format!("{required} missing"))?;
    }
    Ok(format!("{} files byte-identical across two runs and jobs=1 vs jobs=4", first.len()))
}

// 11
fn token_budget() -> Outcome {
    let mut world = World::small(400, 101);
    // Long case details force the budget to bite; the index keeps the original vectors.
    let filler: String = "The record recites the deed, the survey and the lease in full. ".repeat(120);
    let long: Vec<CaseId> = world.cases.iter().step_by(3).map(|c| c.id.clone()).collect();
    for id in &long {
        let case = world.by_id.get_mut(id).unwrap();
        case.case_summary = format!("{} {filler}", case.case_summary);
    }
    let ctx = world.ctx(10);
    let mut emitted = Vec::new();
    for c in world.train_cases() {
        let seed = instance_seed(101, Task::Scr, Phase::Train, &c.id, "");
        emitted.extend(build_scr_instance(&ctx, c, Phase::Train, seed).ok());
        emitted.extend(build_pcr_instance(&ctx, c, Phase::Train, 1, seed).ok());
        emitted.extend(build_ljp_instance(&ctx, c, Phase::Train, LjpMode::FewShot, seed).ok());
    }
    for c in world.test_cases() {
        let seed = instance_seed(101, Task::Scr, Phase::Test, &c.id, "");
        emitted.extend(build_scr_instance(&ctx, c, Phase::Test, seed).ok());
        for k in K_SET {
            emitted.extend(build_pcr_instance(&ctx, c, Phase::Test, k, seed).ok());
        }
        for mode in [LjpMode::ZeroShot, LjpMode::FewShot] {
            emitted.extend(build_ljp_instance(&ctx, c, Phase::Test, mode, seed).ok());
        }
    }
    let expected = world.train_cases().len() * 3 + world.test_cases().len() * 6;
    ensure(emitted.len() == expected, || format!("{} of {expected} prompts built", emitted.len()))?;
    let mut worst = 0;
    for i in &emitted {
        let estimate = (i.instruction_text.chars().count() + 3) / 4;
        ensure(estimate <= 4096, || format!("{} {} estimates {estimate} tokens", i.task.name(), i.input_case))?;
        ensure(i.token_estimate == estimate, || format!("{}: stored estimate {}", i.input_case, i.token_estimate))?;
        worst = worst.max(estimate);
    }
    let truncated = emitted.iter().filter(|i| !i.truncated.is_empty()).count();
    ensure(truncated > 0, || "no prompt needed truncation".into())?;
    Ok(format!("{} prompts, max {worst} tokens, {truncated} truncated", emitted.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("oracle-backend closure", oracle_closure),
        ("random-backend calibration", random_calibration),
        ("hallucination metric", hallucination_metric),
        ("choice-size sweep", choice_size_trend),
        ("retrieval oracle equivalence", retrieval_oracle),
        ("metric oracle equivalence", metric_oracle),
        ("primary-factor oracle", primary_factor_oracle),
        ("split constraints", split_constraints),
        ("template fidelity", template_fidelity),
        ("determinism", determinism),
        ("token budget", token_budget),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate().map(|(i, c)| (i + 1, c)) {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criterion(s) failed");
        std::process::exit(1);
    }
}
