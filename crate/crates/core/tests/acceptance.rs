//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

use std::time::Instant;

use contrastive_align::alignment::checkpoint::{decode_checkpoint, encode_checkpoint};
use contrastive_align::alignment::{
    similarity_logits, symmetric_loss, AlignError, AlignmentModel, ModelConfig, Preset,
};
use contrastive_align::cli::{run_training, RunConfig, TrainOutcome};
use contrastive_align::dataset::manifest::{manifest_line, parse_manifest};
use contrastive_align::dataset::{
    read_fvecs, write_fvecs, write_manifest, Batch, PairRecord, Split, Vocab,
};
use contrastive_align::encoders::{EncoderMode, IMAGE_B1, IMAGE_B2};
use contrastive_align::inference::{
    aggregate_report, argmax, avg_topk_cosine, build_index, class_probabilities, fmt2,
    mean_topk_cosine, top1_accuracy, Modality, ProbabilityRule, PromptSet, Query, RetrievalIndex,
    RetrieveOptions, ZeroShotClassifier, DEFAULT_TEMPLATE,
};
use contrastive_align::numcore::{grad_check, l2_normalize_rows, Matrix, Tape};
use contrastive_align::rng::{normal_matrix, seeded, Rng};
use contrastive_align::synthetic::{generate, SyntheticSpec};
use rand::{Rng as _, RngCore};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn small_config(d: usize) -> ModelConfig {
    ModelConfig {
        d_in: d,
        hidden: d,
        d_v: d,
        d_t: d,
        n: d,
        image_mode: EncoderMode::Toy,
        text_mode: EncoderMode::Toy,
    }
}

fn token_vocab(size: usize) -> Vocab {
    let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
    tokens.extend((2..size).map(|i| format!("w{i}")));
    Vocab::from(tokens)
}

fn random_batch(rng: &mut Rng, b: usize, d_in: usize, vocab: usize) -> Batch {
    let tokens = (0..b)
        .map(|_| {
            let len = 1 + (rng.next_u64() % 5) as usize;
            (0..len).map(|_| 1 + (rng.next_u64() % (vocab as u64 - 1)) as usize).collect()
        })
        .collect();
    Batch::new(normal_matrix(rng, b, d_in, 1.0), tokens).unwrap()
}

fn pipeline_grad_error(seed: u64, b: usize, d: usize) -> f64 {
    let mut rng = seeded(seed);
    let vocab = 12;
    let mut model = AlignmentModel::new(small_config(d), token_vocab(vocab), vec![], &mut rng).unwrap();
    for id in [IMAGE_B1, IMAGE_B2] {
        let p = model.param_mut(id).unwrap();
        *p = normal_matrix(&mut rng, 1, p.cols(), 0.1);
    }
    let batch = random_batch(&mut rng, b, d, vocab);
    let ids: Vec<_> = model.trainable().iter().map(|(id, _)| *id).collect();
    let params: Vec<Matrix> = model.trainable().iter().map(|(_, m)| (*m).clone()).collect();
    let f = |ps: &[Matrix]| {
        let mut m = model.clone();
        for (id, p) in ids.iter().zip(ps) {
            *m.param_mut(*id).unwrap() = p.clone();
        }
        let mut tape = Tape::new();
        let loss = m.loss_on(&mut tape, &batch).map_err(|e| match e {
            AlignError::Num(n) => n,
            other => panic!("{other}"),
        })?;
        let grads = tape.backward(loss)?;
        let g = ps
            .iter()
            .zip(&ids)
            .map(|(p, id)| grads.get(*id).cloned().unwrap_or_else(|| Matrix::zeros(p.rows(), p.cols())))
            .collect();
        Ok((tape.value(loss).item(), g))
    };
    grad_check(f, &params, 1e-6).unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        for b in [2, 4, 8] {
            for d in [8, 16] {
                let err = pipeline_grad_error(seed, b, d);
                ensure(err <= 1e-4, format!("seed {seed} B {b} d {d}: relative error {err:.3e}"))?;
                worst = worst.max(err);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.2}s"))?;
    Ok(format!("120 configurations, max rel error {worst:.2e}, {secs:.2}s"))
}

fn analytic_losses() -> Outcome {
    let mut worst: f64 = 0.0;
    for b in 2..=64 {
        let l = symmetric_loss(&Matrix::filled(b, b, 0.7)).unwrap();
        let err = (l - (b as f64).ln()).abs();
        ensure(err <= 1e-9, format!("B={b}: {l} vs ln B"))?;
        worst = worst.max(err);
    }
    let id = symmetric_loss(&Matrix::identity(8).scale(50.0)).unwrap();
    ensure(id <= 1e-3, format!("50·I loss {id}"))?;
    Ok(format!("max |L-ln B| {worst:.1e}, 50·I loss {id:.2e}"))
}

fn scalar_loss(l: &Matrix) -> f64 {
    let b = l.rows();
    let mut total = 0.0;
    for i in 0..b {
        let (mut den_r, mut den_c) = (0.0, 0.0);
        for j in 0..b {
            den_r += (l.get(i, j) - l.get(i, i)).exp();
            den_c += (l.get(j, i) - l.get(i, i)).exp();
        }
        total += den_r.ln() + den_c.ln();
    }
    total / (2.0 * b as f64)
}

fn oracles() -> Outcome {
    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let b = 2 + (rng.next_u64() % 7) as usize;
        let d = 2 + (rng.next_u64() % 8) as usize;
        let fv = l2_normalize_rows(&normal_matrix(&mut rng, b, d, 1.0)).unwrap();
        let ft = l2_normalize_rows(&normal_matrix(&mut rng, b, d, 1.0)).unwrap();
        let tau = rng.random_range(-1.0..4.0);
        let logits = similarity_logits(&fv, &ft, tau).unwrap();
        for i in 0..b {
            for j in 0..b {
                let mut s = 0.0;
                for c in 0..d {
                    s += fv.get(i, c) * ft.get(j, c);
                }
                let err = (logits.get(i, j) - tau.exp() * s).abs();
                ensure(err <= 1e-9, format!("trial {trial}: logits differ by {err}"))?;
                worst = worst.max(err);
            }
        }
        let err = (symmetric_loss(&logits).unwrap() - scalar_loss(&logits)).abs();
        ensure(err <= 1e-9, format!("trial {trial}: loss differs by {err}"))?;
        worst = worst.max(err);

        let n = 1 + (rng.next_u64() % 100) as usize;
        let items = l2_normalize_rows(&normal_matrix(&mut rng, n, d, 1.0)).unwrap();
        let ids: Vec<String> = (0..n).map(|i| format!("id{:03}", (i * 7 + trial) % 1000)).collect();
        let index = RetrievalIndex::new(ids.clone(), items.clone(), Modality::Image).unwrap();
        let k = 1 + (rng.next_u64() % n as u64) as usize;
        let queries = normal_matrix(&mut rng, 3, d, 1.0);
        let mut mean = 0.0;
        for q in queries.row_iter() {
            let mut all: Vec<(String, f64)> = (0..n)
                .map(|i| (ids[i].clone(), (0..d).map(|c| q[c] * items.get(i, c)).sum()))
                .collect();
            all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            let hits = index.search(q, k, None).unwrap();
            for (h, (id, c)) in hits.iter().zip(&all) {
                ensure(&h.id == id, format!("trial {trial}: ranking differs"))?;
                let err = (h.cosine - c).abs();
                ensure(err <= 1e-9, format!("trial {trial}: cosine differs by {err}"))?;
                worst = worst.max(err);
            }
            mean += all[..k].iter().map(|x| x.1).sum::<f64>() / k as f64;
        }
        let want = 100.0 * mean / 3.0;
        let got = mean_topk_cosine(&queries, &index, k, None).unwrap();
        let err = (got - want).abs();
        ensure(err <= 1e-9, format!("trial {trial}: avg top-k differs by {err}"))?;
        worst = worst.max(err);
    }
    Ok(format!("100 instances, max abs diff {worst:.1e}"))
}

fn desk_config() -> RunConfig {
    RunConfig {
        d_in: 32,
        hidden: 64,
        d_v: 32,
        d_t: 32,
        n: 32,
        seed: 7,
        ..RunConfig::for_preset(Preset::Desk)
    }
}

struct DeskRun {
    outcome: TrainOutcome,
    dir: tempfile::TempDir,
}

fn train_desk(config: &RunConfig) -> Result<(DeskRun, f64), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SyntheticSpec::default();
    let (records, vectors) = generate(&spec);
    write_fvecs(dir.path().join("features.fvecs"), &vectors).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = run_training(config, records, dir.path(), |_| {}).map_err(|e| e.to_string())?;
    Ok((DeskRun { outcome, dir }, start.elapsed().as_secs_f64()))
}

fn desk_learning(run: &Result<(DeskRun, f64), String>) -> Outcome {
    let (run, secs) = run.as_ref().map_err(|e| e.clone())?;
    let test = run.outcome.split(Split::Test);
    let prompts = PromptSet::new(run.outcome.model.classes.clone(), DEFAULT_TEMPLATE).unwrap();
    let acc = top1_accuracy(&run.outcome.model, &test, &prompts).map_err(|e| e.to_string())?;
    ensure(*secs < 60.0, format!("training took {secs:.1}s"))?;
    ensure(acc >= 90.0, format!("test top-1 {} < 90", fmt2(acc)))?;
    Ok(format!(
        "{} test samples, top-1 {}% (chance 12.50%), trained in {secs:.1}s",
        test.len(),
        fmt2(acc)
    ))
}

fn table_one() -> Outcome {
    let rows: Vec<(String, f64)> = [
        ("SpaceNet", 70.87),
        ("Space", 62.12),
        ("Spiral", 95.68),
        ("Raw", 45.72),
        ("Synthetic", 83.36),
    ]
    .iter()
    .map(|(n, v)| (n.to_string(), *v))
    .collect();
    let ood: Vec<String> = ["Space", "Spiral", "Raw", "Synthetic"].map(String::from).to_vec();
    let report = aggregate_report(&rows, &ood).map_err(|e| e.to_string())?;
    let ood_avg = fmt2(report.ood_average().unwrap());
    let overall = fmt2(report.overall_average());
    ensure(ood_avg == "71.72", format!("OOD average {ood_avg}"))?;
    ensure(overall == "71.55", format!("average {overall}"))?;
    Ok(format!("OOD average {ood_avg}, average {overall}"))
}

fn monotone(scores: &[f64]) -> bool {
    scores.windows(2).all(|w| w[0] >= w[1])
}

fn topk_monotonicity(run: &Result<(DeskRun, f64), String>) -> Outcome {
    let (run, _) = run.as_ref().map_err(|e| e.clone())?;
    let model = &run.outcome.model;
    let index = build_index(model, &run.outcome.samples, Modality::Image).map_err(|e| e.to_string())?;
    let opts = RetrieveOptions::default();
    let image_queries: Vec<Query> = run
        .outcome
        .split(Split::Test)
        .iter()
        .map(|s| Query::Image(s.features.clone()))
        .collect();
    let text_queries: Vec<Query> = model.classes.iter().map(|c| Query::Text(c.clone())).collect();
    let mut parts = Vec::new();
    for (mode, queries) in [("image→image", &image_queries), ("text→image", &text_queries)] {
        let scores = [1, 3, 5, 10]
            .iter()
            .map(|&k| avg_topk_cosine(model, queries, &index, k, &opts))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| e.to_string())?;
        let shown: Vec<String> = scores.iter().map(|s| fmt2(*s)).collect();
        ensure(monotone(&scores), format!("{mode} not monotone: {shown:?}"))?;
        parts.push(format!("{mode} {}", shown.join(" ≥ ")));
    }
    Ok(parts.join("; "))
}

fn determinism(run: &Result<(DeskRun, f64), String>) -> Outcome {
    let (run, _) = run.as_ref().map_err(|e| e.clone())?;
    let short = RunConfig {
        epochs: 5,
        ..desk_config()
    };
    let (a, _) = train_desk(&short)?;
    let (b, _) = train_desk(&short)?;
    ensure(
        encode_checkpoint(&a.outcome.model) == encode_checkpoint(&b.outcome.model),
        "checkpoints differ between identical runs",
    )?;
    ensure(a.outcome.history == b.outcome.history, "histories differ")?;

    let model = &run.outcome.model;
    let loaded = decode_checkpoint(&encode_checkpoint(model)).map_err(|e| e.to_string())?;
    let reloaded = decode_checkpoint(&encode_checkpoint(&loaded)).map_err(|e| e.to_string())?;
    ensure(encode_checkpoint(&loaded) == encode_checkpoint(&reloaded), "checkpoint is not a fixed point")?;
    let test = run.outcome.split(Split::Test);
    let batch: Vec<&[f64]> = test.iter().map(|s| s.features.as_slice()).collect();
    let inputs = Matrix::from_rows(&batch);
    let prompts = PromptSet::new(model.classes.clone(), DEFAULT_TEMPLATE).unwrap();
    let predict = |m: &AlignmentModel| -> Result<Vec<usize>, String> {
        let clf = ZeroShotClassifier::new(m, &prompts, ProbabilityRule::Softmax).map_err(|e| e.to_string())?;
        Ok(clf
            .predict_inputs(&inputs)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|p| p.class_index)
            .collect())
    };
    ensure(predict(model)? == predict(&loaded)?, "predictions change after save/load")?;
    ensure(
        loaded.embed_images(&inputs).unwrap() == reloaded.embed_images(&inputs).unwrap(),
        "reloaded embeddings differ",
    )?;

    let vectors: Vec<Vec<f32>> = test
        .iter()
        .map(|s| s.features.iter().map(|&x| x as f32).collect())
        .collect();
    let fpath = run.dir.path().join("roundtrip.fvecs");
    write_fvecs(&fpath, &vectors).map_err(|e| e.to_string())?;
    let back = read_fvecs(&fpath).map_err(|e| e.to_string())?;
    ensure(
        back.iter().flatten().map(|v| v.to_bits()).eq(vectors.iter().flatten().map(|v| v.to_bits())),
        "fvecs roundtrip not bitwise equal",
    )?;
    let records: &[PairRecord] = &run.outcome.records;
    let mpath = run.dir.path().join("roundtrip.jsonl");
    write_manifest(&mpath, records).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&mpath).map_err(|e| e.to_string())?;
    let (parsed, raw) = parse_manifest(&text).map_err(|e| e.to_string())?;
    ensure(parsed == records, "manifest roundtrip changed records")?;
    ensure(raw.iter().zip(records).all(|(l, r)| *l == manifest_line(r)), "manifest lines changed")?;
    Ok(format!(
        "identical checkpoints and histories, {} predictions stable across save/load, {} fvecs and {} manifest records lossless",
        test.len(),
        back.len(),
        parsed.len()
    ))
}

fn probability_rules(run: &Result<(DeskRun, f64), String>) -> Outcome {
    let scale = run.as_ref().map(|(r, _)| r.outcome.model.logit_scale()).unwrap_or(100.0);
    let mut rng = seeded(88);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let scaled: Vec<f64> = (0..8).map(|_| scale * rng.random_range(1e-6..1.0)).collect();
        let soft = class_probabilities(&scaled, ProbabilityRule::Softmax).unwrap();
        let lit = class_probabilities(&scaled, ProbabilityRule::Literal).unwrap();
        ensure(argmax(&soft) == argmax(&lit), format!("trial {trial}: argmax differs"))?;
        for p in [&soft, &lit] {
            let err = (p.iter().sum::<f64>() - 1.0).abs();
            ensure(err <= 1e-12, format!("trial {trial}: sum off by {err}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("1000 trials agree, max |Σp-1| {worst:.1e}"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match outcome {
            Ok(detail) => println!("[PASS] {n}. {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("[FAIL] {n}. {name}: {reason}");
            }
        }
    };
    report(1, "gradient correctness", gradients());
    report(2, "analytic loss values", analytic_losses());
    report(3, "oracle equivalence", oracles());
    let desk = train_desk(&desk_config());
    report(4, "desk-scale learning", desk_learning(&desk));
    report(5, "report arithmetic", table_one());
    report(6, "top-k monotonicity", topk_monotonicity(&desk));
    report(7, "determinism and persistence", determinism(&desk));
    report(8, "probability rule equivalence", probability_rules(&desk));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
