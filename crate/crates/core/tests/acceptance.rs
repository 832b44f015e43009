//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{gaussian_matrix, pairwise_auroc, random_model, rng, separable_set};
use concept_cnn::experiment::{desk_vocabulary, run_synthetic, ExperimentConfig};
use concept_cnn::network::{conv_maxpool, param_count};
use concept_cnn::training::{train, FreezeMask, Layer, Optimizer, OptimizerConfig};
use concept_cnn::transfer::{run_transfer, Provenance};
use concept_cnn::{
    auroc, Checkpoint, CnnModel, EmbeddingTable, Error, Matrix, Outcome, ParamCount, Scenario, TrainConfig,
    TransferStrategy,
};
use rand::Rng;

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Check {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got:.6}, want {want} +/- {tol}"))
}

fn worked_example_scores() -> Check {
    let filter = Matrix::from_rows(&[[-6.0, -1.0]]).unwrap();
    let p1 = Matrix::from_rows(&[[-6.7620, -0.6463], [-0.0534, 0.0267]]).unwrap();
    let r = conv_maxpool(&p1, &filter).map_err(|e| e.to_string())?;
    close("example A row 1", r.scores.get(0, 0), 41.2183, 1e-3)?;
    close("example A row 2", r.scores.get(1, 0), 0.2937, 1e-3)?;
    close("example A pooled", r.pooled[0], 41.2183, 1e-3)?;
    // Example B is known only by its scores; these rows produce them under
    // the same filter.
    let p2 = Matrix::from_rows(&[[-0.0100, 0.0314], [-4.5, -0.8794], [-1.25, 0.1246]]).unwrap();
    let r = conv_maxpool(&p2, &filter).map_err(|e| e.to_string())?;
    close("example B row 1", r.scores.get(0, 0), 0.0286, 1e-3)?;
    close("example B row 2", r.scores.get(1, 0), 27.8794, 1e-3)?;
    close("example B row 3", r.scores.get(2, 0), 7.3754, 1e-3)?;
    close("example B pooled", r.pooled[0], 27.8794, 1e-3)
}

fn param_counts() -> Check {
    for (d, conv) in [(145, 14_500), (768, 76_800), (1536, 153_600), (3072, 307_200)] {
        let want = ParamCount { conv, fc: 202 };
        let got = param_count(100, d);
        ensure(got == want, || format!("D={d}: {got:?}"))?;
        let model = CnnModel::init(100, d, 0.5, 0).map_err(|e| e.to_string())?;
        ensure(model.param_count() == want, || format!("D={d}: model reports {:?}", model.param_count()))?;
    }
    Ok(())
}

fn gradient_check() -> Check {
    const EPS: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut r = rng(2024);
    while cases < 25 {
        let rows = r.random_range(1..=5);
        let dim = r.random_range(1..=8);
        let filters = r.random_range(1..=4);
        let mut model = random_model(filters, dim, &mut r);
        let x = gaussian_matrix(rows, dim, 1.0, &mut r);
        // Skip draws within reach of a ReLU or argmax kink.
        let p = conv_maxpool(&x, model.conv_filters()).unwrap();
        let smooth = (0..filters).all(|f| {
            let second = (0..rows).filter(|&i| i != p.argmax[f]).map(|i| p.scores.get(i, f)).fold(f64::MIN, f64::max);
            p.max_scores[f].abs() > 1e-3 && p.max_scores[f] - second > 1e-3
        });
        if !smooth {
            continue;
        }
        cases += 1;
        let keep: Vec<bool> = (0..filters).map(|_| r.random::<bool>()).collect();
        let label = Outcome::from(r.random::<bool>());
        let (_, cache) = model.forward_with_mask(&x, &keep).unwrap();
        let g = model.backward(&cache, label, 1.0).unwrap();
        let loss = |m: &CnnModel| m.forward_with_mask(&x, &keep).unwrap().1.loss(label);

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in 0..filters * dim {
            let orig = model.conv_filters().as_slice()[i];
            model.conv_filters_mut().as_mut_slice()[i] = orig + EPS;
            let up = loss(&model);
            model.conv_filters_mut().as_mut_slice()[i] = orig - EPS;
            let down = loss(&model);
            model.conv_filters_mut().as_mut_slice()[i] = orig;
            analytic.push(g.conv_filters.as_slice()[i]);
            numeric.push((up - down) / (2.0 * EPS));
        }
        for i in 0..2 * filters {
            let orig = model.fc_weights().as_slice()[i];
            model.fc_weights_mut().as_mut_slice()[i] = orig + EPS;
            let up = loss(&model);
            model.fc_weights_mut().as_mut_slice()[i] = orig - EPS;
            let down = loss(&model);
            model.fc_weights_mut().as_mut_slice()[i] = orig;
            analytic.push(g.fc_weights.as_slice()[i]);
            numeric.push((up - down) / (2.0 * EPS));
        }
        for i in 0..2 {
            let orig = model.fc_bias()[i];
            model.fc_bias_mut()[i] = orig + EPS;
            let up = loss(&model);
            model.fc_bias_mut()[i] = orig - EPS;
            let down = loss(&model);
            model.fc_bias_mut()[i] = orig;
            analytic.push(g.fc_bias[i]);
            numeric.push((up - down) / (2.0 * EPS));
        }
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
    }
    println!("  {cases} models, max relative error {worst:.2e}");
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))
}

fn auroc_oracle() -> Check {
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    for set in 0..100 {
        let n = r.random_range(2..=200);
        let mut labels: Vec<Outcome> = (0..n).map(|_| Outcome::from(r.random::<bool>())).collect();
        labels[0] = Outcome::Positive;
        labels[1] = Outcome::Negative;
        // Coarse grid for ties, some continuous values.
        let scores: Vec<f64> = (0..n)
            .map(|_| if r.random::<f64>() < 0.6 { r.random_range(0..10) as f64 / 10.0 } else { r.random::<f64>() })
            .collect();
        let a = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((a - pairwise_auroc(&scores, &labels)).abs());

        for (name, f) in [("affine", (|s: f64| 5.0 * s + 1.0) as fn(f64) -> f64), ("exp", f64::exp), ("cube", |s: f64| s.powi(3))] {
            let mapped: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            let b = auroc(&mapped, &labels).unwrap();
            ensure(b == a, || format!("set {set}: {name} transform changed AUROC {a} -> {b}"))?;
        }
        let flipped: Vec<Outcome> = labels.iter().map(|l| l.flipped()).collect();
        let c = auroc(&scores, &flipped).unwrap();
        ensure(a + c == 1.0, || format!("set {set}: flip gives {c}, original {a}"))?;
    }
    println!("  max |rank - pairwise| = {worst:.1e}");
    ensure(worst <= 1e-12, || format!("oracle gap {worst:e}"))
}

fn provenance(site: &str) -> Provenance {
    Provenance {
        site: site.into(),
        data_window: "admit_date < 20140601".into(),
        seed: 1,
        strategy: None,
        parent: None,
        config: serde_json::json!({ "epochs": 30 }),
    }
}

fn freeze_semantics() -> Check {
    let train_set = separable_set(64, 6, 1);
    let val = separable_set(24, 6, 2);
    let model = CnnModel::init(5, 6, 0.5, 3).unwrap();

    // 100 optimizer steps under the linear-tuning mask.
    let mut tuned = model.clone();
    let mut opt = Optimizer::new(OptimizerConfig::default(), 0.01);
    let mut rng_drop = rng(5);
    for step in 0..100 {
        let x = &train_set[step % train_set.len()];
        let (_, cache) = tuned.forward_train(&x.matrix, &mut rng_drop).unwrap();
        let g = tuned.backward(&cache, x.outcome, 1.0).unwrap();
        opt.apply_update(&mut tuned, &g, TransferStrategy::TuneLinear.freeze_mask()).unwrap();
        ensure(tuned.conv_filters().as_slice() == model.conv_filters().as_slice(), || {
            format!("conv_filters changed at step {}", step + 1)
        })?;
    }
    ensure(!opt.has_state_for(Layer::Conv), || "optimizer allocated state for a frozen layer".into())?;
    ensure(opt.steps(Layer::Fc) == 100, || format!("fc took {} steps", opt.steps(Layer::Fc)))?;
    ensure(tuned.fc_weights() != model.fc_weights(), || "fc did not move".into())?;

    // The same through the trainer: 64/8 = 8 steps per epoch, 13 epochs.
    let cfg = TrainConfig { epochs: 13, batch_size: 8, learning_rate: 0.01, freeze: FreezeMask::CONV, ..TrainConfig::default() };
    let (trained, _) = train(&model, &train_set, &val, &cfg).unwrap();
    ensure(trained.conv_filters().as_slice() == model.conv_filters().as_slice(), || "train() moved conv".into())?;

    // Direct share writes nothing.
    let ckpt = Checkpoint::new("dense-6", model.clone(), provenance("source")).unwrap();
    let table = EmbeddingTable::new(6, "dense-6").unwrap();
    let before = ckpt.model.revision();
    let (shared, history) =
        run_transfer(&ckpt, TransferStrategy::DirectShare, &table, &train_set, &val, &cfg).unwrap();
    ensure(history.is_none(), || "direct share trained".into())?;
    ensure(shared.revision() == before && ckpt.model.revision() == before, || "direct share wrote parameters".into())?;
    ensure(shared == model, || "direct share changed parameters".into())?;

    // Full freeze returns the input exactly.
    let (same, _) = train(&model, &train_set, &val, &TrainConfig { freeze: FreezeMask::ALL, ..cfg }).unwrap();
    ensure(same == model && same.revision() == model.revision(), || "full freeze changed the model".into())
}

fn checkpoint_round_trip() -> Check {
    let train_set = separable_set(48, 145, 1);
    let val = separable_set(16, 145, 2);
    let model = CnnModel::init(100, 145, 0.5, 9).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() };
    let (trained, _) = train(&model, &train_set, &val, &cfg).unwrap();
    let mut prov = provenance("target");
    prov.strategy = Some(TransferStrategy::TuneConvAndLinear);
    prov.parent = Some(Box::new(provenance("source")));
    let first = Checkpoint::new("one-hot", trained, prov).unwrap().to_text().map_err(|e| e.to_string())?;
    let loaded = Checkpoint::parse(&first).map_err(|e| e.to_string())?;
    let second = loaded.to_text().map_err(|e| e.to_string())?;
    ensure(first == second, || "save -> load -> save changed the bytes".into())?;

    let semantic = EmbeddingTable::new(32, "synthetic-semantic").unwrap();
    match run_transfer(&loaded, TransferStrategy::TuneLinear, &semantic, &val, &val, &cfg) {
        Err(Error::DimensionMismatch { expected: 145, found: 32 }) => Ok(()),
        other => Err(format!("cross-dimension transfer gave {:?}", other.map(|_| ()))),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn synthetic_trend() -> Check {
    let mut gaps = Vec::new();
    let (mut direct, mut linear, mut full) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..5 {
        let cfg = ExperimentConfig::desk(seed);
        let out = run_synthetic(&cfg).map_err(|e| e.to_string())?;
        let get = |tag: &str, s: Scenario| out.table.get(tag, s).unwrap();
        gaps.push(get("synthetic-semantic", Scenario::Direct) - get("one-hot", Scenario::Direct));
        direct.push(get("one-hot", Scenario::Direct));
        linear.push(get("one-hot", Scenario::TuneLinear));
        full.push(get("one-hot", Scenario::TuneFull));
        println!("  seed {seed}:\n{}", out.table.to_string().trim_end().replace('\n', "\n    ").replace("embedding", "    embedding"));
    }
    let gap = median(gaps);
    let (d, l, f) = (median(direct), median(linear), median(full));
    println!("  (a) median semantic - one-hot direct-share gap {gap:.4}");
    println!("  (b) one-hot medians: full {f:.4}, linear {l:.4}, direct {d:.4}");
    ensure(gap > 0.03, || format!("(a) median gap {gap:.4} <= 0.03"))?;
    ensure(f >= l && l >= d, || format!("(b) full {f:.4}, linear {l:.4}, direct {d:.4} out of order"))
}

fn cli(args: &[&str]) -> Check {
    let out = Command::new(env!("CARGO_BIN_EXE_concept-cnn")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let vocab = d.join("vocab.json");
    fs::write(&vocab, desk_vocabulary().to_json()).unwrap();
    for run in ["1", "2"] {
        let syn = d.join(format!("syn{run}"));
        cli(&["synth", "--out", &s(&syn), "--vocab", &s(&vocab), "--seed", "3", "--n-source", "400", "--n-target", "400"])?;
    }
    let syn = d.join("syn1");
    let input = |name: &str| s(&syn.join(name));
    for run in ["1", "2"] {
        let tr = d.join(format!("train{run}"));
        cli(&[
            "train", "--data", &input("source.csv"), "--vocab", &input("vocab.json"), "--table",
            &input("semantic.emb.jsonl"), "--out", &s(&tr), "--epochs", "3", "--seed", "8",
        ])?;
        for strategy in ["direct", "linear", "full"] {
            cli(&[
                "transfer", "--checkpoint", &s(&d.join("train1/checkpoint.json")), "--strategy", strategy, "--data",
                &input("target.csv"), "--vocab", &input("vocab.json"), "--table", &input("semantic.emb.jsonl"),
                "--out", &s(&d.join(format!("{strategy}{run}"))), "--epochs", "3", "--seed", "8",
            ])?;
        }
        cli(&[
            "eval", "--checkpoint", &s(&d.join("full1/checkpoint.json")), "--data", &input("target.csv"), "--vocab",
            &input("vocab.json"), "--table", &input("semantic.emb.jsonl"), "--out", &s(&d.join(format!("eval{run}"))),
            "--scenario", "tune_full",
        ])?;
    }
    let mut compared = 0;
    for stem in ["syn", "train", "direct", "linear", "full", "eval"] {
        for entry in fs::read_dir(d.join(format!("{stem}1"))).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(d.join(format!("{stem}1")).join(&name)).unwrap();
            let b = fs::read(d.join(format!("{stem}2")).join(&name)).unwrap();
            ensure(a == b, || format!("{stem}/{} differs between runs", name.to_string_lossy()))?;
            compared += 1;
        }
    }
    println!("  {compared} output files byte-identical across runs");
    Ok(())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("worked conv/max-pool example scores within 1e-3", worked_example_scores),
        ("parameter counts for D in {145, 768, 1536, 3072}, F=100", param_counts),
        ("analytic gradients vs central differences, rel err < 1e-4", gradient_check),
        ("rank AUROC vs pairwise oracle (1e-12), monotone + flip exact", auroc_oracle),
        ("freeze semantics: linear, direct share, full freeze", freeze_semantics),
        ("checkpoint byte-identical round trip, cross-dimension refusal", checkpoint_round_trip),
        ("synthetic two-site trend over 5 seeds, n=2000/site", synthetic_trend),
        ("CLI reruns give byte-identical outputs", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS  {name}  ({secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}  ({secs:.2}s): {why}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
