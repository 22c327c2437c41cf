//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p hillie-cli --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hillie::annotation::{LabelStore, SimulatedAnnotator};
use hillie::bootstrap::{fit_ggd, fit_pristine, niqe_score};
use hillie::config::{RunConfig, VoteSource};
use hillie::enhancer::{finetune, finetune_loss_and_grad, ContentFeatureExtractor, CurveEnhancer};
use hillie::nn::{BatchNorm2d, Conv2d, Layer, Linear, Mode, Tensor4};
use hillie::pipeline::{mean_utility, read_jsonl, render, select_pairs, PairRecord, Pipeline, PipelineError};
use hillie::ranker::{margin_ranking_loss, Ranker, RankerArch};
use hillie::study::{thurstone_scores, PreferenceMatrix};
use hillie::{synth, ImageTensor, SeededRng};
use hillie_service::{BackgroundServer, PairDescriptor, StageInfo};
use statrs::distribution::{ContinuousCDF, Normal};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// Finite differences

const STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn central(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(STEP) - f(-STEP)) / (2.0 * STEP)
}

fn random_tensor(dims: [usize; 4], rng: &mut SeededRng) -> Tensor4 {
    Tensor4::new(dims, (0..dims.iter().product()).map(|_| rng.normal()).collect())
}

fn random_image(h: usize, w: usize, rng: &mut SeededRng) -> ImageTensor {
    ImageTensor::new(h, w, 3, (0..h * w * 3).map(|_| rng.uniform_range(0.05, 0.6)).collect()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error of one layer's input and parameter gradients for `sum(r * y)`.
fn layer_error(layer: &Layer, x: &Tensor4, mode: Mode, rng: &mut SeededRng) -> f64 {
    let (y, cache) = layer.forward(x, mode).unwrap();
    let r: Vec<f64> = (0..y.len()).map(|_| rng.normal()).collect();
    let grads = layer.backward(&cache, &Tensor4::new(y.dims(), r.clone())).unwrap();
    let probe = |l: &Layer, x: &Tensor4| dot(l.forward(x, mode).unwrap().0.data(), &r);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let n = central(|d| {
            let mut xd = x.clone();
            xd.data_mut()[i] += d;
            probe(layer, &xd)
        });
        worst = worst.max(rel(grads.input.data()[i], n));
    }
    for (k, g) in grads.params.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let n = central(|d| {
                let mut l = layer.clone();
                l.params_mut()[k][i] += d;
                probe(&l, x)
            });
            worst = worst.max(rel(a, n));
        }
    }
    worst
}

fn gradient_integrity() -> Check {
    let start = Instant::now();
    let mut rng = SeededRng::new(2024);
    let mut results: Vec<(String, f64)> = Vec::new();

    for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (4, 2, 0), (3, 1, 0)] {
        let layer = Layer::Conv(Conv2d::new(3, 4, k, s, p, &mut rng));
        let x = random_tensor([2, 3, 8, 8], &mut rng);
        results.push((format!("conv k{k} s{s} p{p}"), layer_error(&layer, &x, Mode::Train, &mut rng)));
    }
    let mut bn = BatchNorm2d::new(3);
    for c in 0..3 {
        bn.gamma[c] = rng.uniform_range(0.5, 1.5);
        bn.beta[c] = rng.normal();
        bn.running_mean[c] = 0.3 * rng.normal();
        bn.running_var[c] = rng.uniform_range(0.5, 2.0);
    }
    let x = random_tensor([3, 3, 4, 4], &mut rng);
    results.push(("batchnorm train".into(), layer_error(&Layer::BatchNorm(bn.clone()), &x, Mode::Train, &mut rng)));
    results.push(("batchnorm eval".into(), layer_error(&Layer::BatchNorm(bn), &x, Mode::Eval, &mut rng)));
    let x = random_tensor([2, 3, 5, 5], &mut rng);
    results.push(("leaky relu".into(), layer_error(&Layer::LeakyRelu { slope: 0.2 }, &x, Mode::Train, &mut rng)));
    results.push(("global pool".into(), layer_error(&Layer::GlobalAvgPool, &x, Mode::Train, &mut rng)));
    let x = random_tensor([3, 6, 1, 1], &mut rng);
    let lin = Layer::Linear(Linear::new(6, 4, &mut rng));
    results.push(("linear".into(), layer_error(&lin, &x, Mode::Train, &mut rng)));

    // Enhancer curve parameters.
    let mut f = CurveEnhancer::new(4, 2);
    for a in f.raw_mut() {
        *a = 0.5 * rng.normal();
    }
    let x = random_image(8, 8, &mut rng);
    let w = random_image(8, 8, &mut rng);
    let analytic = f.enhance_grad(&x, &w).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let n = central(|d| {
            let mut g = f.clone();
            g.raw_mut()[i] += d;
            dot(g.enhance(&x).unwrap().data(), w.data())
        });
        worst = worst.max(rel(a, n));
    }
    results.push(("enhancer curve".into(), worst));

    // Ranker score with respect to its input image.
    let arch = RankerArch {
        blocks: 2,
        base_ch: 3,
        hidden: 5,
        slope: 0.2,
    };
    let ranker = Ranker::new(arch, 9);
    if arch.min_side() > 8 {
        return Err(format!("test ranker needs {} px", arch.min_side()));
    }
    let img = random_image(8, 8, &mut rng);
    let (_, grad) = ranker.score_input_grad(&img).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..img.data().len() {
        let n = central(|d| {
            let mut im = img.clone();
            im.data_mut()[i] += d;
            ranker.score(&im).unwrap()
        });
        worst = worst.max(rel(grad.data()[i], n));
    }
    results.push(("ranker input".into(), worst));

    // Content loss plus weighted ranker sigmoid, through the enhancer.
    let xs = [random_image(8, 8, &mut rng), random_image(8, 8, &mut rng)];
    let prev = [random_image(8, 8, &mut rng), random_image(8, 8, &mut rng)];
    let batch: Vec<(&ImageTensor, &ImageTensor)> = xs.iter().zip(&prev).collect();
    let features = ContentFeatureExtractor::new(2);
    let (_, analytic) = finetune_loss_and_grad(&f, &ranker, &batch, &features, 0.1).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let n = central(|d| {
            let mut g = f.clone();
            g.raw_mut()[i] += d;
            finetune_loss_and_grad(&g, &ranker, &batch, &features, 0.1).unwrap().0.total
        });
        worst = worst.max(rel(a, n));
    }
    results.push(("fine-tuning loss".into(), worst));

    let elapsed = start.elapsed().as_secs_f64();
    let failed: Vec<String> = results.iter().filter(|(_, e)| !(*e < GRAD_TOL)).map(|(n, e)| format!("{n} {e:.2e}")).collect();
    ensure(failed.is_empty(), format!("relative error over {GRAD_TOL:e}: {}", failed.join(", ")))?;
    ensure(elapsed < 120.0, format!("took {elapsed:.1}s"))?;
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(format!("{} gradients, worst relative error {worst:.2e}, {elapsed:.1}s", results.len()))
}

fn margin_loss() -> Check {
    let cases = [((2.0, 1.0, 1, 0), 0.0), ((1.0, 1.0, 1, 0), 0.5), ((1.2, 1.0, 0, 1), 0.7)];
    for ((pn, pm, rn, rm), want) in cases {
        let got = margin_ranking_loss(pn, pm, rn, rm, 0.5).value;
        ensure(got == want, format!("L({pn}, {pm}, {rn}, {rm}) = {got:?}, want {want}"))?;
    }
    let mut rng = SeededRng::new(7);
    for _ in 0..1000 {
        let (pn, pm) = (3.0 * rng.normal(), 3.0 * rng.normal());
        let rn = rng.index(3) as u8;
        let rm = loop {
            let r = rng.index(3) as u8;
            if r != rn {
                break r;
            }
        };
        let eps = rng.uniform_range(0.0, 2.0);
        let a = margin_ranking_loss(pn, pm, rn, rm, eps);
        let b = margin_ranking_loss(pm, pn, rm, rn, eps);
        ensure(
            a.value == b.value && a.d_pn == b.d_pm && a.d_pm == b.d_pn,
            format!("swap changes the loss at ({pn}, {pm}, {rn}, {rm}, {eps})"),
        )?;
    }
    Ok("3 worked examples exact, swap symmetry on 1000 instances".into())
}

fn top_k_selection() -> Check {
    let mut rng = SeededRng::new(31);
    for t in 0..1000 {
        let n = 1 + rng.index(40);
        let mut ids: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut ids);
        let pairs: Vec<PairRecord> = ids
            .iter()
            .map(|&i| {
                // Few distinct gaps so ties are common.
                let gap = rng.index(6) as f64 * 0.25;
                PairRecord {
                    pair_id: format!("s1-{i:03}"),
                    stage: 1,
                    input_id: format!("{i:03}"),
                    image_prev: String::new(),
                    image_cur: String::new(),
                    score_prev: gap,
                    score_cur: 0.0,
                    score_gap: gap,
                }
            })
            .collect();
        let k = 1 + rng.index(n + 5);

        let mut pool = pairs.clone();
        let mut want = Vec::new();
        while want.len() < k && !pool.is_empty() {
            let mut best = 0;
            for j in 1..pool.len() {
                let (a, b) = (&pool[j], &pool[best]);
                if a.score_gap > b.score_gap || (a.score_gap == b.score_gap && a.pair_id < b.pair_id) {
                    best = j;
                }
            }
            want.push(pool.remove(best));
        }
        let got = select_pairs(&pairs, k).map_err(|e| e.to_string())?;
        ensure(got == want, format!("instance {t}: n {n}, k {k} differs"))?;
    }
    Ok("matches a selection scan on 1000 tied instances".into())
}

fn two_methods(a: u64, b: u64) -> PreferenceMatrix {
    PreferenceMatrix::new(vec!["a".into(), "b".into()], vec![vec![0, a], vec![b, 0]]).unwrap()
}

fn thurstone() -> Check {
    let start = Instant::now();
    let phi = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in [(3, 1), (1, 3), (10, 10), (7, 2), (1, 99), (45, 55), (300, 12)] {
        let q = thurstone_scores(&two_methods(a, b)).map_err(|e| e.to_string())?.q;
        let want = phi.inverse_cdf(a as f64 / (a + b) as f64);
        worst = worst.max((q[0] - q[1] - want).abs());
    }
    ensure(worst <= 1e-4, format!("closed form off by {worst:.2e}"))?;

    let mut rng = SeededRng::new(3);
    let mut sym: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for m in 2..7 {
        let mut c = vec![vec![0u64; m]; m];
        let mut r = vec![vec![0u64; m]; m];
        for i in 0..m {
            for j in i + 1..m {
                let v = 1 + rng.index(20) as u64;
                c[i][j] = v;
                c[j][i] = v;
                r[i][j] = 1 + rng.index(20) as u64;
                r[j][i] = 1 + rng.index(20) as u64;
            }
        }
        let names: Vec<String> = (0..m).map(|i| format!("m{i}")).collect();
        let q = thurstone_scores(&PreferenceMatrix::new(names.clone(), c).unwrap()).map_err(|e| e.to_string())?.q;
        sym = sym.max(q.iter().map(|v| v.abs()).fold(0.0, f64::max));

        let base = thurstone_scores(&PreferenceMatrix::new(names.clone(), r.clone()).unwrap()).map_err(|e| e.to_string())?.q;
        let scaled: Vec<Vec<u64>> = r.iter().map(|row| row.iter().map(|v| v * 7).collect()).collect();
        let q7 = thurstone_scores(&PreferenceMatrix::new(names, scaled).unwrap()).map_err(|e| e.to_string())?.q;
        scale = scale.max(base.iter().zip(&q7).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    ensure(sym <= 1e-6, format!("symmetric matrix gives |q| {sym:.2e}"))?;
    ensure(scale <= 1e-6, format!("scaling counts moves q by {scale:.2e}"))?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 10.0, format!("took {elapsed:.1}s"))?;
    Ok(format!("closed form {worst:.1e}, symmetric {sym:.1e}, scaling {scale:.1e}, {elapsed:.2}s"))
}

fn niqe_sanity() -> Check {
    let mut rng = SeededRng::new(99);
    let gauss: Vec<f64> = (0..100_000).map(|_| rng.normal()).collect();
    let laplace: Vec<f64> = (0..100_000)
        .map(|_| {
            let u = rng.uniform() - 0.5;
            -u.signum() * (1.0 - 2.0 * u.abs()).max(1e-300).ln()
        })
        .collect();
    let g = fit_ggd(&gauss).map_err(|e| e.to_string())?.shape;
    let l = fit_ggd(&laplace).map_err(|e| e.to_string())?.shape;
    ensure((g - 2.0).abs() <= 0.1, format!("Gaussian shape {g:.3}"))?;
    ensure((l - 1.0).abs() <= 0.1, format!("Laplacian shape {l:.3}"))?;

    let reference: Vec<ImageTensor> = (0..32).map(|i| synth::scene(64, 64, 1000, i)).collect();
    let model = fit_pristine(&reference, 32, 0.75).map_err(|e| e.to_string())?;
    let mut wins = 0;
    for i in 0..50 {
        let img = synth::scene(64, 64, 2000, i);
        let dark = img.map(|v| 0.25 * v).quantized();
        let (a, b) = (niqe_score(&model, &img).map_err(|e| e.to_string())?, niqe_score(&model, &dark).map_err(|e| e.to_string())?);
        if a < b {
            wins += 1;
        }
    }
    ensure(wins >= 45, format!("pristine better on {wins}/50"))?;
    Ok(format!("shapes {g:.3} and {l:.3}, pristine better on {wins}/50 darkened to 25%"))
}

// Loop trend and ablation share one run.

fn trend_config() -> RunConfig {
    RunConfig {
        synthetic_train: 64,
        stages: 3,
        top_k: 16,
        annotators: 3,
        annotator_noise: 0.02,
        ranker_base_ch: 8,
        ranker_iters: 200,
        bootstrap_ranker_iters: 300,
        seed: 0,
        ..Default::default()
    }
}

fn loop_trend(root: &Path) -> Check {
    let start = Instant::now();
    let p = Pipeline::open(root, trend_config()).map_err(|e| e.to_string())?;
    let summary = p.run_all().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let u = summary.utilities();
    let fresh = summary.stages.last().map_or(0.0, |s| s.fresh_accuracy);
    let pref = summary.preference_rates();
    let detail = format!(
        "utility {:?}, final fresh accuracy {fresh:.3}, preference {:?}, {elapsed:.0}s",
        u.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>(),
        pref.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
    );
    ensure(u.windows(2).all(|w| w[1] > w[0]), format!("(a) utility not increasing: {detail}"))?;
    ensure(fresh >= 0.7, format!("(b) fresh accuracy below 0.7: {detail}"))?;
    ensure(pref.iter().all(|&r| r > 0.5), format!("(c) preference at or below 0.5: {detail}"))?;
    Ok(detail)
}

fn ablation(root: &Path) -> Check {
    let p = Pipeline::resume(root, &[] as &[&str]).map_err(|e| e.to_string())?;
    let (f0, g0) = (p.enhancer(0).map_err(|e| e.to_string())?, p.ranker(0).map_err(|e| e.to_string())?);
    let oracle = SimulatedAnnotator::new("oracle", 0.0, p.config().seed);
    let utility = |lambda_r: f64| -> Result<f64, String> {
        let mut cfg = p.config().finetune_config(1);
        cfg.lambda_r = lambda_r;
        let (f, _) = finetune(&f0, &g0, &p.data().train.images, &cfg).map_err(|e| e.to_string())?;
        let out = render(&f, &p.data().validation.images).map_err(|e| e.to_string())?;
        Ok(mean_utility(&oracle, &out))
    };
    let (with, without) = (utility(0.1)?, utility(0.0)?);
    ensure(with > without, format!("utility {with:.5} with the ranker term, {without:.5} without"))?;
    Ok(format!("utility {with:.5} with the ranker term, {without:.5} without"))
}

// Service

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn http_get(server: &BackgroundServer, path: &str) -> Result<(u16, Vec<u8>), String> {
    let mut r = agent().get(&server.url(path)).call().map_err(|e| e.to_string())?;
    Ok((r.status().as_u16(), r.body_mut().read_to_vec().map_err(|e| e.to_string())?))
}

fn http_vote(server: &BackgroundServer, pair_id: &str, annotator: &str, choice: &str) -> Result<u16, String> {
    let body = serde_json::json!({ "pair_id": pair_id, "annotator_id": annotator, "choice": choice }).to_string();
    let r = agent()
        .post(&server.url("/api/votes"))
        .header("content-type", "application/json")
        .send(body)
        .map_err(|e| e.to_string())?;
    Ok(r.status().as_u16())
}

fn service_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = RunConfig {
        synthetic_train: 8,
        synthetic_normal: 12,
        synthetic_validation: 4,
        pretrain_iters: 10,
        checkpoint_interval: 5,
        ranker_blocks: 2,
        ranker_base_ch: 4,
        ranker_hidden: 8,
        ranker_iters: 20,
        bootstrap_ranker_iters: 20,
        finetune_iters: 10,
        stages: 2,
        top_k: 4,
        seed: 5,
        vote_source: VoteSource::Service,
        ..Default::default()
    };
    let p = Pipeline::open(dir.path(), config).map_err(|e| e.to_string())?;
    p.run_phase1().map_err(|e| e.to_string())?;
    ensure(
        matches!(p.run_stage(1), Err(PipelineError::IncompleteVotes { stage: 1, .. })),
        "stage 1 did not wait for votes",
    )?;
    let server = BackgroundServer::start(dir.path(), "127.0.0.1:0".parse().unwrap(), None).map_err(|e| e.to_string())?;
    let stage_dir = p.workdir().stage_dir(1);
    let selected: Vec<PairRecord> = read_jsonl(&p.workdir().selected(1)).map_err(|e| e.to_string())?;

    let mut votes = 0;
    for (i, who) in ["ann-1", "ann-2", "ann-3"].iter().enumerate() {
        loop {
            let (status, body) = http_get(&server, &format!("/api/pairs/next?annotator={who}"))?;
            if status == 204 {
                break;
            }
            ensure(status == 200, format!("next pair returned {status}"))?;
            let d: PairDescriptor = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
            let rec = selected.iter().find(|r| r.pair_id == d.pair_id).ok_or("unknown pair served")?;
            let (_, a) = http_get(&server, &d.image_a_url)?;
            let cur = std::fs::read(stage_dir.join(&rec.image_cur)).map_err(|e| e.to_string())?;
            let choice = if a == cur { "a" } else { "b" };
            ensure(http_vote(&server, &d.pair_id, who, choice)? == 204, "vote rejected")?;
            votes += 1;
            let dup = http_vote(&server, &d.pair_id, who, choice)?;
            ensure(dup == 409, format!("duplicate vote returned {dup}"))?;
            let labeled = LabelStore::open(&stage_dir, 3).map_err(|e| e.to_string())?.label_for(&d.pair_id).is_some();
            ensure(labeled == (i == 2), format!("label state {labeled} after vote {} on {}", i + 1, d.pair_id))?;
        }
    }
    let (_, body) = http_get(&server, "/api/stage")?;
    let info: StageInfo = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    ensure(info.votes_pending == 0 && info.pairs_fully_voted == selected.len(), format!("{info:?}"))?;
    let m = p.run_stage(1).map_err(|e| e.to_string())?;
    ensure(m.labels_total == selected.len(), format!("{} labels", m.labels_total))?;
    ensure(http_get(&server, "/api/stage")?.0 == 503, "stage still open after advancing")?;
    Ok(format!("{votes} votes over HTTP, duplicates 409, labels at the third vote, stage advanced"))
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Check {
    let sets = [
        "synthetic_train=12",
        "synthetic_normal=12",
        "synthetic_validation=6",
        "pretrain_iters=20",
        "checkpoint_interval=5",
        "ranker_blocks=2",
        "ranker_base_ch=4",
        "ranker_hidden=8",
        "ranker_iters=40",
        "bootstrap_ranker_iters=60",
        "finetune_iters=40",
        "top_k=4",
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let work = dir.path().join(run);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hillie"));
        cmd.arg("--workdir").arg(&work).env("RUST_LOG", "warn");
        for s in sets {
            cmd.arg("--set").arg(s);
        }
        let out = cmd.arg("run-all").output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())?;
        snaps.push(snapshot(&work));
    }
    let differing: Vec<&String> = snaps[0].keys().filter(|k| snaps[1].get(*k) != Some(&snaps[0][*k])).collect();
    ensure(snaps[0].len() == snaps[1].len() && differing.is_empty(), format!("files differ: {differing:?}"))?;
    Ok(format!("{} files byte-identical across two runs", snaps[0].len()))
}

fn main() {
    // Test harness flags such as --nocapture are accepted and ignored.
    let trend_dir = tempfile::tempdir().expect("temp dir");
    let checks: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("gradient integrity", Box::new(gradient_integrity)),
        ("margin loss", Box::new(margin_loss)),
        ("top-k selection", Box::new(top_k_selection)),
        ("thurstone", Box::new(thurstone)),
        ("niqe sanity", Box::new(niqe_sanity)),
        ("loop trend", Box::new(|| loop_trend(trend_dir.path()))),
        ("ablation", Box::new(|| ablation(trend_dir.path()))),
        ("service round trip", Box::new(service_round_trip)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failures = 0;
    for (name, check) in &checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failures, checks.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
