//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use protoadapt_cli::config::{Dataset, ExperimentConfig};
use protoadapt_cli::report::{Arm, EvalReport};
use protoadapt_cli::main_with_args;
use protoadapt_core::adaptation::{adapt, adaptive_evaluate, margin_diagnostics, AdaptationConfig};
use protoadapt_core::encoder::{build_encoder, embed};
use protoadapt_core::episodes::{EpisodeSampler, ImageLoader, ImageTarget, TaskShape};
use protoadapt_core::protonet::{classify_episode, distance_logits, evaluate_baseline, prototypes, MetaTrainer};
use protoadapt_core::seed::{EVAL_STREAM, TRAIN_STREAM};
use protoadapt_core::synthetic::{gaussian_clusters, write_glyph_dataset, GlyphSpec};
use protoadapt_core::{gradcheck, EncoderConfig, Episode, EpisodeSource};
use protoadapt_tensor::{ops, NdArray, OptimizerKind, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const GRADCHECK_SECONDS: f64 = 60.0;
const ORACLE_INSTANCES: usize = 100;
const CONV_TOL: f64 = 1e-5;
const PROTOTYPE_TOL: f64 = 1e-6;
const MARGIN_TOL: f64 = 1e-6;
const SOFTMAX_TOL: f64 = 1e-6;
const IDENTITY_EPISODES: usize = 50;
const TRANSLATION_TOL: f64 = 1e-4;
const SEPARABILITY_MAX_EPISODES: usize = 500;
const SEPARABILITY_EVAL_EVERY: usize = 50;
const SEPARABILITY_EVAL_EPISODES: usize = 20;
const DESK_TRAIN_EPISODES: usize = 2000;
const DESK_EVAL_EPISODES: usize = 600;
const LOSS_DECREASE_FRACTION: f64 = 0.95;
const SWEEP_GRID: &str = "0,15,500";
const SWEEP_EPISODES: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> NdArray<f32> {
    let n = shape.iter().product();
    NdArray::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

fn shuffled_labels(r: &mut ChaCha8Rng, way: usize, shot: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..way * shot).map(|i| i % way).collect();
    labels.shuffle(r);
    labels
}

fn cli(args: &[&str]) -> Result<String, String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with_args(std::iter::once("protoadapt").chain(args.iter().copied()), &mut out, &mut err);
    if code == 0 {
        Ok(String::from_utf8_lossy(&out).into_owned())
    } else {
        Err(format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&err)))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn c1_gradcheck() -> Outcome {
    let started = Instant::now();
    let reports = gradcheck::run_all(0).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && secs < GRADCHECK_SECONDS,
        format!(
            "{} cases, worst rel error {worst:.2e}, {secs:.1}s (limit {GRADCHECK_SECONDS}s), failed {failed:?}",
            reports.len()
        ),
    )
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(x: &[f32], (b, cin, h, w): (usize, usize, usize, usize), k: &[f32], bias: &[f32], cout: usize, stride: usize, pad: usize) -> Vec<f64> {
    let oh = (h + 2 * pad - 3) / stride + 1;
    let ow = (w + 2 * pad - 3) / stride + 1;
    let mut out = vec![0.0f64; b * cout * oh * ow];
    for n in 0..b {
        for o in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o] as f64;
                    for c in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((n * cin + c) * h + iy as usize) * w + ix as usize] as f64
                                    * k[((o * cin + c) * 3 + ky) * 3 + kx] as f64;
                            }
                        }
                    }
                    out[((n * cout + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn means(x: &NdArray<f32>, labels: &[usize], way: usize) -> Vec<Vec<f64>> {
    let dim = x.row_len();
    let mut sums = vec![vec![0.0f64; dim]; way];
    let mut counts = vec![0usize; way];
    for (i, &l) in labels.iter().enumerate() {
        for (s, &v) in sums[l].iter_mut().zip(x.row(i)) {
            *s += v as f64;
        }
        counts[l] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    sums
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn c2_oracles() -> Outcome {
    let mut r = rng(2);
    let (mut conv, mut proto, mut margin, mut softmax) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..ORACLE_INSTANCES {
        let (b, cin, cout) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..5));
        let (h, w) = (r.random_range(3..9), r.random_range(3..9));
        let (stride, pad) = (r.random_range(1..3), r.random_range(0..2));
        let x = uniform(&mut r, &[b, cin, h, w], -1.0, 1.0);
        let k = uniform(&mut r, &[cout, cin, 3, 3], -1.0, 1.0);
        let bias = uniform(&mut r, &[cout], -1.0, 1.0);
        let got = ops::conv2d(&Tensor::constant(x.clone()), &Tensor::constant(k.clone()), &Tensor::constant(bias.clone()), stride, pad).unwrap();
        let want = naive_conv(x.data(), (b, cin, h, w), k.data(), bias.data(), cout, stride, pad);
        conv = got.data().iter().zip(&want).map(|(g, w)| (*g as f64 - w).abs()).fold(conv, f64::max);

        let (way, shot, dim) = (r.random_range(2..8), r.random_range(1..6), r.random_range(1..48));
        let labels = shuffled_labels(&mut r, way, shot);
        let e = uniform(&mut r, &[way * shot, dim], -2.0, 2.0);
        let brute = means(&e, &labels, way);
        let p = prototypes(&e, &labels, way).unwrap();
        for (k, row) in brute.iter().enumerate() {
            proto = p.matrix.row(k).iter().zip(row).map(|(g, w)| (*g as f64 - w).abs()).fold(proto, f64::max);
        }
        let m = margin_diagnostics(&e, &labels).unwrap();
        let mut min_inter = f64::INFINITY;
        for a in 0..way {
            for b in a + 1..way {
                min_inter = min_inter.min(euclid(&brute[a], &brute[b]));
            }
        }
        let intra = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| euclid(&e.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>(), &brute[l]))
            .sum::<f64>()
            / labels.len() as f64;
        margin = margin.max((m.min_inter - min_inter).abs()).max((m.mean_intra - intra).abs());

        let nq = r.random_range(1..10);
        let q = uniform(&mut r, &[nq, dim], -2.0, 2.0);
        let logits = distance_logits(&Tensor::constant(q), &Tensor::constant(p.matrix.clone())).unwrap();
        let probs = ops::softmax_rows(logits.data(), way);
        for row in probs.chunks(way) {
            softmax = softmax.max((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        conv <= CONV_TOL && proto <= PROTOTYPE_TOL && margin <= MARGIN_TOL && softmax <= SOFTMAX_TOL,
        format!(
            "{ORACLE_INSTANCES} instances each; conv {conv:.1e} (<= {CONV_TOL:.0e}), prototypes {proto:.1e} (<= {PROTOTYPE_TOL:.0e}), margins {margin:.1e} (<= {MARGIN_TOL:.0e}), softmax sum {softmax:.1e} (<= {SOFTMAX_TOL:.0e})"
        ),
    )
}

fn small_config() -> EncoderConfig {
    EncoderConfig::new(1, (8, 8)).with_hidden_channels(8).with_num_blocks(2)
}

fn cluster_sampler(classes: usize, sigma: f64, seed: u64, stream: u64) -> EpisodeSampler {
    let shape = TaskShape::new(5, 1, 5);
    EpisodeSampler {
        split: Arc::new(gaussian_clusters(classes, shape.shot + shape.query + 2, [1, 8, 8], sigma, seed).unwrap()),
        loader: Arc::new(ImageLoader::new(ImageTarget::Omniglot28, false)),
        shape,
        master_seed: seed,
        stream,
    }
}

fn c3_identities() -> Outcome {
    let cfg = small_config();
    let params = build_encoder(&cfg, 3).unwrap();
    let source = cluster_sampler(12, 0.3, 3, EVAL_STREAM);
    let base = AdaptationConfig::omniglot(5).with_lr(1e-2);
    let mut mismatches = 0;
    for i in 0..IDENTITY_EPISODES {
        let ep = source.episode(i).unwrap();
        for ac in [base.clone().with_steps(0), base.clone().with_lr(0.0).with_steps(15)] {
            let a = adapt(&cfg, &params, &ep.support_images, &ep.support_labels, &ac, ep.seed()).unwrap();
            let res = adaptive_evaluate(&cfg, &params, &ep, &ac).unwrap();
            if !a.encoder.values_bitwise_eq(&params) || res.adapted_accuracy != res.baseline_accuracy {
                mismatches += 1;
            }
        }
    }
    let mut r = rng(33);
    let mut shift_err = 0.0f64;
    for _ in 0..ORACLE_INSTANCES {
        let (way, dim, nq) = (r.random_range(2..7), r.random_range(1..64), r.random_range(1..12));
        let q = uniform(&mut r, &[nq, dim], -1.0, 1.0);
        let p = uniform(&mut r, &[way, dim], -1.0, 1.0);
        let c = uniform(&mut r, &[dim], -5.0, 5.0);
        let shift = |m: &NdArray<f32>| {
            let data = m.data().chunks(dim).flat_map(|row| row.iter().zip(c.data()).map(|(a, b)| a + b)).collect();
            NdArray::new(m.shape().to_vec(), data).unwrap()
        };
        let before = distance_logits(&Tensor::constant(q.clone()), &Tensor::constant(p.clone())).unwrap();
        let after = distance_logits(&Tensor::constant(shift(&q)), &Tensor::constant(shift(&p))).unwrap();
        shift_err = before.data().iter().zip(after.data()).map(|(a, b)| (a - b).abs() as f64).fold(shift_err, f64::max);
    }
    outcome(
        mismatches == 0 && shift_err <= TRANSLATION_TOL,
        format!(
            "steps=0 and lr=0 on {IDENTITY_EPISODES} episodes: {mismatches} mismatches; translation max |dlogit| {shift_err:.1e} (<= {TRANSLATION_TOL:.0e}) over {ORACLE_INSTANCES} instances"
        ),
    )
}

/// Block 0 ignores input channel 1; classes 0 and 1 differ only there.
fn coincident_episode() -> (EncoderConfig, protoadapt_tensor::ParamSet, Episode) {
    let cfg = EncoderConfig::new(2, (8, 8)).with_hidden_channels(8).with_num_blocks(2);
    let mut params = build_encoder(&cfg, 21).unwrap();
    let w = &mut params.get_mut("block0.conv.weight").unwrap().value;
    for o in 0..8 {
        w.data_mut()[o * 18 + 9..o * 18 + 18].iter_mut().for_each(|v| *v = 0.0);
    }
    let mut r = rng(22);
    let shared = uniform(&mut r, &[64], 0.0, 1.0);
    let batch = |r: &mut ChaCha8Rng| {
        let data: Vec<f32> = (0..5)
            .flat_map(|k| {
                let ch0 = if k < 2 { shared.data().to_vec() } else { uniform(r, &[64], 0.0, 1.0).into_data() };
                [ch0, uniform(r, &[64], 0.0, 1.0).into_data()].concat()
            })
            .collect();
        NdArray::new(vec![5, 2, 8, 8], data).unwrap()
    };
    let (support, query) = (batch(&mut r), batch(&mut r));
    let ep = Episode::from_arrays(23, support, vec![0, 1, 2, 3, 4], query, vec![0, 1, 2, 3, 4]).unwrap();
    (cfg, params, ep)
}

fn c4_separability() -> Outcome {
    let cfg = small_config();
    let train = cluster_sampler(10, 0.05, 4, TRAIN_STREAM);
    let eval = cluster_sampler(10, 0.05, 4, EVAL_STREAM);
    let mut trainer = MetaTrainer::new(cfg, build_encoder(&cfg, 4).unwrap(), OptimizerKind::Adam, 1e-3).unwrap();
    let mut reached = None;
    let mut last = 0.0;
    while trainer.episodes_done <= SEPARABILITY_MAX_EPISODES {
        last = evaluate_baseline(&cfg, &trainer.params, &eval, SEPARABILITY_EVAL_EPISODES, 1).unwrap().summary.mean;
        if last == 1.0 {
            reached = Some(trainer.episodes_done);
            break;
        }
        if trainer.episodes_done == SEPARABILITY_MAX_EPISODES {
            break;
        }
        trainer.run(&train, trainer.episodes_done + SEPARABILITY_EVAL_EVERY, 0, |_| {}).unwrap();
    }

    let (ccfg, params, ep) = coincident_episode();
    let before = classify_episode(&ccfg, &params, &ep).unwrap();
    let m0 = margin_diagnostics(&before.support_embeddings, &ep.support_labels).unwrap().min_inter;
    let ac = AdaptationConfig::omniglot(5).with_lr(1e-2).with_steps(10);
    let m1 = adaptive_evaluate(&ccfg, &params, &ep, &ac).unwrap().margins_after.min_inter;
    outcome(
        reached.is_some() && m0 == 0.0 && m1 > 0.0,
        format!(
            "100% query accuracy on {SEPARABILITY_EVAL_EPISODES} cluster episodes reached after {} meta-train episodes (limit {SEPARABILITY_MAX_EPISODES}, last {:.1}%); coincident classes min_inter {m0} -> {m1:.3e}",
            reached.map_or("never".to_string(), |n| n.to_string()),
            100.0 * last
        ),
    )
}

struct DeskRun {
    _dir: tempfile::TempDir,
    config: PathBuf,
    report: EvalReport,
    history: Vec<f64>,
}

/// Default glyph corpus, omniglot preset, 2000 meta-train episodes, 600 paired evaluations.
fn desk_run() -> Result<DeskRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::preset(Dataset::Omniglot);
    cfg.experiment.data_root = dir.path().join("glyphs");
    cfg.train.episodes = DESK_TRAIN_EPISODES;
    cfg.train.log_every = 0;
    cfg.episodes.eval_episodes = DESK_EVAL_EPISODES;
    cfg.paths.checkpoint = dir.path().join("run/encoder.ckpt");
    cfg.paths.report = dir.path().join("run/report.csv");
    cfg.paths.manifest = dir.path().join("run/splits.tsv");
    let config = dir.path().join("omniglot.toml");
    std::fs::write(&config, cfg.render()).map_err(|e| e.to_string())?;
    let c = s(&config);
    cli(&["--config", c, "generate"])?;
    cli(&["--config", c, "train"])?;
    cli(&["--config", c, "eval", "--mode", "paired"])?;
    let report = EvalReport::read(&cfg.paths.report).map_err(|e| e.to_string())?;
    let history = std::fs::read_to_string(cfg.history_path())
        .map_err(|e| e.to_string())?
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    Ok(DeskRun {
        _dir: dir,
        config,
        report,
        history,
    })
}

fn c5_desk(run: &Result<DeskRun, String>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let base = run.report.arm(Arm::Baseline).unwrap();
    let adapted = run.report.arm(Arm::Adapted).unwrap();
    let fell = run.report.loss_decreased_fraction.unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (first, last) = (mean(&run.history[..100]), mean(&run.history[run.history.len() - 100..]));
    outcome(
        adapted.mean >= base.mean && fell >= LOSS_DECREASE_FRACTION,
        format!(
            "{DESK_TRAIN_EPISODES} train episodes, {} paired episodes: baseline {:.4}% +- {:.4}, adapted {:.4}% +- {:.4}, delta {:+.4} pp; support loss fell on {:.1}% (>= {:.0}%); train loss first-100 {first:.4} last-100 {last:.4}",
            base.count,
            base.mean,
            base.ci95,
            adapted.mean,
            adapted.ci95,
            adapted.mean - base.mean,
            100.0 * fell,
            100.0 * LOSS_DECREASE_FRACTION
        ),
    )
}

fn c6_sweep(run: &Result<DeskRun, String>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let out = run.config.with_file_name("sweep.csv");
    let episodes = SWEEP_EPISODES.to_string();
    let args = ["--config", s(&run.config), "--out", s(&out), "sweep", "--grid", SWEEP_GRID, "--episodes", &episodes];
    if let Err(e) = cli(&args) {
        return outcome(false, e);
    }
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    let finite = rows.iter().all(|r| r[1..].iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)));
    if rows.len() != 3 || !finite {
        return outcome(false, format!("unexpected sweep table:\n{text}"));
    }
    let num = |v: &str| v.parse::<f64>().unwrap();
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("steps {} adapted {:.3}% (delta {:+.3} pp)", r[0], num(&r[4]), num(&r[7])))
        .collect();
    outcome(true, format!("diagnostic, {SWEEP_EPISODES} episodes, baseline {:.3}%: {}", num(&rows[0][2]), table.join("; ")))
}

fn c7_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = GlyphSpec {
        alphabets: 3,
        characters_per_alphabet: 10,
        drawers: 8,
        ..GlyphSpec::default()
    };
    write_glyph_dataset(&dir.path().join("glyphs"), &spec, 7).unwrap();
    let config_for = |run: &str| {
        let mut cfg = ExperimentConfig::preset(Dataset::Omniglot);
        cfg.experiment.data_root = dir.path().join("glyphs");
        cfg.encoder.hidden_channels = 8;
        cfg.episodes.query = 5;
        cfg.episodes.eval_episodes = 12;
        cfg.train.episodes = 20;
        cfg.train.log_every = 0;
        cfg.paths.checkpoint = dir.path().join(run).join("enc.ckpt");
        cfg.paths.report = dir.path().join(run).join("report.csv");
        cfg.paths.manifest = dir.path().join("splits.tsv");
        let path = dir.path().join(format!("{run}.toml"));
        std::fs::write(&path, cfg.render()).unwrap();
        (path, cfg)
    };
    let (pa, a) = config_for("a");
    let (pb, b) = config_for("b");
    for p in [&pa, &pb] {
        if let Err(e) = cli(&["--config", s(p), "--seed", "11", "train"]) {
            return outcome(false, e);
        }
    }
    let ckpt_equal = std::fs::read(&a.paths.checkpoint).unwrap() == std::fs::read(&b.paths.checkpoint).unwrap();
    let history_equal = std::fs::read(a.history_path()).unwrap() == std::fs::read(b.history_path()).unwrap();

    let eval = |workers: &str| {
        cli(&["--config", s(&pa), "--seed", "11", "--workers", workers, "eval"]).unwrap();
        std::fs::read(&a.paths.report).unwrap()
    };
    let (r1, r2, r3) = (eval("1"), eval("1"), eval("3"));
    let report_equal = r1 == r2;
    let parse = |bytes: &[u8]| EvalReport::parse(std::str::from_utf8(bytes).unwrap()).unwrap();
    let (single, multi) = (parse(&r1), parse(&r3));
    let numeric_equal = single.rows == multi.rows && single.arms == multi.arms && single.loss_decreased_fraction == multi.loss_decreased_fraction;
    outcome(
        ckpt_equal && history_equal && report_equal && numeric_equal,
        format!(
            "checkpoint bytes equal {ckpt_equal}, history bytes equal {history_equal}, single-worker report bytes equal {report_equal}, 3-worker values equal {numeric_equal}"
        ),
    )
}

fn c8_shapes() -> Outcome {
    let cifar = EncoderConfig::cifar();
    let mini = EncoderConfig::miniimagenet();
    let (dc, dm) = (cifar.embedding_dim().unwrap(), mini.embedding_dim().unwrap());
    let mut r = rng(8);
    let ec = embed(&cifar, &build_encoder(&cifar, 1).unwrap(), &uniform(&mut r, &[2, 3, 32, 32], 0.0, 1.0)).unwrap();
    let em = embed(&mini, &build_encoder(&mini, 1).unwrap(), &uniform(&mut r, &[2, 3, 84, 84], 0.0, 1.0)).unwrap();
    let ac = AdaptationConfig::cifar_1shot(5).with_steps(1);
    let head_hw = ac.spec.head_input_hw(&cifar).unwrap();
    let params = build_encoder(&cifar, 2).unwrap();
    let support = uniform(&mut r, &[5, 3, 32, 32], 0.0, 1.0);
    let adapted = adapt(&cifar, &params, &support, &[0, 1, 2, 3, 4], &ac, 9).unwrap();
    let trajectory_ok = adapted.trajectory.len() == 2 && adapted.trajectory.iter().all(|l| l.is_finite());
    outcome(
        dc == 256 && dm == 1600 && ec.shape() == [2, 256] && em.shape() == [2, 1600] && head_hw == (1, 1) && trajectory_ok,
        format!(
            "cifar dim {dc} embed {:?}, miniimagenet dim {dm} embed {:?}, augmented cifar map before head {head_hw:?}, one adaptation step finite {trajectory_ok}",
            ec.shape(),
            em.shape()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut failed = 0;
    let mut report = |n: usize, title: &str, o: Outcome| {
        failed += usize::from(!o.pass);
        println!("criterion {n} {} {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "gradient check", c1_gradcheck());
    report(2, "oracle equivalence", c2_oracles());
    report(3, "reduction identities", c3_identities());
    report(4, "synthetic separability", c4_separability());
    let desk = desk_run();
    report(5, "desk-scale adapted vs baseline", c5_desk(&desk));
    report(6, "step sweep", c6_sweep(&desk));
    report(7, "determinism", c7_determinism());
    report(8, "shape contracts", c8_shapes());
    println!("{} of 8 criteria passed in {:.0}s", 8 - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
