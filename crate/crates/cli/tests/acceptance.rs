//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use ruinscore::dataset_io::{
    BoundingBox, ComponentClass, ComponentDetection, DamageClass, DamageDetection, Detection,
    DetectionClass, Scene, SceneLabel,
};
use ruinscore::detector_backend::{
    BackendConfig, BackendError, BackendRequest, BackendResponse, CascadeOutput, ExternalBackend,
    Task,
};
use ruinscore::evaluate::{
    compute_metrics, confusion_matrix, render_report, EvalReport, ReportFormat,
};
use ruinscore::fusion::{level_for_score, rule_fusion, FusionConfig};
use ruinscore::meta::{logreg_loss_and_gradient, train_gbdt, train_logreg, MetaModel, TrainHyper};
use ruinscore::pipeline::AssessmentRecord;
use ruinscore::DamageLevel;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

// ---------------------------------------------------------------- generators

fn rand_box(r: &mut impl Rng) -> BoundingBox {
    BoundingBox::new(
        r.gen_range(0.05..0.95),
        r.gen_range(0.05..0.95),
        r.gen_range(0.005..0.6),
        r.gen_range(0.005..0.6),
    )
    .unwrap()
}

fn rand_damage(r: &mut impl Rng) -> DamageDetection {
    let class = DamageClass::ALL[r.gen_range(0..3)];
    Detection::new(class, rand_box(r), r.gen_range(0.0..=1.0)).unwrap()
}

fn rand_component(r: &mut impl Rng) -> ComponentDetection {
    let class = ComponentClass::ALL[r.gen_range(0..3)];
    Detection::new(class, rand_box(r), r.gen_range(0.0..=1.0)).unwrap()
}

fn rand_output(r: &mut impl Rng) -> CascadeOutput {
    let scene = if r.gen_bool(0.5) {
        Scene::Inside
    } else {
        Scene::Outside
    };
    CascadeOutput {
        image_id: "gen".into(),
        scene: SceneLabel::certain(scene),
        components: (0..r.gen_range(0..4)).map(|_| rand_component(r)).collect(),
        damages: (0..r.gen_range(0..8)).map(|_| rand_damage(r)).collect(),
    }
}

fn det<C: DetectionClass>(class: C, b: (f64, f64, f64, f64), conf: f64) -> Detection<C> {
    Detection::new(class, BoundingBox::new(b.0, b.1, b.2, b.3).unwrap(), conf).unwrap()
}

/// Independent piecewise reading of the default V1 rule.
fn v1_oracle(n_crack: usize, n_spall: usize, n_rebar: usize) -> (DamageLevel, f64) {
    let s = n_crack + 2 * n_spall;
    let level = match (n_rebar, s) {
        (1.., _) => DamageLevel::Heavy,
        (0, 0) => DamageLevel::Zero,
        (0, 1..=3) => DamageLevel::Slight,
        _ => DamageLevel::Medium,
    };
    (level, s as f64)
}

// ---------------------------------------------------------------- criteria

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let configs = [FusionConfig::default(), FusionConfig::v2()];
    let per_config = 1000;
    let mut checked = 0;

    for cfg in &configs {
        for _ in 0..per_config {
            let out = rand_output(&mut r);
            let d = rule_fusion(&out, cfg);
            checked += 1;

            // rebar dominance, as observed
            ensure!(
                d.counts.n_rebar_valid == 0 || d.level == DamageLevel::Heavy,
                "validated rebar without Heavy: {d:?}"
            );
            ensure!(
                d.rebar_forced == (d.level == DamageLevel::Heavy),
                "forced flag mismatch"
            );

            // rebar dominance, injected: confident rebar framed by spall and column
            let (cx, cy) = (r.gen_range(0.2..0.8), r.gen_range(0.2..0.8));
            let mut forced = out.clone();
            forced
                .damages
                .push(det(DamageClass::ExposedRebar, (cx, cy, 0.08, 0.08), 0.9));
            forced
                .damages
                .push(det(DamageClass::Spalling, (cx, cy, 0.1, 0.1), 0.9));
            forced
                .components
                .push(det(ComponentClass::Column, (cx, cy, 0.3, 0.3), 0.9));
            ensure!(
                rule_fusion(&forced, cfg).level == DamageLevel::Heavy,
                "injected rebar not Heavy"
            );

            // non-forced levels follow the thresholds on the reported score
            if !d.rebar_forced {
                let t = cfg.thresholds;
                let want = if d.score < t.t_slight {
                    DamageLevel::Zero
                } else if d.score < t.t_medium {
                    DamageLevel::Slight
                } else {
                    DamageLevel::Medium
                };
                ensure!(d.level == want, "score {} gave {}", d.score, d.level);
            }

            // zero evidence: drop everything, or push it all below the floor
            let mut empty = out.clone();
            empty.damages.clear();
            let z = rule_fusion(&empty, cfg);
            ensure!(
                z.level == DamageLevel::Zero && z.score == 0.0,
                "empty not Zero"
            );
            let mut faint = out.clone();
            for dmg in &mut faint.damages {
                dmg.confidence = r.gen_range(0.0..cfg.conf_floor);
            }
            ensure!(
                rule_fusion(&faint, cfg).level == DamageLevel::Zero,
                "faint evidence not Zero"
            );

            // monotone under adding a detection or a component
            let mut more = out.clone();
            more.damages.push(rand_damage(&mut r));
            ensure!(
                rule_fusion(&more, cfg).level >= d.level,
                "added damage lowered level"
            );
            let mut more = out.clone();
            more.components.push(rand_component(&mut r));
            ensure!(
                rule_fusion(&more, cfg).level >= d.level,
                "added component lowered level"
            );
        }
    }

    // exact boundaries
    let cfg = FusionConfig::default();
    for (s, want) in [
        (1.0f64.next_down(), DamageLevel::Zero),
        (1.0, DamageLevel::Slight),
        (4.0f64.next_down(), DamageLevel::Slight),
        (4.0, DamageLevel::Medium),
    ] {
        ensure!(
            level_for_score(s, &cfg) == want,
            "boundary {s:e} not {want}"
        );
    }
    let crack = |i: usize| {
        det(
            DamageClass::Crack,
            (0.1 + 0.05 * i as f64, 0.5, 0.02, 0.02),
            0.9,
        )
    };
    let spall = |i: usize| {
        det(
            DamageClass::Spalling,
            (0.1 + 0.05 * i as f64, 0.2, 0.05, 0.05),
            0.9,
        )
    };
    let case = |damages: Vec<DamageDetection>, components: Vec<ComponentDetection>| CascadeOutput {
        image_id: "b".into(),
        scene: SceneLabel::certain(Scene::Outside),
        components,
        damages,
    };
    let v1 = FusionConfig::default();
    let v2 = FusionConfig::v2();
    let column = || vec![det(ComponentClass::Column, (0.5, 0.5, 0.9, 0.9), 0.9)];
    for (out, cfg, want) in [
        (case(vec![crack(0)], vec![]), &v1, DamageLevel::Slight),
        (
            case(vec![crack(0), crack(1), crack(2)], vec![]),
            &v1,
            DamageLevel::Slight,
        ),
        (
            case((0..4).map(crack).collect(), vec![]),
            &v1,
            DamageLevel::Medium,
        ),
        (
            case(vec![spall(0), spall(1)], vec![]),
            &v1,
            DamageLevel::Medium,
        ),
        // beta halves S = 4 to 2
        (
            case(vec![spall(0), spall(1)], vec![]),
            &v2,
            DamageLevel::Slight,
        ),
        (
            case(vec![spall(0), spall(1)], column()),
            &v2,
            DamageLevel::Medium,
        ),
        (
            case(vec![crack(0), crack(1)], vec![]),
            &v2,
            DamageLevel::Slight,
        ),
        (case(vec![crack(0)], vec![]), &v2, DamageLevel::Zero),
    ] {
        let got = rule_fusion(&out, cfg).level;
        ensure!(got == want, "boundary case gave {got}, want {want}");
    }

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "{checked} generated outputs, all properties held in {elapsed:.2?}"
    ))
}

fn criterion_2() -> Outcome {
    let cfg = FusionConfig::default();
    let mut agree = 0;
    let mut total = 0;
    for nc in 0..=5 {
        for ns in 0..=5 {
            for nr in 0..=5 {
                total += 1;
                let mut damages = Vec::new();
                let mut slot = 0;
                let mut push = |class, n| {
                    for _ in 0..n {
                        let x = 0.05 + 0.055 * slot as f64;
                        damages.push(det(class, (x, 0.5, 0.02, 0.02), 0.8));
                        slot += 1;
                    }
                };
                push(DamageClass::Crack, nc);
                push(DamageClass::Spalling, ns);
                push(DamageClass::ExposedRebar, nr);
                let out = CascadeOutput {
                    image_id: "bf".into(),
                    scene: SceneLabel::certain(Scene::Outside),
                    components: vec![],
                    damages,
                };
                let d = rule_fusion(&out, &cfg);
                let (level, score) = v1_oracle(nc, ns, nr);
                if d.level == level && d.score == score {
                    agree += 1;
                }
            }
        }
    }
    ensure!(agree == total, "{agree}/{total} agreement");
    Ok(format!(
        "{agree}/{total} count vectors agree with the piecewise oracle"
    ))
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    for _ in 0..1000 {
        let n = r.gen_range(1..200);
        let pairs: Vec<(DamageLevel, DamageLevel)> = (0..n)
            .map(|_| {
                (
                    DamageLevel::ALL[r.gen_range(0..4)],
                    DamageLevel::ALL[r.gen_range(0..4)],
                )
            })
            .collect();
        let rep =
            compute_metrics(&confusion_matrix(pairs.iter().copied())).map_err(|e| e.to_string())?;

        let nf = n as f64;
        let exact = pairs.iter().filter(|(g, p)| g == p).count() as f64 / nf;
        let near = pairs
            .iter()
            .filter(|(g, p)| (g.ordinal() as i32 - p.ordinal() as i32).abs() <= 1)
            .count() as f64
            / nf;
        ensure!(
            (rep.exact_accuracy - exact).abs() < 1e-12,
            "exact accuracy differs"
        );
        ensure!(
            (rep.plus_minus_one_accuracy - near).abs() < 1e-12,
            "±1 accuracy differs"
        );
        ensure!(
            rep.plus_minus_one_accuracy >= rep.exact_accuracy,
            "±1 below exact"
        );
        ensure!(rep.n == n as u64, "n differs");
        for (gi, g) in DamageLevel::ALL.iter().enumerate() {
            for (pi, p) in DamageLevel::ALL.iter().enumerate() {
                let c = pairs.iter().filter(|(a, b)| a == g && b == p).count() as u64;
                ensure!(rep.matrix.0[gi][pi] == c, "matrix cell differs");
            }
            let tp = pairs.iter().filter(|(a, b)| a == g && b == g).count() as f64;
            let col = pairs.iter().filter(|(_, b)| b == g).count() as f64;
            let row = pairs.iter().filter(|(a, _)| a == g).count() as f64;
            let prec = if col == 0.0 { 0.0 } else { tp / col };
            let rec = if row == 0.0 { 0.0 } else { tp / row };
            let f1 = if prec + rec == 0.0 {
                0.0
            } else {
                2.0 * prec * rec / (prec + rec)
            };
            let m = rep.per_class[gi];
            ensure!((m.precision - prec).abs() < 1e-12, "precision differs");
            ensure!((m.recall - rec).abs() < 1e-12, "recall differs");
            ensure!((m.f1 - f1).abs() < 1e-12, "f1 differs");
            ensure!(m.support == row as u64, "support differs");
            ensure!(
                m.undefined_to_zero == (col == 0.0 || row == 0.0 || prec + rec == 0.0),
                "undefined flag differs"
            );
        }
    }

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reports");
    let load = |name: &str| -> Result<String, String> {
        let text = fs::read_to_string(fixtures.join(name)).map_err(|e| e.to_string())?;
        let rep = EvalReport::from_json(&text).map_err(|e| e.to_string())?;
        Ok(render_report(&rep, ReportFormat::Text))
    };
    let v2 = load("rule_v2.json")?;
    ensure!(
        v2.contains("Final Decision\tRule Fusion v2\t71.04\t91.92"),
        "v2 row missing:\n{v2}"
    );
    ensure!(
        v2.contains("F1 Score\t0.844 0.384 0.128 0.641"),
        "F1 row missing:\n{v2}"
    );
    let v1 = load("rule_v1.json")?;
    ensure!(v1.contains("\t61.54\t68.32"), "v1 row missing:\n{v1}");
    Ok("1000 random pair lists match the naive oracle to 1e-12; table strings reproduced".into())
}

/// Zero vs Heavy separated by feature 16, other features noise.
fn separable_fixture() -> (Vec<Vec<f64>>, Vec<DamageLevel>) {
    let mut r = rng(16);
    (0..200)
        .map(|i| {
            let heavy = i % 2 == 0;
            let mut row: Vec<f64> = (0..18).map(|_| r.gen_range(0.0..1.0)).collect();
            row[16] = if heavy {
                r.gen_range(4.0..8.0)
            } else {
                r.gen_range(0.0..3.0)
            };
            (
                row,
                if heavy {
                    DamageLevel::Heavy
                } else {
                    DamageLevel::Zero
                },
            )
        })
        .unzip()
}

/// Four clusters around (±1, ±1), 400 points, labelled by sign agreement.
fn xor_fixture() -> (Vec<Vec<f64>>, Vec<DamageLevel>) {
    let mut r = rng(2);
    (0..400)
        .map(|i| {
            let (sx, sy) = ([1.0, -1.0][i % 2], [1.0, -1.0][(i / 2) % 2]);
            let row = vec![sx + r.gen_range(-0.4..0.4), sy + r.gen_range(-0.4..0.4)];
            let level = if sx * sy > 0.0 {
                DamageLevel::Slight
            } else {
                DamageLevel::Medium
            };
            (row, level)
        })
        .unzip()
}

fn accuracy(m: &MetaModel, x: &[Vec<f64>], y: &[DamageLevel]) -> f64 {
    let hits = x
        .iter()
        .zip(y)
        .filter(|(xi, yi)| m.predict(xi).unwrap().argmax() == **yi)
        .count();
    hits as f64 / y.len() as f64
}

fn non_increasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0])
}

fn criterion_4() -> Outcome {
    let (x, y) = separable_fixture();
    let z: Vec<Vec<f64>> = x
        .iter()
        .take(40)
        .map(|row| row.iter().copied().chain([1.0]).collect())
        .collect();
    let yz = &y[..40];
    let cw = [1.0; 4];
    let mut r = rng(4);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let w: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..19).map(|_| r.gen_range(-0.5..0.5)).collect())
            .collect();
        let (_, grad) = logreg_loss_and_gradient(&w, &z, yz, 1e-3, &cw);
        for k in 0..4 {
            for j in 0..19 {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[k][j] += eps;
                wm[k][j] -= eps;
                let lp = logreg_loss_and_gradient(&wp, &z, yz, 1e-3, &cw).0;
                let lm = logreg_loss_and_gradient(&wm, &z, yz, 1e-3, &cw).0;
                worst = worst.max(((lp - lm) / (2.0 * eps) - grad[k][j]).abs());
            }
        }
    }
    ensure!(worst < 1e-5, "max finite-difference error {worst:e}");

    let start = Instant::now();
    let t = train_logreg(&x, &y, &TrainHyper::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(non_increasing(&t.loss_trace[1..]), "logreg loss increased");
    let acc = accuracy(&MetaModel::LogReg(t.model), &x, &y);
    ensure!(acc >= 0.99, "separable accuracy {acc}");
    ensure!(
        elapsed < Duration::from_secs(5),
        "training took {elapsed:?}"
    );
    Ok(format!(
        "gradient error {worst:.1e}; loss non-increasing; accuracy {:.2}% in {elapsed:.2?}",
        acc * 100.0
    ))
}

fn criterion_5() -> Outcome {
    let (x, y) = xor_fixture();
    let hyper = TrainHyper::default();
    let g1 = train_gbdt(&x, &y, &hyper).map_err(|e| e.to_string())?;
    let g2 = train_gbdt(&x, &y, &hyper).map_err(|e| e.to_string())?;
    ensure!(
        non_increasing(&g1.loss_trace),
        "gbdt loss increased: {:?}",
        g1.loss_trace
    );
    let (m1, m2) = (MetaModel::Gbdt(g1.model), MetaModel::Gbdt(g2.model));
    ensure!(
        m1.to_json_string() == m2.to_json_string(),
        "serializations differ"
    );

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    m1.save(&p1).map_err(|e| e.to_string())?;
    m2.save(&p2).map_err(|e| e.to_string())?;
    ensure!(
        fs::read(&p1).unwrap() == fs::read(&p2).unwrap(),
        "saved files differ"
    );

    let lr = train_logreg(&x, &y, &hyper).map_err(|e| e.to_string())?;
    let acc_gb = accuracy(&m1, &x, &y);
    let acc_lr = accuracy(&MetaModel::LogReg(lr.model), &x, &y);
    ensure!(acc_gb >= 0.95, "gbdt accuracy {acc_gb}");
    ensure!(acc_lr <= 0.65, "logreg accuracy {acc_lr}");
    Ok(format!(
        "XOR accuracy gbdt {:.2}% vs logreg {:.2}%; loss non-increasing; byte-identical runs",
        acc_gb * 100.0,
        acc_lr * 100.0
    ))
}

// ---------------------------------------------------------------- CLI helpers

fn cli(args: &[&str]) -> Result<Output, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_ruinscore"))
        .env_remove("RUINSCORE_CONFIG")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!(
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    Ok(o)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Generates, assesses and evaluates one synthetic set; returns the report.
fn synth_round(dir: &Path, seed: u64, fp: f64) -> Result<EvalReport, String> {
    let data = dir.join(format!("s{seed}_fp{fp}"));
    let assessments = data.join("assessments.jsonl");
    let manifest = path_str(&data.join("manifest.json"));
    let (seed, fp) = (seed.to_string(), fp.to_string());
    cli(&[
        "gen-synthetic",
        "--seed",
        &seed,
        "--n",
        "200",
        "--fp-rate",
        &fp,
        "--out",
        &path_str(&data),
    ])?;
    cli(&[
        "assess",
        "--manifest",
        &manifest,
        "--out",
        &path_str(&assessments),
    ])?;
    let o = cli(&[
        "evaluate",
        "--assessments",
        &path_str(&assessments),
        "--manifest",
        &manifest,
        "--json",
    ])?;
    EvalReport::from_json(&String::from_utf8_lossy(&o.stdout)).map_err(|e| e.to_string())
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("golden");
    let manifest = path_str(&data.join("manifest.json"));
    let assessments = path_str(&data.join("a.jsonl"));
    cli(&[
        "gen-synthetic",
        "--seed",
        "7",
        "--n",
        "200",
        "--out",
        &path_str(&data),
    ])?;
    cli(&["assess", "--manifest", &manifest, "--out", &assessments])?;
    let o = cli(&[
        "evaluate",
        "--assessments",
        &assessments,
        "--manifest",
        &manifest,
    ])?;
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let row = text.lines().nth(1).unwrap_or_default();
    ensure!(row.ends_with("\t100.00\t100.00"), "golden run row {row:?}");

    let mut means = Vec::new();
    for fp in [0.0, 0.1, 0.3] {
        let mut sum = 0.0;
        for seed in 1..=5 {
            sum += synth_round(dir.path(), seed, fp)?.exact_accuracy;
        }
        means.push(sum / 5.0);
    }
    ensure!(
        means[0] > means[1] && means[1] > means[2],
        "means not strictly decreasing: {means:?}"
    );
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "seed 7: 100.00 / 100.00; mean exact at fp 0/0.1/0.3 = {:.4}/{:.4}/{:.4}; {elapsed:.2?}",
        means[0], means[1], means[2]
    ))
}

fn records_without_setup(path: &Path) -> Result<Vec<serde_json::Value>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| {
            let rec: AssessmentRecord = serde_json::from_str(l).map_err(|e| e.to_string())?;
            let mut v = serde_json::to_value(&rec).map_err(|e| e.to_string())?;
            v.as_object_mut().unwrap().remove("setup");
            Ok(v)
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let manifest = path_str(&data.join("manifest.json"));
    let model = path_str(&dir.path().join("logreg.json"));
    cli(&[
        "gen-synthetic",
        "--seed",
        "7",
        "--n",
        "200",
        "--out",
        &path_str(&data),
    ])?;
    cli(&[
        "train-meta",
        "--manifest",
        &manifest,
        "--kind",
        "logreg",
        "--out",
        &model,
    ])?;

    let run = |name: &str, cfg: &str| -> Result<PathBuf, String> {
        let cfg_path = dir.path().join(format!("{name}.cfg.json"));
        let out = dir.path().join(format!("{name}.jsonl"));
        fs::write(&cfg_path, cfg).map_err(|e| e.to_string())?;
        cli(&[
            "assess",
            "--manifest",
            &manifest,
            "--config",
            &path_str(&cfg_path),
            "--meta-model",
            &model,
            "--out",
            &path_str(&out),
        ])?;
        Ok(out)
    };
    let rule = records_without_setup(&run("rule", r#"{"decision_mode": "rule_only"}"#)?)?;
    let meta = records_without_setup(&run("meta", r#"{"decision_mode": "meta_only"}"#)?)?;
    let open = records_without_setup(&run(
        "open",
        r#"{"decision_mode": "hybrid", "hybrid_prob_gate": 0.0}"#,
    )?)?;
    let shut = records_without_setup(&run(
        "shut",
        r#"{"decision_mode": "hybrid", "hybrid_prob_gate": 1.01}"#,
    )?)?;

    ensure!(
        rule.len() == 200,
        "expected 200 records, got {}",
        rule.len()
    );
    let diff = |a: &[serde_json::Value], b: &[serde_json::Value]| {
        a.iter().zip(b).filter(|(x, y)| x != y).count()
    };
    let (d_open, d_shut) = (diff(&open, &meta), diff(&shut, &rule));
    ensure!(
        d_open == 0,
        "gate 0 differs from meta_only on {d_open} records"
    );
    ensure!(
        d_shut == 0,
        "gate 1.01 differs from rule_only on {d_shut} records"
    );
    Ok("gate 0 == meta_only and gate 1.01 == rule_only on 200/200 records".into())
}

fn criterion_8() -> Outcome {
    let script =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/stub_backend.sh");
    let spawn = |mode: &str, timeout_secs: f64| {
        ExternalBackend::spawn(&BackendConfig {
            command: vec!["sh".into(), path_str(&script), mode.into()],
            timeout_secs,
        })
        .map_err(|e| e.to_string())
    };
    let req = |task| BackendRequest {
        image: "/img/a.jpg".into(),
        task,
    };

    let mut ok = spawn("echo", 5.0)?;
    match ok.exchange(&req(Task::Damage)) {
        Ok(BackendResponse::Damage(d)) if d.len() == 2 => {}
        other => return Err(format!("well-formed exchange gave {other:?}")),
    }
    let mut bad = spawn("malformed", 5.0)?;
    match bad.exchange(&req(Task::Scene)) {
        Err(BackendError::ProtocolViolation(_)) => {}
        other => return Err(format!("malformed reply gave {other:?}")),
    }
    let mut slow = spawn("sleep", 1.0)?;
    match slow.exchange(&req(Task::Components)) {
        Err(BackendError::Timeout(_)) => {}
        other => return Err(format!("silent backend gave {other:?}")),
    }
    Ok("well-formed exchange, ProtocolViolation and Timeout all observed".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("rule semantics property suite", criterion_1),
        ("fusion oracle equivalence", criterion_2),
        ("metric harness", criterion_3),
        ("logistic regression", criterion_4),
        ("gradient boosted trees", criterion_5),
        ("end-to-end golden run", criterion_6),
        ("hybrid degenerate gates", criterion_7),
        ("external backend protocol", criterion_8),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    println!("\nrunning {} acceptance criteria", criteria.len());
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed\n",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
