mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use gpointx::data_io::{AugmentMode, Split};
use gpointx::equivariant_layers::{g_pointconv_layer, g_pointnet_layer, CoordMode, GLayerParams, LayerKind};
use gpointx::group_algebra::{make_group, GroupName};
use gpointx::cloud_ops::sample_and_group;
use gpointx::harness::{
    cmd_gen_data, equiv_check, evaluate, predict, train_on, Dataset, EquivSettings, GenDataSettings, Precision,
    RunConfig,
};
use gpointx::models::{baseline, build_model, ModelConfig, Target, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const KINDS: [LayerKind; 2] = [LayerKind::GPointNet, LayerKind::GPointConv];
const EQUIV_GROUPS: [GroupName; 4] = [GroupName::G4, GroupName::G8, GroupName::G12, GroupName::G24];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(name: &str, start: Instant, r: Result<Outcome, String>) -> bool {
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match r {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("[{}] {name}: {detail} ({secs:.1}s)", if pass { "PASS" } else { "FAIL" });
    pass
}

fn group_exactness() -> Result<Outcome, String> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut orders = Vec::new();
    for name in GroupName::ALL {
        let g = make_group(name).map_err(|e| e.to_string())?;
        worst = worst.max(g.verify().map_err(|e| e.to_string())?);
        orders.push(g.order());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome {
        pass: worst <= 1e-12 && orders == [1, 4, 8, 12, 24] && secs < 1.0,
        detail: format!("orders {orders:?}, max deviation {worst:e}, {secs:.3}s"),
    })
}

fn equivariance_suite() -> Result<Outcome, String> {
    let (mut worst64, mut worst32, mut weakest_mutation) = (0.0f64, 0.0f64, f64::INFINITY);
    for group in EQUIV_GROUPS {
        for kind in KINDS {
            let mut s = EquivSettings::new(group, kind);
            s.trials = 20;
            worst64 = worst64.max(equiv_check(&s).map_err(|e| e.to_string())?.max_violation());
            s.precision = Precision::F32;
            worst32 = worst32.max(equiv_check(&s).map_err(|e| e.to_string())?.max_violation());
            let mut m = EquivSettings::new(group, kind);
            m.trials = 20;
            m.coords = CoordMode::Unconjugated;
            weakest_mutation = weakest_mutation.min(equiv_check(&m).map_err(|e| e.to_string())?.layer_violation);
        }
    }
    Ok(Outcome {
        pass: worst64 <= 1e-10 && worst32 <= 1e-5 && weakest_mutation > 1e-2,
        detail: format!(
            "64-bit max {worst64:e}, 32-bit max {worst32:e}, smallest unconjugated violation {weakest_mutation:.3e}"
        ),
    })
}

fn trivial_group_reduction() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g1 = Arc::new(make_group(GroupName::G1).map_err(|e| e.to_string())?);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut compared = 0;
    for kind in KINDS {
        for _ in 0..10 {
            let x = lifted_random(&mut rng, &g1, 40, 3);
            let params = GLayerParams::<f64>::init(kind, 3, 6, 10, 8, &mut rng).map_err(|e| e.to_string())?;
            let nbr = sample_and_group(&x.positions, 10, 8).map_err(|e| e.to_string())?;
            let (lifted, direct) = match kind {
                LayerKind::GPointNet => (
                    g_pointnet_layer(&x, &params, &nbr),
                    baseline::pointnet_layer(&x.positions, x.features.data(), &params, &nbr),
                ),
                LayerKind::GPointConv => (
                    g_pointconv_layer(&x, &params, &nbr),
                    baseline::pointconv_layer(&x.positions, x.features.data(), &params, &nbr),
                ),
            };
            let lifted = lifted.map_err(|e| e.to_string())?;
            if bits(lifted.features.data()) != bits(&direct) {
                return Ok(Outcome {
                    pass: false,
                    detail: format!("{kind} layer differs from the direct formula"),
                });
            }
            compared += 1;
        }
        let cfg = ModelConfig::classify(kind, GroupName::G1, 4);
        let model = build_model(&cfg, &mut rng).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let x = random_cloud(&mut rng, 160);
            let lifted = model.forward_classify(&x).map_err(|e| e.to_string())?;
            let direct = baseline::classify(&model.config, &model.params, &x).map_err(|e| e.to_string())?;
            if bits(&lifted) != bits(&direct) {
                return Ok(Outcome {
                    pass: false,
                    detail: format!("{kind} classifier differs from the direct formula"),
                });
            }
            compared += 1;
        }
    }
    Ok(Outcome {
        pass: true,
        detail: format!("{compared} layer and classifier outputs bit-identical"),
    })
}

fn gradient_correctness() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut fold = |r: gpointx::diffcore::GradCheckReport| {
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    };
    for name in GroupName::ALL {
        let g = Arc::new(make_group(name).map_err(|e| e.to_string())?);
        for kind in KINDS {
            fold(layer_report(&mut rng, &g, kind));
        }
        fold(propagate_report(&mut rng, &g));
    }
    for kind in KINDS {
        let cfg = ModelConfig {
            stages: vec![
                gpointx::models::StageSpec { k: 16, c: 6, width: 6 },
                gpointx::models::StageSpec { k: 1, c: 8, width: 8 },
            ],
            head_widths: vec![6],
            ..ModelConfig::classify(kind, GroupName::G4, 3)
        };
        let model = build_model(&cfg, &mut rng).map_err(|e| e.to_string())?;
        let x = random_cloud(&mut rng, 40);
        fold(directional_report(&model, &x, Target::Class(1), 8, &mut rng));
    }
    Ok(Outcome {
        pass: worst <= 1e-5 && checked > 0,
        detail: format!("{checked} derivatives, max relative error {worst:.2e}"),
    })
}

fn gen(dir: &Path, task: Task, train: usize, test: usize, points: usize) -> Result<(Dataset, Dataset), String> {
    let s = GenDataSettings {
        task,
        classes: 5,
        train,
        test,
        points,
        noise: 0.01,
        objects: 3,
        seed: 42,
    };
    cmd_gen_data(&s, dir).map_err(|e| e.to_string())?;
    Ok((
        Dataset::load(&dir.join("train"), Split::Train).map_err(|e| e.to_string())?,
        Dataset::load(&dir.join("test"), Split::Test).map_err(|e| e.to_string())?,
    ))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn classification_trend(root: &Path, invariance: &mut Option<Result<Outcome, String>>) -> Result<Outcome, String> {
    let (train, test) = gen(&root.join("cls"), Task::Classify, 200, 100, 256)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in KINDS {
        let mut acc = Vec::new();
        for group in [GroupName::G1, GroupName::G4, GroupName::G24] {
            let mut per_seed = Vec::new();
            for seed in SEEDS {
                let mut cfg = RunConfig::new(Task::Classify, kind, group, PathBuf::new(), PathBuf::new());
                cfg.seed = seed;
                let model = train_on(&cfg, &train, |_| {}).map_err(|e| e.to_string())?.model;
                let r = evaluate(&model, &test, AugmentMode::So3, seed, Precision::F32).map_err(|e| e.to_string())?;
                per_seed.push(r.accuracy);
                if invariance.is_none() && group == GroupName::G24 {
                    *invariance = Some(exact_invariance(&model, &test, seed));
                }
            }
            acc.push(mean(&per_seed));
        }
        let ok = acc[2] >= acc[1] && acc[1] >= acc[0] && acc[2] - acc[0] >= 0.05;
        pass &= ok;
        parts.push(format!("{kind} g1 {:.3} g4 {:.3} g24 {:.3}", acc[0], acc[1], acc[2]));
    }
    Ok(Outcome {
        pass,
        detail: parts.join("; "),
    })
}

fn exact_invariance(model: &gpointx::models::Model<f64>, test: &Dataset, seed: u64) -> Result<Outcome, String> {
    let err = |e: gpointx::Error| e.to_string();
    let plain = evaluate(model, test, AugmentMode::None, seed, Precision::F32).map_err(err)?;
    let rotated = evaluate(model, test, AugmentMode::Group, seed, Precision::F32).map_err(err)?;
    let a = predict(model, test, AugmentMode::None, seed, Precision::F32).map_err(err)?;
    let b = predict(model, test, AugmentMode::Group, seed, Precision::F32).map_err(err)?;
    let worst = a.iter().zip(&b).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max);
    let gap = (plain.accuracy - rotated.accuracy).abs();
    Ok(Outcome {
        pass: gap <= 0.005 && worst <= 1e-4,
        detail: format!(
            "acc none {:.3} group {:.3}, max per-sample logit difference {worst:.2e}",
            plain.accuracy, rotated.accuracy
        ),
    })
}

fn segmentation_trend(root: &Path) -> Result<Outcome, String> {
    let (train, test) = gen(&root.join("seg"), Task::Segment, 120, 40, 512)?;
    let mut miou = Vec::new();
    for group in [GroupName::G1, GroupName::G8] {
        let mut per_seed = Vec::new();
        for seed in SEEDS {
            let mut cfg = RunConfig::new(Task::Segment, LayerKind::GPointNet, group, PathBuf::new(), PathBuf::new());
            cfg.seed = seed;
            cfg.epochs = 40;
            cfg.batch = 8;
            cfg.lr = 3e-3;
            let model = train_on(&cfg, &train, |_| {}).map_err(|e| e.to_string())?.model;
            let r = evaluate(&model, &test, AugmentMode::ZAxis, seed, Precision::F32).map_err(|e| e.to_string())?;
            per_seed.push(r.miou.unwrap_or(0.0));
        }
        miou.push(mean(&per_seed));
    }
    Ok(Outcome {
        pass: miou[1] >= miou[0],
        detail: format!("mIoU g1 {:.3} g8 {:.3}", miou[0], miou[1]),
    })
}

fn determinism(root: &Path) -> Result<Outcome, String> {
    let run = |dir: &Path, args: &[&str]| -> Result<Vec<u8>, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_gpx"))
            .args(args)
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        Ok(o.stdout)
    };
    let config = "task=classify\nbackbone=g_pointconv\ngroup=g4\ntrain=data/train\ntest=data/test\n\
                  output=out/model.gpxm\nlog=out/train.jsonl\nepochs=3\nbatch=8\naugment=group\neval_rotate=so3\n";
    let mut trees = Vec::new();
    for i in 0..2 {
        let dir = root.join(format!("det{i}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("run.cfg"), config).map_err(|e| e.to_string())?;
        let mut outputs = vec![
            run(&dir, &["gen-data", "--classes", "3", "--train", "24", "--test", "12", "--points", "96", "--out", "data"])?,
            run(&dir, &["gen-data", "--task", "seg", "--train", "2", "--test", "1", "--points", "256", "--out", "scenes"])?,
            run(&dir, &["train", "run.cfg"])?,
            run(&dir, &["eval", "--checkpoint", "out/model.gpxm", "--data", "data/test", "--rotate", "so3", "--seed", "5"])?,
            run(&dir, &["equiv-check", "--group", "g8", "--layer", "g_pointconv", "--trials", "3"])?,
        ];
        let mut files: Vec<PathBuf> = Vec::new();
        for sub in ["data/train", "data/test", "scenes/train", "scenes/test", "out"] {
            let mut names: Vec<PathBuf> = std::fs::read_dir(dir.join(sub))
                .map_err(|e| e.to_string())?
                .map(|e| e.unwrap().path())
                .collect();
            names.sort();
            files.extend(names);
        }
        for f in &files {
            outputs.push(f.strip_prefix(&dir).unwrap().to_string_lossy().into_owned().into_bytes());
            outputs.push(std::fs::read(f).map_err(|e| e.to_string())?);
        }
        trees.push(outputs);
    }
    let same = trees[0] == trees[1];
    let bytes: usize = trees[0].iter().map(Vec::len).sum();
    Ok(Outcome {
        pass: same,
        detail: format!(
            "{} artifacts ({bytes} bytes) {}",
            trees[0].len(),
            if same { "identical across runs" } else { "differ across runs" }
        ),
    })
}

fn main() {
    let root = tempfile::tempdir().expect("tempdir");
    let mut all = true;
    let t = Instant::now();
    all &= report("group exactness", t, group_exactness());
    let t = Instant::now();
    all &= report("layer equivariance suite", t, equivariance_suite());
    let t = Instant::now();
    all &= report("trivial group reduction", t, trivial_group_reduction());
    let t = Instant::now();
    all &= report("gradient correctness", t, gradient_correctness());
    let t = Instant::now();
    let mut invariance = None;
    all &= report("classification trend under so3", t, classification_trend(root.path(), &mut invariance));
    let t = Instant::now();
    all &= report(
        "exact invariance of g24 classifier",
        t,
        invariance.unwrap_or_else(|| Err("no g24 model was trained".into())),
    );
    let t = Instant::now();
    all &= report("segmentation trend under z rotation", t, segmentation_trend(root.path()));
    let t = Instant::now();
    all &= report("determinism", t, determinism(root.path()));
    if !all {
        std::process::exit(1);
    }
}
