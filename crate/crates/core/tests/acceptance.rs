//! End-to-end acceptance suite: one check per release gate, each printing a
//! single PASS line (run with `--nocapture` to see them on success).

mod common;

use std::time::Instant;

use common::{check_model_gradients, random_vec, rng, ModelTarget};
use rand::Rng;

use tsk_core::checkpoint::{load_model, save_model};
use tsk_core::data::{
    generate_synthetic_continuous, generate_synthetic_segmented, generate_synthetic_speed,
    read_features, write_features, FeatureSequence, SegmentedAnnotation, SyntheticSpec,
    SPEED_FPS, SPEED_K,
};
use tsk_core::dataset::{ContinuousDataset, Dataset, SegmentedDataset, Task};
use tsk_core::eval::average_precision;
use tsk_core::filters::{
    apply_subevents_continuous, apply_subevents_segmented, build_cauchy_filters,
    build_gaussian_filters, super_event_representation,
};
use tsk_core::heads::{count_parameters, HeadConfig, HeadKind, Mode, Model};
use tsk_core::tensor::{softmax_rows, split_intervals, Tape};
use tsk_core::train::{evaluate, lr_at_epoch, train, TrainConfig};

fn pass(n: usize, what: &str, detail: String) {
    println!("[{n}/9] {what}: PASS ({detail})");
}

// ---- 1: parameter counts --------------------------------------------------

#[test]
fn acceptance_1_parameter_counts() {
    let d = 2048;
    let c = 8;
    let max_pool = HeadConfig::new(Mode::Segmented, HeadKind::MaxPool, d, c);
    let mean_pool = HeadConfig::new(Mode::Segmented, HeadKind::MeanPool, d, c);
    assert_eq!(count_parameters(&max_pool), 16_392);
    assert_eq!(count_parameters(&mean_pool), 16_392);

    let mut pyramid = HeadConfig::new(Mode::Segmented, HeadKind::Pyramid, d, c);
    pyramid.pyramid_levels = vec![1, 2, 4];
    assert_eq!(count_parameters(&pyramid), 114_696);

    let mut bilstm = HeadConfig::new(Mode::Segmented, HeadKind::Bilstm, d, c);
    bilstm.hidden = 512;
    let total = count_parameters(&bilstm);
    let classifier = c * (2 * bilstm.hidden) + c; // weight + bias
    assert_eq!(total - classifier, 10_489_856);
    assert_eq!(classifier, 8_200);
    assert_eq!(total, 10_498_056);

    pass(
        1,
        "parameter counts",
        format!("pool 16392, pyramid 114696, bilstm {total} = 10489856 + 8200"),
    );
}

// ---- 2: gradient checks ---------------------------------------------------

#[test]
fn acceptance_2_gradients_all_heads_both_modes() {
    let start = Instant::now();
    let mut r = rng(101);
    let segmented = [
        HeadKind::MeanPool,
        HeadKind::MaxPool,
        HeadKind::Pyramid,
        HeadKind::TemporalConv,
        HeadKind::SubEvents,
        HeadKind::Bilstm,
    ];
    let continuous = [
        HeadKind::PerFrame,
        HeadKind::MaxPool,
        HeadKind::Pyramid,
        HeadKind::TemporalConv,
        HeadKind::SubEvents,
        HeadKind::SuperEvents,
        HeadKind::SubSuper,
    ];
    let mut checked = 0usize;
    for (mode, kinds) in [
        (Mode::Segmented, &segmented[..]),
        (Mode::Continuous, &continuous[..]),
    ] {
        for &kind in kinds {
            for trial in 0..3u64 {
                let d = r.gen_range(2..5);
                let c = r.gen_range(1..4);
                let t = r.gen_range(8..14);
                let mut config = HeadConfig::new(mode, kind, d, c);
                config.hidden = 3;
                config.l = r.gen_range(4..6);
                config.m = 2;
                config.n = 2;
                config.pyramid_levels = vec![1, 2, 4];
                let model = Model::new(config, 1000 + trial).unwrap();
                let values = random_vec(&mut r, t * d);
                let target = match mode {
                    Mode::Segmented => {
                        ModelTarget::MultiHot((0..c).map(|k| f64::from(k % 2 == 0)).collect())
                    }
                    Mode::Continuous => ModelTarget::Frames(
                        (0..t * c).map(|i| f64::from(i % 3 == 0)).collect(),
                    ),
                };
                check_model_gradients(&model, &values, t, &target);
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient suite took {elapsed:?}");
    pass(
        2,
        "gradient checks",
        format!("{checked} head configs in {elapsed:.1?}"),
    );
}

// ---- 3: filter-bank invariants ----------------------------------------------

#[test]
fn acceptance_3_filter_rows_normalized() {
    let start = Instant::now();
    let mut r = rng(103);
    let ts = [4usize, 16, 128, 512];
    let mut draws = 0usize;
    while draws < 1_000 {
        let t = ts[draws % ts.len()];
        let tape = Tape::new();
        let m = r.gen_range(1..5);
        let n = r.gen_range(2..5);
        let gc = tape.constant(vec![m], random_vec(&mut r, m));
        let gs = tape.constant(vec![m], random_vec(&mut r, m));
        let gw = tape.constant(vec![m], random_vec(&mut r, m));
        let gauss = build_gaussian_filters(&gc, &gs, &gw, n, t).unwrap().to_vec();
        for row in 0..m * n {
            let slice = &gauss[row * t..(row + 1) * t];
            assert!(slice.iter().all(|&x| x >= 0.0));
            let sum: f64 = slice.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "gaussian row sum {sum} at T={t}");
        }

        let cc = tape.constant(vec![m], random_vec(&mut r, m));
        let cw = tape.constant(vec![m], random_vec(&mut r, m));
        let cauchy = build_cauchy_filters(&cc, &cw, t).unwrap().to_vec();
        for fm in 0..m {
            let mut sum = 0.0;
            for ti in 0..t {
                let x = cauchy[ti * m + fm];
                assert!(x >= 0.0);
                sum += x;
            }
            assert!((sum - 1.0).abs() <= 1e-6, "cauchy column sum {sum} at T={t}");
        }
        draws += 1;
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "filter suite took {elapsed:?}");
    pass(3, "filter-bank normalization", format!("{draws} draws in {elapsed:.1?}"));
}

// ---- 4: oracle equivalence ---------------------------------------------------

fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut sum = 0.0;
    let mut hits = 0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

fn assert_close(actual: &[f64], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!((a - e).abs() <= tol, "{what}[{i}]: {a} vs {e}");
    }
}

#[test]
fn acceptance_4_oracle_equivalence() {
    let start = Instant::now();
    let mut r = rng(107);

    for _ in 0..100 {
        // segmented sub-event pooling vs triple loop
        let (m, n) = (r.gen_range(1..4), r.gen_range(2..5));
        let t = r.gen_range(2..12);
        let d = r.gen_range(1..5);
        let tape = Tape::new();
        let c = tape.constant(vec![m], random_vec(&mut r, m));
        let s = tape.constant(vec![m], random_vec(&mut r, m));
        let w = tape.constant(vec![m], random_vec(&mut r, m));
        let f = build_gaussian_filters(&c, &s, &w, n, t).unwrap();
        let values = random_vec(&mut r, t * d);
        let v = tape.constant(vec![t, d], values.clone());
        let out = apply_subevents_segmented(&f, &v).unwrap().to_vec();
        let fdata = f.to_vec();
        let mut expect = vec![0.0; m * n * d];
        for row in 0..m * n {
            for ti in 0..t {
                for j in 0..d {
                    expect[row * d + j] += fdata[row * t + ti] * values[ti * d + j];
                }
            }
        }
        assert_close(&out, &expect, 1e-10, "segmented sub-events");
    }

    for _ in 0..100 {
        // continuous sub-event convolution vs explicit replicate-pad loop
        let (m, n) = (r.gen_range(1..3), r.gen_range(2..4));
        let l = r.gen_range(2..6);
        let t = r.gen_range(l..l + 10);
        let d = r.gen_range(1..4);
        let tape = Tape::new();
        let fdata = random_vec(&mut r, m * n * l);
        let f = tape.constant(vec![m, n, l], fdata.clone());
        let values = random_vec(&mut r, t * d);
        let v = tape.constant(vec![t, d], values.clone());
        let out = apply_subevents_continuous(&f, &v).unwrap().to_vec();
        let off = (l as isize - 1) / 2;
        let mn = m * n;
        let mut expect = vec![0.0; t * mn * d];
        for ti in 0..t {
            for fi in 0..mn {
                for li in 0..l {
                    let si =
                        (ti as isize + li as isize - off).clamp(0, t as isize - 1) as usize;
                    for j in 0..d {
                        expect[ti * mn * d + fi * d + j] +=
                            fdata[fi * l + li] * values[si * d + j];
                    }
                }
            }
        }
        assert_close(&out, &expect, 1e-10, "continuous sub-events");
    }

    for _ in 0..100 {
        // pyramid pooling vs interval-max loop
        let t = r.gen_range(8..40);
        let d = r.gen_range(1..5);
        let data = random_vec(&mut r, t * d);
        let levels = [1usize, 2, 4];
        let tape = Tape::new();
        let v = tape.constant(vec![t, d], data.clone());
        let out = v.pyramid_pool(&levels).unwrap().to_vec();
        let mut expect = Vec::new();
        for &level in &levels {
            for (lo, hi) in split_intervals(t, level) {
                for j in 0..d {
                    let m = (lo..hi)
                        .map(|ti| data[ti * d + j])
                        .fold(f64::NEG_INFINITY, f64::max);
                    expect.push(m);
                }
            }
        }
        assert_close(&out, &expect, 1e-10, "pyramid pooling");
    }

    for _ in 0..100 {
        // super-event summary vs attention x filter x feature triple loop
        let t = r.gen_range(2..10);
        let m = r.gen_range(1..4);
        let c = r.gen_range(1..4);
        let d = r.gen_range(1..4);
        let tape = Tape::new();
        let fdata = random_vec(&mut r, t * m);
        let logits = tape.constant(vec![c, m], random_vec(&mut r, c * m));
        let a = softmax_rows(&logits).unwrap();
        let adata = a.to_vec();
        let f = tape.constant(vec![t, m], fdata.clone());
        let values = random_vec(&mut r, t * d);
        let v = tape.constant(vec![t, d], values.clone());
        let out = super_event_representation(&f, &a, &v).unwrap().to_vec();
        let mut expect = vec![0.0; c * d];
        for ci in 0..c {
            for fm in 0..m {
                for ti in 0..t {
                    for j in 0..d {
                        expect[ci * d + j] +=
                            adata[ci * m + fm] * fdata[ti * m + fm] * values[ti * d + j];
                    }
                }
            }
        }
        assert_close(&out, &expect, 1e-10, "super-event summary");
    }

    // average precision vs the rank definition, exhaustively for n <= 8
    let mut ap_cases = 0usize;
    for n in 1usize..=8 {
        let scores: Vec<f64> = (0..n).map(|i| (i as f64) / n as f64).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut perms: Vec<Vec<usize>> = Vec::new();
        for _ in 0..n {
            perm.rotate_left(1.min(n - 1));
            perms.push(perm.clone());
            let mut rev = perm.clone();
            rev.reverse();
            perms.push(rev);
        }
        for p in perms {
            let s: Vec<f64> = p.iter().map(|&i| scores[i]).collect();
            for mask in 0..(1u32 << n) {
                let labels: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
                assert_eq!(average_precision(&s, &labels), brute_force_ap(&s, &labels));
                ap_cases += 1;
            }
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "oracle suite took {elapsed:?}");
    pass(
        4,
        "oracle equivalence",
        format!("4 ops x 100 instances + {ap_cases} AP cases in {elapsed:.1?}"),
    );
}

// ---- 5/6/7: synthetic experiments -------------------------------------------

fn segmented_split(spec: &SyntheticSpec, total: usize, train_n: usize) -> (Dataset, Dataset) {
    let clips = generate_synthetic_segmented(spec, total);
    let pairs: Vec<_> = clips
        .into_iter()
        .map(|c| (c.features, c.annotation))
        .collect();
    let (tr, te) = pairs.split_at(train_n);
    (
        Dataset::Segmented(SegmentedDataset {
            classes: spec.class_names(),
            clips: tr.to_vec(),
        }),
        Dataset::Segmented(SegmentedDataset {
            classes: spec.class_names(),
            clips: te.to_vec(),
        }),
    )
}

fn run_segmented_head(kind: HeadKind, seed: u64) -> f64 {
    let mut spec = SyntheticSpec::new(6, 32, seed);
    spec.noise_scale = 1.0;
    spec.motif_len_range = (2, 2);
    spec.motif_amplitude = 6.0;
    let (train_set, test_set) = segmented_split(&spec, 550, 400);
    let cfg = HeadConfig::new(Mode::Segmented, kind, 32, 6);
    let mut model = Model::new(cfg, seed).unwrap();
    let tc = TrainConfig {
        epochs: 40,
        learning_rate: 0.05,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, None, &tc, Task::Multilabel).unwrap();
    evaluate(&model, &test_set, Task::Multilabel, 1).unwrap().primary
}

#[test]
fn acceptance_5_segmented_head_ordering() {
    let start = Instant::now();
    let mean_of = |kind| {
        (0..5u64).map(|s| run_segmented_head(kind, s)).sum::<f64>() / 5.0
    };
    let mean_pool = mean_of(HeadKind::MeanPool);
    let max_pool = mean_of(HeadKind::MaxPool);
    let sub_events = mean_of(HeadKind::SubEvents);
    let elapsed = start.elapsed();
    assert!(
        sub_events >= max_pool + 0.05,
        "sub-events {sub_events:.3} vs max-pool {max_pool:.3}"
    );
    assert!(
        max_pool > mean_pool,
        "max-pool {max_pool:.3} vs mean-pool {mean_pool:.3}"
    );
    assert!(elapsed.as_secs() < 600, "segmented ordering took {elapsed:?}");
    pass(
        5,
        "segmented head ordering",
        format!(
            "mean mAP: sub-events {sub_events:.3} > max {max_pool:.3} > mean {mean_pool:.3} in {elapsed:.1?}"
        ),
    );
}

fn run_continuous_head(kind: HeadKind, seed: u64) -> f64 {
    let mut spec = SyntheticSpec::new(6, 32, seed);
    spec.noise_scale = 1.0;
    spec.motif_amplitude = 1.2;
    spec.motif_len_range = (8, 10);
    let videos = generate_synthetic_continuous(&spec, 140, 4).unwrap();
    let (tr, te) = videos.split_at(100);
    let train_set = Dataset::Continuous(ContinuousDataset {
        classes: spec.class_names(),
        videos: tr.to_vec(),
    });
    let test_set = Dataset::Continuous(ContinuousDataset {
        classes: spec.class_names(),
        videos: te.to_vec(),
    });
    let cfg = HeadConfig::new(Mode::Continuous, kind, 32, 6);
    let mut model = Model::new(cfg, seed).unwrap();
    let tc = TrainConfig {
        epochs: 15,
        learning_rate: 0.05,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, None, &tc, Task::Detection).unwrap();
    evaluate(&model, &test_set, Task::Detection, 1).unwrap().primary
}

#[test]
fn acceptance_6_continuous_head_ordering() {
    let start = Instant::now();
    let mean_of = |kind| {
        (0..5u64).map(|s| run_continuous_head(kind, s)).sum::<f64>() / 5.0
    };
    let per_frame = mean_of(HeadKind::PerFrame);
    let max_pool = mean_of(HeadKind::MaxPool);
    let sub_super = mean_of(HeadKind::SubSuper);
    let elapsed = start.elapsed();
    assert!(
        sub_super >= per_frame + 0.03,
        "sub+super {sub_super:.3} vs per-frame {per_frame:.3}"
    );
    assert!(
        sub_super >= max_pool + 0.03,
        "sub+super {sub_super:.3} vs sliding max {max_pool:.3}"
    );
    assert!(elapsed.as_secs() < 900, "continuous ordering took {elapsed:?}");
    pass(
        6,
        "continuous head ordering",
        format!(
            "mean per-frame mAP: sub+super {sub_super:.3}, per-frame {per_frame:.3}, sliding max {max_pool:.3} in {elapsed:.1?}"
        ),
    );
}

#[test]
fn acceptance_7_speed_regression() {
    let mut spec = SyntheticSpec::new(1, 32, 3);
    spec.noise_scale = 0.0;
    let clips = generate_synthetic_speed(&spec, 550);

    // an oracle that reads off the true planted duration still suffers the
    // frame-quantization error; the trained head must stay within 2x of it
    let mut oracle_abs = 0.0;
    for clip in &clips[400..] {
        let len = clip.planted.end - clip.planted.start + 1;
        let pred = SPEED_FPS as f64 * SPEED_K / len as f64;
        oracle_abs += (pred - clip.mph).abs();
    }
    let oracle_mae = oracle_abs / 150.0;

    let pairs: Vec<_> = clips
        .into_iter()
        .map(|c| {
            let ann = SegmentedAnnotation {
                id: c.features.source_id.clone(),
                labels: vec!["pitch".to_string()],
                pitch_type: None,
                pitch_speed: Some(c.mph),
            };
            (c.features, ann)
        })
        .collect();
    let (tr, te) = pairs.split_at(400);
    let classes = vec!["pitch".to_string()];
    let train_set = Dataset::Segmented(SegmentedDataset {
        classes: classes.clone(),
        clips: tr.to_vec(),
    });
    let test_set = Dataset::Segmented(SegmentedDataset {
        classes,
        clips: te.to_vec(),
    });

    let cfg = HeadConfig::new(Mode::Segmented, HeadKind::SubEvents, 32, 1);
    let mut model = Model::new(cfg, 3).unwrap();
    let tc = TrainConfig {
        epochs: 60,
        learning_rate: 1.0,
        decay_every: 30,
        seed: 3,
        ..TrainConfig::default()
    };
    train(&mut model, &train_set, None, &tc, Task::Speed).unwrap();
    let result = evaluate(&model, &test_set, Task::Speed, 1).unwrap();
    let speed = result.speed.unwrap();
    assert!(
        speed.mae <= 2.0 * oracle_mae,
        "model MAE {:.3} vs oracle MAE {oracle_mae:.3}",
        speed.mae
    );
    assert!(speed.rmse >= speed.mae);
    pass(
        7,
        "speed regression",
        format!(
            "test MAE {:.3} mph, RMSE {:.3} mph, duration-oracle MAE {oracle_mae:.3} mph",
            speed.mae, speed.rmse
        ),
    );
}

// ---- 8: protocol defaults ----------------------------------------------------

#[test]
fn acceptance_8_protocol_defaults_and_determinism() {
    let tc = TrainConfig::default();
    for epoch in 0..10 {
        assert_eq!(lr_at_epoch(&tc, epoch), 0.01);
    }
    for epoch in 10..20 {
        assert_eq!(lr_at_epoch(&tc, epoch), 0.001);
    }
    for epoch in 20..30 {
        assert_eq!(lr_at_epoch(&tc, epoch), 0.0001);
    }

    // two seeded runs must produce byte-identical checkpoints
    let mut spec = SyntheticSpec::new(3, 8, 11);
    spec.t_range = (10, 16);
    let (train_set, _) = segmented_split(&spec, 24, 20);
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for run in 0..2 {
        let cfg = HeadConfig::new(Mode::Segmented, HeadKind::SubEvents, 8, 3);
        let mut model = Model::new(cfg, 42).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            seed: 42,
            ..TrainConfig::default()
        };
        train(&mut model, &train_set, None, &tc, Task::Multilabel).unwrap();
        let path = dir.path().join(format!("run{run}.tskm"));
        save_model(&path, &model).unwrap();
        paths.push(path);
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    assert_eq!(a, b, "seeded training runs diverged");
    pass(
        8,
        "protocol defaults",
        format!("lr 0.01 -> 0.001 -> 0.0001 exact; identical checkpoints ({} bytes)", a.len()),
    );
}

// ---- 9: format stability -------------------------------------------------------

#[test]
fn acceptance_9_format_stability() {
    let dir = tempfile::tempdir().unwrap();

    // feature files: exact golden bytes and value roundtrip at f32
    let fpath = dir.path().join("g.tskf");
    let seq = FeatureSequence::new(1, 2, 30.0, vec![1.0, -2.0], "g".into()).unwrap();
    write_features(&fpath, &seq).unwrap();
    let bytes = std::fs::read(&fpath).unwrap();
    let mut expect = Vec::new();
    expect.extend_from_slice(b"TSKF");
    expect.extend_from_slice(&1u32.to_le_bytes());
    expect.extend_from_slice(&1u32.to_le_bytes());
    expect.extend_from_slice(&2u32.to_le_bytes());
    expect.extend_from_slice(&30.0f32.to_le_bytes());
    expect.extend_from_slice(&1.0f32.to_le_bytes());
    expect.extend_from_slice(&(-2.0f32).to_le_bytes());
    assert_eq!(bytes, expect, "feature golden bytes");
    let back = read_features(&fpath).unwrap();
    assert_eq!((back.t, back.d, back.fps), (1, 2, 30.0));
    assert_eq!(back.values, vec![1.0, -2.0]);

    // checkpoints: write twice from the same seed -> identical bytes, and a
    // reload preserves every parameter bit-exactly
    let cpath = dir.path().join("m.tskm");
    let cpath2 = dir.path().join("m2.tskm");
    let mut cfg = HeadConfig::new(Mode::Segmented, HeadKind::SubEvents, 5, 3);
    cfg.hidden = 4;
    let model = Model::new(cfg.clone(), 77).unwrap();
    save_model(&cpath, &model).unwrap();
    save_model(&cpath2, &Model::new(cfg, 77).unwrap()).unwrap();
    let cbytes = std::fs::read(&cpath).unwrap();
    assert_eq!(cbytes, std::fs::read(&cpath2).unwrap(), "checkpoint golden bytes");
    assert_eq!(&cbytes[0..4], b"TSKM");
    assert_eq!(u32::from_le_bytes(cbytes[4..8].try_into().unwrap()), 1);
    let loaded = load_model(&cpath).unwrap();
    assert_eq!(loaded.params.len(), model.params.len());
    for (a, b) in model.params.iter().zip(&loaded.params) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.shape, b.shape);
        assert_eq!(a.data, b.data);
    }
    pass(
        9,
        "format stability",
        format!("feature file {} bytes, checkpoint {} bytes", bytes.len(), cbytes.len()),
    );
}
