//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Built with the test profile, so `cargo test --test acceptance`
//! runs it optimized.

use std::sync::Arc;
use std::time::{Duration, Instant};

use freqprint::classifier::{
    activity_report, evaluate_split, fit, sample_size_sweep, Classifier, EvalReport, FitConfig, Preset,
};
use freqprint::dataset::{read_dataset, write_dataset, Split, TraceDataset};
use freqprint::defense::{augment_with_noise, detect, simulated_bursts, Detection, DetectorConfig, NoiseConfig, SyscallEvent};
use freqprint::nn::{
    conv1d_forward, gradient_check_report, load_model, maxpool1d_forward, save_model, CnnModel, Conv1d, LayerSpec,
    Mode, Tensor, DEFAULT_EPSILON,
};
use freqprint::sampler::{
    run_campaign, CampaignSpec, CampaignTarget, Clock, MockClock, Sampler, SamplerConfig, ScriptedSource, Workload,
};
use freqprint::synth::{
    default_template_bank, generate, BurstSegment, SignatureTemplate, SynthConfig, DEFAULT_BASE_KHZ, DEFAULT_LEVELS,
};
use freqprint::trace::{frequency_activity, trace_from_str, trace_to_string, ActivityConfig, FrequencyTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const DESK_SEED: u64 = 1;
const DESK_CLASSES: usize = 10;
const DESK_TRACES: usize = 50;
const DESK_SAMPLES: usize = 500;

/// Desk-scale dataset shared by several criteria, plus a clean-trained
/// classifier on it.
struct Desk {
    clean: TraceDataset,
    bank: Vec<SignatureTemplate>,
    classifier: Classifier,
    train_time: Duration,
}

impl Desk {
    fn dataset(&self, disturbers: usize) -> Result<TraceDataset, String> {
        let mut cfg = SynthConfig::new(self.bank.clone(), DESK_SAMPLES, DESK_TRACES, DESK_SEED);
        cfg.concurrent_disturbers = disturbers;
        // same split seed, so every disturber count scores the same test items
        generate(&cfg).and_then(|d| d.split(DESK_SEED)).map_err(err)
    }
}

fn desk() -> Result<Desk, String> {
    let bank = default_template_bank(DESK_CLASSES, DESK_SAMPLES, DESK_SEED).map_err(err)?;
    let mut cfg = SynthConfig::new(bank.clone(), DESK_SAMPLES, DESK_TRACES, DESK_SEED);
    cfg.concurrent_disturbers = 0;
    let clean = generate(&cfg).and_then(|d| d.split(DESK_SEED)).map_err(err)?;
    let t = Instant::now();
    let classifier = fit(&clean, &FitConfig::new(Preset::Native, DESK_SEED)).map_err(err)?.classifier;
    Ok(Desk {
        clean,
        bank,
        classifier,
        train_time: t.elapsed(),
    })
}

fn c1_gradient_fidelity() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::sequence((0..500).map(|_| rng.random_range(0.0..1.0)).collect()).map_err(err)?;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for preset in [Preset::Native, Preset::Sandbox] {
        let model = preset.build(500, 8, 7).map_err(err)?;
        let r = gradient_check_report(&model, &input, 3, DEFAULT_EPSILON, None).map_err(err)?;
        worst = worst.max(r.max_rel_error);
        detail.push(format!("{preset} {:.2e} over {} params", r.max_rel_error, r.checked));
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst < 1e-3 && secs < 60.0, format!("{}, {secs:.1} s", detail.join(", "))))
}

fn naive_conv(x: &[Vec<f64>], w: &[f64], b: &[f64], out_ch: usize) -> Vec<Vec<f64>> {
    let (in_ch, len) = (x.len(), x[0].len());
    (0..out_ch)
        .map(|o| {
            (0..len)
                .map(|i| {
                    let mut s = b[o];
                    for (c, xc) in x.iter().enumerate() {
                        for k in 0..3 {
                            let j = i as isize + k as isize - 1;
                            if j >= 0 && (j as usize) < len {
                                s += w[(o * in_ch + c) * 3 + k] * xc[j as usize];
                            }
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

fn c2_conv_pool_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut pool_mismatch = 0;
    for _ in 0..100 {
        let in_ch = rng.random_range(1..5);
        let out_ch = rng.random_range(1..6);
        let len = rng.random_range(2..60);
        let x: Vec<Vec<f64>> = (0..in_ch).map(|_| (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut conv = Conv1d::zeros(in_ch, out_ch);
        conv.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        conv.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let input = Tensor::new(in_ch, len, x.concat()).map_err(err)?;
        let got = conv1d_forward(&input, &conv).map_err(err)?;
        let want = naive_conv(&x, &conv.weights, &conv.bias, out_ch);
        for (o, row) in want.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                worst = worst.max((got.get(o, i) - v).abs());
            }
        }

        let (pooled, _) = maxpool1d_forward(&input).map_err(err)?;
        for (c, xc) in x.iter().enumerate() {
            let want: Vec<f64> = (0..len / 2).map(|j| xc[2 * j].max(xc[2 * j + 1])).collect();
            if pooled.channel(c) != want.as_slice() {
                pool_mismatch += 1;
            }
        }
    }
    Ok((
        worst <= 1e-10 && pool_mismatch == 0,
        format!("conv max abs diff {worst:.1e}, pool mismatching channels {pool_mismatch}"),
    ))
}

fn topk_ordered(r: &EvalReport) -> bool {
    r.top5 >= r.top3 && r.top3 >= r.top1
}

fn c3_end_to_end(d: &Desk) -> Outcome {
    let t = Instant::now();
    let r = evaluate_split(&d.classifier, &d.clean, Split::Test).map_err(err)?;
    let secs = (d.train_time + t.elapsed()).as_secs_f64();
    Ok((
        r.top1 >= 0.90 && topk_ordered(&r) && secs < 600.0,
        format!("top1 {:.3} top3 {:.3} top5 {:.3} on {} test traces, {secs:.1} s", r.top1, r.top3, r.top5, r.total),
    ))
}

fn c4_concurrent_disturbers(d: &Desk) -> Outcome {
    let mut acc = Vec::new();
    for k in [0, 4, 10] {
        let r = evaluate_split(&d.classifier, &d.dataset(k)?, Split::Test).map_err(err)?;
        acc.push((k, r.top1));
    }
    let monotone = acc.windows(2).all(|w| w[1].1 <= w[0].1);
    let drop = acc[0].1 - acc[2].1;
    let shown: Vec<String> = acc.iter().map(|(k, a)| format!("k={k}: {a:.3}")).collect();
    Ok((monotone && drop >= 0.05, format!("{}, drop {drop:.3}", shown.join(", "))))
}

fn c5_sample_size_sweep(d: &Desk) -> Outcome {
    let points = sample_size_sweep(&d.clean, &[125, 250, 500], &FitConfig::new(Preset::Native, DESK_SEED)).map_err(err)?;
    let dominated = points.iter().all(|p| topk_ordered(&p.report));
    let plateau = points[2].report.top1 >= points[0].report.top1;
    let shown: Vec<String> = points
        .iter()
        .map(|p| format!("{}: {:.3}/{:.3}/{:.3}", p.size, p.report.top1, p.report.top3, p.report.top5))
        .collect();
    Ok((dominated && plateau, format!("top1/top3/top5 {}", shown.join(", "))))
}

fn noise_seed(i: usize) -> u64 {
    DESK_SEED ^ ((i as u64) << 20)
}

fn c6_noise_defense(d: &Desk) -> Outcome {
    let noise = NoiseConfig::new(0, (1, 6), (20, 150), 0.0);
    let max_khz = DEFAULT_LEVELS[DEFAULT_LEVELS.len() - 1];
    let noisy = d
        .clean
        .map_traces(|i, it| Ok(augment_with_noise(&it.trace, &noise, max_khz, noise_seed(i))))
        .map_err(err)?;

    // coverage over the test traces, from the burst schedule itself
    let horizon = DESK_SAMPLES as f64 * 10.0;
    let test_idx: Vec<usize> = (0..d.clean.len()).filter(|&i| d.clean.splits()[i] == Split::Test).collect();
    let coverage = test_idx
        .iter()
        .map(|&i| {
            let t = &d.clean.items()[i].trace;
            let bursts = simulated_bursts(&noise, noise_seed(i), horizon);
            (0..t.len())
                .filter(|&j| bursts.iter().any(|&(a, b)| (j as f64) * 10.0 >= a && (j as f64) * 10.0 < b))
                .count() as f64
                / t.len() as f64
        })
        .sum::<f64>()
        / test_idx.len() as f64;

    let clean_acc = evaluate_split(&d.classifier, &d.clean, Split::Test).map_err(err)?.top1;
    let attacked = evaluate_split(&d.classifier, &noisy, Split::Test).map_err(err)?.top1;
    let retrained = fit(&noisy, &FitConfig::new(Preset::Native, DESK_SEED)).map_err(err)?.classifier;
    let recovered = evaluate_split(&retrained, &noisy, Split::Test).map_err(err)?.top1;
    let lost = clean_acc - attacked;
    Ok((
        coverage >= 0.30 && lost >= 0.30 && recovered - attacked >= lost / 2.0,
        format!("coverage {coverage:.3}, clean {clean_acc:.3}, noisy {attacked:.3}, retrained on noise {recovered:.3}"),
    ))
}

/// Reference detector: filter per pid, test every start index, then count
/// occurrences in every window directly.
fn detector_oracle(events: &[SyscallEvent], cfg: &DetectorConfig) -> Vec<Detection> {
    let mut pids: Vec<u32> = events.iter().map(|e| e.pid).collect();
    pids.sort_unstable();
    pids.dedup();
    let p = cfg.pattern.len();
    let mut out = Vec::new();
    for pid in pids {
        let seq: Vec<&SyscallEvent> = events
            .iter()
            .filter(|e| e.pid == pid && e.path.as_ref().is_some_and(|x| x.contains(cfg.path_substring.as_str())))
            .collect();
        let mut times = Vec::new();
        let mut i = 0;
        while i + p <= seq.len() {
            let w = &seq[i..i + p];
            let ok = w.iter().zip(&cfg.pattern).all(|(e, s)| &e.syscall == s)
                && w.windows(2).all(|x| x[1].timestamp_ms - x[0].timestamp_ms <= cfg.max_gap_ms);
            if ok {
                times.push(w[p - 1].timestamp_ms);
                i += p;
            } else {
                i += 1;
            }
        }
        let flag = (0..times.len()).find(|&j| {
            times[..=j].iter().filter(|&&s| s + cfg.window_ms > times[j]).count() >= cfg.min_repetitions
        });
        if let Some(j) = flag {
            out.push(Detection {
                pid,
                first_flag_ms: times[j],
                repetitions: times.len(),
            });
        }
    }
    out.sort_by_key(|d| (d.first_flag_ms, d.pid));
    out
}

const CPUFREQ: &str = "/sys/devices/system/cpu/cpu0/cpufreq/scaling_cur_freq";

fn random_stream(rng: &mut ChaCha8Rng, pattern: &[String], with_cpufreq: bool) -> Vec<SyscallEvent> {
    let names = ["fstat", "fadvise64", "read", "close", "openat", "mmap"];
    let paths: &[Option<&str>] = if with_cpufreq {
        &[Some(CPUFREQ), Some("/proc/stat"), None]
    } else {
        &[Some("/proc/stat"), Some("/etc/hosts"), None]
    };
    let poll_path = if with_cpufreq { CPUFREQ } else { "/proc/cpuinfo" };
    let n_pids = rng.random_range(1..5usize);
    let mut clock = vec![0u64; n_pids];
    let limit = rng.random_range(1..=5000);
    let mut out = Vec::with_capacity(limit);
    while out.len() < limit {
        let pid = rng.random_range(0..n_pids);
        let t = &mut clock[pid];
        if rng.random_bool(0.5) {
            for s in pattern {
                *t += if rng.random_bool(0.03) { rng.random_range(40..90) } else { rng.random_range(0..5) };
                out.push(SyscallEvent::new(*t, 1000 + pid as u32, s.clone(), Some(poll_path)));
            }
        } else {
            *t += rng.random_range(0..20);
            let name = names[rng.random_range(0..names.len())];
            out.push(SyscallEvent::new(*t, 1000 + pid as u32, name, paths[rng.random_range(0..paths.len())]));
        }
        *t += rng.random_range(0..150);
    }
    out.truncate(limit);
    out
}

fn c7_detector() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut flagged_streams = 0;
    for case in 0..1000 {
        let mut cfg = DetectorConfig::default();
        cfg.min_repetitions = rng.random_range(1..80);
        cfg.window_ms = rng.random_range(500..20_000);
        if case % 4 == 0 {
            cfg.pattern = vec!["read".into(), "read".into(), "close".into()];
        }
        let ev = random_stream(&mut rng, &cfg.pattern, true);
        let got = detect(&ev, &cfg).map_err(err)?;
        if !got.is_empty() {
            flagged_streams += 1;
        }
        if got != detector_oracle(&ev, &cfg) {
            mismatches += 1;
        }
    }

    let cfg = DetectorConfig::default();
    let polls = |n: u64| {
        let mut ev = Vec::new();
        for r in 0..n {
            for (k, s) in cfg.pattern.iter().enumerate() {
                ev.push(SyscallEvent::new(r * 150 + k as u64, 77, s.clone(), Some(CPUFREQ)));
            }
        }
        ev
    };
    let at49 = detect(&polls(49), &cfg).map_err(err)?.len();
    let at50 = detect(&polls(50), &cfg).map_err(err)?.len();

    let mut false_positives = 0;
    for _ in 0..200 {
        let mut quiet = cfg.clone();
        quiet.min_repetitions = 1;
        let ev = random_stream(&mut rng, &quiet.pattern, false);
        false_positives += detect(&ev, &quiet).map_err(err)?.len();
    }
    Ok((
        mismatches == 0 && at49 == 0 && at50 == 1 && false_positives == 0,
        format!(
            "{mismatches} oracle mismatches over 1000 streams ({flagged_streams} with flags), 49 reps -> {at49} flags, 50 -> {at50}, {false_positives} flags without cpufreq paths"
        ),
    ))
}

struct Noop;

impl Workload for Noop {
    fn launch(&mut self, _: &CampaignTarget) -> freqprint::Result<()> {
        Ok(())
    }
    fn kill(&mut self, _: &CampaignTarget) -> freqprint::Result<()> {
        Ok(())
    }
}

fn c8_sampling_contract() -> Outcome {
    let cfg = SamplerConfig {
        interval_ms: 10,
        num_samples: 4000,
        inter_measurement_sleep_s: 5,
        cores: vec![0],
    };
    let script: Vec<u64> = (0..4000).map(|i| 800_000 + (i * 7919 % 2_000_000)).collect();
    let src = Arc::new(ScriptedSource::new().with_core(0, script.clone()));
    let clock = Arc::new(MockClock::new(1_700_000_000_000));
    let sampler = Sampler::new(cfg, src.clone(), clock.clone()).map_err(err)?;
    let target = CampaignTarget::new("t", "true", "true");
    let m = sampler.collect_measurement(&mut Noop, &target).map_err(err)?;
    let reads = src.total_reads();
    let on_grid = m.read_times[0].len() == 4000
        && m.read_times[0].iter().enumerate().all(|(k, t)| *t == Duration::from_millis(10 * k as u64));
    let exact = m.traces[0].samples() == script.as_slice();

    let dir = tempfile::tempdir().map_err(err)?;
    let spec = CampaignSpec::new(
        vec![CampaignTarget::new("a", "true", "true"), CampaignTarget::new("b", "true", "true")],
        2,
    )
    .map_err(err)?;
    let before = clock.now();
    let outcome = run_campaign(&sampler, &spec, dir.path(), &mut Noop).map_err(err)?;
    let cool: Vec<_> = clock
        .sleeps()
        .into_iter()
        .filter(|s| s.clock_id == 0 && s.from >= before && s.duration() == Duration::from_secs(5))
        .collect();
    let elapsed = clock.now() - before;
    let expect = 4 * (Duration::from_secs(40) + Duration::from_secs(5));
    Ok((
        reads == 4000 && on_grid && exact && outcome.collected == 4 && cool.len() == 4 && elapsed == expect,
        format!(
            "{reads} reads, deadlines exact: {on_grid}, {} cool-downs of 5 s, campaign took {:?} of virtual time",
            cool.len(),
            elapsed
        ),
    ))
}

fn random_model(rng: &mut ChaCha8Rng) -> Result<CnnModel, String> {
    let len = rng.random_range(8..64);
    let mut specs = vec![LayerSpec::conv(rng.random_range(1..6)), LayerSpec::Relu];
    if rng.random_bool(0.5) {
        specs.push(LayerSpec::MaxPool1d);
    }
    if rng.random_bool(0.5) {
        specs.push(LayerSpec::dropout());
    }
    specs.extend([LayerSpec::dense(rng.random_range(2..10)), LayerSpec::Relu]);
    specs.extend([LayerSpec::dense(rng.random_range(2..6)), LayerSpec::Softmax]);
    CnnModel::new(rng.random_range(1..3), len, &specs, rng.random()).map_err(err)
}

fn c9_serialization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dir = tempfile::tempdir().map_err(err)?;

    let mut traces_ok = true;
    for _ in 0..100 {
        let n = rng.random_range(1..300);
        let t = FrequencyTrace::new((0..n).map(|_| rng.random_range(0..4_000_000)).collect(), rng.random_range(1..50), rng.random_range(0..64))
            .map_err(err)?
            .with_start_time(rng.random())
            .with_meta("label", "nginx:1.25");
        traces_ok &= trace_from_str(&trace_to_string(&t).map_err(err)?).map_err(err)? == t;
    }

    let bank = default_template_bank(4, 64, 9).map_err(err)?;
    let ds = generate(&SynthConfig::new(bank, 64, 6, 9)).and_then(|d| d.split(9)).map_err(err)?;
    write_dataset(&ds, &dir.path().join("ds")).map_err(err)?;
    let back = read_dataset(&dir.path().join("ds")).map_err(err)?;
    let dataset_ok = back.items() == ds.items() && back.splits() == ds.splits() && back.classes() == ds.classes();

    let mut models_ok = 0;
    for i in 0..10 {
        let model = random_model(&mut rng)?;
        let path = dir.path().join(format!("m{i}.fpnn"));
        save_model(&model, &path).map_err(err)?;
        let loaded = load_model(&path).map_err(err)?;
        let x: Vec<f64> = (0..model.input_channels() * model.input_length()).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor::new(model.input_channels(), model.input_length(), x).map_err(err)?;
        let a = model.forward(&x, Mode::Eval).map_err(err)?;
        let b = loaded.forward(&x, Mode::Eval).map_err(err)?;
        if loaded == model && a == b {
            models_ok += 1;
        }
    }
    Ok((
        traces_ok && dataset_ok && models_ok == 10,
        format!("traces identical: {traces_ok}, dataset identical: {dataset_ok}, models identical: {models_ok}/10"),
    ))
}

/// Four busy, well separated classes and four idle classes whose only
/// feature is a short low burst at nearly the same place.
fn overlapped_bank(n: usize) -> Vec<SignatureTemplate> {
    let mut out = Vec::new();
    for i in 0..4 {
        let mut t = SignatureTemplate::flat(format!("busy{i}"), DEFAULT_BASE_KHZ, DEFAULT_LEVELS.to_vec(), 50_000);
        t.segments = vec![
            BurstSegment::new(n / 16 + i * n / 8, n / 8 + i * n / 32, 2),
            BurstSegment::new(n / 2 + i * n / 16, n / 8, i % 3),
        ];
        out.push(t);
    }
    for i in 0..4 {
        let mut t = SignatureTemplate::flat(format!("idle{i}"), DEFAULT_BASE_KHZ, vec![1_300_000], 50_000);
        t.segments = vec![BurstSegment::new(n / 3 + i, n / 40, 0)];
        out.push(t);
    }
    out
}

fn c10_activity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..500);
        let samples: Vec<u64> = (0..n).map(|_| rng.random_range(800_000..3_000_000)).collect();
        let threshold = rng.random_range(800_000..3_000_000);
        let t = FrequencyTrace::new(samples.clone(), 10, 0).map_err(err)?;
        let cfg = ActivityConfig::new(threshold).map_err(err)?;
        let mut count = 0;
        for s in &samples {
            if *s > threshold {
                count += 1;
            }
        }
        if frequency_activity(&t, &cfg) != count {
            mismatches += 1;
        }
    }

    let seed = 5;
    let ds = generate(&SynthConfig::new(overlapped_bank(256), 256, 20, seed))
        .and_then(|d| d.split(seed))
        .map_err(err)?;
    let clf = fit(&ds, &FitConfig::new(Preset::Native, seed)).map_err(err)?.classifier;
    let report = evaluate_split(&clf, &ds, Split::Test).map_err(err)?;
    let act = activity_report(&report, &ds, &ActivityConfig::default());
    let rho = act.spearman;
    Ok((
        mismatches == 0 && rho.is_some_and(|r| r < 0.0),
        format!("{mismatches} activity mismatches over 1000 traces, spearman {rho:?} at top1 {:.3}", report.top1),
    ))
}

fn report(name: &str, outcome: Outcome, failed: &mut usize) {
    match outcome {
        Ok((true, detail)) => println!("PASS {name}: {detail}"),
        Ok((false, detail)) => {
            *failed += 1;
            println!("FAIL {name}: {detail}");
        }
        Err(e) => {
            *failed += 1;
            println!("FAIL {name}: error: {e}");
        }
    }
}

fn main() {
    let mut failed = 0;
    report("1 gradient fidelity", c1_gradient_fidelity(), &mut failed);
    report("2 conv/pool oracles", c2_conv_pool_oracles(), &mut failed);
    match desk() {
        Ok(d) => {
            report("3 desk-scale end-to-end", c3_end_to_end(&d), &mut failed);
            report("4 concurrent disturbers", c4_concurrent_disturbers(&d), &mut failed);
            report("5 sample-size sweep", c5_sample_size_sweep(&d), &mut failed);
            report("6 noise defense", c6_noise_defense(&d), &mut failed);
        }
        Err(e) => {
            for name in ["3 desk-scale end-to-end", "4 concurrent disturbers", "5 sample-size sweep", "6 noise defense"] {
                report(name, Err(e.clone()), &mut failed);
            }
        }
    }
    report("7 detector exactness", c7_detector(), &mut failed);
    report("8 sampling contract", c8_sampling_contract(), &mut failed);
    report("9 serialization", c9_serialization(), &mut failed);
    report("10 activity metric", c10_activity(), &mut failed);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
