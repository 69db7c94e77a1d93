//! Acceptance run: every criterion prints one PASS/FAIL line, followed by a
//! summary. Training-based criteria share one synthetic corpus and one set of
//! trained models. Set `ACCEPTANCE_LOG=info` for training progress and
//! `ACCEPTANCE_STRICT=1` to exit non-zero when a criterion fails.

mod common;

use std::path::Path;
use std::time::Instant;

use avsel::autodiff::Checkpoint;
use avsel::config::{RunConfig, System};
use avsel::corpus::{generate, ConditionSpec, Noise};
use avsel::data::{prepare, EvalSet, TrainData};
use avsel::eval::{
    run_grid, AudioOnlyScorer, E2eScorer, EvalReport, Metric, ReportMeta, Scorer, SelectorScorer, TrackCache,
    TwoStepScorer,
};
use avsel::report::{render_table, Layout};
use avsel::system::{train_av_asr, train_e2e, train_ss, Trained};
use common::*;

const TRAIN_UTTERANCES: usize = 2000;
const EVAL_UTTERANCES: usize = 256;
// Every transducer gets the same budget, so the WER comparison is between
// equally trained recognizers.
const ASR_STEPS: u64 = 8000;
const SS_STEPS: u64 = 3000;
const EVAL_SEED: u64 = 7;
const SNR_ORDER: [Noise; 4] = [Noise::Clean, Noise::Snr20, Noise::Snr10, Noise::Snr0];
const SELECTION_TRACKS: [usize; 3] = [2, 4, 8];
const MONOTONE_BAND: f64 = 0.02;

struct Ledger {
    results: Vec<(u8, bool)>,
}

impl Ledger {
    fn record(&mut self, id: u8, name: &str, pass: bool, detail: String) {
        println!("criterion {id:>2} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        self.results.push((id, pass));
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn shipped_config(system: System, steps: u64) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/compact.toml");
    let mut cfg = RunConfig::load(&path).expect("configs/compact.toml loads");
    cfg.system = system;
    cfg.train.steps = steps;
    cfg.train.log_every = 500;
    cfg.train.schedule.warmup_steps = steps / 10;
    cfg.train.schedule.constant_until = steps / 2;
    cfg.train.schedule.end_steps = steps;
    cfg
}

fn conditions(noises: &[Noise], tracks: &[usize]) -> Vec<ConditionSpec> {
    noises
        .iter()
        .flat_map(|&n| tracks.iter().map(move |&k| ConditionSpec::new(n, k, EVAL_SEED).unwrap()))
        .collect()
}

fn quick_criteria(ledger: &mut Ledger) {
    let t = Instant::now();
    let worst = rnnt_oracle_sweep(100).unwrap();
    let took = secs(t);
    ledger.record(
        1,
        "RNN-T loss vs alignment enumeration",
        worst < 1e-6 && took < 60.0,
        format!("max |delta| {worst:.2e}, {took:.1} s"),
    );

    let t = Instant::now();
    let mut worst = (0.0, String::new());
    for (name, check) in GRADIENT_SUITE {
        let (err, at) = check().unwrap();
        if err >= worst.0 {
            worst = (err, format!("{name} / {at}"));
        }
    }
    let took = secs(t);
    ledger.record(
        2,
        "gradient suite",
        worst.0 < GRAD_TOL && took < 300.0,
        format!("worst relative error {:.2e} at {}, {took:.1} s", worst.0, worst.1),
    );

    let sum_err = alpha_row_sum_error(400, 1e4).max(alpha_row_sum_error(100, 1e300));
    let argmax_ok = select_track_transform_invariant(400).unwrap();
    let perm = permutation_error(200).unwrap();
    let ce = uniform_ce_errors(&[2, 4, 8]).unwrap();
    let ce_worst = ce.iter().map(|c| c.1).fold(0.0, f64::max);
    ledger.record(
        3,
        "normalization and selection invariants",
        sum_err < 1e-6 && argmax_ok && perm < 1e-9 && ce_worst < 1e-9,
        format!(
            "row sum err {sum_err:.1e}, argmax invariant {argmax_ok}, permutation err {perm:.1e}, |CE - ln M| {ce_worst:.1e}"
        ),
    );

    let w = one_second().unwrap();
    let a = avsel::acoustic::extract(&w).unwrap();
    let b = avsel::acoustic::extract(&w).unwrap();
    let t_frames = a.num_frames();
    let syncs = sync_lengths(t_frames, &[24.0, 25.0, 30.0]).unwrap();
    let sync_ok = syncs.iter().all(|&(_, n)| n == t_frames);
    ledger.record(
        4,
        "frontend determinism",
        (a.num_frames(), a.dim()) == (32, 240) && a.to_bytes() == b.to_bytes() && sync_ok,
        format!(
            "{}x{} features, identical bytes {}, synced lengths {:?}",
            a.num_frames(),
            a.dim(),
            a.to_bytes() == b.to_bytes(),
            syncs.iter().map(|s| s.1).collect::<Vec<_>>()
        ),
    );

    let (err, measured) = snr_fidelity(100).unwrap();
    ledger.record(
        10,
        "SNR fidelity",
        err < 0.01 && measured > 0,
        format!("max error {err:.2e} dB over {measured} unclipped pairs"),
    );
}

/// Non-increasing within the band along `seq`; returns the worst rise.
fn worst_rise(seq: &[f64]) -> f64 {
    seq.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

fn monotone_violations(report: &EvalReport, system: &str) -> (f64, Vec<String>) {
    let mut worst = f64::NEG_INFINITY;
    let mut bad = Vec::new();
    let v = |n, k| report.value(n, k, system).unwrap();
    for n in SNR_ORDER {
        let seq: Vec<f64> = SELECTION_TRACKS.iter().map(|&k| v(n, k)).collect();
        let r = worst_rise(&seq);
        worst = worst.max(r);
        if r > MONOTONE_BAND {
            bad.push(format!("{system} {n} over tracks {seq:.3?}"));
        }
    }
    for k in SELECTION_TRACKS {
        let seq: Vec<f64> = SNR_ORDER.iter().map(|&n| v(n, k)).collect();
        let r = worst_rise(&seq);
        worst = worst.max(r);
        if r > MONOTONE_BAND {
            bad.push(format!("{system} n{k} over noise {seq:.3?}"));
        }
    }
    (worst, bad)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ACCEPTANCE_LOG", "warn")).init();
    let mut ledger = Ledger { results: Vec::new() };
    quick_criteria(&mut ledger);

    let base = shipped_config(System::E2e, ASR_STEPS);
    let t = Instant::now();
    let train = TrainData::new(
        prepare(&generate(base.seed.wrapping_add(1), TRAIN_UTTERANCES, &base.synth).unwrap()).unwrap(),
        base.seed,
        &base.synth,
    )
    .unwrap();
    let eval = EvalSet::new(
        prepare(&generate(base.seed.wrapping_add(2), EVAL_UTTERANCES, &base.synth).unwrap()).unwrap(),
        base.seed.wrapping_add(3),
        &base.synth,
    )
    .unwrap();
    println!(
        "corpus: {TRAIN_UTTERANCES} training and {EVAL_UTTERANCES} held-out utterances ({:.0} s)",
        secs(t)
    );

    let t = Instant::now();
    let av_ck = train_av_asr(&shipped_config(System::AvSingle, ASR_STEPS), &train, false, None)
        .unwrap()
        .checkpoint;
    let av_secs = secs(t);
    let t = Instant::now();
    let audio = Trained::from_checkpoint(
        &train_av_asr(&shipped_config(System::AudioOnly, ASR_STEPS), &train, true, None)
            .unwrap()
            .checkpoint,
    )
    .unwrap();
    let audio_secs = secs(t);
    let t = Instant::now();
    let ss = Trained::from_checkpoint(&train_ss(&shipped_config(System::Ss, SS_STEPS), &train, None).unwrap().checkpoint)
        .unwrap();
    let ss_secs = secs(t);

    let run_e2e = |donor: &Checkpoint| {
        let t = Instant::now();
        let out = train_e2e(&base, &train, Some(donor), None).unwrap();
        (Trained::from_checkpoint(&out.checkpoint).unwrap(), secs(t))
    };
    let (e2e, e2e_secs) = run_e2e(&av_ck);
    let av = Trained::from_checkpoint(&av_ck).unwrap();
    println!(
        "training: A/V {av_secs:.0} s, audio-only {audio_secs:.0} s, selector {ss_secs:.0} s, e2e {e2e_secs:.0} s ({ASR_STEPS} steps)"
    );

    // Emergent selection: labels are never passed to train_e2e.
    let two_clean = conditions(&[Noise::Clean], &[2]);
    let e2e_scorer = E2eScorer(TrackCache::new(&e2e));
    let acc_report = |scorer: &dyn Scorer| {
        run_grid("synthetic", Metric::Accuracy, &eval, &two_clean, &[scorer], ReportMeta { seed: EVAL_SEED, ..ReportMeta::default() })
            .unwrap()
    };
    let first = acc_report(&e2e_scorer);
    let e2e_acc = first.value(Noise::Clean, 2, "e2e").unwrap();
    let pipeline_secs = av_secs + e2e_secs;
    ledger.record(
        5,
        "emergent selection",
        e2e_acc >= 0.80 && ASR_STEPS <= 10_000 && pipeline_secs < 3600.0,
        format!(
            "e2e top-1 frame accuracy {e2e_acc:.4} at 2 clean tracks (chance 0.50), {ASR_STEPS} steps, {:.1} min incl. warm-start donor",
            pipeline_secs / 60.0
        ),
    );

    let t = Instant::now();
    let selection_conds = conditions(&Noise::ALL, &SELECTION_TRACKS);
    let ss_scorer = SelectorScorer(TrackCache::new(&ss));
    let table1 = run_grid(
        "synthetic",
        Metric::Accuracy,
        &eval,
        &selection_conds,
        &[&ss_scorer, &e2e_scorer],
        ReportMeta { seed: EVAL_SEED, ..ReportMeta::default() },
    )
    .unwrap();
    println!("selection grid ({:.0} s):\n{}", secs(t), render_table(&table1, Layout::Table1).unwrap());
    let ss2 = table1.value(Noise::Clean, 2, "ss").unwrap();
    let mut below_chance = Vec::new();
    let mut order_misses = Vec::new();
    for c in &selection_conds {
        let (s, e) = (table1.value(c.noise, c.tracks, "ss").unwrap(), table1.value(c.noise, c.tracks, "e2e").unwrap());
        if s < 1.0 / c.tracks as f64 + 0.1 {
            below_chance.push(c.tag());
        }
        if s < e {
            order_misses.push(format!("{} ({s:.3} < {e:.3})", c.tag()));
        }
    }
    ledger.record(
        6,
        "explicit selector",
        ss2 >= 0.90 && below_chance.is_empty(),
        format!(
            "SS accuracy {ss2:.4} at 2 clean tracks; cells below chance + 0.1: {below_chance:?}; soft check SS >= e2e: {}",
            if order_misses.is_empty() { "holds in every cell".to_string() } else { format!("misses {order_misses:?}") }
        ),
    );

    let (ss_rise, ss_bad) = monotone_violations(&table1, "ss");
    let (e2e_rise, e2e_bad) = monotone_violations(&table1, "e2e");
    let bad: Vec<String> = ss_bad.into_iter().chain(e2e_bad).collect();
    ledger.record(
        7,
        "monotone degradation",
        bad.is_empty(),
        format!(
            "largest rise {:.4} (SS {ss_rise:.4}, e2e {e2e_rise:.4}, band {MONOTONE_BAND}); violations {bad:?}",
            ss_rise.max(e2e_rise)
        ),
    );

    // Audio-only and oracle do not depend on the distractors, so they are
    // scored once per noise condition at N = 1.
    let t = Instant::now();
    let oracle_scorer = TwoStepScorer { ss: None, av: TrackCache::new(&av) };
    let two_step = TwoStepScorer { ss: Some(TrackCache::new(&ss)), av: TrackCache::new(&av) };
    let audio_scorer = AudioOnlyScorer(&audio);
    let meta = ReportMeta { seed: EVAL_SEED, ..ReportMeta::default() };
    let single = run_grid("synthetic", Metric::Wer, &eval, &conditions(&Noise::ALL, &[1]), &[&audio_scorer, &oracle_scorer], meta.clone())
        .unwrap();
    let multi = run_grid(
        "synthetic",
        Metric::Wer,
        &eval,
        &conditions(&Noise::ALL, &[1, 2, 4, 8]),
        &[&two_step, &e2e_scorer],
        meta,
    )
    .unwrap();
    let table2 = EvalReport::merge(&[single, multi]).unwrap();
    let grid_secs = secs(t);
    println!("WER grid ({grid_secs:.0} s):\n{}", render_table(&table2, Layout::Table2).unwrap());
    let w = |n, k, s| table2.value(n, k, s).unwrap();
    let (oracle0, e2e0, audio0) = (w(Noise::Snr0, 1, "oracle"), w(Noise::Snr0, 2, "e2e"), w(Noise::Snr0, 1, "audio-only"));
    let e2e0_n1 = w(Noise::Snr0, 1, "e2e");
    ledger.record(
        8,
        "WER ordering",
        oracle0 <= e2e0 && e2e0 <= audio0 - 0.02 && (e2e0_n1 - oracle0).abs() <= 0.005 && grid_secs < 3600.0,
        format!(
            "0 dB, 2 tracks: oracle {:.1}% <= e2e {:.1}% <= audio-only {:.1}% - 2; N = 1: e2e {:.1}% vs oracle {:.1}% (tolerance 0.5); grid {:.1} min",
            100.0 * oracle0,
            100.0 * e2e0,
            100.0 * audio0,
            100.0 * e2e0_n1,
            100.0 * oracle0,
            grid_secs / 60.0
        ),
    );

    let (again, again_secs) = run_e2e(&av_ck);
    let second = acc_report(&E2eScorer(TrackCache::new(&again)));
    let acc_again = second.value(Noise::Clean, 2, "e2e").unwrap();
    let same_bytes = first.to_jsonl() == second.to_jsonl();
    ledger.record(
        9,
        "determinism",
        format!("{e2e_acc:.4}") == format!("{acc_again:.4}") && same_bytes,
        format!("accuracy {e2e_acc:.4} vs {acc_again:.4}, report bytes identical {same_bytes}, rerun {again_secs:.0} s"),
    );

    ledger.results.sort();
    let failed: Vec<u8> = ledger.results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        ledger.results.len() - failed.len(),
        ledger.results.len(),
        if failed.is_empty() { String::new() } else { format!(", failing {failed:?}") }
    );
    // The summary line is the verdict; a failing criterion only fails the
    // process when asked to, so `cargo test --workspace` reports the suite.
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
