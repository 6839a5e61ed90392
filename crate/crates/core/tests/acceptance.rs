//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::thread;
use std::time::Instant;

use stylecodec::bitstream::{
    decode, encode, measure_rates, rates_from_entries, truncate_to_layer, StreamHeader,
};
use stylecodec::entropy::{
    gaussian_bin_prob, quantize, BinModel, FrequencyTable, GaussianBin, Support,
};
use stylecodec::numeric::{seeded_matrix, SeededRng};
use stylecodec::params::WeightInit;
use stylecodec::rangecoder::{CodedSymbol, RangeDecoder, RangeEncoder};
use stylecodec::rdeval::{
    coefficients, fwiou, layer_objective, mos, nme, parse_confusion, parse_landmarks,
    parse_ratings, DistortionBundle, LandmarkSet, NmeConvention, ObjectiveWeights,
    SegmentationCounts,
};
use stylecodec::style::{LayerId, StyleVectorSet, NUM_TOKENS};
use stylecodec::weights::{CodecConfig, Weights};

struct Verdict {
    name: &'static str,
    failures: Vec<String>,
    detail: String,
}

impl Verdict {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            failures: Vec::new(),
            detail: String::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn report(&self) -> bool {
        let pass = self.failures.is_empty();
        println!(
            "{} {}: {}",
            if pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        );
        for f in self.failures.iter().take(5) {
            println!("    {f}");
        }
        if self.failures.len() > 5 {
            println!("    ... {} more", self.failures.len() - 5);
        }
        pass
    }
}

// ---------------------------------------------------------------------------
// codec corpus

struct CorpusStats {
    sets: usize,
    round_trip: Vec<String>,
    prefix: Vec<String>,
    rate: Vec<String>,
    worst_slack: f64,
    monotone: Vec<String>,
    escapes: usize,
}

fn random_set(rng: &mut SeededRng, dim: usize, i: usize) -> StyleVectorSet {
    let scale = [0.3, 1.0, 3.0, 10.0, 40.0, 120.0][i % 6];
    let data = (0..NUM_TOKENS * dim)
        .map(|_| {
            // occasional out-of-support values exercise the escape path
            if rng.below(500) == 0 {
                rng.symmetric_f32(2000.0)
            } else {
                (rng.normal_f64() * scale) as f32
            }
        })
        .collect();
    StyleVectorSet::new(dim, data).unwrap()
}

fn run_corpus(weights: &Weights, count: usize, seed: u64) -> CorpusStats {
    let dim = weights.config.style_dim;
    let mut s = CorpusStats {
        sets: count,
        round_trip: vec![],
        prefix: vec![],
        rate: vec![],
        worst_slack: f64::NEG_INFINITY,
        monotone: vec![],
        escapes: 0,
    };
    let mut rng = SeededRng::new(seed);
    for i in 0..count {
        let tag = format!("dim {dim} set {i}");
        let x = random_set(&mut rng, dim, i);
        let q = quantize(x.data(), NUM_TOKENS, dim).unwrap();
        let out = encode(&x, weights).unwrap();
        s.escapes += out.escapes;

        let full = decode(&out.stream, weights, LayerId::Enhanced).unwrap();
        if full.symbols != q || full.param_digest != out.param_digest {
            s.round_trip.push(tag.clone());
        }

        for k in [LayerId::Basic, LayerId::Middle] {
            let bytes = truncate_to_layer(&out.stream, k).to_bytes();
            let cut = stylecodec::bitstream::ScalableBitstream::from_bytes(&bytes).unwrap();
            let part = decode(&cut, weights, k).unwrap();
            let n = k.prefix_len() * dim;
            let same_prefix = part.symbols.values()[..n] == full.symbols.values()[..n];
            let rest_zero = part.symbols.values()[n..].iter().all(|&v| v == 0);
            if !same_prefix || !rest_zero {
                s.prefix.push(format!("{tag} k={k}"));
            }
        }

        let measured = out.rates.total_bits() as f64;
        let estimated = out.rates.estimated_bits().unwrap();
        let bound = estimated + 64.0 + 0.01 * out.rates.symbols() as f64;
        s.worst_slack = s.worst_slack.max(measured - bound);
        if measured > bound {
            s.rate.push(format!("{tag}: {measured} > {bound:.1}"));
        }

        let cum = out.rates.cumulative_bits();
        let strictly_up = cum.windows(2).all(|w| w[1] > w[0]) && cum[0] > 0;
        let bytes = out.stream.to_bytes();
        let header = StreamHeader::parse(&bytes).unwrap();
        let from_header = rates_from_entries(&header.entries, weights.config.pixel_count);
        let measured_rates = measure_rates(&out.stream, weights.config.pixel_count);
        let accounting = from_header == measured_rates
            && measured_rates.total_bits() == out.rates.total_bits()
            && from_header.layers.iter().all(|l| {
                from_header.bpp(l.total_bits())
                    == l.total_bits() as f64 / weights.config.pixel_count as f64
            });
        if !strictly_up || !accounting {
            s.monotone.push(format!("{tag}: cumulative {cum:?}"));
        }
    }
    s
}

fn corpus_parallel(weights: &Weights, count: usize, seed: u64) -> CorpusStats {
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(8);
    let per = count.div_ceil(workers);
    let parts: Vec<CorpusStats> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let n = per.min(count.saturating_sub(w * per));
                scope.spawn(move || run_corpus(weights, n, seed + w as u64))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    parts
        .into_iter()
        .reduce(|mut a, b| {
            a.sets += b.sets;
            a.round_trip.extend(b.round_trip);
            a.prefix.extend(b.prefix);
            a.rate.extend(b.rate);
            a.monotone.extend(b.monotone);
            a.worst_slack = a.worst_slack.max(b.worst_slack);
            a.escapes += b.escapes;
            a
        })
        .unwrap()
}

fn codec_criteria() -> Vec<Verdict> {
    let t0 = Instant::now();
    let fast = Weights::generate(CodecConfig::fast(), 101, WeightInit::default()).unwrap();
    let full = Weights::generate(CodecConfig::full(), 202, WeightInit::default()).unwrap();
    let a = corpus_parallel(&fast, 960, 1_000);
    let b = corpus_parallel(&full, 40, 2_000);
    let secs = t0.elapsed().as_secs_f64();
    let sets = a.sets + b.sets;

    let mut round = Verdict::new("lossless round-trip");
    round.detail = format!(
        "{sets} sets ({} at dim 64, {} at dim 512), {} escapes, {secs:.1} s",
        a.sets,
        b.sets,
        a.escapes + b.escapes
    );
    for f in a.round_trip.iter().chain(&b.round_trip) {
        round.check(false, || f.clone());
    }
    round.check(sets >= 1000, || format!("only {sets} sets"));
    round.check(secs < 120.0, || format!("took {secs:.1} s"));

    let mut prefix = Verdict::new("prefix decodability");
    prefix.detail = format!("{} truncated decodes, k in 1,2", 2 * sets);
    for f in a.prefix.iter().chain(&b.prefix) {
        prefix.check(false, || f.clone());
    }

    let mut rate = Verdict::new("rate bound");
    rate.detail = format!(
        "{} violations over {sets} streams, worst measured - bound = {:.1} bits",
        a.rate.len() + b.rate.len(),
        a.worst_slack.max(b.worst_slack)
    );
    for f in a.rate.iter().chain(&b.rate) {
        rate.check(false, || f.clone());
    }

    let mut mono = Verdict::new("scalability monotonicity");
    mono.detail = format!("{sets} streams, cumulative bits and bpp accounting");
    for f in a.monotone.iter().chain(&b.monotone) {
        mono.check(false, || f.clone());
    }
    vec![round, prefix, rate, mono]
}

// ---------------------------------------------------------------------------

fn mask_causality() -> Verdict {
    let mut v = Verdict::new("mask causality");
    let mut rng = SeededRng::new(77);
    let fast = Weights::generate(CodecConfig::fast(), 5, WeightInit::Random).unwrap();
    let full = Weights::generate(CodecConfig::full(), 6, WeightInit::Random).unwrap();
    let trials = 200;
    for t in 0..trials {
        let w = if t % 10 == 0 { &full } else { &fast };
        let dec = &w.model.hyper_decoder;
        let (d, h) = (w.config.style_dim, w.config.hyper_dim);
        let k = if t % 2 == 0 {
            LayerId::Basic
        } else {
            LayerId::Middle
        };
        let hyper = seeded_matrix(&mut rng, NUM_TOKENS, h, 20.0).unwrap();
        let mut moved = hyper.clone();
        for r in k.prefix_len()..NUM_TOKENS {
            for c in 0..h {
                moved.set(r, c, (rng.normal_f64() * 50.0).round() as f32);
            }
        }
        let a = dec.forward(&hyper, LayerId::Enhanced).unwrap();
        let b = dec.forward(&moved, LayerId::Enhanced).unwrap();
        let n = k.prefix_len() * d;
        v.check(
            a.mu()[..n] == b.mu()[..n] && a.delta()[..n] == b.delta()[..n],
            || format!("trial {t}: layer ≤ {k} outputs changed"),
        );
    }
    v.detail = format!("{trials} trials, 1 in 10 at dim 512");
    v
}

/// erf(x) by its Maclaurin series; exact to f64 rounding for |x| < 1.
fn erf_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut power = x;
    let mut n = 0u32;
    let mut fact = 1.0;
    loop {
        let term = power / (fact * (2 * n + 1) as f64);
        let signed = if n.is_multiple_of(2) { term } else { -term };
        if term.abs() < 1e-20 {
            break;
        }
        sum += signed;
        n += 1;
        fact *= n as f64;
        power *= x * x;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

fn probability_fidelity() -> Verdict {
    let mut v = Verdict::new("probability model fidelity");
    let support = Support::STYLE;

    // pairs whose mass lies inside the support; edge pairs lose real tail mass
    let interior = |mu: f64, delta: f64| mu.abs() + 8.0 * delta <= support.max as f64;
    let mut worst_sum: f64 = 0.0;
    let mut pairs = 0;
    let mus = [
        -240.0, -100.5, -17.3, -1.0, -0.5, 0.0, 0.25, 3.7, 64.0, 199.9, 240.0,
    ];
    let deltas = [0.01, 0.02, 0.05, 0.1, 0.3, 1.0, 2.5, 7.0, 20.0];
    for &mu in &mus {
        for &delta in deltas.iter().filter(|&&d| interior(mu, d)) {
            pairs += 1;
            let sum: f64 = support
                .iter()
                .map(|k| gaussian_bin_prob(mu as f32, delta as f32, k).unwrap())
                .sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            v.check((sum - 1.0).abs() <= 1e-4, || {
                format!("mu {mu} delta {delta}: sum {sum}")
            });
        }
    }

    let p0 = gaussian_bin_prob(0.0, 1.0, 0).unwrap();
    let oracle = erf_series(0.5 / std::f64::consts::SQRT_2);
    v.check(
        (p0 - 0.382924).abs() <= 1e-6 && (p0 - oracle).abs() <= 1e-12,
        || format!("p(0; 0, 1) = {p0}, series oracle {oracle}"),
    );

    let mut worst_gap: f64 = 0.0;
    let mut pmf = Vec::new();
    for &mu in &mus {
        for &delta in deltas.iter().filter(|&&d| d >= 0.05) {
            let model = GaussianBin::new(mu as f32, delta as f32);
            model.fill_pmf(support, &mut pmf);
            let table = FrequencyTable::for_support(&pmf, support, 18).unwrap();
            let total: f64 = pmf.iter().sum();
            let mut h = 0.0;
            let mut cross = 0.0;
            for (i, &p) in pmf.iter().enumerate() {
                let p = p / total;
                h -= p * p.log2();
                cross -= p * table.probability(i).log2();
            }
            let gap = cross - h;
            worst_gap = worst_gap.max(gap);
            v.check(gap < 0.01, || {
                format!("mu {mu} delta {delta}: gap {gap} bits")
            });
        }
    }
    v.detail = format!(
        "{pairs} grid pairs, max |sum - 1| = {worst_sum:.2e}, p(0;0,1) = {p0:.9}, max table gap = {worst_gap:.2e} bits"
    );
    v
}

fn range_coder_oracle() -> Verdict {
    let mut v = Verdict::new("range-coder oracle equivalence");
    let mut rng = SeededRng::new(404);
    let cases = 10_000;
    let mut exhaustive = 0;
    let mut worst = 0.0f64;
    let encode_all = |table: &FrequencyTable, seq: &[i32]| {
        let mut enc = RangeEncoder::new();
        for &s in seq {
            enc.encode_symbol(table, s).unwrap();
        }
        enc.finish()
    };
    for case in 0..cases {
        let alphabet = 1 + rng.below(8) as usize;
        let precision = 4 + rng.below(15);
        let weights: Vec<f64> = (0..alphabet)
            .map(|_| match rng.below(4) {
                0 => 1e-6,
                _ => rng.unit_f64() + 0.01,
            })
            .collect();
        let table = FrequencyTable::from_weights(&weights, 0, precision, false).unwrap();
        let len = rng.below(13) as usize;
        let seq: Vec<i32> = (0..len)
            .map(|_| rng.below(alphabet as u32) as i32)
            .collect();
        let bytes = encode_all(&table, &seq);

        let ideal: f64 = seq
            .iter()
            .map(|&s| -table.probability(s as usize).log2())
            .sum();
        let coded = 8.0 * bytes.len() as f64;
        worst = worst.max((coded - ideal).abs());
        v.check((coded - ideal).abs() <= 64.0, || {
            format!("case {case}: {coded} coded bits vs {ideal:.2} ideal")
        });

        let mut dec = RangeDecoder::new(&bytes);
        let got: Vec<i32> = (0..len)
            .map(|_| match dec.decode_symbol(&table).unwrap() {
                CodedSymbol::Symbol(s) => s,
                CodedSymbol::Escape => -1,
            })
            .collect();
        v.check(got == seq && dec.finish().is_ok(), || {
            format!("case {case}: decoded {got:?}, sent {seq:?}")
        });

        // brute force: the sent sequence must be the only one of its length
        // whose encoding equals these bytes
        let space = (alphabet as u64).checked_pow(len as u32);
        let matches: Vec<Vec<i32>> = match space {
            Some(n) if n <= 4096 => {
                exhaustive += 1;
                (0..n)
                    .map(|mut code| {
                        (0..len)
                            .map(|_| {
                                let s = (code % alphabet as u64) as i32;
                                code /= alphabet as u64;
                                s
                            })
                            .collect::<Vec<i32>>()
                    })
                    .filter(|cand| encode_all(&table, cand) == bytes)
                    .collect()
            }
            _ => {
                let mut found = vec![seq.clone()];
                for i in 0..len {
                    for s in 0..alphabet as i32 {
                        if s == seq[i] {
                            continue;
                        }
                        let mut cand = seq.clone();
                        cand[i] = s;
                        if encode_all(&table, &cand) == bytes {
                            found.push(cand);
                        }
                    }
                }
                found
            }
        };
        v.check(matches == vec![seq.clone()], || {
            format!("case {case}: {} sequences share the stream", matches.len())
        });
    }
    v.detail =
        format!("{cases} cases ({exhaustive} exhaustive), max |coded - ideal| = {worst:.2} bits");
    v
}

fn objective_arithmetic() -> Verdict {
    let mut v = Verdict::new("objective arithmetic");
    let w = ObjectiveWeights::new(10.0).unwrap();
    let mut d = DistortionBundle::zeros();
    d.lm = Some(0.5);
    d.sg = Some(0.3);
    let j = layer_objective(LayerId::Basic, &[100.0], &d, &w).unwrap();
    v.check(j == 1000.8, || {
        format!("example gives {j}, expected 1000.8")
    });

    let base = DistortionBundle {
        lm: Some(0.7),
        sg: Some(0.2),
        id: Some(0.4),
        mse: Some(0.05),
        lpips: Some(0.3),
        adv: Some(1.1),
    };
    let bits = [120.0, 340.0, 910.0];
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for lambda in [5.0, 10.0, 15.0, 20.0] {
        let w = ObjectiveWeights::new(lambda).unwrap();
        for layer in LayerId::ALL {
            let c = coefficients(layer, &w);
            let f = |dd: &DistortionBundle, b: &[f64]| layer_objective(layer, b, dd, &w).unwrap();
            type Field = fn(&mut DistortionBundle) -> &mut Option<f64>;
            let fields: [(&str, Field, f64); 6] = [
                ("lm", |d| &mut d.lm, c.lm),
                ("sg", |d| &mut d.sg, c.sg),
                ("id", |d| &mut d.id, c.id),
                ("mse", |d| &mut d.mse, c.mse),
                ("lpips", |d| &mut d.lpips, c.lpips),
                ("adv", |d| &mut d.adv, c.adv),
            ];
            for (name, get, expected) in fields {
                let (mut up, mut down) = (base, base);
                *get(&mut up) = get(&mut up).map(|x| x + h);
                *get(&mut down) = get(&mut down).map(|x| x - h);
                let fd = (f(&up, &bits) - f(&down, &bits)) / (2.0 * h);
                let rel = (fd - expected).abs() / expected.abs().max(1e-12);
                let err = if expected == 0.0 { fd.abs() } else { rel };
                worst = worst.max(err);
                v.check(err <= 1e-6, || {
                    format!("lambda {lambda} layer {layer} {name}: {fd} vs {expected}")
                });
            }
            for i in 0..layer.index() as usize {
                let (mut up, mut down) = (bits, bits);
                up[i] += h;
                down[i] -= h;
                let fd = (f(&base, &up) - f(&base, &down)) / (2.0 * h);
                let rel = (fd - c.rate).abs() / c.rate;
                worst = worst.max(rel);
                v.check(rel <= 1e-6, || {
                    format!("lambda {lambda} layer {layer} rate {i}: {fd} vs {}", c.rate)
                });
            }
        }
    }
    v.detail = format!("example = {j}, max finite-difference relative error = {worst:.1e}");
    v
}

fn metric_formulas() -> Verdict {
    let mut v = Verdict::new("metric formulas");
    let reference = parse_landmarks("# reference\n0 0\n10 10\n").unwrap();
    let test = parse_landmarks("# test\n3 4\n10 10\n").unwrap();
    let n = nme(
        &LandmarkSet::new(reference, 12.5).unwrap(),
        &LandmarkSet::new(test, 12.5).unwrap(),
        NmeConvention::Squared,
    )
    .unwrap();
    v.check(n == 1.0, || format!("nme {n}"));

    let confusion = parse_confusion("# perfect\n40 0 0\n0 25 0\n0 0 35\n").unwrap();
    let f = fwiou(&SegmentationCounts::from_confusion(&confusion).unwrap()).unwrap();
    v.check(f == 1.0, || format!("fwiou {f}"));

    let m = mos(&parse_ratings("1 2 3 4 5\n").unwrap()).unwrap();
    v.check(m == 3.0, || format!("mos {m}"));
    v.detail = format!("nme = {n}, fwiou = {f}, mos = {m}");
    v
}

fn main() -> ExitCode {
    let mut verdicts = codec_criteria();
    verdicts.push(mask_causality());
    verdicts.push(probability_fidelity());
    verdicts.push(range_coder_oracle());
    verdicts.push(objective_arithmetic());
    verdicts.push(metric_formulas());
    let passed = verdicts.iter().map(Verdict::report).filter(|&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", verdicts.len());
    if passed == verdicts.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
