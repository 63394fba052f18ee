use flames_core::analysis::reference::{expm_reference, spectral_norm_svd};
use flames_core::analysis::taylor_error_bound;
use flames_core::events::{
    batch_flat, generate_poisson, ingest_events, write_events, EventStream, Geometry, SpikeBatch, SpikeEvent,
    TimestampOrder,
};
use flames_core::hippo::{adaptive_matrix, decay_matrix, hippo_legs, DecayParams, SaHippoKernel, SignConvention};
use flames_core::kernel::{expm_taylor, fft_convolve, nplr_decompose, phi_matrix, step, KernelState, StepConfig};
use flames_core::linalg::{spectral_norm, C64};
use flames_core::model::config::{ModelConfig, Variant};
use flames_core::model::norm::{layer_norm, NormParams};
use flames_core::model::forward;
use flames_core::neuron::{layer_forward, spatial_max_pool, DendriteBranch, DendriteConfig, DendriteLayer, PoolConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn events_strategy() -> impl Strategy<Value = (Geometry, Vec<SpikeEvent>)> {
    (1u32..6, 1u32..6).prop_flat_map(|(w, h)| {
        let ev = (0u32..2000, 0..w, 0..h, prop_oneof![Just(1.0), Just(-1.0), Just(0.5), Just(2.0)]);
        prop::collection::vec(ev, 0..40).prop_map(move |raw| {
            let mut evs: Vec<SpikeEvent> = raw
                .into_iter()
                .map(|(t, x, y, p)| SpikeEvent::new(f64::from(t) * 1e-4, x, y, p))
                .collect();
            evs.sort_by(|a, b| a.t.total_cmp(&b.t));
            (Geometry::new(w, h), evs)
        })
    })
}

fn matrix(n: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v) * scale)
}

fn legs_kernel(n: usize, alpha0: f64, b: DMatrix<f64>) -> SaHippoKernel {
    let c = DMatrix::identity(n, n);
    SaHippoKernel::new(
        hippo_legs(n).unwrap(),
        DecayParams::uniform(n, alpha0).unwrap(),
        b,
        c,
        -1.0,
        SignConvention::Diagonal,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn event_file_round_trip((g, evs) in events_strategy()) {
        let stream = EventStream::new(evs.clone(), g, g.pixels()).unwrap();
        let mut first = Vec::new();
        write_events(&stream, &mut first).unwrap();
        let back = ingest_events(first.as_slice(), None, TimestampOrder::Strict).unwrap();
        prop_assert_eq!(back.events(), evs.as_slice());
        let mut second = Vec::new();
        write_events(&back, &mut second).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn batching_conserves_magnitude((g, evs) in events_strategy()) {
        let total: f64 = evs.iter().map(|e| e.p).sum();
        let stream = EventStream::new(evs, g, g.pixels()).unwrap();
        let batches = batch_flat(&stream).unwrap();
        let summed: f64 = batches.iter().flat_map(|b| b.values.iter()).sum();
        prop_assert!((summed - total).abs() <= 1e-9 * (1.0 + total.abs()));
        prop_assert!(batches.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn poisson_generator_is_pure(rate in 1.0..200.0f64, channels in 1usize..5, seed in any::<u64>()) {
        let a = generate_poisson(rate, 0.1, channels, seed).unwrap();
        let b = generate_poisson(rate, 0.1, channels, seed).unwrap();
        prop_assert_eq!(a.events(), b.events());
    }

    #[test]
    fn legs_matches_double_loop(n in 1usize..24) {
        let a = hippo_legs(n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = if i > j {
                    -(((2 * i + 1) * (2 * j + 1)) as f64).sqrt()
                } else if i == j {
                    (i + 1) as f64
                } else {
                    0.0
                };
                prop_assert_eq!(a.matrix()[(i, j)], want);
            }
        }
    }

    #[test]
    fn decay_is_monotone_in_dt(n in 1usize..6, dt1 in 0.0..2.0f64, extra in 1e-3..2.0f64, seed in any::<u64>()) {
        let alpha = DMatrix::from_fn(n, n, |i, j| 0.1 + ((seed >> ((i * n + j) % 60)) & 7) as f64);
        let alpha = DecayParams::from_matrix(alpha).unwrap();
        let f1 = decay_matrix(&alpha, dt1).unwrap();
        let f2 = decay_matrix(&alpha, dt1 + extra).unwrap();
        prop_assert!(f1.iter().zip(f2.iter()).all(|(a, b)| a >= b));
    }

    #[test]
    fn zero_decay_gives_signed_base(n in 1usize..10, dt in 0.0..5.0f64) {
        for convention in [SignConvention::Diagonal, SignConvention::Uniform] {
            let k = SaHippoKernel::new(
                hippo_legs(n).unwrap(),
                DecayParams::zeros(n),
                DMatrix::zeros(n, 1),
                DMatrix::zeros(1, n),
                -1.0,
                convention,
            )
            .unwrap();
            prop_assert_eq!(&adaptive_matrix(&k, dt).unwrap(), k.dynamics());
        }
    }

    #[test]
    fn adaptive_matrix_keeps_zero_pattern(n in 1usize..10, alpha0 in 0.0..5.0f64, dt in 0.0..3.0f64) {
        let k = legs_kernel(n, alpha0, DMatrix::zeros(n, 1));
        let a = adaptive_matrix(&k, dt).unwrap();
        for (s, b) in a.iter().zip(k.base().iter()) {
            prop_assert_eq!(*s == 0.0, *b == 0.0);
        }
    }

    #[test]
    fn unforced_steps_compose(n in 1usize..5, dt1 in 0.01..0.3f64, dt2 in 0.01..0.3f64,
                              x0 in prop::collection::vec(-1.0..1.0f64, 4)) {
        let k = legs_kernel(n, 0.0, DMatrix::zeros(n, 1));
        let cfg = StepConfig::default();
        let start = KernelState { x: DVector::from_column_slice(&x0[..n]), last_t: 0.0 };
        let zero = |t: f64| SpikeBatch::zeros(t, 1);
        let two = step(&k, &step(&k, &start, &zero(dt1), &cfg).unwrap(), &zero(dt1 + dt2), &cfg).unwrap();
        let one = step(&k, &start, &zero(dt1 + dt2), &cfg).unwrap();
        let a_norm = spectral_norm(k.dynamics());
        // per-step truncation bound, summed over the substeps of each call
        let tol = |dt: f64| {
            let m = (k.dynamics().norm() * dt / 0.5).ceil().max(1.0);
            m * taylor_error_bound(a_norm * dt / m, cfg.terms) * (a_norm * dt).exp()
        };
        let budget = 2.0 * (tol(dt1) + tol(dt2) + tol(dt1 + dt2)) * start.x.norm() + 1e-14;
        prop_assert!((&two.x - &one.x).norm() <= budget, "gap {} budget {}", (&two.x - &one.x).norm(), budget);
    }

    #[test]
    fn step_gradient_wrt_input_matrix(n in 2usize..6, m in 1usize..3, dt in 0.01..0.5f64,
                                      seed in prop::collection::vec(-1.0..1.0f64, 64)) {
        let b = DMatrix::from_fn(n, m, |i, j| seed[i * m + j]);
        let x0 = DVector::from_fn(n, |i, _| seed[20 + i]);
        let s: Vec<f64> = (0..m).map(|j| 0.5 + seed[40 + j]).collect();
        let cfg = StepConfig::plain(8);
        let energy = |b: &DMatrix<f64>| {
            let k = legs_kernel(n, 1.0, b.clone());
            let x = step(&k, &KernelState { x: x0.clone(), last_t: 0.0 }, &SpikeBatch::new(dt, s.clone()), &cfg).unwrap();
            x.x.norm_squared()
        };
        // x' = E x + Φ B s, so d‖x'‖²/dB_ij = 2 (Φᵀx')_i s_j
        let k = legs_kernel(n, 1.0, b.clone());
        let a = adaptive_matrix(&k, dt).unwrap();
        let phi = phi_matrix(&a, dt, 8).unwrap();
        let x1 = step(&k, &KernelState { x: x0.clone(), last_t: 0.0 }, &SpikeBatch::new(dt, s.clone()), &cfg).unwrap();
        let g = 2.0 * phi.transpose() * &x1.x;
        let h = 1e-6;
        for i in 0..n {
            for j in 0..m {
                let mut bp = b.clone();
                bp[(i, j)] += h;
                let mut bm = b.clone();
                bm[(i, j)] -= h;
                let fd = (energy(&bp) - energy(&bm)) / (2.0 * h);
                let exact = g[i] * s[j];
                prop_assert!((fd - exact).abs() <= 1e-4 * exact.abs().max(1e-3), "({i},{j}) fd {fd} exact {exact}");
            }
        }
    }

    #[test]
    fn fft_matches_direct(taps in prop::collection::vec(-1.0..1.0f64, 1..64), u in prop::collection::vec(-1.0..1.0f64, 1..200)) {
        let k: Vec<C64> = taps.iter().map(|&v| C64::new(v, 0.0)).collect();
        let y = fft_convolve(&k, &u);
        prop_assert_eq!(y.len(), u.len());
        let scale = taps.iter().map(|v| v.abs()).sum::<f64>() * u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for t in 0..u.len() {
            let direct: f64 = (0..=t.min(taps.len() - 1)).map(|j| taps[j] * u[t - j]).sum();
            prop_assert!((y[t].re - direct).abs() <= 1e-9 * (1.0 + scale));
        }
    }

    #[test]
    fn full_rank_nplr_is_exact(a in (2usize..9).prop_flat_map(|n| matrix(n, 3.0)), v in prop::collection::vec(-1.0..1.0f64, 8)) {
        let n = a.nrows();
        let f = nplr_decompose(&a, n).unwrap();
        let x = DVector::from_column_slice(&v[..n]);
        let dense = &a * &x;
        let fast = f.matvec(&x);
        prop_assert!((&dense - &fast).norm() <= 1e-9 * (1.0 + a.norm() * x.norm()));
    }

    #[test]
    fn taylor_error_within_bound(m in (1usize..7).prop_flat_map(|n| matrix(n, 1.0)), r in 0.05..2.0f64, order in 1usize..11) {
        let norm = spectral_norm_svd(&m);
        prop_assume!(norm > 1e-6);
        let scaled = &m * (r / norm);
        let reference = expm_reference(&scaled);
        let err = spectral_norm_svd(&(&reference - expm_taylor(&scaled, 1.0, order).unwrap()));
        let slack = 64.0 * f64::EPSILON * spectral_norm_svd(&reference);
        prop_assert!(err <= taylor_error_bound(r, order) * (1.0 + 1e-9) + slack, "err {} bound {}", err, taylor_error_bound(r, order));
    }

    #[test]
    fn dendrite_decays_geometrically(tau in 0.5..50.0f64, i0 in -5.0..5.0f64, ticks in 1usize..40) {
        let mut b = DendriteBranch::new(tau, vec![(0, 1.0)]).unwrap();
        b.current = i0;
        let mut expected = i0;
        for _ in 0..ticks {
            b.step(&[0.0], 1.0);
            expected *= (-1.0 / tau).exp();
        }
        prop_assert!((b.current - expected).abs() <= 1e-12 * i0.abs().max(1.0));
    }

    #[test]
    fn soma_below_threshold_after_each_tick(rates in prop::collection::vec(0.0..1.0f64, 20), seed in any::<u64>()) {
        let g = Geometry::new(4, 5);
        let mut layer = DendriteLayer::grid(g, &DendriteConfig::default(), seed).unwrap();
        for (k, r) in rates.iter().enumerate() {
            let batch = SpikeBatch::new(k as f64 * 1e-3, (0..20).map(|i| if (i as f64 / 20.0) < *r { 3.0 } else { 0.0 }).collect());
            layer.tick(&batch).unwrap();
            prop_assert!(layer.neurons().iter().all(|n| n.v <= n.v_th));
        }
    }

    #[test]
    fn pooling_commutes_with_increasing_maps(w in 1u32..9, h in 1u32..9, k in 1u32..4,
                                            vals in prop::collection::vec(-5.0..5.0f64, 64)) {
        let g = Geometry::new(w, h);
        let act = &vals[..g.pixels()];
        let cfg = PoolConfig::square(k, g);
        let f = |x: f64| 2.0 * x + 1.0;
        let lhs = spatial_max_pool(&act.iter().map(|&x| f(x)).collect::<Vec<_>>(), &cfg).unwrap();
        let rhs: Vec<f64> = spatial_max_pool(act, &cfg).unwrap().into_iter().map(f).collect();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn layer_norm_ignores_offsets(x in prop::collection::vec(-10.0..10.0f64, 2..32), c in -100.0..100.0f64) {
        let p = NormParams::broadcast(x.len(), 1.5, -0.25, 1e-5);
        let a = layer_norm(&x, &p).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let b = layer_norm(&shifted, &p).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn layer_forward_is_deterministic(seed in any::<u64>(), stream_seed in any::<u64>()) {
        let stream = generate_poisson(300.0, 0.05, 16, stream_seed).unwrap();
        let batches = batch_flat(&stream).unwrap();
        let mut a = DendriteLayer::grid(stream.geometry(), &DendriteConfig::default(), seed).unwrap();
        let mut b = a.clone();
        let out_a = layer_forward(&mut a, &batches).unwrap();
        let out_b = layer_forward(&mut b, &batches).unwrap();
        prop_assert_eq!(out_a.events(), out_b.events());
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), stream_seed in any::<u64>()) {
        let stream = generate_poisson(100.0, 0.05, 16, stream_seed).unwrap();
        let cfg = ModelConfig::preset(Variant::Tiny);
        let a = forward(&cfg, &stream, seed).unwrap();
        let b = forward(&cfg, &stream, seed).unwrap();
        prop_assert_eq!(a.scores, b.scores);
        prop_assert_eq!(a.diagnostics.len(), b.diagnostics.len());
    }

    #[test]
    fn diagnostics_stay_under_envelope(seed in any::<u64>(), stream_seed in any::<u64>()) {
        let stream = generate_poisson(200.0, 0.05, 16, stream_seed).unwrap();
        let cfg = ModelConfig::preset(Variant::Tiny);
        let out = forward(&cfg, &stream, seed).unwrap();
        for row in &out.diagnostics {
            prop_assert!(row.state_norm <= row.bound * (1.0 + 1e-6) + 1e-12, "{:?}", row);
        }
    }
}
