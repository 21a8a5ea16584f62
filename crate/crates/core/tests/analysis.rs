mod common;

use common::cost::{conv_span, conv_work, nonconv, Tuple};
use proptest::prelude::*;
use znn::analysis::*;

const MODES: [CostMode; 3] = [CostMode::Direct, CostMode::Fft, CostMode::FftMemo];
const PASSES: [CostPass; 3] = [CostPass::Forward, CostPass::Backward, CostPass::Update];
const KINDS: [NonConvKind; 3] = [NonConvKind::Pooling, NonConvKind::Filtering, NonConvKind::Transfer];

fn tuple() -> impl Strategy<Value = Tuple> {
    (1u128..=64, 1u128..=64, 1u32..=7, 1u128..=10)
        .prop_flat_map(|(f, fp, lg_n, c)| (1u128..=(1 << lg_n)).prop_map(move |k| Tuple { f, fp, lg_n, k, c }))
}

proptest! {
    #[test]
    fn conv_tables_match_integer_oracle(t in tuple()) {
        let l = LayerCost::cubic(t.f as usize, t.fp as usize, t.n() as usize, t.k as usize).with_c(t.c as f64);
        let work = conv_work(&t);
        let span = conv_span(&t);
        for (m, mode) in MODES.iter().enumerate() {
            for (p, pass) in PASSES.iter().enumerate() {
                prop_assert_eq!(flops_conv_layer(&l, *mode, *pass), work[m][p] as f64);
                prop_assert_eq!(t_inf_conv(&l, *mode, *pass), span[m][p] as f64);
            }
            prop_assert_eq!(flops_conv_layer(&l, *mode, CostPass::Total), work[m].iter().sum::<u128>() as f64);
        }
    }

    #[test]
    fn nonconv_tables_match_integer_oracle(f in 1u128..100, lg_n in 1u32..8, lg_k in 0u32..4) {
        let (n, k) = (1u128 << lg_n, 1u128 << lg_k);
        let want = nonconv(n, k);
        for (i, kind) in KINDS.iter().enumerate() {
            for (p, pass) in PASSES.iter().enumerate() {
                let v = n.pow(3) as f64;
                let kv = k.pow(3) as f64;
                prop_assert_eq!(flops_nonconv_layer(f as f64, v, kv, *kind, *pass), (f * want[i][p]) as f64);
                prop_assert_eq!(t_inf_nonconv(v, kv, *kind, *pass), want[i][p] as f64);
            }
        }
    }

    #[test]
    fn brent_bound_is_below_both_limits(t_inf in 1.0f64..1e6, ratio in 1.0f64..1e6, p in 1usize..1000) {
        let t1 = t_inf * ratio;
        let b = brent_speedup(t1, t_inf, p as f64).unwrap();
        prop_assert!(b <= (p as f64).min(t1 / t_inf) * (1.0 + 1e-12));
        prop_assert!(b >= 1.0 - 1e-12);
    }
}

#[test]
fn crossover_scan_matches_oracle() {
    for lg_n in 1..=7u32 {
        let n = 1u128 << lg_n;
        for c in [1u128, 5, 9] {
            let want = (1..=n).find(|&k| {
                let t = Tuple { f: 1, fp: 1, lg_n, k, c };
                let w = conv_work(&t);
                w[1].iter().sum::<u128>() < w[0].iter().sum::<u128>()
            });
            assert_eq!(crossover_kernel_size(n as usize, c as f64, 1, false), want.map(|k| k as usize), "n={n} C={c}");
        }
    }
    let k64 = crossover_kernel_size(64, 5.0, 1, false).unwrap();
    assert!(k64 > 1 && k64 < 64);
}

#[test]
fn crossover_shrinks_with_width_and_memoization() {
    for n in [16, 32, 64, 128] {
        let mut prev = usize::MAX;
        for f in [1, 2, 4, 8, 16, 32] {
            let k = crossover_kernel_size(n, 5.0, f, false).unwrap_or(usize::MAX);
            assert!(k <= prev, "n={n} f={f}");
            prev = k;
            let m = crossover_kernel_size(n, 5.0, f, true).unwrap_or(usize::MAX);
            assert!(m <= k, "n={n} f={f}");
        }
    }
}

#[test]
fn brent_rejects_empty_span() {
    assert!(brent_speedup(5.0, 0.0, 4.0).is_err());
    assert!(brent_speedup(5.0, -1.0, 4.0).is_err());
}
