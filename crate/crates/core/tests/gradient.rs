mod common;

use common::checks::{gradient_check, gradient_net};
use common::random_sample;
use znn::convolution::ConvMode;
use znn::reference;
use znn::taskgraph::{EdgeParam, Params};

#[test]
fn engine_gradient_matches_central_differences() {
    for mode in [ConvMode::Direct, ConvMode::Fft] {
        let r = gradient_check(mode, 21);
        assert!(r.params > 40);
        assert!(r.worst_rel < 1e-4, "{mode}: {}", r.worst_rel);
    }
}

#[test]
fn reference_gradient_matches_central_differences() {
    let g = gradient_net();
    let p = Params::<f64>::init(&g, 4);
    let s = random_sample::<f64>(&g, 8);
    let (_, grad) = reference::gradients(&g, &p, &s).unwrap();
    let flat = grad.flat();
    let x = p.flat();
    let h = 1e-5;
    for i in 0..x.len() {
        let mut a = p.clone();
        a.set_flat(i, x[i] + h);
        let mut b = p.clone();
        b.set_flat(i, x[i] - h);
        let fd = (reference::loss(&g, &a, &s).unwrap() - reference::loss(&g, &b, &s).unwrap()) / (2.0 * h);
        let scale = fd.abs().max(flat[i].abs()).max(1e-7);
        assert!((fd - flat[i]).abs() / scale < 1e-4, "param {i}: {fd} vs {}", flat[i]);
    }
    assert!(grad.edges.iter().any(|e| matches!(e, EdgeParam::Bias(_))));
}
