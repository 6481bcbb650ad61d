use cgt_core::nn::forward_with_trace;
use cgt_core::rng;
use cgt_core::train::{detector_loss, LossWeights};
use cgt_core::Tensor;
use cgt_testkit::{gen, oracle};
use rand::Rng;

#[test]
fn loss_matches_cellwise_oracle() {
    let lw = LossWeights::default();
    for case in 0..200u64 {
        let mut r = rng::stream(0x1055, &[case]);
        let g = gen::tiny_graph(&mut r, 24);
        let s = g.input_shape();
        let n = r.random_range(0..5);
        let gts: Vec<_> = (0..n).map(|_| gen::bbox(&mut r, s.w as f32, s.h as f32, 0.5)).collect();
        let (raw, _) = forward_with_trace(&g, &gen::image(&mut r, s)).unwrap();
        // keep objectness logits moderate so -ln(sigmoid) stays accurate
        let raw = Tensor::from_vec(raw.shape(), raw.data().iter().map(|v| v.clamp(-20.0, 20.0)).collect()).unwrap();
        let lib = detector_loss(&raw, &gts, &g, lw).unwrap();
        let ora = oracle::detector_loss(&raw, &gts, &g, lw.coord as f64, lw.noobj as f64);
        // box centers are f32 in the library and f64 here
        assert!((lib - ora).abs() <= 1e-6 * (1.0 + ora.abs()), "case {case}: {lib} vs {ora}");
        assert!(lib >= 0.0);
    }
}
