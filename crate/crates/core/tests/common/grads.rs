//! Finite-difference cases for every differentiable building block.

use candle_core::{DType, Tensor};
use inpaint::bigff::BiGff;
use inpaint::cfa::Cfa;
use inpaint::generator::ProjectionHead;
use inpaint::losses::{
    adversarial_losses, intermediate_loss, perceptual_loss, reconstruction_loss, style_loss, RandomConvExtractor,
};
use inpaint::nn::{seeded_rng, Init, ParamStore};
use inpaint::pconv::{partial_conv, PartialConv2d, PartialConvSpec};

use super::{check_grad, check_grad_var, project, randn, random_mask, uniform, GradStats};

fn init_store(seed: u64) -> (ParamStore, rand_chacha::ChaCha8Rng) {
    (ParamStore::new(), seeded_rng(seed))
}

/// `(case name, stats)` for every probed quantity.
pub fn gradient_suite(probes: usize) -> Vec<(String, GradStats)> {
    let mut out = Vec::new();

    // Partial convolution: input and weight.
    {
        let spec = PartialConvSpec::new(3, 4, 3, 2);
        let x = randn(1, &[2, 3, 8, 8]);
        let mask = random_mask(2, 2, 8, 8, 0.4);
        let w = randn(3, &[4, 3, 3, 3]);
        let b = randn(4, &[4]);
        let f = |t: &Tensor| project(&partial_conv(t, &mask, &w, Some(&b), &spec).unwrap().0, 5);
        out.push(("partial_conv d/dx".into(), check_grad(&f, &x, probes, 6)));
        let (mut store, mut rng) = init_store(7);
        let layer = PartialConv2d::new(&mut Init::new(&mut store, &mut rng, DType::F64), spec).unwrap();
        let f = || project(&layer.forward(&x, &mask).unwrap().0, 8);
        out.push(("partial_conv d/dW".into(), check_grad_var(&f, layer.weight(), probes, 9)));
    }

    // Gated fusion: both feature inputs and the two mixing scalars.
    {
        let (mut store, mut rng) = init_store(10);
        let g = BiGff::new(&mut Init::new(&mut store, &mut rng, DType::F64), 4).unwrap();
        g.alpha().set(&Tensor::full(0.3f64, g.alpha().dims(), &super::dev()).unwrap()).unwrap();
        g.beta().set(&Tensor::full(-0.7f64, g.beta().dims(), &super::dev()).unwrap()).unwrap();
        let ft = randn(11, &[1, 4, 6, 6]);
        let fs = randn(12, &[1, 4, 6, 6]);
        let f = |t: &Tensor| project(&g.fuse(t, &fs).unwrap(), 13);
        out.push(("bigff.fuse d/dF_t".into(), check_grad(&f, &ft, probes, 14)));
        let f = |s: &Tensor| project(&g.fuse(&ft, s).unwrap(), 13);
        out.push(("bigff.fuse d/dF_s".into(), check_grad(&f, &fs, probes, 15)));
        let f = || g.fuse(&ft, &fs).unwrap().sqr().unwrap().sum_all().unwrap();
        out.push(("bigff.fuse d|F_b|^2/dalpha".into(), check_grad_var(&f, g.alpha(), probes, 16)));
        out.push(("bigff.fuse d|F_b|^2/dbeta".into(), check_grad_var(&f, g.beta(), probes, 17)));
    }

    // Contextual aggregation: input features and the merge weights.
    {
        let (mut store, mut rng) = init_store(20);
        let cfa = Cfa::new(&mut Init::new(&mut store, &mut rng, DType::F64), 4, true).unwrap();
        let x = randn(21, &[1, 4, 8, 8]);
        let f = |t: &Tensor| project(&cfa.forward(t).unwrap(), 22);
        out.push(("cfa_forward d/dF_in".into(), check_grad(&f, &x, probes, 23)));
        let down = store.param("down.weight").expect("down conv weight");
        let f = || project(&cfa.forward(&x).unwrap(), 22);
        out.push(("cfa_forward d/dW_down".into(), check_grad_var(&f, down, probes, 24)));
    }

    // The five losses.
    {
        let target = uniform(30, &[2, 3, 16, 16], 0.0, 1.0);
        let pred = uniform(31, &[2, 3, 16, 16], 0.0, 1.0);
        let f = |t: &Tensor| reconstruction_loss(t, &target).unwrap();
        out.push(("L_rec".into(), check_grad(&f, &pred, probes, 32)));
        let ext = RandomConvExtractor::new(33, [4, 6, 8], DType::F64).unwrap();
        let f = |t: &Tensor| perceptual_loss(t, &target, &ext).unwrap();
        out.push(("L_perc".into(), check_grad(&f, &pred, probes, 34)));
        let f = |t: &Tensor| style_loss(t, &target, &ext).unwrap();
        out.push(("L_style".into(), check_grad(&f, &pred, probes, 35)));

        let real = uniform(36, &[2, 1, 3, 3], 0.05, 0.95);
        let fake = uniform(37, &[2, 1, 3, 3], 0.05, 0.95);
        let f = |r: &Tensor| adversarial_losses(r, &fake, &fake).unwrap().0;
        out.push(("L_adv (D) d/dD(real)".into(), check_grad(&f, &real, probes, 38)));
        let f = |s: &Tensor| adversarial_losses(&real, &fake, s).unwrap().1;
        out.push(("L_adv (G) d/dD(fake)".into(), check_grad(&f, &fake, probes, 39)));

        let logits = randn(40, &[2, 1, 16, 16]);
        let edges = uniform(41, &[2, 1, 16, 16], 0.0, 1.0).ge(0.7).unwrap().to_dtype(DType::F64).unwrap();
        let f = |l: &Tensor| intermediate_loss(l, &edges, &pred, &target).unwrap();
        out.push(("L_inter d/dlogits".into(), check_grad(&f, &logits, probes, 42)));
        let f = |p: &Tensor| intermediate_loss(&logits, &edges, p, &target).unwrap();
        out.push(("L_inter d/dpreview".into(), check_grad(&f, &pred, probes, 43)));
    }

    // Projection heads.
    for (name, out_c, squash) in [("texture head", 3, true), ("structure head", 1, false)] {
        let (mut store, mut rng) = init_store(50 + out_c as u64);
        let head = ProjectionHead::new(&mut Init::new(&mut store, &mut rng, DType::F64), 4, out_c, squash).unwrap();
        let x = randn(52, &[1, 4, 6, 6]);
        let f = |t: &Tensor| project(&head.forward(t).unwrap(), 53);
        out.push((format!("{name} d/dF"), check_grad(&f, &x, probes, 54)));
        let w = head.vars()[0];
        let f = || project(&head.forward(&x).unwrap(), 53);
        out.push((format!("{name} d/dW"), check_grad_var(&f, w, probes, 55)));
    }
    out
}
