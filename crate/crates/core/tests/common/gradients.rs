//! Gradient-check cases shared by the unit tests and the acceptance suite.
//! Each case returns the worst relative error between analytic and central
//! finite-difference gradients, in f64.

#![allow(dead_code)]

use openset_kd::autodiff::Graph;
use openset_kd::datasets::ImageShape;
use openset_kd::distillation::{joint_probs_batch, kd_loss, kd_loss_graph, soft_targets};
use openset_kd::networks::{
    build_classifier, build_discriminator, build_generator, Backbone, ClassifierNet, ClassifierSpec,
    DiscriminatorNet, DiscriminatorSpec, GeneratorNet, GeneratorSpec, ParamSet,
};
use openset_kd::recommender::{
    conditions_tensor, discriminator_loss, discriminator_loss_graph, generator_loss, generator_loss_graph,
    sample_conditions, student_unknown_loss, student_unknown_loss_graph, unknown_targets,
};
use openset_kd::rng::{rng_from_seed, Rng};
use openset_kd::tensor::Tensor;
use rand::Rng as _;

const SHAPE: ImageShape = ImageShape { channels: 1, height: 4, width: 4 };
const C: usize = 3;
const U: usize = 2;
const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

fn tiny_student(rng: &mut Rng) -> ClassifierNet<f64> {
    let backbone = Backbone { conv_channels: vec![2], dense: vec![4] };
    build_classifier(ClassifierSpec { shape: SHAPE, known: C, unknown: U, backbone }, rng).unwrap()
}

fn tiny_generator(rng: &mut Rng) -> GeneratorNet<f64> {
    let spec = GeneratorSpec {
        shape: SHAPE,
        conditions: U,
        noise_dim: 3,
        seed_side: 2,
        seed_channels: 2,
        up_channels: vec![2],
        out_kernel: 3,
    };
    build_generator(spec, rng).unwrap()
}

fn tiny_discriminator(rng: &mut Rng) -> DiscriminatorNet<f64> {
    build_discriminator(DiscriminatorSpec { shape: SHAPE, channels: vec![2] }, rng).unwrap()
}

fn images(n: usize, rng: &mut Rng) -> Tensor<f64> {
    Tensor::new([n, 1, 4, 4], (0..n * 16).map(|_| rng.random_range(0.0..1.0)).collect())
}

fn noise(n: usize, rng: &mut Rng) -> Tensor<f64> {
    Tensor::new([n, 3], (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Compares the analytic gradient of `loss` with respect to `params` against
/// central differences, element by element.
fn check(params: &mut ParamSet<f64>, loss: impl Fn(&ParamSet<f64>, bool) -> (f64, Vec<f64>)) -> f64 {
    assert!(params.num_scalars() < 1000, "{} parameters", params.num_scalars());
    let (_, analytic) = loss(params, true);
    let base = params.flatten();
    assert_eq!(analytic.len(), base.len());
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + STEP;
        params.assign_flat(&x);
        let up = loss(params, false).0;
        x[i] = base[i] - STEP;
        params.assign_flat(&x);
        let down = loss(params, false).0;
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic[i].abs().max(numeric.abs());
        let err = (analytic[i] - numeric).abs();
        if scale > 1e-6 {
            worst = worst.max(err / scale);
        } else {
            assert!(err < 1e-9, "parameter {i}: analytic {} numeric {numeric}", analytic[i]);
        }
    }
    params.assign_flat(&base);
    worst
}

fn flat_grads(params: &ParamSet<f64>, grads: Vec<Option<Tensor<f64>>>) -> Vec<f64> {
    params
        .iter()
        .zip(grads)
        .flat_map(|(p, g)| g.map_or_else(|| vec![0.0; p.value.len()], |t| t.data().to_vec()))
        .collect()
}

pub fn distillation() -> f64 {
    let mut rng = rng_from_seed(1);
    let mut s = tiny_student(&mut rng);
    let teacher = tiny_student(&mut rng);
    let x = images(5, &mut rng);
    let tau = 5.0;
    let targets = soft_targets(&teacher.forward_logits(&x).unwrap(), tau);
    let spec = s.spec.clone();
    // the graph value must equal the independent probability-space formula
    let q = joint_probs_batch(&teacher.forward_logits(&x).unwrap(), C, tau).unwrap();
    let p = joint_probs_batch(&s.forward_logits(&x).unwrap(), C, tau).unwrap();
    let expected = kd_loss(&q, &p).unwrap();
    check(&mut s.params, |params, with_grad| {
        let net = ClassifierNet::from_params(spec.clone(), params.clone()).unwrap();
        let g = Graph::new();
        let xv = g.constant(x.clone());
        let (logits, bound) = net.forward(&g, xv, with_grad);
        let loss = kd_loss_graph(&g, logits, &targets, tau);
        let v = g.value(loss).data()[0];
        if !with_grad {
            return (v, Vec::new());
        }
        assert!((v - expected).abs() < 1e-10, "{v} vs {expected}");
        let mut grads = g.backward(loss);
        (v, flat_grads(params, bound.collect(&mut grads)))
    })
}

pub fn generator() -> f64 {
    let mut rng = rng_from_seed(2);
    let mut gen = tiny_generator(&mut rng);
    let disc = tiny_discriminator(&mut rng);
    let s = tiny_student(&mut rng);
    let n = 4;
    let z = noise(n, &mut rng);
    let cvs = sample_conditions(n, U, &mut rng).unwrap();
    let cv = conditions_tensor::<f64>(&cvs, U);
    let targets = unknown_targets::<f64>(&cvs, C, U);
    let alpha = 0.5;
    let spec = gen.spec.clone();
    check(&mut gen.params, |params, with_grad| {
        let net = GeneratorNet { spec: spec.clone(), params: params.clone() };
        let g = Graph::new();
        let (img, bound) = net.forward(&g, g.constant(z.clone()), g.constant(cv.clone()), with_grad);
        let (d, _) = disc.forward(&g, img, false);
        let (logits, _) = s.forward(&g, img, false);
        let loss = generator_loss_graph(&g, d, logits, &targets, alpha);
        let v = g.value(loss).data()[0];
        if !with_grad {
            return (v, Vec::new());
        }
        let d_out = g.value(d).to_f64_vec();
        let probs = joint_probs_batch(&g.value(logits), C, 1.0).unwrap();
        let expected = generator_loss(&d_out, &probs, &cvs, alpha).unwrap();
        assert!((v - expected).abs() < 1e-10, "{v} vs {expected}");
        let mut grads = g.backward(loss);
        (v, flat_grads(params, bound.collect(&mut grads)))
    })
}

pub fn discriminator() -> f64 {
    let mut rng = rng_from_seed(3);
    let mut disc = tiny_discriminator(&mut rng);
    let real = images(4, &mut rng);
    let fake = images(4, &mut rng);
    let spec = disc.spec.clone();
    check(&mut disc.params, |params, with_grad| {
        let net = DiscriminatorNet { spec: spec.clone(), params: params.clone() };
        let g = Graph::new();
        let bound = net.params.bind(&g, with_grad);
        let dr = net.apply(&g, g.constant(real.clone()), &bound);
        let df = net.apply(&g, g.constant(fake.clone()), &bound);
        let loss = discriminator_loss_graph(&g, dr, df);
        let v = g.value(loss).data()[0];
        if !with_grad {
            return (v, Vec::new());
        }
        let objective = discriminator_loss(&g.value(dr).to_f64_vec(), &g.value(df).to_f64_vec()).unwrap();
        assert!((v + objective).abs() < 1e-10, "graph minimizes the negated objective");
        let mut grads = g.backward(loss);
        (v, flat_grads(params, bound.collect(&mut grads)))
    })
}

pub fn student_unknown() -> f64 {
    let mut rng = rng_from_seed(4);
    let mut s = tiny_student(&mut rng);
    let n = 6;
    let fake = images(n, &mut rng);
    let cvs = sample_conditions(n, U, &mut rng).unwrap();
    let targets = unknown_targets::<f64>(&cvs, C, U);
    let mask = [true, false, true, true, false, true];
    let spec = s.spec.clone();
    check(&mut s.params, |params, with_grad| {
        let net = ClassifierNet::from_params(spec.clone(), params.clone()).unwrap();
        let g = Graph::new();
        let (logits, bound) = net.forward(&g, g.constant(fake.clone()), with_grad);
        let loss = student_unknown_loss_graph(&g, logits, &targets, &mask);
        let v = g.value(loss).data()[0];
        if !with_grad {
            return (v, Vec::new());
        }
        let probs = joint_probs_batch(&g.value(logits), C, 1.0).unwrap();
        let expected = student_unknown_loss(&probs, &cvs, &mask).unwrap();
        assert!((v - expected).abs() < 1e-10, "{v} vs {expected}");
        let mut grads = g.backward(loss);
        (v, flat_grads(params, bound.collect(&mut grads)))
    })
}

pub fn full_size_generator_sampled() -> f64 {
    // 28x28 layout with narrow channels; checks a sample of parameters
    let mut rng = rng_from_seed(5);
    let spec = GeneratorSpec::standard(ImageShape::MNIST, U).unwrap().with_width(4).with_noise_dim(6);
    let gen: GeneratorNet<f64> = build_generator(spec.clone(), &mut rng).unwrap();
    let disc: DiscriminatorNet<f64> =
        build_discriminator(DiscriminatorSpec::standard(ImageShape::MNIST).unwrap().with_width(4), &mut rng).unwrap();
    let n = 3;
    let z = Tensor::new([n, 6], (0..n * 6).map(|_| rng.random_range(-1.0..1.0)).collect());
    let cvs = sample_conditions(n, U, &mut rng).unwrap();
    let cv = conditions_tensor::<f64>(&cvs, U);
    let loss = |params: &ParamSet<f64>, with_grad: bool| {
        let net = GeneratorNet { spec: spec.clone(), params: params.clone() };
        let g = Graph::new();
        let (img, bound) = net.forward(&g, g.constant(z.clone()), g.constant(cv.clone()), with_grad);
        let (d, _) = disc.forward(&g, img, false);
        let l = g.log_clamped(d, 1e-12);
        let l = g.mean(l);
        let l = g.scale(l, -1.0);
        let v = g.value(l).data()[0];
        if !with_grad {
            return (v, Vec::new());
        }
        let mut grads = g.backward(l);
        (v, flat_grads(params, bound.collect(&mut grads)))
    };
    let mut params = gen.params.clone();
    let (_, analytic) = loss(&params, true);
    let base = params.flatten();
    let mut worst: f64 = 0.0;
    for i in (0..base.len()).step_by(base.len() / 150 + 1) {
        let mut x = base.clone();
        x[i] = base[i] + STEP;
        params.assign_flat(&x);
        let up = loss(&params, false).0;
        x[i] = base[i] - STEP;
        params.assign_flat(&x);
        let down = loss(&params, false).0;
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-6 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    worst
}
