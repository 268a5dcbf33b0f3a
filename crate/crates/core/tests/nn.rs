use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use scatgen::nn::{
    decoder_loss, gan_losses, vae_loss, Decoder, DecoderConfig, DecoderTrainer, GanConfig, GanModel, GanTrainer,
    GeneratorOutput, TrainConfig, VaeConfig, VaeModel, VaeTrainer,
};
use scatgen::tensor::gradcheck::{check_gradients, GradCheckOptions};
use scatgen::tensor::{BatchNormMode, Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut r))
}

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let d = Uniform::new(0.05, 0.95).unwrap();
    Tensor::from_fn(shape, |_| d.sample(&mut r))
}

fn tiny_decoder() -> DecoderConfig {
    DecoderConfig { n_components: 12, base_spatial: 1, channel_schedule: vec![128, 64, 32], kernel_size: 3, out_channels: 1 }
}

fn zero_params<T: scatgen::tensor::Float>(p: &mut scatgen::nn::ParamSet<T>) {
    for v in p.values_mut() {
        v.data_mut().iter_mut().for_each(|x| *x = T::zero());
    }
}

#[test]
fn decoder_mnist_shape() {
    let dec = Decoder::<f32>::new(DecoderConfig::mnist(), &mut rng(1)).unwrap();
    let out = dec.decode(&normal(&[1, 512], 2).cast(), 64).unwrap();
    assert_eq!(out.shape(), [1, 1, 28, 28]);
    assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn decoder_zero_parameters_give_half() {
    let mut dec = Decoder::<f64>::new(tiny_decoder(), &mut rng(3)).unwrap();
    zero_params(&mut dec.params);
    let out = dec.decode(&normal(&[3, 12], 4), 8).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn decoder_eval_is_batch_independent() {
    let dec = Decoder::<f64>::new(tiny_decoder(), &mut rng(5)).unwrap();
    let w = normal(&[4, 12], 6);
    let together = dec.decode(&w, 4).unwrap();
    for i in 0..4 {
        let alone = dec.decode(&w.slice_rows(i, i + 1).unwrap(), 1).unwrap();
        assert_eq!(alone.data(), &together.data()[i * 16..(i + 1) * 16]);
    }
}

#[test]
fn decoder_config_is_validated() {
    let ok = DecoderConfig::mnist();
    assert!(ok.validate().is_ok());
    let mut bad = ok.clone();
    bad.kernel_size = 5;
    assert!(bad.validate().is_err());
    let mut bad = ok.clone();
    bad.channel_schedule = vec![128, 48, 32];
    assert!(bad.validate().is_err());
    let mut bad = ok.clone();
    bad.channel_schedule = vec![128, 64];
    assert!(bad.validate().is_err());
    let dec = Decoder::<f64>::new(tiny_decoder(), &mut rng(7)).unwrap();
    assert!(dec.decode(&normal(&[2, 11], 8), 2).is_err());
}

#[test]
fn decoder_loss_examples() {
    let a = uniform(&[2, 1, 4, 4], 9);
    let b = uniform(&[2, 1, 4, 4], 10);
    let shifted = Tensor::from_fn(a.shape(), |i| a.data()[i] + 0.5);
    let mut tape = Tape::new();
    let (va, vb, vs) = (tape.constant(a.clone()), tape.constant(b.clone()), tape.constant(shifted));
    let same = decoder_loss(&mut tape, va, va).unwrap();
    let half = decoder_loss(&mut tape, vs, va).unwrap();
    let pair = decoder_loss(&mut tape, va, vb).unwrap();
    assert_eq!(tape.value(same).item().unwrap(), 0.0);
    assert!((tape.value(half).item().unwrap() - 0.5).abs() < 1e-12);
    let brute: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 32.0;
    assert!((tape.value(pair).item().unwrap() - brute).abs() < 1e-12);
    let c = tape.constant(Tensor::zeros(&[2, 16]));
    assert!(decoder_loss(&mut tape, va, c).is_err());
}

#[test]
fn vae_reparameterization() {
    let mut vae = VaeModel::<f64>::new(VaeConfig { input: 12, latent: 4, beta: 0.1 }, &mut rng(11)).unwrap();
    let x = normal(&[3, 12], 12);
    let mut tape = Tape::new();
    let vars = vae.params.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let zero = tape.constant(Tensor::zeros(&[3, 4]));
    let out = vae.forward(&mut tape, &vars, xv, zero).unwrap();
    assert_eq!(tape.value(out.z), tape.value(out.mu));

    for name in ["enc_log_var.weight", "enc_log_var.bias"] {
        let t = vae.params.get_mut(name).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut tape = Tape::new();
    let vars = vae.params.bind(&mut tape, false);
    let xv = tape.constant(x);
    let e0 = tape.constant(Tensor::from_fn(&[3, 4], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let out = vae.forward(&mut tape, &vars, xv, e0).unwrap();
    assert!(tape.value(out.log_var).data().iter().all(|&v| v == 0.0));
    for (i, (z, m)) in tape.value(out.z).data().iter().zip(tape.value(out.mu).data()).enumerate() {
        let e = if i % 4 == 0 { 1.0 } else { 0.0 };
        assert!((z - (m + e)).abs() < 1e-15);
    }
    assert_eq!(tape.shape(out.reconstruction), [3, 12]);
    let bad = tape.constant(Tensor::zeros(&[3, 5]));
    assert!(vae.forward(&mut tape, &vars, xv, bad).is_err());
}

#[test]
fn vae_loss_examples() {
    let beta = 0.37;
    let x = normal(&[2, 6], 13);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let zeros = tape.constant(Tensor::zeros(&[2, 3]));
    let l = vae_loss(&mut tape, xv, xv, zeros, zeros, beta).unwrap();
    assert_eq!(tape.value(l.total).item().unwrap(), 0.0);
    let mu = tape.constant(Tensor::from_fn(&[2, 3], |i| if i % 3 == 0 { 1.0 } else { 0.0 }));
    let l = vae_loss(&mut tape, xv, xv, mu, zeros, beta).unwrap();
    assert!((tape.value(l.total).item().unwrap() - beta * 0.5).abs() < 1e-15);
    assert_eq!(VaeConfig::mnist().beta, 0.001);
}

#[test]
fn gan_shapes_and_ranges() {
    let gan = GanModel::<f64>::new(GanConfig::mnist(), &mut rng(14)).unwrap();
    let z = normal(&[5, 64], 15);
    let x = gan.generate(&z).unwrap();
    assert_eq!(x.shape(), [5, 512]);
    assert!(x.data().iter().any(|&v| v < 0.0));
    let widths: Vec<usize> = ["disc1.weight", "disc2.weight", "disc3.weight"]
        .iter()
        .map(|n| gan.discriminator.get(n).unwrap().shape()[1])
        .collect();
    assert_eq!(widths, [256, 128, 1]);
    let scores = gan.score(&normal(&[5, 512], 16), BatchNormMode::Train).unwrap();
    assert_eq!(scores.shape(), [5, 1]);
    assert!(scores.data().iter().all(|&s| s > 0.0 && s < 1.0));

    let relu = GanModel::<f64>::new(GanConfig { output: GeneratorOutput::Relu, ..GanConfig::mnist() }, &mut rng(14)).unwrap();
    assert!(relu.generate(&z).unwrap().data().iter().all(|&v| v >= 0.0));

    let mut zero = gan.clone();
    zero_params(&mut zero.discriminator);
    let s = zero.score(&normal(&[3, 512], 17), BatchNormMode::Eval).unwrap();
    assert!(s.data().iter().all(|&v| v == 0.5));
    assert!(gan.generate(&normal(&[2, 63], 18)).is_err());
    assert!(gan.score(&normal(&[2, 511], 18), BatchNormMode::Eval).is_err());
}

#[test]
fn gan_loss_examples() {
    let mut tape = Tape::<f64>::new();
    let half = tape.constant(Tensor::full(&[4, 1], 0.5));
    let (d, g) = gan_losses(&mut tape, half, half).unwrap();
    assert!((tape.value(d).item().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!((tape.value(g).item().unwrap() - 2f64.ln()).abs() < 1e-12);

    let one = tape.constant(Tensor::ones(&[4, 1]));
    let zero = tape.constant(Tensor::zeros(&[4, 1]));
    let (d, _) = gan_losses(&mut tape, one, zero).unwrap();
    assert!(tape.value(d).item().unwrap() < 1e-6);

    let real = uniform(&[7, 1], 19);
    let fake = uniform(&[7, 1], 20);
    let (rv, fv) = (tape.constant(real.clone()), tape.constant(fake.clone()));
    let (d, g) = gan_losses(&mut tape, rv, fv).unwrap();
    let n = 7.0;
    let bd = -real.data().iter().map(|r| r.ln()).sum::<f64>() / n - fake.data().iter().map(|f| (1.0 - f).ln()).sum::<f64>() / n;
    let bg = -fake.data().iter().map(|f| f.ln()).sum::<f64>() / n;
    assert!((tape.value(d).item().unwrap() - bd).abs() < 1e-6);
    assert!((tape.value(g).item().unwrap() - bg).abs() < 1e-6);
}

fn tolerance() -> f64 {
    1e-4
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let dec = Decoder::<f64>::new(tiny_decoder(), &mut rng(21)).unwrap();
    let w = normal(&[3, 12], 22);
    let target = uniform(&[3, 1, 4, 4], 23);
    let report = check_gradients(dec.params.values(), GradCheckOptions::default(), |tape, vars| {
        let mut m = dec.clone();
        let x = tape.constant(w.clone());
        let t = tape.constant(target.clone());
        let y = m.forward(tape, vars, x, BatchNormMode::Train)?;
        decoder_loss(tape, y, t)
    })
    .unwrap();
    assert!(report.max_rel_error < tolerance(), "{report:?}");
}

#[test]
fn vae_gradients_match_finite_differences() {
    let vae = VaeModel::<f64>::new(VaeConfig { input: 12, latent: 4, beta: 0.5 }, &mut rng(24)).unwrap();
    let x = normal(&[5, 12], 25);
    let eps = normal(&[5, 4], 26);
    let report = check_gradients(vae.params.values(), GradCheckOptions::default(), |tape, vars| {
        let xv = tape.constant(x.clone());
        let ev = tape.constant(eps.clone());
        let out = vae.forward(tape, vars, xv, ev)?;
        Ok(vae_loss(tape, xv, out.reconstruction, out.mu, out.log_var, 0.5)?.total)
    })
    .unwrap();
    assert!(report.max_rel_error < tolerance(), "{report:?}");

    // The reparameterized path alone carries gradient into the encoder.
    let mut tape = Tape::new();
    let vars = vae.params.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let ev = tape.constant(eps.clone());
    let out = vae.forward(&mut tape, &vars, xv, ev).unwrap();
    let l = vae_loss(&mut tape, xv, out.reconstruction, out.mu, out.log_var, 0.0).unwrap();
    let grads = tape.backward(l.total).unwrap();
    let enc1 = vae.params.names().iter().position(|n| n == "enc1.weight").unwrap();
    assert!(grads.get_or_zeros(vars[enc1]).data().iter().any(|&g| g != 0.0));
}

#[test]
fn gan_gradients_match_finite_differences() {
    let gan = GanModel::<f64>::new(GanConfig { data: 12, noise: 4, output: GeneratorOutput::Linear }, &mut rng(27)).unwrap();
    let z = normal(&[6, 4], 28);
    let real = normal(&[6, 12], 29);
    let ng = gan.generator.len();
    let mut params = gan.generator.values().to_vec();
    params.extend_from_slice(gan.discriminator.values());
    for loss_g in [false, true] {
        let report = check_gradients(&params, GradCheckOptions { per_tensor: 40, ..Default::default() }, |tape, vars| {
            let (gv, dv) = vars.split_at(ng);
            let mut gs = gan.generator_stats.clone();
            let mut ds = gan.discriminator_stats.clone();
            let zv = tape.constant(z.clone());
            let fake = gan.generator_forward(tape, gv, zv, &mut gs, BatchNormMode::Train)?;
            let rv = tape.constant(real.clone());
            let d_real = gan.discriminator_forward(tape, dv, rv, &mut ds, BatchNormMode::Train)?;
            let d_fake = gan.discriminator_forward(tape, dv, fake, &mut ds, BatchNormMode::Train)?;
            let (d, g) = gan_losses(tape, d_real, d_fake)?;
            Ok(if loss_g { g } else { d })
        })
        .unwrap();
        assert!(report.max_rel_error < tolerance(), "generator loss {loss_g}: {report:?}");
    }
}

fn blob_images(n: usize, side: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut r = rng(seed);
    let pos = Uniform::new(2.0, side as f64 - 2.0).unwrap();
    let mut codes = Vec::new();
    let mut pixels = Vec::new();
    for _ in 0..n {
        let (cy, cx) = (pos.sample(&mut r), pos.sample(&mut r));
        for y in 0..side {
            for x in 0..side {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                pixels.push((-d2 / 4.0).exp() as f32);
            }
        }
        let mut code = vec![(cy / side as f64 - 0.5) as f32 * 4.0, (cx / side as f64 - 0.5) as f32 * 4.0];
        code.extend((0..10).map(|_| StandardNormal.sample(&mut r)).map(|v: f64| v as f32 * 0.1));
        codes.extend(code);
    }
    (Tensor::new(&[n, 12], codes).unwrap(), Tensor::new(&[n, 1, side, side], pixels).unwrap())
}

#[test]
fn decoder_overfits_small_set() {
    let cfg = DecoderConfig { n_components: 12, base_spatial: 4, channel_schedule: vec![64, 32], kernel_size: 3, out_channels: 1 };
    let (w, images) = blob_images(64, 8, 30);
    let mut trainer = DecoderTrainer::new(Decoder::<f32>::new(cfg, &mut rng(31)).unwrap(), TrainConfig { batch_size: 16, ..TrainConfig::default() });
    let initial = trainer.evaluate(&w, &images, BatchNormMode::Train).unwrap();
    for epoch in 0..20 {
        trainer.train_epoch(&w, &images, epoch).unwrap();
    }
    let last = trainer.evaluate(&w, &images, BatchNormMode::Train).unwrap();
    assert!(last < 0.5 * initial, "{initial} -> {last}");
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = normal(&[40, 12], 32).cast::<f32>();
    let vae = VaeModel::<f32>::new(VaeConfig { input: 12, latent: 4, beta: 0.1 }, &mut rng(33)).unwrap();
    let mut t = VaeTrainer::new(vae.clone(), TrainConfig { batch_size: 8, ..TrainConfig::with_lr(0.0) });
    let m = t.train_epoch(&data, 1).unwrap();
    assert_eq!(t.model.params, vae.params);
    assert!(m.values.iter().all(|(_, v)| v.is_finite()));

    let gan = GanModel::<f32>::new(GanConfig { data: 12, noise: 4, output: GeneratorOutput::Linear }, &mut rng(34)).unwrap();
    let mut t = GanTrainer::new(gan.clone(), TrainConfig { batch_size: 8, ..TrainConfig::with_lr(0.0) });
    let m = t.train_epoch(&data, 1).unwrap();
    assert_eq!(t.model.generator, gan.generator);
    assert_eq!(t.model.discriminator, gan.discriminator);
    assert!(m.values.iter().all(|(_, v)| v.is_finite()));
}

#[test]
fn training_is_deterministic() {
    let data = normal(&[50, 12], 35).cast::<f32>();
    let run_vae = || {
        let vae = VaeModel::<f32>::new(VaeConfig { input: 12, latent: 4, beta: 0.1 }, &mut rng(36)).unwrap();
        let mut t = VaeTrainer::new(vae, TrainConfig { batch_size: 16, ..TrainConfig::default() });
        let m = t.train_epoch(&data, 9).unwrap();
        (m, t.model.params)
    };
    assert_eq!(run_vae(), run_vae());
    let run_gan = || {
        let gan = GanModel::<f32>::new(GanConfig { data: 12, noise: 4, output: GeneratorOutput::Linear }, &mut rng(37)).unwrap();
        let mut t = GanTrainer::new(gan, TrainConfig { batch_size: 16, ..TrainConfig::gan() });
        let m = t.train_epoch(&data, 9).unwrap();
        (m, t.model)
    };
    assert_eq!(run_gan(), run_gan());
    let (w, images) = blob_images(20, 8, 38);
    let cfg = DecoderConfig { n_components: 12, base_spatial: 4, channel_schedule: vec![64, 32], kernel_size: 3, out_channels: 1 };
    let run_dec = || {
        let mut t = DecoderTrainer::new(Decoder::<f32>::new(cfg.clone(), &mut rng(39)).unwrap(), TrainConfig { batch_size: 8, ..TrainConfig::default() });
        let m = t.train_epoch(&w, &images, 4).unwrap();
        (m, t.model)
    };
    assert_eq!(run_dec(), run_dec());
}

#[test]
fn training_rejects_bad_data() {
    let vae = VaeModel::<f32>::new(VaeConfig { input: 12, latent: 4, beta: 0.1 }, &mut rng(40)).unwrap();
    let mut t = VaeTrainer::new(vae, TrainConfig::default());
    assert!(t.train_epoch(&Tensor::zeros(&[10, 12]), 0).is_err());
    assert!(t.train_epoch(&Tensor::zeros(&[200, 11]), 0).is_err());
}

proptest! {
    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-5.0f64..5.0, 8), lv in prop::collection::vec(-6.0f64..4.0, 8)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let m = tape.constant(Tensor::new(&[2, 4], mu).unwrap());
        let l = tape.constant(Tensor::new(&[2, 4], lv).unwrap());
        let loss = vae_loss(&mut tape, x, x, m, l, 1.0).unwrap();
        prop_assert!(tape.value(loss.kl).item().unwrap() >= -1e-9);
    }

    #[test]
    fn model_outputs_stay_in_range(seed in 0u64..500) {
        let gan = GanModel::<f64>::new(GanConfig { data: 12, noise: 4, output: GeneratorOutput::Linear }, &mut rng(seed)).unwrap();
        let x = normal(&[3, 12], seed + 1);
        let s = gan.score(&Tensor::from_fn(&[3, 12], |i| x.data()[i] * 50.0), BatchNormMode::Eval).unwrap();
        prop_assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let g = gan.generate(&normal(&[3, 4], seed + 2)).unwrap();
        prop_assert_eq!(g.shape(), &[3, 12]);
        let dec = Decoder::<f64>::new(tiny_decoder(), &mut rng(seed)).unwrap();
        let y = dec.decode(&normal(&[2, 12], seed + 3), 2).unwrap();
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
