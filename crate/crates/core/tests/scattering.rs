use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use scatgen::scattering::{
    enumerate_paths, flatten_coefficients, scatter, scatter_with, ConvolutionMethod, FilterBank, ScatteringConfig,
    ScatteringPath,
};
use scatgen::tensor::Tensor;

fn random_images(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[b, c, h, w], |_| rng.random::<f64>())
}

/// Smooth blob images resembling strokes, so that translation tests are not
/// dominated by white noise.
fn blob_images(b: usize, n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(b * n * n);
    for _ in 0..b {
        let centers: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| (rng.random_range(6.0..n as f64 - 6.0), rng.random_range(6.0..n as f64 - 6.0), rng.random_range(1.0..2.5)))
            .collect();
        for r in 0..n {
            for c in 0..n {
                let v: f64 = centers
                    .iter()
                    .map(|&(y, x, s)| (-((r as f64 - y).powi(2) + (c as f64 - x).powi(2)) / (2.0 * s * s)).exp())
                    .sum();
                data.push(v.min(1.0));
            }
        }
    }
    Tensor::new(&[b, 1, n, n], data).unwrap()
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn enumeration_matches_closed_form() {
    for j in 1..=4 {
        for l in 1..=8 {
            let cfg = ScatteringConfig { j, l, height: 16, width: 16, channels: 1 };
            let paths = enumerate_paths(&cfg);
            // brute force over all (j1, l1, j2, l2) with j2 > j1
            let mut brute = 1 + j * l;
            for j1 in 0..j {
                for j2 in 0..j {
                    if j2 > j1 {
                        brute += l * l;
                    }
                }
            }
            assert_eq!(paths.len(), brute);
            assert_eq!(paths.len(), cfg.path_count());
            assert_eq!(paths.len(), 1 + j * l + l * l * j * (j - 1) / 2);
            for p in &paths {
                if let ScatteringPath::Second { j1, j2, .. } = p {
                    assert!(j2 > j1);
                }
            }
            let mut sorted = paths.clone();
            sorted.sort_by_key(|p| match *p {
                ScatteringPath::Zeroth => (0, 0, 0, 0, 0),
                ScatteringPath::First { j1, l1 } => (1, j1, l1, 0, 0),
                ScatteringPath::Second { j1, l1, j2, l2 } => (2, j1, l1, j2, l2),
            });
            assert_eq!(sorted, paths);
        }
    }
}

#[test]
fn mnist_shaped_output() {
    let cfg = ScatteringConfig::mnist();
    let bank = FilterBank::build(&cfg).unwrap();
    let out = scatter(&random_images(1, 1, 28, 28, 1), &bank, &cfg).unwrap();
    assert_eq!(out.coefficients.shape(), &[1, 81, 7, 7]);
    let flat = flatten_coefficients(&out);
    assert_eq!(flat.shape(), &[1, 3969]);
    assert_eq!(flat.clone().reshape(&[1, 81, 7, 7]).unwrap(), out.coefficients);
}

#[test]
fn flatten_keeps_batch_order() {
    let cfg = ScatteringConfig::mnist();
    let bank = FilterBank::build(&cfg).unwrap();
    let imgs = random_images(2, 1, 28, 28, 2);
    let both = flatten_coefficients(&scatter(&imgs, &bank, &cfg).unwrap());
    for i in 0..2 {
        let single = flatten_coefficients(&scatter(&imgs.slice_rows(i, i + 1).unwrap(), &bank, &cfg).unwrap());
        assert_eq!(both.slice_rows(i, i + 1).unwrap().data(), single.data());
    }
}

#[test]
fn fourier_matches_direct_convolution() {
    let cfg = ScatteringConfig { j: 2, l: 4, height: 16, width: 12, channels: 3 };
    let bank = FilterBank::build(&cfg).unwrap();
    let imgs = random_images(2, 3, 16, 12, 3);
    let fast = scatter_with(&imgs, &bank, &cfg, ConvolutionMethod::Fourier).unwrap();
    let slow = scatter_with(&imgs, &bank, &cfg, ConvolutionMethod::Direct).unwrap();
    let worst = fast
        .coefficients
        .data()
        .iter()
        .zip(slow.coefficients.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "max deviation {worst}");
}

#[test]
fn rgb_channels_are_scattered_independently() {
    let cfg = ScatteringConfig { j: 1, l: 4, height: 8, width: 8, channels: 3 };
    let gray = ScatteringConfig { channels: 1, ..cfg };
    let bank = FilterBank::build(&cfg).unwrap();
    let imgs = random_images(1, 3, 8, 8, 4);
    let rgb = scatter(&imgs, &bank, &cfg).unwrap();
    let p = cfg.path_count() * 16;
    for c in 0..3 {
        let plane = Tensor::new(&[1, 1, 8, 8], imgs.data()[c * 64..(c + 1) * 64].to_vec()).unwrap();
        let single = scatter(&plane, &bank, &gray).unwrap();
        assert_eq!(&rgb.coefficients.data()[c * p..(c + 1) * p], single.coefficients.data());
    }
}

#[test]
fn constant_image() {
    let cfg = ScatteringConfig::mnist();
    let bank = FilterBank::build(&cfg).unwrap();
    let c = 0.7;
    let out = scatter(&Tensor::full(&[1, 1, 28, 28], c), &bank, &cfg).unwrap();
    let plane = 49;
    for (p, chunk) in out.coefficients.data().chunks(plane).enumerate() {
        for &v in chunk {
            if p == 0 {
                assert!((v - c).abs() < 1e-9);
            } else {
                assert!(v.abs() < 1e-4 * c, "path {p}: {v}");
            }
        }
    }
}

#[test]
fn order0_mean_equals_image_mean() {
    let cfg = ScatteringConfig::mnist();
    let bank = FilterBank::build(&cfg).unwrap();
    let imgs = blob_images(5, 28, 5);
    let out = scatter(&imgs, &bank, &cfg).unwrap();
    for b in 0..5 {
        let img_mean = imgs.data()[b * 784..(b + 1) * 784].iter().sum::<f64>() / 784.0;
        let s0 = &out.coefficients.data()[b * 81 * 49..b * 81 * 49 + 49];
        let s0_mean = s0.iter().sum::<f64>() / 49.0;
        assert!((img_mean - s0_mean).abs() < 1e-3, "{img_mean} vs {s0_mean}");
    }
}

#[test]
fn higher_orders_are_nonnegative() {
    let cfg = ScatteringConfig::mnist();
    let bank = FilterBank::build(&cfg).unwrap();
    let out = scatter(&random_images(3, 1, 28, 28, 6), &bank, &cfg).unwrap();
    assert!(out.coefficients.data().iter().all(|v| v.is_finite() && *v >= -1e-6));
}

#[test]
fn cyclic_shift_changes_coefficients_less_than_pixels() {
    let cfg = ScatteringConfig::mnist();
    let bank = FilterBank::build(&cfg).unwrap();
    let imgs = blob_images(50, 28, 7);
    let shifted = Tensor::from_fn(&[50, 1, 28, 28], |i| {
        let (b, r, c) = (i / 784, (i % 784) / 28, i % 28);
        imgs.data()[b * 784 + r * 28 + (c + 27) % 28]
    });
    let s = flatten_coefficients(&scatter(&imgs, &bank, &cfg).unwrap());
    let t = flatten_coefficients(&scatter(&shifted, &bank, &cfg).unwrap());
    let (mut coeff, mut pix) = (0.0, 0.0);
    for b in 0..50 {
        let (x, y) = (&imgs.data()[b * 784..(b + 1) * 784], &shifted.data()[b * 784..(b + 1) * 784]);
        pix += l2_diff(x, y) / l2(x);
        let (sx, sy) = (&s.data()[b * 3969..(b + 1) * 3969], &t.data()[b * 3969..(b + 1) * 3969]);
        coeff += l2_diff(sx, sy) / l2(sx);
    }
    assert!(coeff < pix, "scattering change {coeff} vs pixel change {pix}");
}

#[test]
fn scattering_is_non_expansive() {
    let cfg = ScatteringConfig::mnist();
    let bank = FilterBank::build(&cfg).unwrap();
    let a = random_images(20, 1, 28, 28, 8);
    let b = random_images(20, 1, 28, 28, 9);
    let sa = flatten_coefficients(&scatter(&a, &bank, &cfg).unwrap());
    let sb = flatten_coefficients(&scatter(&b, &bank, &cfg).unwrap());
    for i in 0..20 {
        let dx = l2_diff(&a.data()[i * 784..(i + 1) * 784], &b.data()[i * 784..(i + 1) * 784]);
        let ds = l2_diff(&sa.data()[i * 3969..(i + 1) * 3969], &sb.data()[i * 3969..(i + 1) * 3969]);
        assert!(ds <= 1.5 * dx, "pair {i}: {ds} > 1.5·{dx}");
    }
}

/// Samples `f` at `R_{-θ} u` using its band-limited (trigonometric)
/// interpolant on the periodic `n × n` grid, evaluated by brute-force sums.
fn rotate(f: &[Complex64], n: usize, theta: f64) -> Vec<Complex64> {
    use std::f64::consts::PI;
    let freq = |k: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    let centered = |i: usize| if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
    // DFT coefficients by direct summation
    let mut coef = vec![Complex64::new(0.0, 0.0); n * n];
    for k in 0..n {
        for l in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let phase = -2.0 * PI * (k * i + l * j) as f64 / n as f64;
                    acc += f[i * n + j] * Complex64::from_polar(1.0, phase);
                }
            }
            coef[k * n + l] = acc / (n * n) as f64;
        }
    }
    let (c, s) = (theta.cos(), theta.sin());
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let (x, y) = (centered(i), centered(j));
            let (xr, yr) = (c * x + s * y, -s * x + c * y);
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                for l in 0..n {
                    let phase = 2.0 * PI * (freq(k) * xr + freq(l) * yr) / n as f64;
                    acc += coef[k * n + l] * Complex64::from_polar(1.0, phase);
                }
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[test]
fn orientations_are_rotations_of_each_other() {
    let n = 32;
    let cfg = ScatteringConfig { j: 2, l: 8, height: n, width: n, channels: 1 };
    let bank = FilterBank::build(&cfg).unwrap();
    assert_eq!(bank.psi_count(), 16);
    let rotated = rotate(bank.psi(1, 0), n, std::f64::consts::PI / 8.0);
    let target = bank.psi(1, 1);
    let err: f64 = rotated.iter().zip(target).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let norm: f64 = target.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    assert!(err / norm < 0.05, "relative L2 error {}", err / norm);
}
