use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

fn cosine(t: usize) -> NoiseSchedule {
    NoiseSchedule::new(ScheduleKind::Cosine, t).unwrap()
}

/// ε̂ = c·x_t.
struct LinearNoise(f64);

impl<F: Scalar> Denoiser<F> for LinearNoise {
    fn predict_noise(&self, x_t: &Tensor<F>, _t: usize) -> Result<Tensor<F>> {
        let c = F::from_f64(self.0);
        Tensor::new(x_t.shape().to_vec(), x_t.data().iter().map(|&v| c * v).collect())
    }
}

/// Exact noise for a single known clean sample.
struct PerfectOracle<'a> {
    x0: Vec<f64>,
    sched: &'a NoiseSchedule,
}

impl Denoiser<f64> for PerfectOracle<'_> {
    fn predict_noise(&self, x_t: &Tensor<f64>, t: usize) -> Result<Tensor<f64>> {
        let ab = self.sched.alpha_bar(t)?;
        let data = x_t
            .data()
            .iter()
            .zip(self.x0.iter().cycle())
            .map(|(&x, &x0)| (x - ab.sqrt() * x0) / (1.0 - ab).sqrt())
            .collect();
        Tensor::new(x_t.shape().to_vec(), data)
    }
}

struct Counting<D> {
    inner: D,
    calls: Cell<usize>,
}

impl<F: Scalar, D: Denoiser<F>> Denoiser<F> for Counting<D> {
    fn predict_noise(&self, x_t: &Tensor<F>, t: usize) -> Result<Tensor<F>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict_noise(x_t, t)
    }
}

#[test]
fn q_sample_degenerate_inputs() {
    let s = cosine(100);
    let x0 = [0.3, -0.7, 1.2];
    let zero = [0.0; 3];
    let eps = [1.5, 0.2, -0.4];
    let t = 37;
    let ab: f64 = s.alpha_bar(t).unwrap();
    let a = q_sample(&x0, t, &zero, &s).unwrap();
    assert_eq!(a, x0.iter().map(|v| ab.sqrt() * v).collect::<Vec<_>>());
    let b = q_sample(&zero, t, &eps, &s).unwrap();
    assert_eq!(b, eps.iter().map(|v| (1.0 - ab).sqrt() * v).collect::<Vec<_>>());
    assert!(matches!(
        q_sample(&x0, 0, &eps, &s),
        Err(Error::TimestepOutOfRange { .. })
    ));
    assert!(matches!(
        q_sample(&x0, 101, &eps, &s),
        Err(Error::TimestepOutOfRange { .. })
    ));
}

#[test]
fn q_sample_monte_carlo_marginal() {
    let s = cosine(100);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    for &(t, x0) in &[(10usize, 0.8f64), (60, -0.5)] {
        let eps: Vec<f64> = standard_normal(n, &mut rng);
        let x0s = vec![x0; n];
        let xs = q_sample(&x0s, t, &eps, &s).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ab = s.alpha_bar(t).unwrap();
        let (mu, sig2) = (ab.sqrt() * x0, 1.0 - ab);
        let se_mean = (sig2 / n as f64).sqrt();
        let se_var = sig2 * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * se_mean, "t={t} mean {mean} vs {mu}");
        assert!((var - sig2).abs() < 3.0 * se_var, "t={t} var {var} vs {sig2}");
    }
}

#[test]
fn ddpm_zero_noise_final_step() {
    let s = cosine(100);
    let x1 = [0.4, -1.1];
    let x0 = ddpm_step_with_noise(&x1, &[0.0, 0.0], 1, &s, &[9.0, 9.0]).unwrap();
    let a1: f64 = s.alpha(1).unwrap();
    assert_eq!(x0, vec![x1[0] / a1.sqrt(), x1[1] / a1.sqrt()]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(ddpm_step(&x1, &[0.0, 0.0], 1, &s, &mut rng).unwrap(), x0);
}

#[test]
fn ddpm_identity_when_alpha_is_one() {
    let s = NoiseSchedule::from_betas(vec![0.1, 0.0]).unwrap();
    let x = [0.25, -3.0];
    let out = ddpm_step_with_noise(&x, &[0.7, 0.1], 2, &s, &[0.0, 0.0]).unwrap();
    assert_eq!(out, x.to_vec());
}

#[test]
fn ddpm_linear_oracle_matches_closed_form() {
    let betas: Vec<f64> = (0..10).map(|i| 0.02 + 0.05 * i as f64).collect();
    let s = NoiseSchedule::from_betas(betas.clone()).unwrap();
    let c = 0.3;
    // Independent scalar recursion from the raw betas.
    let mut ab = Vec::new();
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        ab.push(acc);
    }
    let mut factor = 1.0;
    for t in (1..=10).rev() {
        let alpha = 1.0 - betas[t - 1];
        factor *= (1.0 - c * (1.0 - alpha) / (1.0 - ab[t - 1]).sqrt()) / alpha.sqrt();
    }
    let x_init = [1.0, -0.5, 2.0];
    let mut x = x_init.to_vec();
    for t in (1..=10).rev() {
        let eps = LinearNoise(c)
            .predict_noise(&Tensor::new(vec![3], x.clone()).unwrap(), t)
            .unwrap();
        x = ddpm_step_with_noise(&x, eps.data(), t, &s, &[0.0; 3]).unwrap();
    }
    for (got, x0) in x.iter().zip(x_init) {
        let expect = factor * x0;
        assert!(
            (got - expect).abs() <= 1e-5 * expect.abs().max(1.0),
            "{got} vs {expect}"
        );
    }
}

fn ddim_closed_form(s: &NoiseSchedule, pairs: &[(usize, usize)], c: f64) -> f64 {
    pairs.iter().fold(1.0, |f, &(t, tp)| {
        let ab = s.alpha_bars()[t - 1];
        let abp = if tp == 0 { 1.0 } else { s.alpha_bars()[tp - 1] };
        f * (abp.sqrt() * (1.0 - (1.0 - ab).sqrt() * c) / ab.sqrt() + (1.0 - abp).sqrt() * c)
    })
}

#[test]
fn ddim_linear_oracle_matches_closed_form() {
    let s = cosine(100);
    let c = 0.2;
    let stride20 = make_subsequence(100, 5).unwrap();
    assert_eq!(stride20, vec![(100, 80), (80, 60), (60, 40), (40, 20), (20, 0)]);
    for pairs in [stride20, make_subsequence(100, 60).unwrap()] {
        let factor = ddim_closed_form(&s, &pairs, c);
        let x_init = [0.9, -1.3];
        let mut x = x_init.to_vec();
        for &(t, tp) in &pairs {
            let eps: Vec<f64> = x.iter().map(|v| c * v).collect();
            x = ddim_step(&x, &eps, t, tp, &s).unwrap();
        }
        for (got, x0) in x.iter().zip(x_init) {
            let expect = factor * x0;
            assert!(
                (got - expect).abs() <= 1e-5 * expect.abs().max(1.0),
                "{got} vs {expect}"
            );
        }
    }
}

#[test]
fn ddim_inverts_q_sample_with_true_noise() {
    let s = cosine(100);
    let x0 = [0.5f64, -0.25, 0.75];
    let eps = [1.0, -2.0, 0.3];
    for t in [1, 30, 99] {
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        let back = ddim_step(&xt, &eps, t, 0, &s).unwrap();
        for (a, b) in back.iter().zip(x0) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn ddim_degenerate_and_order_checks() {
    let s = NoiseSchedule::from_betas(vec![0.1, 0.0]).unwrap();
    let x = [0.3f64, 0.6];
    let out = ddim_step(&x, &[0.2, -0.2], 2, 1, &s).unwrap();
    for (a, b) in out.iter().zip(x) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(ddim_step(&x, &x, 1, 1, &s).is_err());
    assert!(ddim_step(&x, &x, 1, 2, &s).is_err());
}

#[test]
fn subsequences() {
    let id = make_subsequence(100, 100).unwrap();
    assert_eq!(id, (1..=100).rev().map(|t| (t, t - 1)).collect::<Vec<_>>());
    let s60 = make_subsequence(100, 60).unwrap();
    assert_eq!(s60.len(), 60);
    assert_eq!(s60[0].0, 100);
    assert_eq!(s60.last().unwrap().1, 0);
    for w in s60.windows(2) {
        assert_eq!(w[0].1, w[1].0);
        assert!(w[0].0 > w[1].0);
    }
    assert_eq!(make_subsequence(10, 2).unwrap(), vec![(10, 5), (5, 0)]);
    assert!(make_subsequence(10, 0).is_err());
    assert!(make_subsequence(10, 11).is_err());
}

#[test]
fn ddim_self_consistent_under_perfect_oracle() {
    let s = cosine(100);
    let x0 = vec![0.4, -0.9];
    let oracle = PerfectOracle {
        x0: x0.clone(),
        sched: &s,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x: Vec<f64> = standard_normal(2, &mut rng);
    for (t, tp) in make_subsequence(100, 100).unwrap() {
        let xt = Tensor::new(vec![1, 1, 2], x.clone()).unwrap();
        let eps = oracle.predict_noise(&xt, t).unwrap();
        let ab: f64 = s.alpha_bar(t).unwrap();
        for ((xv, ev), target) in x.iter().zip(eps.data()).zip(&x0) {
            let pred = (xv - (1.0 - ab).sqrt() * ev) / ab.sqrt();
            assert!((pred - target).abs() < 1e-9, "t={t}");
        }
        x = ddim_step(&x, eps.data(), t, tp, &s).unwrap();
    }
    for (a, b) in x.iter().zip(&x0) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn sampler_eval_counts_and_determinism() {
    let s = cosine(100);
    for (config, expect) in [(DiffusionConfig::ddim(100, 60), 60), (DiffusionConfig::ddpm(100), 100)] {
        let model = Counting {
            inner: LinearNoise(0.1),
            calls: Cell::new(0),
        };
        let run = |model: &Counting<LinearNoise>| {
            let mut rngs: Vec<ChaCha8Rng> = (0..3).map(ChaCha8Rng::seed_from_u64).collect();
            sample::<f32, _, _>(model, &[3, 4, 2], &config, &s, &mut rngs).unwrap()
        };
        let a = run(&model);
        assert_eq!(a.network_evals, expect);
        assert_eq!(model.calls.get(), expect);
        let b = run(&model);
        assert_eq!(a.trajectory, b.trajectory);
    }
}

#[test]
fn sampler_is_batch_composition_independent() {
    let s = cosine(20);
    let config = DiffusionConfig::ddpm(20);
    let mut both: Vec<ChaCha8Rng> = (0..2).map(ChaCha8Rng::seed_from_u64).collect();
    let joint = sample::<f64, _, _>(&LinearNoise(0.2), &[2, 3, 2], &config, &s, &mut both).unwrap();
    let mut second = vec![ChaCha8Rng::seed_from_u64(1)];
    let alone = sample::<f64, _, _>(&LinearNoise(0.2), &[1, 3, 2], &config, &s, &mut second).unwrap();
    assert_eq!(&joint.trajectory.data()[6..], alone.trajectory.data());
}

struct NanAt(usize);

impl Denoiser<f32> for NanAt {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: usize) -> Result<Tensor<f32>> {
        let v = if t == self.0 { f32::NAN } else { 0.0 };
        Ok(Tensor::full(x_t.shape(), v))
    }
}

#[test]
fn sampler_reports_nan_step() {
    let s = cosine(10);
    let mut rngs = vec![ChaCha8Rng::seed_from_u64(0)];
    let err = sample(&NanAt(7), &[1, 2, 2], &DiffusionConfig::ddpm(10), &s, &mut rngs).unwrap_err();
    assert!(matches!(err, Error::DenoiseNonFinite { step: 3, t: 7 }), "{err:?}");
}

/// Returns the exact injected noise, recovered from the clean actions.
struct NoiseOracle<'a> {
    clean: Tensor<f64>,
    sched: &'a NoiseSchedule,
}

impl NoisePredictor for NoiseOracle<'_> {
    fn predict<F: Scalar>(&self, g: &mut Graph<'_, F>, x_t: Var, _obs: Var, t: &[usize]) -> Result<Var> {
        let xt = g.value(x_t).clone();
        let per = xt.len() / t.len();
        let mut out = Vec::with_capacity(xt.len());
        for (b, &tb) in t.iter().enumerate() {
            let ab = self.sched.alpha_bar(tb)?;
            for j in 0..per {
                let x = xt.data()[b * per + j].as_f64();
                let a = self.clean.data()[b * per + j];
                out.push(F::from_f64((x - ab.sqrt() * a) / (1.0 - ab).sqrt()));
            }
        }
        Ok(g.constant(Tensor::new(xt.shape().to_vec(), out)?))
    }
}

struct Zero;

impl NoisePredictor for Zero {
    fn predict<F: Scalar>(&self, g: &mut Graph<'_, F>, x_t: Var, _obs: Var, _t: &[usize]) -> Result<Var> {
        let shape = g.shape(x_t).to_vec();
        Ok(g.constant(Tensor::zeros(&shape)))
    }
}

#[test]
fn loss_of_oracle_and_zero_models() {
    let s = cosine(100);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let actions = Tensor::<f64>::from_fn(&[512, 16, 2], |i| ((i * 37 % 101) as f64 / 50.0) - 1.0);
    let obs = Tensor::<f64>::zeros(&[512, 2, 2]);
    let oracle = NoiseOracle {
        clean: actions.clone(),
        sched: &s,
    };
    let mut g = Graph::<f64>::detached();
    let l = training_loss(&mut g, &oracle, &s, &obs, &actions, &mut rng).unwrap();
    // t = T has ᾱ ≈ 0, so recovering ε divides by ~1; roundoff stays tiny.
    assert!(g.value(l).item() < 1e-20);
    let mut g = Graph::<f64>::detached();
    let l = training_loss(&mut g, &Zero, &s, &obs, &actions, &mut rng).unwrap();
    assert!((g.value(l).item() - 1.0).abs() < 0.03);
    let empty = Tensor::<f64>::zeros(&[0, 16, 2]);
    let mut g = Graph::<f64>::detached();
    assert!(matches!(
        training_loss(&mut g, &Zero, &s, &Tensor::zeros(&[0, 2, 2]), &empty, &mut rng),
        Err(Error::Empty(_))
    ));
}

#[test]
fn empirical_denoiser_recovers_its_data() {
    let s = cosine(100);
    let a = vec![0.5, -0.25, 0.75, 0.0];
    let b = vec![-0.5, 0.25, -0.75, 0.0];
    let single = EmpiricalDenoiser::new(vec![a.clone()], s.clone()).unwrap();
    let mut rngs: Vec<ChaCha8Rng> = (0..3).map(ChaCha8Rng::seed_from_u64).collect();
    let out = sample::<f64, _, _>(&single, &[3, 2, 2], &DiffusionConfig::ddim(100, 20), &s, &mut rngs).unwrap();
    for row in out.trajectory.data().chunks(4) {
        for (x, y) in row.iter().zip(&a) {
            assert!((x - y).abs() < 1e-9);
        }
    }
    let pair = EmpiricalDenoiser::new(vec![a.clone(), b.clone()], s.clone()).unwrap();
    let mut rngs: Vec<ChaCha8Rng> = (0..40).map(ChaCha8Rng::seed_from_u64).collect();
    let out = sample::<f64, _, _>(&pair, &[40, 2, 2], &DiffusionConfig::ddpm(100), &s, &mut rngs).unwrap();
    let mut hits = [0usize; 2];
    for row in out.trajectory.data().chunks(4) {
        let near = |c: &[f64]| row.iter().zip(c).all(|(x, y)| (x - y).abs() < 0.05);
        match (near(&a), near(&b)) {
            (true, false) => hits[0] += 1,
            (false, true) => hits[1] += 1,
            _ => panic!("sample {row:?} is near neither trajectory"),
        }
    }
    assert!(hits[0] > 5 && hits[1] > 5, "{hits:?}");
    assert!(EmpiricalDenoiser::new(vec![], s.clone()).is_err());
    assert!(EmpiricalDenoiser::new(vec![a, vec![0.0]], s).is_err());
}
