use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{grad_check, GradCheckConfig, Graph, ParamStore, Tensor, Var};
use crate::error::Error;
use crate::nn::{init_tensor, Init};

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    init_tensor(shape, 1, Init::Normal(1.0), rng)
}

/// Replaces the zero-initialised modulation weights with random values so
/// every parameter receives gradient.
fn randomize_modulation(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store
        .ids()
        .filter(|&id| store.get(id).name.contains("modulation"))
        .collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        *store.value_mut(id) = init_tensor(&shape, 1, Init::Normal(0.3), rng);
    }
}

fn eye(d: usize) -> Tensor<f64> {
    Tensor::from_fn(&[d, d], |i| if i / d == i % d { 1.0 } else { 0.0 })
}

#[test]
fn single_token_identity_attention_returns_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "a", 4, 1).unwrap();
    for lin in [&mha.q_proj, &mha.k_proj, &mha.v_proj, &mha.out_proj] {
        *store.value_mut(lin.weight) = eye(4);
        *store.value_mut(lin.bias) = Tensor::zeros(&[4]);
    }
    let x = Tensor::new(vec![1, 1, 4], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let y = mha.forward(&mut g, xv, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn uniform_keys_give_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "a", 8, 2).unwrap();
    let q = randn(&[1, 3, 8], &mut rng);
    let row = randn(&[1, 1, 8], &mut rng);
    let keys = Tensor::from_fn(&[1, 5, 8], |i| row.data()[i % 8]);
    let mut g = Graph::new(&store);
    let qv = g.constant(q);
    let kv = g.constant(keys);
    let w = mha.weights(&mut g, qv, kv).unwrap();
    for &p in g.value(w).data() {
        assert!((p - 0.2).abs() < 1e-12);
    }
}

#[test]
fn indivisible_heads_is_config_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f32>::new();
    assert!(matches!(
        MultiHeadAttention::new(&mut store, &mut rng, "a", 10, 3),
        Err(Error::Config(_))
    ));
}

fn check_grads(
    mut store: ParamStore<f64>,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Graph<'_, f64>) -> crate::Result<Var>,
) {
    let report = grad_check(&mut store, f, &GradCheckConfig::default(), rng).unwrap();
    assert!(report.coords_checked >= 100);
    assert!(report.passed(), "worst: {:?}", report.worst());
}

fn probe_loss(g: &mut Graph<'_, f64>, y: Var, probe: &Tensor<f64>) -> crate::Result<Var> {
    let p = g.constant(probe.clone());
    let m = g.mul(y, p)?;
    Ok(g.sum_all(m))
}

#[test]
fn mha_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "a", 16, 2).unwrap();
    let q = randn(&[2, 3, 16], &mut rng);
    let kv = randn(&[2, 4, 16], &mut rng);
    let probe = randn(&[2, 3, 16], &mut rng);
    check_grads(store, &mut rng, |g| {
        let qv = g.constant(q.clone());
        let kvv = g.constant(kv.clone());
        let y = mha.forward(g, qv, kvv)?;
        probe_loss(g, y, &probe)
    });
}

#[test]
fn encoder_block_shape_determinism_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let block = EncoderBlock::new(&mut store, &mut rng, "enc", 16, 2, 2).unwrap();
    let x = randn(&[2, 3, 16], &mut rng);
    let run = |store: &ParamStore<f64>| {
        let mut g = Graph::new(store);
        let xv = g.constant(x.clone());
        let y = block.forward(&mut g, xv).unwrap();
        g.value(y).clone()
    };
    let y = run(&store);
    assert_eq!(y.shape(), x.shape());
    assert_eq!(y, run(&store));
    let probe = randn(&[2, 3, 16], &mut rng);
    check_grads(store, &mut rng, |g| {
        let xv = g.constant(x.clone());
        let y = block.forward(g, xv)?;
        probe_loss(g, y, &probe)
    });
}

#[test]
fn pool_condition_is_token_mean() {
    let mut g = Graph::<f64>::detached();
    let one = g.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let p = pool_condition(&mut g, one).unwrap();
    assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0]);
    let two = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
    let p = pool_condition(&mut g, two).unwrap();
    assert_eq!(g.value(p).data(), &[2.0, 4.0]);
    let swapped = g.constant(Tensor::new(vec![1, 2, 2], vec![3.0, 6.0, 1.0, 2.0]).unwrap());
    let q = pool_condition(&mut g, swapped).unwrap();
    assert_eq!(g.value(q).data(), g.value(p).data());
    let empty = g.constant(Tensor::zeros(&[1, 0, 2]));
    assert!(matches!(pool_condition(&mut g, empty), Err(Error::Empty(_))));
}

#[test]
fn modulate_and_gate_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = randn(&[2, 3, 4], &mut rng);
    let other = randn(&[2, 3, 4], &mut rng);
    let mut g = Graph::<f64>::detached();
    let xv = g.constant(x.clone());
    let zero = g.constant(Tensor::zeros(&[2, 1, 4]));
    let m = modulate(&mut g, xv, zero, zero).unwrap();
    assert_eq!(g.value(m), &x);
    let ov = g.constant(other);
    let r = gate_residual(&mut g, xv, ov, zero).unwrap();
    assert_eq!(g.value(r), &x);
    let one = g.constant(Tensor::full(&[2, 1, 4], 1.0));
    let neg = g.scale(xv, -1.0);
    let z = gate_residual(&mut g, xv, neg, one).unwrap();
    assert!(g.value(z).data().iter().all(|&v| v == 0.0));
}

struct Fixture {
    store: ParamStore<f64>,
    block: DecoderBlock,
    x: Tensor<f64>,
    enc: Tensor<f64>,
}

fn fixture(variant: BlockVariant, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let block = DecoderBlock::new(&mut store, &mut rng, "dec.0", variant, 16, 16, 2, 2).unwrap();
    Fixture {
        store,
        block,
        x: randn(&[2, 3, 16], &mut rng),
        enc: randn(&[2, 3, 16], &mut rng),
    }
}

fn run_block(f: &Fixture, store: &ParamStore<f64>, enc: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new(store);
    let x = g.constant(f.x.clone());
    let e = g.constant(enc.clone());
    let c = pool_condition(&mut g, e).unwrap();
    let y = f.block.forward(&mut g, x, Some(e), c).unwrap();
    g.value(y).clone()
}

#[test]
fn zero_init_m_self_attention_is_cross_sublayer_only() {
    let f = fixture(BlockVariant::MSelfAttention, 6);
    let y = run_block(&f, &f.store, &f.enc);
    let mut g = Graph::new(&f.store);
    let x = g.constant(f.x.clone());
    let e = g.constant(f.enc.clone());
    let expect = f.block.cross_sublayer(&mut g, x, e).unwrap();
    assert_eq!(&y, g.value(expect));
}

#[test]
fn zero_init_dit_self_attention_is_identity() {
    let f = fixture(BlockVariant::DitSelfAttention, 7);
    assert_eq!(run_block(&f, &f.store, &f.enc), f.x);
}

#[test]
fn zero_init_gated_variants_reduce_to_their_plain_parts() {
    // DIT-CrossAttention has only gated branches; M-CrossAttention keeps its plain self-attention.
    let f = fixture(BlockVariant::DitCrossAttention, 8);
    assert_eq!(run_block(&f, &f.store, &f.enc), f.x);
}

#[test]
fn every_variant_preserves_shape_and_is_encoder_permutation_invariant() {
    for (i, variant) in BlockVariant::ALL.into_iter().enumerate() {
        let mut f = fixture(variant, 20 + i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        randomize_modulation(&mut f.store, &mut rng);
        let y = run_block(&f, &f.store, &f.enc);
        assert_eq!(y.shape(), f.x.shape(), "{variant}");
        // reverse the encoder tokens of every batch row
        let d = 16;
        let permuted = Tensor::from_fn(&[2, 3, d], |i| {
            let (b, n, c) = (i / (3 * d), (i / d) % 3, i % d);
            f.enc.data()[b * 3 * d + (2 - n) * d + c]
        });
        let yp = run_block(&f, &f.store, &permuted);
        for (a, b) in y.data().iter().zip(yp.data()) {
            assert!((a - b).abs() < 1e-12, "{variant}");
        }
    }
}

#[test]
fn every_variant_gradients_match_finite_differences() {
    for (i, variant) in BlockVariant::ALL.into_iter().enumerate() {
        let mut f = fixture(variant, 40 + i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(41 + i as u64);
        randomize_modulation(&mut f.store, &mut rng);
        let probe = randn(&[2, 3, 16], &mut rng);
        let Fixture { store, block, x, enc } = f;
        check_grads(store, &mut rng, |g| {
            let xv = g.constant(x.clone());
            let e = g.constant(enc.clone());
            let c = pool_condition(g, e)?;
            let y = block.forward(g, xv, Some(e), c)?;
            probe_loss(g, y, &probe)
        });
    }
}

#[test]
fn variant_names_round_trip() {
    for v in BlockVariant::ALL {
        assert_eq!(v.name().parse::<BlockVariant>().unwrap(), v);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, format!("\"{}\"", v.name()));
    }
    assert!("bogus".parse::<BlockVariant>().is_err());
}
