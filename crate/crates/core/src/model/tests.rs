use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::fd::{central_diff, max_rel_error};

fn cfg() -> ModelConfig {
    ModelConfig::new(24, 4, HeadKind::Projectors)
}

fn random(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

#[test]
fn default_dimensions() {
    let c = cfg();
    assert_eq!(c.backbone_dim(), 32);
    assert_eq!(c.projector_dim(), 8);
    assert_eq!(c.rnn_input_dim(), 96);
    assert_eq!(c.output_frames(128).unwrap(), 64);
    assert!(c.output_frames(127).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = cfg();
    c.n_mels = 22;
    assert!(c.validate().is_err());
    let mut c = cfg();
    c.rnn_hidden = 1;
    assert!(c.validate().is_err());
}

#[test]
fn zero_input_with_zero_biases_is_finite() {
    let mut m = SedModel::new(cfg(), 1).unwrap();
    m.params.conv[0].bias.data_mut().fill(0.0);
    m.params.conv[1].bias.data_mut().fill(0.0);
    let p = m.predict(&DenseArray::zeros(&[128, 24])).unwrap();
    assert_eq!(p.u.shape(), &[64, 32]);
    assert!(p.u.is_finite() && p.probs.is_finite());
    assert_eq!(p.z.len(), 4);
}

#[test]
fn conv_frames_and_forward_recurrence_are_causal_in_the_tail() {
    // Receptive field: two 3×3 convs → ±2 input frames; pool 2 maps model
    // frame t to input frames 2t, 2t+1. A change at input frame ≥ 80 can
    // reach conv frames t with 2t+1+2 ≥ 80, i.e. t ≥ 39.
    let m = SedModel::new(cfg(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[128, 24], &mut rng, 0.0, 2.0);
    let mut b = a.clone();
    for t in 80..128 {
        for f in 0..24 {
            b.set(t, f, rng.gen_range(0.0..2.0));
        }
    }
    let run = |x: &DenseArray| {
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (frames, u) = m.backbone_forward(&mut g, &p, xv).unwrap();
        (g.value(frames).clone(), g.value(u).clone())
    };
    let (fa, ua) = run(&a);
    let (fb, ub) = run(&b);
    for t in 0..39 {
        assert_eq!(fa.row(t), fb.row(t), "conv frame {t}");
        assert_eq!(&ua.row(t)[..16], &ub.row(t)[..16], "forward state {t}");
    }
    assert_ne!(fa.row(39), fb.row(39));
    // The backward direction carries the tail to every frame.
    assert_ne!(&ua.row(0)[16..], &ub.row(0)[16..]);
}

#[test]
fn backbone_kernel_gradients_match_finite_differences() {
    let m = SedModel::new(cfg(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[8, 24], &mut rng, 0.0, 2.0);
    let loss_for = |params: &ModelParams| {
        let mm = SedModel {
            config: m.config.clone(),
            params: params.clone(),
        };
        let mut g = Graph::new();
        let p = mm.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let (_, u) = mm.backbone_forward(&mut g, &p, xv).unwrap();
        let s = g.sum(u).unwrap();
        (g, p, s)
    };
    let (mut g, p, s) = loss_for(&m.params);
    g.backward(s).unwrap();
    for idx in [0usize, 2] {
        let analytic = g.grad(p.vars[idx]);
        let base = m.params.arrays()[idx].clone();
        let numeric = central_diff(&base, 1e-5, |probe| {
            let mut params = m.params.clone();
            *params.arrays_mut()[idx] = probe.clone();
            let (g2, _, s2) = loss_for(&params);
            g2.value(s2).item()
        });
        let err = max_rel_error(&analytic, &numeric, 1e-4);
        assert!(err < 1e-5, "array {idx}: {err}");
    }
}

#[test]
fn project_examples() {
    let m = SedModel::new(cfg(), 6).unwrap();
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let u = g.constant(DenseArray::zeros(&[5, 32]));
    let z = m.project(&mut g, &p, u, 2).unwrap();
    assert_eq!(g.value(z), &DenseArray::zeros(&[5, 8]));
    assert!(matches!(m.project(&mut g, &p, u, 4), Err(Error::Contract(_))));

    // Single non-zero column of W.
    let mut mm = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let col = random(&[32, 1], &mut rng, -1.0, 1.0);
    if let HeadParams::Projectors(h) = &mut mm.params.head {
        let w = &mut h[1].projector;
        w.data_mut().fill(0.0);
        for r in 0..32 {
            w.set(r, 3, col.get(r, 0));
        }
    }
    let urow = random(&[1, 32], &mut rng, -1.0, 1.0);
    let mut g = Graph::new();
    let p = mm.bind(&mut g, false);
    let u = g.constant(urow.clone());
    let z = mm.project(&mut g, &p, u, 1).unwrap();
    let dot: f64 = (0..32).map(|r| urow.get(0, r) * col.get(r, 0)).sum();
    for j in 0..8 {
        let want = if j == 3 { dot.tanh() } else { 0.0 };
        assert!((g.value(z).get(0, j) - want).abs() < 1e-15);
    }
}

#[test]
fn project_matches_direct_recomputation() {
    let m = SedModel::new(cfg(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let u = random(&[7, 32], &mut rng, -3.0, 3.0);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let uv = g.constant(u.clone());
    for c in 0..4 {
        let z = m.project(&mut g, &p, uv, c).unwrap();
        let HeadParams::Projectors(h) = &m.params.head else { unreachable!() };
        let w = &h[c].projector;
        for t in 0..7 {
            for j in 0..8 {
                let mut acc = 0.0;
                for k in 0..32 {
                    acc += u.get(t, k) * w.get(k, j);
                }
                let got = g.value(z).get(t, j);
                assert!(got.abs() < 1.0);
                assert!((got - acc.tanh()).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn classify_examples() {
    let mut m = SedModel::new(cfg(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let zs: Vec<DenseArray> = (0..4).map(|_| random(&[6, 8], &mut rng, -1.0, 1.0)).collect();
    let run = |m: &SedModel| {
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let z: Vec<Var> = zs.iter().map(|a| g.constant(a.clone())).collect();
        let probs = m.classify(&mut g, &p, &z).unwrap();
        g.value(probs).clone()
    };

    let probs = run(&m);
    let HeadParams::Projectors(h) = &m.params.head else { unreachable!() };
    for t in 0..6 {
        for c in 0..4 {
            let logit: f64 = (0..8).map(|j| zs[c].get(t, j) * h[c].weight.get(j, 0)).sum::<f64>()
                + h[c].bias.item();
            let want = 1.0 / (1.0 + (-logit).exp());
            assert!((probs.get(t, c) - want).abs() < 1e-12);
        }
    }

    if let HeadParams::Projectors(h) = &mut m.params.head {
        h[0].weight.data_mut().fill(0.0);
        h[0].bias.data_mut().fill(0.0);
        h[1].weight.data_mut().fill(0.0);
        h[1].bias.data_mut().fill(10.0);
    }
    let probs = run(&m);
    for t in 0..6 {
        assert_eq!(probs.get(t, 0), 0.5);
        assert!((probs.get(t, 1) - 0.9999546).abs() < 1e-7);
    }
}

#[test]
fn weak_pool_examples() {
    let mut g = Graph::new();
    let p = g.param(DenseArray::from_rows(&[[0.3, 0.1], [0.3, 0.9], [0.3, 0.2]]));
    let w = weak_pool(&mut g, p).unwrap();
    assert_eq!(g.value(w).data(), &[0.3, 0.9]);
    let c = g.constant(DenseArray::from_rows(&[[0.0, 1.0]]));
    let l = g.mul(w, c).and_then(|m| g.sum(m)).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(p).data(), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn projector_gradients_stay_in_their_class() {
    let m = SedModel::new(cfg(), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&[16, 24], &mut rng, 0.0, 2.0);
    let mut g = Graph::new();
    let p = m.bind(&mut g, true);
    let xv = g.constant(x);
    let f = m.forward(&mut g, &p, xv).unwrap();
    let sq = g.mul(f.z[2], f.z[2]).unwrap();
    let l = g.sum(sq).unwrap();
    g.backward(l).unwrap();
    for c in 0..4 {
        let gw = g.grad(p.vars[ModelParams::HEAD_OFFSET + 3 * c]);
        let nz = gw.data().iter().any(|v| *v != 0.0);
        assert_eq!(nz, c == 2, "class {c}");
    }
}

#[test]
fn parameter_counts() {
    let proj = SedModel::new(cfg(), 1).unwrap();
    let lin = SedModel::new(ModelConfig::new(24, 4, HeadKind::Linear), 1).unwrap();
    assert_eq!(proj.params.projector_count(), 4 * 32 * 8);
    assert_eq!(lin.params.projector_count(), 0);
    assert!(proj.params.count() > lin.params.count());
    assert_eq!(proj.params.names().len(), proj.params.arrays().len());
}

#[test]
fn ema_examples() {
    let s = SedModel::new(cfg(), 20).unwrap().params;
    let t0 = SedModel::new(cfg(), 21).unwrap().params;
    assert_eq!(ema_update(&s, &t0, 0.0).unwrap(), s);
    let fixed = ema_update(&s, &s, 0.99).unwrap();
    for (a, b) in fixed.arrays().iter().zip(s.arrays()) {
        assert!(a.max_abs_diff(b) < 1e-15);
    }
    assert!(ema_update(&s, &t0, 1.0).is_err());

    let mut t = t0.clone();
    for _ in 0..10 {
        ema_update_in_place(&s, &mut t, 0.99).unwrap();
    }
    let k = 0.99f64.powi(10);
    for ((a, b), c) in t.arrays().iter().zip(s.arrays()).zip(t0.arrays()) {
        for i in 0..a.len() {
            let got = (a.data()[i] - b.data()[i]).abs();
            let want = k * (c.data()[i] - b.data()[i]).abs();
            assert!((got - want).abs() < 1e-10);
        }
    }

    let lin = SedModel::new(ModelConfig::new(24, 4, HeadKind::Linear), 1).unwrap().params;
    assert!(matches!(ema_update(&s, &lin, 0.5), Err(Error::Contract(_))));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for head in [HeadKind::Projectors, HeadKind::Linear] {
        let m = SedModel::new(ModelConfig::new(24, 3, head), 30).unwrap();
        let ck = Checkpoint {
            teacher: SedModel::new(m.config.clone(), 31).unwrap().params,
            student: m,
        };
        let p = dir.path().join("a.sedm");
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, ck);
        let p2 = dir.path().join("b.sedm");
        save_checkpoint(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }
}

#[test]
fn checkpoint_rejects_corruption() {
    let m = SedModel::new(cfg(), 1).unwrap();
    let ck = Checkpoint {
        teacher: m.params.clone(),
        student: m,
    };
    let bytes = ck.to_bytes();
    let path = std::path::Path::new("mem");
    assert_eq!(&bytes[..4], b"SEDM");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad, path), Err(Error::Format { .. })));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], path).is_err());
    let mut long = bytes;
    long.push(0);
    assert!(Checkpoint::from_bytes(&long, path).is_err());
}
