use super::*;
use rand::Rng;
use crate::autodiff::UnaryKind;
use crate::data::synth::{synth_lane_change, synth_lane_change_records, LaneChangeParams};
use crate::data::{build_episodes, synth::synth_sine_family};
use crate::gaussian::{kl, MIN_STD};
use crate::gradcheck::gradcheck;
use crate::gradcheck_suite::{elbo_gradcheck, ELBO_JITTER};
use proptest::prelude::*;

fn small_dims(input_dim: usize, output_dim: usize, window: usize) -> ModelDims {
    ModelDims {
        lstm_hidden: 3,
        pair_hidden: [4, 4],
        repr_dim: 5,
        latent_hidden: 4,
        z_dim: 3,
        att_dim: 4,
        decoder_hidden: [4, 4],
        ..ModelDims::new(input_dim, output_dim, window)
    }
}

fn model(kind: ModelKind, dims: ModelDims, seed: u64) -> NpFamilyModel {
    NpFamilyModel::new(kind, dims, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn lane_episode(window: usize, seed: u64) -> Episode {
    let p = LaneChangeParams {
        duration: 1.5,
        window,
        ..Default::default()
    };
    synth_lane_change(1, seed, &p).unwrap().remove(0)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn eps(rng: &mut ChaCha8Rng, dim: usize) -> Tensor {
    Tensor::vector((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

#[test]
fn kinds_have_the_right_parts() {
    let dims = small_dims(15, 2, 4);
    for kind in ModelKind::ALL {
        let m = model(kind, dims.clone(), 0);
        assert_eq!(m.window_encoder.is_some(), kind.has_window_encoder());
        assert_eq!(m.attention.is_some(), kind.has_attention());
        assert_eq!(m.pair_encoder.is_some(), kind.is_latent());
        assert_eq!(m.latent_head.is_some(), kind.is_latent());
        assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        assert_eq!(ModelKind::from_tag(kind.tag()).unwrap(), kind);
    }
    let full = model(ModelKind::Arnp, ModelDims::new(15, 2, 20), 0);
    assert_eq!(full.pair_encoder.as_ref().unwrap().output_dim(), 128);
    assert_eq!(full.latent_head.as_ref().unwrap().output_dim(), 128);
    assert!("GP".parse::<ModelKind>().is_err());
}

#[test]
fn single_step_window_is_one_lstm_step() {
    let m = model(ModelKind::Arnp, small_dims(2, 1, 1), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let windows = random_tensor(&mut rng, &[4, 1, 2]);
    let h = m.rnn_encode_windows(&windows).unwrap();

    let mut tape = Tape::new();
    let cell = m.window_encoder.as_ref().unwrap().bind(&mut tape, &mut ParamBinder::frozen());
    let x = tape.constant(windows.reshape(&[4, 2]).unwrap());
    let zero = tape.constant(Tensor::zeros(&[4, 3]));
    let s = cell.step_full(&mut tape, x, zero, zero).unwrap();
    assert_eq!(&h, tape.value(s.h));
}

#[test]
fn zero_windows_and_zero_cell_give_zero_state() {
    let mut m = model(ModelKind::Arnp, small_dims(2, 1, 5), 1);
    m.window_encoder.as_mut().unwrap().params_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
    let h = m.rnn_encode_windows(&Tensor::zeros(&[3, 5, 2])).unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn windows_are_encoded_independently() {
    let m = model(ModelKind::Arnp, small_dims(2, 1, 4), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_tensor(&mut rng, &[3, 4, 2]);
    let mut b = a.clone();
    b.data_mut()[8..16].iter_mut().for_each(|v| *v += 1.0);
    let (ha, hb) = (m.rnn_encode_windows(&a).unwrap(), m.rnn_encode_windows(&b).unwrap());
    assert_eq!(ha.row(0), hb.row(0));
    assert_eq!(ha.row(2), hb.row(2));
    assert_ne!(ha.row(1), hb.row(1));
    assert!(model(ModelKind::Np, small_dims(2, 1, 4), 0).rnn_encode_windows(&a).is_err());
}

#[test]
fn pair_encoding_is_row_wise() {
    let m = model(ModelKind::Np, small_dims(2, 1, 1), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = random_tensor(&mut rng, &[4, 2]);
    let y = random_tensor(&mut rng, &[4, 1]);
    let p = m.encode_pairs(&h, &y).unwrap();
    assert_eq!(p.shape(), &[4, 5]);
    let perm = [2, 0, 3, 1];
    let ph = Tensor::from_rows(&perm.iter().map(|&i| h.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let py = Tensor::from_rows(&perm.iter().map(|&i| y.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let pp = m.encode_pairs(&ph, &py).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(pp.row(k), p.row(i));
    }
    let one = m.encode_pairs(&Tensor::from_rows(&[h.row(0).to_vec()]).unwrap(), &Tensor::from_rows(&[y.row(0).to_vec()]).unwrap());
    assert_eq!(one.unwrap().shape(), &[1, 5]);
    assert!(matches!(m.encode_pairs(&h, &Tensor::zeros(&[3, 1])), Err(Error::Dimension { .. })));
}

#[test]
fn empty_summary_is_the_prior() {
    let m = model(ModelKind::Anp, ModelDims::new(1, 1, 1), 0);
    let q = m.latent_from_summary(None).unwrap();
    assert_eq!(q, DiagonalGaussian::standard(64));
}

#[test]
fn latent_ignores_order_and_duplication() {
    let m = model(ModelKind::Np, small_dims(2, 1, 1), 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random_tensor(&mut rng, &[5, 5]);
    let q = m.latent_from_summary(Some(&p)).unwrap();
    let rev = Tensor::from_rows(&(0..5).rev().map(|i| p.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let dup = Tensor::from_rows(&(0..10).map(|i| p.row(i % 5).to_vec()).collect::<Vec<_>>()).unwrap();
    for other in [m.latent_from_summary(Some(&rev)).unwrap(), m.latent_from_summary(Some(&dup)).unwrap()] {
        assert!(q.mean.max_abs_diff(&other.mean) < 1e-12);
        assert!(q.std.max_abs_diff(&other.std) < 1e-12);
    }
}

#[test]
fn single_context_attention_broadcasts_its_value() {
    let m = model(ModelKind::Anp, small_dims(2, 1, 1), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let hc = random_tensor(&mut rng, &[1, 2]);
    let pc = random_tensor(&mut rng, &[1, 5]);
    let ht = random_tensor(&mut rng, &[4, 2]);
    let r = m.cross_attention_summary(&hc, &pc, &ht).unwrap();
    for t in 1..4 {
        assert_eq!(r.row(t), r.row(0));
    }
    assert!(model(ModelKind::Np, small_dims(2, 1, 1), 0).cross_attention_summary(&hc, &pc, &ht).is_err());
}

#[test]
fn matching_context_gets_the_largest_weight() {
    let mut m = model(ModelKind::Anp, small_dims(3, 1, 1), 11);
    let att = m.attention.as_mut().unwrap();
    let mut proj = Tensor::zeros(&[3, 4]);
    for i in 0..3 {
        proj.data_mut()[i * 4 + i] = 1.0;
    }
    att.query_proj = proj.clone();
    att.key_proj = proj;
    let contexts = Tensor::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, 3.0]]).unwrap();
    let target = Tensor::from_rows(&[contexts.row(1).to_vec()]).unwrap();
    let mut tape = Tape::new();
    let vars = m.attention.as_ref().unwrap().bind(&mut tape, &mut ParamBinder::frozen());
    let (q, k) = (tape.constant(target), tape.constant(contexts));
    let w = vars.weights(&mut tape, q, k).unwrap();
    let w = tape.value(w).row(0).to_vec();
    assert!(w[1] > w[0] && w[1] > w[2], "{w:?}");
}

#[test]
fn decode_floor_and_determinism() {
    let mut m = model(ModelKind::Arnp, small_dims(2, 2, 1), 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (z, r, h) = (random_tensor(&mut rng, &[3]), random_tensor(&mut rng, &[4]), random_tensor(&mut rng, &[3]));
    let a = m.decode(&z, &r, &h).unwrap();
    assert_eq!(a, m.decode(&z, &r, &h).unwrap());
    assert_eq!(a.dim(), 2);
    let last = m.decoder.layers.last_mut().unwrap();
    last.bias.data_mut().fill(-1e3);
    let floored = m.decode(&z, &r, &h).unwrap();
    assert!(floored.std.data().iter().all(|&s| s >= MIN_STD));
    assert!(m.decode(&z, &Tensor::zeros(&[5]), &h).is_err());
}

#[test]
fn decode_gradients_match_finite_differences() {
    let m = model(ModelKind::Anp, small_dims(2, 2, 1), 14);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut params: Vec<Tensor> = m.decoder.params().into_iter().map(|(_, t)| t.clone()).collect();
    let n_dec = params.len();
    params.push(random_tensor(&mut rng, &[3]));
    params.push(random_tensor(&mut rng, &[2, 4]));
    params.push(random_tensor(&mut rng, &[2, 2]));
    params.push(random_tensor(&mut rng, &[2, 2]));
    let report = gradcheck("decode", &params, |tape, p| {
        let mut vars = m.bind(tape, &mut ParamBinder::frozen());
        vars.decoder = m.decoder.bind(tape, &mut ParamBinder::replay(p[..n_dec].to_vec()));
        let g = vars.decode(tape, p[n_dec], p[n_dec + 1], p[n_dec + 2])?;
        g.log_prob(tape, p[n_dec + 3])
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn encode_pairs_gradients_match_finite_differences() {
    let m = model(ModelKind::Np, small_dims(2, 1, 1), 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let enc = m.pair_encoder.as_ref().unwrap();
    let mut params: Vec<Tensor> = enc.params().into_iter().map(|(_, t)| t.clone()).collect();
    let n = params.len();
    params.push(random_tensor(&mut rng, &[3, 2]));
    params.push(random_tensor(&mut rng, &[3, 1]));
    let report = gradcheck("encode_pairs", &params, |tape, p| {
        let mut vars = m.bind(tape, &mut ParamBinder::frozen());
        vars.pair_encoder = Some(enc.bind(tape, &mut ParamBinder::replay(p[..n].to_vec())));
        let out = vars.encode_pairs(tape, p[n], p[n + 1])?;
        let sq = tape.unary(UnaryKind::Square, out)?;
        Ok(tape.sum_all(sq))
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn kl_vanishes_when_contexts_are_all_targets() {
    let ep = lane_episode(3, 1);
    let n = ep.len();
    for kind in [ModelKind::Np, ModelKind::Anp, ModelKind::Arnp] {
        let m = model(kind, small_dims(15, 2, 3), 18);
        let split = CtSplit::prefix(n, n).unwrap();
        let terms = m.elbo(&ep, &split, &eps(&mut ChaCha8Rng::seed_from_u64(0), 3)).unwrap();
        assert_eq!(terms.kl, 0.0, "{kind}");
        assert_eq!(terms.loss, terms.recon_nll + terms.kl);
    }
}

#[test]
fn kl_is_positive_when_contexts_miss_different_targets() {
    // Targets jump after the first half, so the context-only summary differs.
    let mut ep = synth_sine_family(1, 10, 0).unwrap().remove(0);
    for t in 5..10 {
        ep.targets.data_mut()[t] += 5.0;
    }
    let m = model(ModelKind::Np, ModelDims::new(1, 1, 1), 19);
    let split = CtSplit::prefix(5, 10).unwrap();
    let terms = m.elbo(&ep, &split, &Tensor::zeros(&[64])).unwrap();
    assert!(terms.kl > 0.0, "{terms:?}");
    assert_eq!(terms.loss, terms.recon_nll + terms.kl);
}

#[test]
fn elbo_rejects_point_model_and_bad_inputs() {
    let ep = lane_episode(3, 2);
    let split = CtSplit::prefix(2, ep.len()).unwrap();
    let point = model(ModelKind::LstmPoint, small_dims(15, 2, 3), 0);
    assert!(point.elbo(&ep, &split, &Tensor::zeros(&[3])).is_err());
    let np = model(ModelKind::Np, small_dims(15, 2, 3), 0);
    assert!(np.elbo(&ep, &split, &Tensor::zeros(&[4])).is_err());
    let wrong_window = model(ModelKind::Np, small_dims(15, 2, 4), 0);
    assert!(wrong_window.elbo(&ep, &split, &Tensor::zeros(&[3])).is_err());
}

#[test]
fn full_elbo_gradients_match_finite_differences() {
    for kind in [ModelKind::Np, ModelKind::Anp, ModelKind::Arnp] {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let report = elbo_gradcheck(kind, &mut rng, None, ELBO_JITTER).unwrap();
        assert!(report.passed(), "{kind}: {report:?}");
    }
}

#[test]
fn loss_gradients_align_with_parameters() {
    let ep = lane_episode(3, 4);
    for kind in ModelKind::ALL {
        let m = model(kind, small_dims(15, 2, 3), 22);
        let split = CtSplit::prefix(3, ep.len()).unwrap();
        let (terms, grads) = m.loss_and_grads(&ep, &split, &Tensor::zeros(&[3])).unwrap();
        assert!(terms.loss.is_finite());
        let params = m.params();
        assert_eq!(grads.len(), params.len());
        for (g, (_, p)) in grads.iter().zip(&params) {
            assert_eq!(g.shape(), p.shape());
        }
        if kind.is_latent() {
            assert_eq!(terms, m.elbo(&ep, &split, &Tensor::zeros(&[3])).unwrap());
        } else {
            assert_eq!(terms.kl, 0.0);
        }
    }
}

#[test]
fn one_sample_prediction_is_the_decoder_gaussian() {
    let ep = lane_episode(3, 5);
    let m = model(ModelKind::Arnp, small_dims(15, 2, 3), 23);
    let e = eps(&mut ChaCha8Rng::seed_from_u64(1), 3);
    let ctx = [0, 1, 2, 3];
    let pred = m.predict_with_eps(&ep, &ctx, &[7], std::slice::from_ref(&e)).unwrap();

    let h = m.rnn_encode_windows(&ep.windows_at(&ctx)).unwrap();
    let p = m.encode_pairs(&h, &ep.targets_at(&ctx)).unwrap();
    let q = m.latent_from_summary(Some(&p)).unwrap();
    let z = q.sample(&e).unwrap();
    let ht = m.rnn_encode_windows(&ep.windows_at(&[7])).unwrap();
    let r = m.cross_attention_summary(&h, &p, &ht).unwrap();
    let g = m.decode(&z, &Tensor::vector(r.row(0).to_vec()), &Tensor::vector(ht.row(0).to_vec())).unwrap();
    assert!(pred.mean.reshape(&[2]).unwrap().max_abs_diff(&g.mean) < 1e-12);
    assert!(pred.std.reshape(&[2]).unwrap().max_abs_diff(&g.std) < 1e-12);
}

#[test]
fn identical_samples_give_decoder_variance() {
    let ep = lane_episode(3, 6);
    let mut m = model(ModelKind::Anp, small_dims(15, 2, 3), 24);
    let head = m.latent_head.as_mut().unwrap().layers.last_mut().unwrap();
    head.bias.data_mut()[3..].fill(-1e3);
    let zero = Tensor::zeros(&[3]);
    let one = m.predict_with_eps(&ep, &[0, 1], &[0, 5, 9], std::slice::from_ref(&zero)).unwrap();
    let many = m.predict_with_eps(&ep, &[0, 1], &[0, 5, 9], &vec![zero; 7]).unwrap();
    assert!(one.std.max_abs_diff(&many.std) < 1e-12);
    assert!(one.mean.max_abs_diff(&many.mean) < 1e-12);
}

#[test]
fn mixture_variance_dominates_components() {
    let ep = lane_episode(3, 7);
    let m = model(ModelKind::Np, small_dims(15, 2, 3), 25);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<Tensor> = (0..6).map(|_| eps(&mut rng, 3)).collect();
    let mix = m.predict_with_eps(&ep, &[0, 1, 2], &[4, 8], &samples).unwrap();
    for e in &samples {
        let single = m.predict_with_eps(&ep, &[0, 1, 2], &[4, 8], std::slice::from_ref(e)).unwrap();
        for (a, b) in mix.std.data().iter().zip(single.std.data()) {
            assert!(a * a >= b * b - 1e-12 || a >= &MIN_STD);
        }
    }
    assert!(mix.std.data().iter().all(|&s| s * s >= 1e-4));
    let zero_ctx = m.predict_with_eps(&ep, &[], &[4], &samples[..1]).unwrap();
    assert!(zero_ctx.mean.is_finite());
    assert!(m.predict_with_eps(&ep, &[0], &[], &samples).is_err());
    assert!(m.predict(&ep, &[0], &[1], 0, &mut rng).is_err());
}

#[test]
fn point_model_reports_unit_std() {
    let ep = lane_episode(3, 8);
    let m = model(ModelKind::LstmPoint, small_dims(15, 2, 3), 26);
    let pred = m.predict(&ep, &[0], &[3, 4], 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(pred.std.data().iter().all(|&s| s == POINT_STD));
}

#[test]
fn arnp_sees_only_the_last_window() {
    let p = LaneChangeParams {
        duration: 2.0,
        window: 3,
        ..Default::default()
    };
    let mut records = synth_lane_change_records(1, 9, &p).unwrap();
    let base = build_episodes(&records, 3).unwrap().episodes.remove(0);
    for o in records[4].others.iter_mut() {
        o.lat += 7.0;
        o.lon -= 3.0;
    }
    let altered = build_episodes(&records, 3).unwrap().episodes.remove(0);
    assert_ne!(base.windows, altered.windows);
    let m = model(ModelKind::Arnp, small_dims(15, 2, 3), 27);
    let samples: Vec<Tensor> = (0..3).map(|i| eps(&mut ChaCha8Rng::seed_from_u64(i), 3)).collect();
    let (ctx, tgt) = ([7, 8, 9], [7, 8, 9, 12, 15]);
    assert_eq!(
        m.predict_with_eps(&base, &ctx, &tgt, &samples).unwrap(),
        m.predict_with_eps(&altered, &ctx, &tgt, &samples).unwrap()
    );
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ModelKind::ALL {
        let m = model(kind, small_dims(15, 2, 3), 28);
        let path = dir.path().join(format!("{kind}.npw"));
        let extra = vec![("normalizer.x".to_string(), Tensor::vector(vec![1.0, 2.0]))];
        m.save(&path, extra.clone()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes[4], kind.tag());
        let (back, rest) = NpFamilyModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(rest, extra);
        back.save(&path, extra).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }
    let mut file = model(ModelKind::Np, small_dims(15, 2, 3), 0).to_param_file(vec![]);
    file.params.pop();
    assert!(matches!(NpFamilyModel::from_param_file(file), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn np_and_anp_ignore_context_order(seed in 0u64..500, anp in any::<bool>()) {
        let kind = if anp { ModelKind::Anp } else { ModelKind::Np };
        let ep = lane_episode(3, seed);
        let m = model(kind, small_dims(15, 2, 3), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<Tensor> = (0..4).map(|_| eps(&mut rng, 3)).collect();
        let ctx = vec![0, 2, 3, 5, 8];
        let mut shuffled = ctx.clone();
        shuffled.reverse();
        shuffled.swap(0, 2);
        let tgt: Vec<usize> = (0..ep.len()).collect();
        let a = m.predict_with_eps(&ep, &ctx, &tgt, &samples).unwrap();
        let b = m.predict_with_eps(&ep, &shuffled, &tgt, &samples).unwrap();
        prop_assert!(a.mean.max_abs_diff(&b.mean) < 1e-9);
        prop_assert!(a.std.max_abs_diff(&b.std) < 1e-9);
    }

    #[test]
    fn kl_term_is_nonnegative(seed in 0u64..500, m_ctx in 1usize..14) {
        let ep = lane_episode(3, seed);
        let m = model(ModelKind::Arnp, small_dims(15, 2, 3), seed);
        let split = CtSplit::prefix(m_ctx, ep.len()).unwrap();
        let terms = m.elbo(&ep, &split, &eps(&mut ChaCha8Rng::seed_from_u64(seed), 3)).unwrap();
        prop_assert!(terms.kl >= 0.0);
        let q_t = m.latent_from_summary(Some(&m.encode_pairs(&m.rnn_encode_windows(&ep.windows).unwrap(), &ep.targets).unwrap())).unwrap();
        let ctx: Vec<usize> = (0..m_ctx).collect();
        let q_c = m.latent_from_summary(Some(&m.encode_pairs(&m.rnn_encode_windows(&ep.windows_at(&ctx)).unwrap(), &ep.targets_at(&ctx)).unwrap())).unwrap();
        prop_assert!((kl(&q_t, &q_c).unwrap() - terms.kl).abs() < 1e-9);
    }
}


