use super::*;
use crate::numerics::{grad_check, rmsnorm, HeadTensor, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(mode: Mode, d: usize, d_ffn: usize, heads: usize, dk: usize, dv: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        d,
        d_ffn,
        d_emb: d,
        vocab,
        heads,
        d_k: dk,
        d_v: dv,
        mode,
        decoder_bias: false,
        eps_norm: 1e-6,
        bptt_trunc: None,
    }
}

fn tokens(n: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
}

fn batch(rows: usize, len: usize, vocab: usize, seed: u64) -> Vec<Vec<u32>> {
    (0..rows).map(|b| tokens(len, vocab, seed + b as u64)).collect()
}

/// Max per-coordinate relative error of the analytic gradient against central
/// differences, probing every coordinate.
fn check_full_bptt(p: &Params<f64>, seqs: &[Vec<u32>], trunc: Option<usize>, eps: f64) -> f64 {
    let (_, g) = loss_and_grad(p, seqs, trunc).unwrap();
    let x = p.flatten();
    let mut probe = p.clone();
    let f = |v: &[f64]| {
        probe.assign_flat(v).unwrap();
        forward_batch(&probe, StateBundle::initial(&probe, seqs.len()), seqs).unwrap().mean_ce()
    };
    let f = std::cell::RefCell::new(f);
    let report = grad_check(|v| (f.borrow_mut())(v), &x, &g.flatten(), eps, None).unwrap();
    assert_eq!(report.n_probes, x.len());
    report.max_rel_error
}

#[test]
fn full_bptt_matches_finite_differences_gpn_m() {
    let cfg = tiny(Mode::GpnM, 8, 16, 2, 4, 4, 7);
    let p = random_params::<f64>(&cfg, 3, 0.4).unwrap();
    let seqs = batch(2, 7, cfg.vocab, 11);
    let err = check_full_bptt(&p, &seqs, None, 1e-5);
    assert!(err < 1e-4, "max rel error {err}");
}

#[test]
fn full_bptt_matches_finite_differences_gpn_with_bias() {
    let mut cfg = tiny(Mode::Gpn, 6, 10, 1, 1, 1, 5);
    cfg.decoder_bias = true;
    let p = random_params::<f64>(&cfg, 5, 0.4).unwrap();
    let seqs = batch(2, 6, cfg.vocab, 21);
    let err = check_full_bptt(&p, &seqs, None, 1e-5);
    assert!(err < 1e-4, "max rel error {err}");
}

#[test]
fn truncated_bptt_matches_finite_differences_of_stopped_graph() {
    // With window 1 every recurrent edge is cut, so the gradient equals the
    // sum of per-step gradients taken with the incoming carry held fixed.
    let cfg = tiny(Mode::GpnM, 6, 8, 2, 3, 3, 5);
    let p = random_params::<f64>(&cfg, 9, 0.4).unwrap();
    let seq = tokens(6, cfg.vocab, 4);
    let (_, g) = loss_and_grad(&p, std::slice::from_ref(&seq), Some(1)).unwrap();
    let full = forward_sequence(&p, &seq).unwrap();
    let steps = seq.len() - 1;
    let mut expect = Params::<f64>::zeros(&cfg);
    let mut state = StateBundle::initial(&p, 1);
    for t in 0..steps {
        let pair = [seq[t], seq[t + 1]];
        let fwd = forward_batch(&p, state.clone(), &[pair]).unwrap();
        let mut gt = backward_weighted(&p, &fwd.trace, &[1.0 / steps as f64], None).unwrap();
        if t > 0 {
            gt.s0.data.fill(0.0);
        }
        expect.add_assign(&gt);
        state = fwd.state;
    }
    assert_eq!(full.ce.len(), steps);
    let (a, b) = (g.flatten(), expect.flatten());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * scale.max(1.0), "{x} vs {y}");
    }
}

#[test]
fn truncation_at_sequence_length_equals_full() {
    let cfg = tiny(Mode::GpnM, 8, 12, 2, 4, 4, 9);
    let p = random_params::<f64>(&cfg, 1, 0.3).unwrap();
    let seqs = batch(3, 9, cfg.vocab, 2);
    let (_, full) = loss_and_grad(&p, &seqs, None).unwrap();
    let (_, trunc) = loss_and_grad(&p, &seqs, Some(8)).unwrap();
    assert_eq!(full, trunc);
}

#[test]
fn gradients_are_deterministic() {
    let cfg = tiny(Mode::GpnM, 8, 12, 2, 4, 4, 9);
    let p = random_params::<f32>(&cfg, 1, 0.3).unwrap();
    let seqs = batch(3, 9, cfg.vocab, 2);
    assert_eq!(loss_and_grad(&p, &seqs, None).unwrap(), loss_and_grad(&p, &seqs, None).unwrap());
}

#[test]
fn decoder_bias_gradient_absent_when_disabled() {
    let cfg = tiny(Mode::Gpn, 4, 4, 1, 1, 1, 5);
    let p = random_params::<f64>(&cfg, 1, 0.3).unwrap();
    let (_, g) = loss_and_grad(&p, &[vec![0, 1, 2]], None).unwrap();
    assert!(g.dec_bias.is_none());
    assert!(g.get("dec.bias").is_none());
}

#[test]
fn batched_step_matches_composed_ops() {
    let cfg = tiny(Mode::GpnM, 8, 12, 2, 4, 3, 9);
    let p = random_params::<f64>(&cfg, 4, 0.4).unwrap();
    let seq = tokens(6, cfg.vocab, 8);
    let fwd = forward_sequence(&p, &seq).unwrap();

    let mut s_p = p.s0.data.clone();
    let mut s_g_prev = p.s0.data.clone();
    let mut m = HeadTensor::<f64>::zeros(cfg.heads, cfg.d_k, cfg.d_v);
    for t in 0..seq.len() - 1 {
        let s_g = ground(&s_p, seq[t], &p).unwrap();
        let (m_next, alpha) = mem_write(&m, &s_g_prev, &s_g, &p).unwrap();
        s_p = predict(&s_g, Some(&m_next), &p).unwrap();
        let (_, ce) = decode_loss(&s_p, seq[t + 1], &p).unwrap();
        assert!((ce - fwd.ce[t]).abs() < 1e-12, "step {t}: {ce} vs {}", fwd.ce[t]);
        for (h, a) in alpha.iter().enumerate() {
            assert!((a - fwd.decay.alpha(t, h)).abs() < 1e-12);
        }
        m = m_next;
        s_g_prev = s_g;
    }
    for (a, b) in s_p.iter().zip(fwd.state.state(0)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_step_unrolls_definitionally() {
    let cfg = tiny(Mode::Gpn, 6, 8, 1, 1, 1, 5);
    let p = random_params::<f64>(&cfg, 2, 0.4).unwrap();
    let (next, ce, _) = step(&StateBundle::initial(&p, 1), 3, 1, &p).unwrap();
    let s_p = predict(&ground(&p.s0.data, 3, &p).unwrap(), None, &p).unwrap();
    let (_, expect) = decode_loss(&s_p, 1, &p).unwrap();
    assert!((ce - expect).abs() < 1e-12);
    // Without memory the grounded-state carry is still updated but memory is empty.
    assert!(next.mem.is_empty());
}

#[test]
fn gpn_step_leaves_memory_carry_untouched() {
    let cfg = tiny(Mode::Gpn, 6, 8, 1, 1, 1, 5);
    let p = random_params::<f64>(&cfg, 2, 0.4).unwrap();
    let start = StateBundle::initial(&p, 1);
    let (next, _, _) = step(&start, 3, 1, &p).unwrap();
    assert_eq!(next.mem, start.mem);
}

#[test]
fn repeated_steps_are_pure() {
    let cfg = tiny(Mode::GpnM, 6, 8, 2, 3, 3, 5);
    let p = random_params::<f64>(&cfg, 2, 0.4).unwrap();
    let b0 = StateBundle::initial(&p, 1);
    let (b1, c1, _) = step(&b0, 1, 2, &p).unwrap();
    let (b1x, c1x, _) = step(&b0, 1, 2, &p).unwrap();
    assert_eq!((b1.clone(), c1), (b1x, c1x));
    let (_, c2, _) = step(&b1, 2, 3, &p).unwrap();
    let fwd = forward_sequence(&p, &[1, 2, 3]).unwrap();
    assert_eq!(fwd.ce, vec![c1, c2]);
}

#[test]
fn chained_halves_match_one_pass() {
    let cfg = tiny(Mode::GpnM, 8, 12, 2, 4, 4, 9);
    let p = random_params::<f32>(&cfg, 6, 0.3).unwrap();
    let seqs = batch(2, 17, cfg.vocab, 30);
    let whole = forward_batch(&p, StateBundle::initial(&p, 2), &seqs).unwrap();
    let first: Vec<_> = seqs.iter().map(|s| s[..9].to_vec()).collect();
    let second: Vec<_> = seqs.iter().map(|s| s[8..].to_vec()).collect();
    let a = forward_batch(&p, StateBundle::initial(&p, 2), &first).unwrap();
    let b = forward_batch(&p, a.state.clone(), &second).unwrap();
    for r in 0..2 {
        let joined: Vec<f64> = a.ce[r * 8..(r + 1) * 8].iter().chain(&b.ce[r * 8..(r + 1) * 8]).copied().collect();
        assert_eq!(joined, whole.ce[r * 16..(r + 1) * 16].to_vec());
    }
    assert_eq!(b.state, whole.state);
}

#[test]
fn batch_rows_are_independent() {
    let cfg = tiny(Mode::GpnM, 8, 12, 2, 4, 4, 9);
    let p = random_params::<f32>(&cfg, 6, 0.3).unwrap();
    let seqs = batch(3, 10, cfg.vocab, 40);
    let all = forward_batch(&p, StateBundle::initial(&p, 3), &seqs).unwrap();
    for (r, s) in seqs.iter().enumerate() {
        let one = forward_sequence(&p, s).unwrap();
        for (x, y) in one.ce.iter().zip(&all.ce[r * 9..(r + 1) * 9]) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn zero_memory_projections_degenerate_to_gpn_bitwise() {
    let cfg_m = tiny(Mode::GpnM, 8, 12, 2, 4, 4, 9);
    let mut pm = random_params::<f32>(&cfg_m, 8, 0.3).unwrap();
    for (name, t) in pm.tensors_mut() {
        if name.starts_with("mem.w_") {
            t.data.fill(0.0);
        }
    }
    let mut pg = Params::<f32>::zeros(&tiny(Mode::Gpn, 8, 12, 2, 4, 4, 9));
    for (name, t) in pg.tensors_mut() {
        *t = pm.get(name).unwrap().clone();
    }
    let seq = tokens(200, 9, 1);
    let a = forward_sequence(&pm, &seq).unwrap();
    let b = forward_sequence(&pg, &seq).unwrap();
    assert!(a.ce.iter().zip(&b.ce).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn decay_factors_strictly_inside_unit_interval() {
    let cfg = tiny(Mode::GpnM, 8, 12, 3, 4, 4, 9);
    let p = random_params::<f32>(&cfg, 8, 0.5).unwrap();
    let fwd = forward_sequence(&p, &tokens(300, 9, 3)).unwrap();
    assert_eq!(fwd.decay.steps(), 299);
    for t in 0..fwd.decay.steps() {
        for h in 0..3 {
            let g = fwd.decay.log_alpha[t * 3 + h];
            assert!(g < 0.0 && g.is_finite(), "log alpha {g}");
            assert!(fwd.decay.alpha(t, h) <= 1.0);
        }
    }
}

#[test]
fn zero_decoder_gives_uniform_ce() {
    let cfg = tiny(Mode::GpnM, 8, 12, 2, 4, 4, 9);
    let mut p = random_params::<f64>(&cfg, 8, 0.3).unwrap();
    p.dec_w.data.fill(0.0);
    let fwd = forward_sequence(&p, &tokens(20, 9, 3)).unwrap();
    assert!(fwd.ce.iter().all(|c| *c == (9f64).ln()));
    let (logits, ce) = decode_loss(&[1.0, -2.0, 0.5, 0.0, 1.0, 1.0, 1.0, 1.0], 4, &p).unwrap();
    assert!(logits.iter().all(|l| *l == 0.0));
    assert_eq!(ce, (9f64).ln());
}

#[test]
fn cross_entropy_scalar_arithmetic() {
    let ce = cross_entropy(&[1.0f64, 2.0, 3.0], 2);
    let expect = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
    assert!((ce - expect).abs() < 1e-15);
    assert!((ce - 0.4076).abs() < 1e-4);
    assert!(cross_entropy(&[0.0f64, 800.0, 0.0], 1) < 1e-300);
}

#[test]
fn out_of_range_tokens_are_rejected() {
    let cfg = tiny(Mode::Gpn, 4, 4, 1, 1, 1, 5);
    let p = random_params::<f64>(&cfg, 1, 0.3).unwrap();
    assert!(matches!(ground(&[0.0; 4], 5, &p), Err(crate::GpnError::TokenOutOfRange { .. })));
    assert!(decode_loss(&[0.0; 4], 9, &p).is_err());
    assert!(forward_sequence(&p, &[0, 7]).is_err());
}

#[test]
fn ground_with_closed_fuse_weights() {
    let cfg = tiny(Mode::Gpn, 3, 4, 1, 1, 1, 4);
    let mut p = random_params::<f64>(&cfg, 1, 0.5).unwrap();
    p.fuse_w.data.fill(0.0);
    let s = [0.4, -1.2, 2.0];
    let out = ground(&s, 2, &p).unwrap();
    for i in 0..3 {
        let fused: f64 = (0..3).map(|j| p.w_fuse.data[i * 3 + j] * p.emb.data[2 * 3 + j]).sum();
        assert!((out[i] - (0.5 * s[i] + fused)).abs() < 1e-15);
    }
    p.w_fuse = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(ground(&[0.0; 3], 1, &p).unwrap(), p.emb.row(1).to_vec());
}

#[test]
fn ground_matches_scalar_hand_evaluation() {
    // d = 2: gate = σ(W_f · rms(s)), rms(s) = s / sqrt(mean(s²) + eps) ⊙ gain.
    let cfg = tiny(Mode::Gpn, 2, 2, 1, 1, 1, 2);
    let mut p = Params::<f64>::zeros(&cfg);
    p.fuse_gain.data = vec![1.0, 2.0];
    p.fuse_w.data = vec![0.5, -1.0, 0.25, 0.0];
    p.w_fuse.data = vec![1.0, 2.0, 0.0, -1.0];
    p.emb.data = vec![0.0, 0.0, 3.0, 1.0];
    let s = [1.0, 3.0];
    let inv = 1.0 / ((1.0 + 9.0) / 2.0 + 1e-6f64).sqrt();
    let n = [1.0 * inv, 3.0 * inv * 2.0];
    let g0 = 1.0 / (1.0 + (-(0.5 * n[0] - n[1])).exp());
    let g1 = 1.0 / (1.0 + (-(0.25 * n[0])).exp());
    let expect = [g0 * 1.0 + 5.0, g1 * 3.0 - 1.0];
    let out = ground(&s, 1, &p).unwrap();
    assert!((out[0] - expect[0]).abs() < 1e-14 && (out[1] - expect[1]).abs() < 1e-14);
}

#[test]
fn memory_read_is_zero_for_empty_memory_or_closed_gate() {
    let cfg = tiny(Mode::GpnM, 6, 8, 2, 3, 3, 5);
    let mut p = random_params::<f64>(&cfg, 1, 0.5).unwrap();
    let s_g = [0.3, -0.2, 1.0, 0.5, -0.7, 0.1];
    let empty = HeadTensor::zeros(2, 3, 3);
    assert!(mem_read(&empty, &s_g, &p).unwrap().iter().all(|v| *v == 0.0));
    let mut full = HeadTensor::zeros(2, 3, 3);
    full.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1 - 0.5);
    p.mem.as_mut().unwrap().w_rg.data.fill(0.0);
    assert!(mem_read(&full, &s_g, &p).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn single_head_recall_returns_normalized_value() {
    // M = k ⊗ v with unit k, queried by q = k: the pre-gate read is v and the
    // gain-normalized read is rmsnorm(v).
    let mut m = HeadTensor::<f64>::zeros(1, 3, 2);
    let k = [0.6, 0.0, 0.8];
    let v = [2.0, -1.0];
    m.write(0, &k, &v, 1.0, 1.0);
    let r = m.read(0, &k);
    assert!((r[0] - 2.0).abs() < 1e-15 && (r[1] + 1.0).abs() < 1e-15);
    let n = rmsnorm(&r, 1e-6, None);
    let expect = rmsnorm(&v, 1e-6, None);
    assert!((n[0] - expect[0]).abs() < 1e-15);
}

#[test]
fn gpn_m_predict_with_empty_memory_equals_gpn() {
    let cfg_m = tiny(Mode::GpnM, 6, 8, 2, 3, 3, 5);
    let pm = random_params::<f64>(&cfg_m, 3, 0.5).unwrap();
    let mut pg = Params::<f64>::zeros(&tiny(Mode::Gpn, 6, 8, 2, 3, 3, 5));
    for (name, t) in pg.tensors_mut() {
        *t = pm.get(name).unwrap().clone();
    }
    let s_g = [0.3, -0.2, 1.0, 0.5, -0.7, 0.1];
    let a = predict(&s_g, Some(&HeadTensor::zeros(2, 3, 3)), &pm).unwrap();
    let b = predict(&s_g, None, &pg).unwrap();
    assert_eq!(a, b);
    assert!(predict(&s_g, None, &pm).is_err());
}

#[test]
fn predict_with_zero_weights_halves_state() {
    let cfg = tiny(Mode::Gpn, 4, 4, 1, 1, 1, 3);
    let p = Params::<f64>::zeros(&cfg);
    let s = [1.0, -2.0, 0.5, 4.0];
    assert_eq!(predict(&s, None, &p).unwrap(), vec![0.5, -1.0, 0.25, 2.0]);
}
