//! Single-layer LSTM over a frame sequence, with hand-written
//! backpropagation through time.
//!
//! Gate layout in the stacked weight matrices is `(input, forget, cell,
//! output)`: `w_ih` is `[4H, E]`, `w_hh` is `[4H, H]`, `b` is `[4H]`.
//! The initial hidden and cell states are zero.

use crate::layers::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{ShapeError, Tensor};

#[derive(Debug, Clone)]
pub struct Lstm<S: Scalar> {
    /// `[4H, E]`
    pub w_ih: Tensor<S>,
    /// `[4H, H]`
    pub w_hh: Tensor<S>,
    /// `[4H]`
    pub b: Tensor<S>,
}

/// Forward tape: inputs plus per-frame post-activation gates, cell and
/// hidden states.
#[derive(Debug, Clone)]
pub struct LstmCache<S: Scalar> {
    input: Vec<S>,
    /// `[F, 4H]`, gate activations (i, f, g, o).
    gates: Vec<S>,
    /// `[F, H]`
    cells: Vec<S>,
    /// `[F, H]`
    hidden: Vec<S>,
    frames: usize,
}

impl<S: Scalar> Lstm<S> {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Lstm {
            w_ih: Tensor::zeros(&[4 * hidden, input_dim]).with_grad(),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]).with_grad(),
            b: Tensor::zeros(&[4 * hidden]).with_grad(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.shape[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape[1]
    }

    /// One recurrence step. `gates` receives the four post-activation gate
    /// vectors, `c`/`h` the new states.
    pub fn step(
        &self,
        x: &[S],
        h_prev: &[S],
        c_prev: &[S],
        gates: &mut [S],
        c: &mut [S],
        h: &mut [S],
    ) {
        let hd = self.hidden_dim();
        gates.copy_from_slice(&self.b.data);
        matmul_nt_acc(gates, x, &self.w_ih.data, 1, self.input_dim(), 4 * hd);
        matmul_nt_acc(gates, h_prev, &self.w_hh.data, 1, hd, 4 * hd);
        for j in 0..hd {
            gates[j] = sigmoid(gates[j]);
            gates[hd + j] = sigmoid(gates[hd + j]);
            gates[2 * hd + j] = gates[2 * hd + j].tanh();
            gates[3 * hd + j] = sigmoid(gates[3 * hd + j]);
        }
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * c[j].tanh();
        }
    }

    /// Input `[F, E]` -> hidden states `[F, H]`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, LstmCache<S>), ShapeError> {
        let e = self.input_dim();
        let hd = self.hidden_dim();
        if x.shape.len() != 2 || x.shape[1] != e {
            return Err(ShapeError::new(format!(
                "lstm: input {:?} vs expected [F, {}]",
                x.shape, e
            )));
        }
        let f = x.shape[0];
        let mut gates = vec![S::zero(); f * 4 * hd];
        let mut cells = vec![S::zero(); f * hd];
        let mut hidden = vec![S::zero(); f * hd];
        let zeros = vec![S::zero(); hd];
        for t in 0..f {
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&hidden[(t - 1) * hd..t * hd], &cells[(t - 1) * hd..t * hd])
            };
            // Split borrows: gates/cells/hidden rows for frame t.
            let g_row = t * 4 * hd;
            let s_row = t * hd;
            let mut g_tmp = vec![S::zero(); 4 * hd];
            let mut c_tmp = vec![S::zero(); hd];
            let mut h_tmp = vec![S::zero(); hd];
            self.step(
                &x.data[t * e..(t + 1) * e],
                h_prev,
                c_prev,
                &mut g_tmp,
                &mut c_tmp,
                &mut h_tmp,
            );
            gates[g_row..g_row + 4 * hd].copy_from_slice(&g_tmp);
            cells[s_row..s_row + hd].copy_from_slice(&c_tmp);
            hidden[s_row..s_row + hd].copy_from_slice(&h_tmp);
        }
        let out = Tensor::from_vec(&[f, hd], hidden.clone())?;
        Ok((
            out,
            LstmCache {
                input: x.data.clone(),
                gates,
                cells,
                hidden,
                frames: f,
            },
        ))
    }

    /// Backprop through time. `dh` is `[F, H]` (gradient w.r.t. every
    /// per-frame hidden state); parameter gradients accumulate, and the
    /// input gradient `[F, E]` is returned when requested.
    pub fn backward(
        &mut self,
        cache: &LstmCache<S>,
        dh: &Tensor<S>,
        need_dx: bool,
    ) -> Result<Option<Tensor<S>>, ShapeError> {
        let e = self.input_dim();
        let hd = self.hidden_dim();
        let f = cache.frames;
        if dh.shape != [f, hd] {
            return Err(ShapeError::new(format!(
                "lstm backward: dh {:?} vs [{}, {}]",
                dh.shape, f, hd
            )));
        }
        let mut dx = need_dx.then(|| Tensor::zeros(&[f, e]));
        let mut dh_carry = vec![S::zero(); hd];
        let mut dc_carry = vec![S::zero(); hd];
        let mut dgates = vec![S::zero(); 4 * hd];
        let zeros = vec![S::zero(); hd];
        for t in (0..f).rev() {
            let g = &cache.gates[t * 4 * hd..(t + 1) * 4 * hd];
            let c = &cache.cells[t * hd..(t + 1) * hd];
            let c_prev = if t == 0 {
                &zeros[..]
            } else {
                &cache.cells[(t - 1) * hd..t * hd]
            };
            for j in 0..hd {
                let (gi, gf, gg, go) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let tc = c[j].tanh();
                let dhj = dh.data[t * hd + j] + dh_carry[j];
                let dc = dc_carry[j] + dhj * go * (S::one() - tc * tc);
                dgates[j] = dc * gg * gi * (S::one() - gi);
                dgates[hd + j] = dc * c_prev[j] * gf * (S::one() - gf);
                dgates[2 * hd + j] = dc * gi * (S::one() - gg * gg);
                dgates[3 * hd + j] = dhj * tc * go * (S::one() - go);
                dc_carry[j] = dc * gf;
            }
            let x_t = &cache.input[t * e..(t + 1) * e];
            let h_prev = if t == 0 {
                &zeros[..]
            } else {
                &cache.hidden[(t - 1) * hd..t * hd]
            };
            matmul_tn_acc(self.w_ih.grad_mut(), &dgates, x_t, 4 * hd, 1, e);
            matmul_tn_acc(self.w_hh.grad_mut(), &dgates, h_prev, 4 * hd, 1, hd);
            for (bg, &dg) in self.b.grad_mut().iter_mut().zip(&dgates) {
                *bg += dg;
            }
            dh_carry.iter_mut().for_each(|v| *v = S::zero());
            matmul_nn_acc(&mut dh_carry, &dgates, &self.w_hh.data, 1, 4 * hd, hd);
            if let Some(dx) = &mut dx {
                matmul_nn_acc(
                    &mut dx.data[t * e..(t + 1) * e],
                    &dgates,
                    &self.w_ih.data,
                    1,
                    4 * hd,
                    e,
                );
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    #[test]
    fn zero_weights_halve_the_cell_state() {
        // All weights and biases zero: every sigmoid gate is 1/2 and the
        // candidate tanh is 0, so c = c_prev/2 and h = tanh(c_prev/2)/2.
        let lstm = Lstm::<f64>::new(3, 4);
        let x = vec![0.7, -0.3, 0.2];
        let h_prev = vec![0.1, 0.2, 0.3, 0.4];
        let c_prev = vec![0.8, -0.4, 0.0, 1.2];
        let mut gates = vec![0.0; 16];
        let mut c = vec![0.0; 4];
        let mut h = vec![0.0; 4];
        lstm.step(&x, &h_prev, &c_prev, &mut gates, &mut c, &mut h);
        assert!(gates[..8].iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(gates[8..12].iter().all(|&v| v.abs() < 1e-15));
        for j in 0..4 {
            assert!((c[j] - 0.5 * c_prev[j]).abs() < 1e-15);
            assert!((h[j] - 0.5 * (0.5 * c_prev[j]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_forget_gate_preserves_cell_state() {
        let mut lstm = Lstm::<f64>::new(2, 3);
        for j in 3..6 {
            lstm.b.data[j] = 20.0; // forget-gate block
        }
        let x = vec![0.3, -0.1];
        let h_prev = vec![0.0; 3];
        let c_prev = vec![1.0, -2.0, 0.5];
        let mut gates = vec![0.0; 12];
        let mut c = vec![0.0; 3];
        let mut h = vec![0.0; 3];
        lstm.step(&x, &h_prev, &c_prev, &mut gates, &mut c, &mut h);
        for j in 0..3 {
            assert!(
                (c[j] - c_prev[j]).abs() < 1e-8,
                "cell {} leaked: {} vs {}",
                j,
                c[j],
                c_prev[j]
            );
        }
    }

    // Straight-line scalar re-implementation of the recurrence, written
    // directly from the gate equations with no shared code.
    fn oracle_sequence(
        w_ih: &[f64],
        w_hh: &[f64],
        b: &[f64],
        x: &[f64],
        frames: usize,
        e: usize,
        hd: usize,
    ) -> Vec<f64> {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut out = Vec::new();
        for t in 0..frames {
            let xt = &x[t * e..(t + 1) * e];
            let mut hn = vec![0.0; hd];
            let mut cn = vec![0.0; hd];
            for j in 0..hd {
                let mut zi = b[j];
                let mut zf = b[hd + j];
                let mut zg = b[2 * hd + j];
                let mut zo = b[3 * hd + j];
                for k in 0..e {
                    zi += w_ih[j * e + k] * xt[k];
                    zf += w_ih[(hd + j) * e + k] * xt[k];
                    zg += w_ih[(2 * hd + j) * e + k] * xt[k];
                    zo += w_ih[(3 * hd + j) * e + k] * xt[k];
                }
                for k in 0..hd {
                    zi += w_hh[j * hd + k] * h[k];
                    zf += w_hh[(hd + j) * hd + k] * h[k];
                    zg += w_hh[(2 * hd + j) * hd + k] * h[k];
                    zo += w_hh[(3 * hd + j) * hd + k] * h[k];
                }
                cn[j] = sig(zf) * c[j] + sig(zi) * zg.tanh();
                hn[j] = sig(zo) * cn[j].tanh();
            }
            h = hn;
            c = cn;
            out.extend_from_slice(&h);
        }
        out
    }

    #[test]
    fn sequence_matches_independent_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (e, hd, f) = (2, 3, 5);
        let mut lstm = Lstm::<f64>::new(e, hd);
        lstm.w_ih.data = randvec(&mut rng, 4 * hd * e);
        lstm.w_hh.data = randvec(&mut rng, 4 * hd * hd);
        lstm.b.data = randvec(&mut rng, 4 * hd);
        let x = Tensor::from_vec(&[f, e], randvec(&mut rng, f * e)).unwrap();
        let (y, _) = lstm.forward(&x).unwrap();
        let want = oracle_sequence(&lstm.w_ih.data, &lstm.w_hh.data, &lstm.b.data, &x.data, f, e, hd);
        for i in 0..f * hd {
            assert!(
                (y.data[i] - want[i]).abs() < 1e-12,
                "h[{}]: {} vs oracle {}",
                i,
                y.data[i],
                want[i]
            );
        }
    }

    #[test]
    fn hidden_states_are_bounded_and_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (e, hd, f) = (4, 6, 8);
        let mut lstm = Lstm::<f64>::new(e, hd);
        lstm.w_ih.data = (0..4 * hd * e).map(|_| rng.random_range(-3.0..3.0)).collect();
        lstm.w_hh.data = (0..4 * hd * hd).map(|_| rng.random_range(-3.0..3.0)).collect();
        lstm.b.data = (0..4 * hd).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut x = Tensor::from_vec(
            &[f, e],
            (0..f * e).map(|_| rng.random_range(-10.0..10.0)).collect(),
        )
        .unwrap();
        let (y1, _) = lstm.forward(&x).unwrap();
        assert!(y1.data.iter().all(|v| v.abs() <= 1.0));

        // Perturbing frame 5 must leave frames 0..5 untouched.
        x.data[5 * e] += 4.0;
        let (y2, _) = lstm.forward(&x).unwrap();
        assert_eq!(&y1.data[..5 * hd], &y2.data[..5 * hd]);
        assert!(
            y1.data[5 * hd..]
                .iter()
                .zip(&y2.data[5 * hd..])
                .any(|(a, b)| a != b),
            "perturbation must reach later frames"
        );
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (e, hd, f) = (2, 3, 4);
        let mut lstm = Lstm::<f64>::new(e, hd);
        lstm.w_ih.data = randvec(&mut rng, 4 * hd * e);
        lstm.w_hh.data = randvec(&mut rng, 4 * hd * hd);
        lstm.b.data = randvec(&mut rng, 4 * hd);
        let mut x = Tensor::from_vec(&[f, e], randvec(&mut rng, f * e)).unwrap();
        let r = randvec(&mut rng, f * hd);

        let (y, cache) = lstm.forward(&x).unwrap();
        let mut dh = Tensor::zeros(&y.shape);
        dh.data.copy_from_slice(&r);
        let dx = lstm.backward(&cache, &dh, true).unwrap().unwrap();

        fn fd_at<F: FnMut(f64) -> f64>(orig: f64, mut eval_at: F) -> f64 {
            let eps = 1e-6;
            let fp = eval_at(orig + eps);
            let fm = eval_at(orig - eps);
            eval_at(orig);
            (fp - fm) / (2.0 * eps)
        }

        let mut probe = lstm.clone();
        let score = |y: &Tensor<f64>| -> f64 { y.data.iter().zip(&r).map(|(a, b)| a * b).sum() };
        for idx in 0..4 * hd * e {
            let got = lstm.w_ih.grad.as_ref().unwrap()[idx];
            let want = fd_at(probe.w_ih.data[idx], |v| {
                probe.w_ih.data[idx] = v;
                score(&probe.forward(&x).unwrap().0)
            });
            assert!((got - want).abs() < 1e-6, "w_ih[{}]: {} vs {}", idx, got, want);
        }
        for idx in 0..4 * hd * hd {
            let got = lstm.w_hh.grad.as_ref().unwrap()[idx];
            let want = fd_at(probe.w_hh.data[idx], |v| {
                probe.w_hh.data[idx] = v;
                score(&probe.forward(&x).unwrap().0)
            });
            assert!((got - want).abs() < 1e-6, "w_hh[{}]: {} vs {}", idx, got, want);
        }
        for idx in 0..4 * hd {
            let got = lstm.b.grad.as_ref().unwrap()[idx];
            let want = fd_at(probe.b.data[idx], |v| {
                probe.b.data[idx] = v;
                score(&probe.forward(&x).unwrap().0)
            });
            assert!((got - want).abs() < 1e-6, "b[{}]: {} vs {}", idx, got, want);
        }
        for idx in 0..f * e {
            let got = dx.data[idx];
            let want = fd_at(x.data[idx], |v| {
                x.data[idx] = v;
                score(&lstm.forward(&x).unwrap().0)
            });
            assert!((got - want).abs() < 1e-6, "x[{}]: {} vs {}", idx, got, want);
        }
    }
}
