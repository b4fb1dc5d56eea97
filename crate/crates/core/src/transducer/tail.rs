use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{lstm_step, LstmWeights, Rng, Tensor};

/// Sizes of the predictor and joint network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransducerConfig {
    /// Number of non-blank labels; the blank is index `vocab`.
    pub vocab: usize,
    /// Predictor embedding width, LSTM hidden size and joint width.
    pub hidden: usize,
    /// Width of the encoder frames fed to the joint.
    pub enc_dim: usize,
}

impl TransducerConfig {
    /// Predictor hidden size equal to the encoder width.
    pub fn for_encoder(config: &EncoderConfig, vocab: usize) -> Self {
        Self {
            vocab,
            hidden: config.d_model,
            enc_dim: config.d_model,
        }
    }

    pub fn num_params(&self) -> usize {
        let (v1, h, d) = (self.vocab + 1, self.hidden, self.enc_dim);
        let embedding = v1 * h;
        let lstm = 4 * h * h + 4 * h * h + 4 * h;
        let joint = d * h + h * h + h + h * v1 + v1;
        embedding + lstm + joint
    }
}

/// Embedding + single-layer LSTM predictor and additive tanh joint.
#[derive(Clone, Debug, PartialEq)]
pub struct TransducerTail {
    /// `[V+1, H]`; the blank row doubles as the start-of-sequence input.
    pub embedding: Tensor<f64>,
    pub lstm: LstmWeights<f64>,
    /// `[d_enc, H]`
    pub enc_proj: Tensor<f64>,
    /// `[H, H]`
    pub pred_proj: Tensor<f64>,
    pub joint_bias: Tensor<f64>,
    /// `[H, V+1]`
    pub out_w: Tensor<f64>,
    pub out_b: Tensor<f64>,
}

/// Predictor recurrent state plus the output for the last consumed label.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl TransducerTail {
    pub fn new(config: &TransducerConfig, rng: &mut Rng) -> Self {
        let (v1, h, d) = (config.vocab + 1, config.hidden, config.enc_dim);
        Self {
            embedding: rng.normal_tensor(&[v1, h], 1.0),
            lstm: LstmWeights {
                w_ih: rng.xavier(&[h, 4 * h], h, 4 * h),
                w_hh: rng.xavier(&[h, 4 * h], h, 4 * h),
                bias: Tensor::zeros(&[4 * h]),
            },
            enc_proj: rng.xavier(&[d, h], d, h),
            pred_proj: rng.xavier(&[h, h], h, h),
            joint_bias: Tensor::zeros(&[h]),
            out_w: rng.xavier(&[h, v1], h, v1),
            out_b: Tensor::zeros(&[v1]),
        }
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows() - 1
    }

    pub fn blank(&self) -> usize {
        self.vocab()
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn num_params(&self) -> usize {
        self.embedding.len()
            + self.lstm.num_params()
            + self.enc_proj.len()
            + self.pred_proj.len()
            + self.joint_bias.len()
            + self.out_w.len()
            + self.out_b.len()
    }

    /// Feeds one label (or the blank as start token) to the predictor.
    pub fn predictor_step(&self, label: usize, state: &PredictorState) -> Result<PredictorState> {
        if label > self.vocab() {
            return Err(Error::LabelOutOfRange {
                label,
                vocab: self.vocab(),
            });
        }
        let (h, c) = lstm_step(self.embedding.row(label), &state.h, &state.c, &self.lstm)?;
        Ok(PredictorState { h, c })
    }

    /// State after consuming only the start token.
    pub fn initial_state(&self) -> Result<PredictorState> {
        let zero = PredictorState {
            h: vec![0.0; self.hidden()],
            c: vec![0.0; self.hidden()],
        };
        self.predictor_step(self.blank(), &zero)
    }

    /// Predictor outputs `[U+1, H]` after the start token and each target prefix.
    pub fn predictor_outputs(&self, targets: &[usize]) -> Result<Tensor<f64>> {
        let mut state = self.initial_state()?;
        let mut rows = vec![state.h.clone()];
        for &y in targets {
            self.check_label(y)?;
            state = self.predictor_step(y, &state)?;
            rows.push(state.h.clone());
        }
        Ok(Tensor::from_rows(&rows))
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.vocab() {
            return Err(Error::LabelOutOfRange {
                label: y,
                vocab: self.vocab(),
            });
        }
        Ok(())
    }

    /// Logits `[V+1]` for one encoder frame and one predictor output.
    pub fn joint(&self, enc: &[f64], pred: &[f64]) -> Result<Vec<f64>> {
        let h = self.hidden();
        if enc.len() != self.enc_proj.rows() || pred.len() != h {
            return Err(Error::shape("joint", &[enc.len(), pred.len()], &[self.enc_proj.rows(), h]));
        }
        let mut z = self.joint_bias.data().to_vec();
        for (row, &e) in enc.iter().enumerate() {
            for (zj, &w) in z.iter_mut().zip(self.enc_proj.row(row)) {
                *zj += e * w;
            }
        }
        for (row, &p) in pred.iter().enumerate() {
            for (zj, &w) in z.iter_mut().zip(self.pred_proj.row(row)) {
                *zj += p * w;
            }
        }
        let mut out = self.out_b.data().to_vec();
        for (j, zj) in z.iter().enumerate() {
            let a = zj.tanh();
            for (o, &w) in out.iter_mut().zip(self.out_w.row(j)) {
                *o += a * w;
            }
        }
        Ok(out)
    }

    /// Joint logits over the whole lattice, `[T', U+1, V+1]`.
    pub fn lattice_logits(&self, enc: &Tensor<f64>, targets: &[usize]) -> Result<Tensor<f64>> {
        let pred = self.predictor_outputs(targets)?;
        let (t, u1, v1) = (enc.rows(), pred.rows(), self.vocab() + 1);
        let mut data = Vec::with_capacity(t * u1 * v1);
        for ti in 0..t {
            for ui in 0..u1 {
                data.extend(self.joint(enc.row(ti), pred.row(ui))?);
            }
        }
        Tensor::from_vec(&[t, u1, v1], data)
    }
}
