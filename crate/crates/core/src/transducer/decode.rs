use crate::error::Result;
use crate::numerics::Tensor;

use super::tail::{PredictorState, TransducerTail};

/// Upper bound on labels emitted for a single encoder frame.
pub const MAX_EMISSIONS_PER_FRAME: usize = 10;

/// Streaming greedy decoder. Predictor state carries over between chunks;
/// acoustic context does not.
#[derive(Clone, Debug)]
pub struct GreedyDecoder<'a> {
    tail: &'a TransducerTail,
    state: PredictorState,
    hyp: Vec<usize>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl<'a> GreedyDecoder<'a> {
    pub fn new(tail: &'a TransducerTail) -> Result<Self> {
        Ok(Self {
            tail,
            state: tail.initial_state()?,
            hyp: Vec::new(),
        })
    }

    /// Decodes one chunk of encoder frames `[c, d]`, returning the labels it emitted.
    pub fn push_chunk(&mut self, chunk: &Tensor<f64>) -> Result<Vec<usize>> {
        let start = self.hyp.len();
        for t in 0..chunk.rows() {
            for _ in 0..MAX_EMISSIONS_PER_FRAME {
                let logits = self.tail.joint(chunk.row(t), &self.state.h)?;
                let k = argmax(&logits);
                if k == self.tail.blank() {
                    break;
                }
                self.hyp.push(k);
                self.state = self.tail.predictor_step(k, &self.state)?;
            }
        }
        Ok(self.hyp[start..].to_vec())
    }

    pub fn hypothesis(&self) -> &[usize] {
        &self.hyp
    }

    pub fn finish(self) -> Vec<usize> {
        self.hyp
    }
}

/// Greedy decoding of a stream of encoder chunks.
pub fn greedy_decode<'c>(chunks: impl IntoIterator<Item = &'c Tensor<f64>>, tail: &TransducerTail) -> Result<Vec<usize>> {
    let mut dec = GreedyDecoder::new(tail)?;
    for c in chunks {
        dec.push_chunk(c)?;
    }
    Ok(dec.finish())
}
