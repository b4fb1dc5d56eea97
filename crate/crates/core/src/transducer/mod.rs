//! Transducer tail (LSTM predictor, additive joint), RNN-T and CTC losses
//! with gradients, streaming greedy decoding, and word error rate.

mod decode;
mod loss;
mod tail;
mod wer;

pub use decode::{greedy_decode, GreedyDecoder, MAX_EMISSIONS_PER_FRAME};
pub use loss::{ctc_loss, ctc_min_frames, log_add, log_softmax, rnnt_lattice, rnnt_loss, rnnt_loss_from_logits, LossLattice, LossOutput};
pub use tail::{PredictorState, TransducerConfig, TransducerTail};
pub use wer::{edit_counts, edit_distance, wer, EditCounts};
