//! Corpus ingestion, segment streaming, training, evaluation and checkpoints.

mod checkpoint;
mod corpus;
mod eval;
mod experiment;
mod generate;
mod stream;
mod train;

pub use checkpoint::{checkpoint_precision, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use corpus::{ingest, Corpus, CorpusMode, Split, CHAR_SYMBOLS, MIN_CORPUS_TOKENS};
pub use eval::{evaluate, extrapolate_eval, EvalResult, ExtrapolationRow};
pub use experiment::{DataConfig, ExperimentConfig, TrainConfig};
pub use generate::generate;
pub use stream::{stream_segments, Batch, SegmentStream};
pub use train::{train, MetricRow, TrainOutcome, Trainer};

use crate::report::Table;

pub const METRICS_HEADER: &str = "step,lr,train_loss,dev_bpc,dev_ppl";
pub const TRAIN_CURVE_HEADER: &str = "scheme,step,dev_ppl";
pub const EXTRAPOLATION_HEADER: &str = "m,mem_len,ppl";

pub fn metrics_table(rows: &[MetricRow]) -> Table {
    Table::new(
        METRICS_HEADER,
        rows.iter()
            .map(|r| format!("{},{},{},{},{}", r.step, r.lr, r.train_loss, r.dev_bpc, r.dev_ppl))
            .collect(),
    )
}

/// Dev perplexity per logged step, labelled with `scheme`.
pub fn train_curve_table(scheme: &str, rows: &[MetricRow]) -> Table {
    Table::new(
        TRAIN_CURVE_HEADER,
        rows.iter().map(|r| format!("{scheme},{},{}", r.step, r.dev_ppl)).collect(),
    )
}

pub fn extrapolation_table(rows: &[ExtrapolationRow]) -> Table {
    Table::new(
        EXTRAPOLATION_HEADER,
        rows.iter().map(|r| format!("{},{},{}", r.m, r.mem_len, r.ppl)).collect(),
    )
}
