use crate::error::{Error, Result};

/// One training step's worth of tokens, one row per lane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

/// Splits a token sequence into `batch` contiguous lanes and walks them in
/// lock step, `seg_len` tokens at a time. Targets are the inputs shifted by one.
#[derive(Clone, Debug)]
pub struct SegmentStream<'a> {
    lanes: Vec<&'a [usize]>,
    seg_len: usize,
    next: usize,
    per_lane: usize,
}

impl<'a> SegmentStream<'a> {
    pub fn new(split: &'a [usize], seg_len: usize, batch: usize) -> Result<Self> {
        if seg_len == 0 || batch == 0 {
            return Err(Error::Config("segment length and batch must be positive".into()));
        }
        if split.len() < batch * (seg_len + 1) {
            return Err(Error::Config(format!(
                "split of {} tokens is too small for {batch} lanes of {} tokens",
                split.len(),
                seg_len + 1
            )));
        }
        let lane_len = split.len() / batch;
        let lanes = split.chunks_exact(lane_len).take(batch).collect();
        Ok(Self {
            lanes,
            seg_len,
            next: 0,
            per_lane: (lane_len - 1) / seg_len,
        })
    }

    /// Segments each lane yields before the stream is exhausted.
    pub fn segments_per_lane(&self) -> usize {
        self.per_lane
    }

    /// The `index`-th batch, independent of iteration state.
    pub fn batch_at(&self, index: usize) -> Option<Batch> {
        if index >= self.per_lane {
            return None;
        }
        let start = index * self.seg_len;
        let (inputs, targets) = self
            .lanes
            .iter()
            .map(|lane| {
                (
                    lane[start..start + self.seg_len].to_vec(),
                    lane[start + 1..start + self.seg_len + 1].to_vec(),
                )
            })
            .unzip();
        Some(Batch { inputs, targets })
    }

    /// Token region owned by each lane.
    pub fn lanes(&self) -> &[&'a [usize]] {
        &self.lanes
    }
}

impl Iterator for SegmentStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let b = self.batch_at(self.next)?;
        self.next += 1;
        Some(b)
    }
}

/// Convenience wrapper around [`SegmentStream::new`].
pub fn stream_segments(split: &[usize], seg_len: usize, batch: usize) -> Result<SegmentStream<'_>> {
    SegmentStream::new(split, seg_len, batch)
}
