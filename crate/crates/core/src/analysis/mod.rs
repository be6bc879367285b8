//! Operation counts, attention and memorisation profiles, and the g(x) curve,
//! each exportable as CSV.

mod flops;
mod profile;

pub use flops::{causal_pairs, flops_breakdown, flops_count, lookahead_pairs, FlopsBreakdown};
pub use profile::{
    alpha_profile, attn_profile, export_g_curve, AlphaPoint, AttnBucket, PROFILE_BUCKETS, PROFILE_SPAN,
};

use crate::memory::MemMode;
use crate::report::Table;

pub const FLOPS_HEADER: &str = "mode,flops_per_step";
pub const ATTN_PROFILE_HEADER: &str = "mode,bucket_start,bucket_end,mean_log_max_weight";
pub const ALPHA_PROFILE_HEADER: &str = "layer,mem_index,mean_alpha";
pub const G_CURVE_HEADER: &str = "x,g_x";

pub fn flops_table(rows: &[(MemMode, f64)]) -> Table {
    Table::new(FLOPS_HEADER, rows.iter().map(|(m, f)| format!("{m},{f}")).collect())
}

pub fn attn_profile_table(series: &[(MemMode, Vec<AttnBucket>)]) -> Table {
    Table::new(
        ATTN_PROFILE_HEADER,
        series
            .iter()
            .flat_map(|(mode, buckets)| {
                buckets
                    .iter()
                    .map(move |b| format!("{mode},{},{},{}", b.bucket_start, b.bucket_end, b.mean_log_max_weight))
            })
            .collect(),
    )
}

pub fn alpha_profile_table(points: &[AlphaPoint]) -> Table {
    Table::new(
        ALPHA_PROFILE_HEADER,
        points.iter().map(|p| format!("{},{},{}", p.layer, p.mem_index, p.mean_alpha)).collect(),
    )
}

pub fn g_curve_table(points: &[(f64, f64)]) -> Table {
    Table::new(G_CURVE_HEADER, points.iter().map(|(x, g)| format!("{x},{g}")).collect())
}
