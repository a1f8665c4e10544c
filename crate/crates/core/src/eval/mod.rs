//! Metrics, paired significance testing and diagnostic reports.

pub mod diagnostics;
pub mod metrics;
pub mod report;
pub mod stats;

pub use diagnostics::{
    ambiguous_token_report, ambiguous_tokens_csv, label_proportion_report, length_bias_report,
    ols, proportions, total_variation, AmbiguousToken, LabelProportionReport, LengthBiasReport,
    LengthPoint, LineFit,
};
pub use metrics::{accuracy, perplexity, token_f1, ClassF1, TokenF1};
pub use report::{EvalSplit, MetricReport, MetricRow};
pub use stats::{format_mean_std, paired_t_test, sample_std, significance_markdown, SignificanceResult};
