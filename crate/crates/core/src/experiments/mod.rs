//! Dataset ingestion, group splits, β-sweeps and their CSV/SVG output.

pub mod data;
pub mod emit;
pub mod sweep;
pub mod synth;

pub use data::{
    fit_ground_truth, ingest_dataset, ingest_reader, split_groups, CmpOp, ColumnSpec, Encoding, Schema, SplitRule,
    SplitTest, TabularDataset,
};
pub use emit::{emit_csv, emit_plot, policy_sidecar, read_sweep_csv, render_svg, SweepRow};
pub use sweep::{beta_sweep, solve_point, BetaGrid, Spacing, SweepMeta, SweepOptions, SweepPoint, SweepResult};
pub use synth::{desirability_vector, synth_generate, CostCase, SynthOptions, Synthetic};
