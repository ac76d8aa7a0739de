//! Storm ingestion, intensity-change targets, life-cycle alignment,
//! standardization and fold construction.

mod folds;
mod manifest;
mod panel;
mod storm;

pub use folds::{make_folds, FoldSpec};
pub use manifest::{is_default_test_storm, load_manifest, parse_manifest, ManifestEntry, Role};
pub use panel::{
    align_by_mslp_minimum, mslp_anchor, smooth_missing_aware, standardize, AlignedPanel,
    Alignment, ColumnStats, PanelStorm,
};
pub use storm::{
    build_target, intensity_change, load_storm_csv, parse_storm_csv, target_code, StormSeries,
    MSLP_CODES, VMAX_CODE,
};
